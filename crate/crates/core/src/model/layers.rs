use alloc::format;
use alloc::vec;

use rand::Rng;

use super::params::{xavier_uniform, ParamStore};
use crate::autodiff::{ParamId, Var};
use crate::nn::{self, ConvSpec, GROUP_NORM_EPS};
use crate::{Result, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
    pub transposed: bool,
}

impl ConvLayer {
    pub(crate) fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let k = spec.kernel_volume();
        let w = xavier_uniform(&spec.weight_shape(), spec.in_channels * k, spec.out_channels * k, rng);
        Self {
            spec,
            weight: store.push(format!("{name}.weight"), w),
            bias: store.push(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])),
            transposed: false,
        }
    }

    pub(crate) fn new_transposed(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let k = spec.kernel_volume();
        let w = xavier_uniform(&spec.transposed_weight_shape(), spec.in_channels * k, spec.out_channels * k, rng);
        Self {
            spec,
            weight: store.push(format!("{name}.weight"), w),
            bias: store.push(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])),
            transposed: true,
        }
    }

    pub fn forward<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let (w, b) = (p[self.weight.0], p[self.bias.0]);
        if self.transposed {
            nn::transposed_conv3d(x, w, b, &self.spec)
        } else {
            nn::conv3d(x, w, b, &self.spec)
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.spec.in_channels * self.spec.out_channels * self.spec.kernel_volume() + self.spec.out_channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl NormLayer {
    pub(crate) fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gamma: store.push(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.push(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        nn::group_norm(x, p[self.gamma.0], p[self.beta.0], self.groups, GROUP_NORM_EPS)
    }
}

/// conv3×3×3 → group norm → relu, twice.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv1: ConvLayer,
    pub norm1: NormLayer,
    pub conv2: ConvLayer,
    pub norm2: NormLayer,
}

impl ConvBlock {
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = ConvLayer::new(store, &format!("{name}.conv1"), ConvSpec::cubic(in_channels, out_channels, 3, 1, 1), rng);
        let norm1 = NormLayer::new(store, &format!("{name}.norm1"), out_channels, groups);
        let conv2 = ConvLayer::new(store, &format!("{name}.conv2"), ConvSpec::cubic(out_channels, out_channels, 3, 1, 1), rng);
        let norm2 = NormLayer::new(store, &format!("{name}.norm2"), out_channels, groups);
        Self {
            conv1,
            norm1,
            conv2,
            norm2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.spec.in_channels
    }

    pub fn forward<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let h = self.norm1.forward(p, self.conv1.forward(p, x)?)?.relu();
        Ok(self.norm2.forward(p, self.conv2.forward(p, h)?)?.relu())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub(crate) fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let w = xavier_uniform(&[n_out, n_in], n_in, n_out, rng);
        Self {
            weight: store.push(format!("{name}.weight"), w),
            bias: store.push(format!("{name}.bias"), Tensor::zeros(&[n_out])),
        }
    }

    pub fn forward<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        x.linear(p[self.weight.0], p[self.bias.0])
    }
}

/// An encoder-decoder with skip connections. Level `l` has
/// `base·2^l` channels; `up[l]` and `decoder[l]` bring level `l + 1` back to
/// level `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    pub encoder: alloc::vec::Vec<ConvBlock>,
    pub up: alloc::vec::Vec<ConvLayer>,
    pub decoder: alloc::vec::Vec<ConvBlock>,
    pub head: ConvLayer,
}

impl UNet {
    /// `extra[l]` channels are concatenated onto the input of encoder level
    /// `l` (feature sharing from another branch).
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        channels: &[usize],
        extra: &[usize],
        out_channels: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let depth = channels.len();
        let mut encoder = vec![];
        for l in 0..depth {
            let incoming = if l == 0 { in_channels } else { channels[l - 1] };
            encoder.push(ConvBlock::new(store, &format!("{name}.enc{l}"), incoming + extra[l], channels[l], groups, rng));
        }
        let mut up = vec![];
        let mut decoder = vec![];
        for l in 0..depth.saturating_sub(1) {
            up.push(ConvLayer::new_transposed(
                store,
                &format!("{name}.up{l}"),
                ConvSpec::cubic(channels[l + 1], channels[l], 2, 2, 0),
                rng,
            ));
            decoder.push(ConvBlock::new(store, &format!("{name}.dec{l}"), 2 * channels[l], channels[l], groups, rng));
        }
        let head = ConvLayer::new(store, &format!("{name}.head"), ConvSpec::cubic(channels[0], out_channels, 1, 1, 0), rng);
        Self {
            encoder,
            up,
            decoder,
            head,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }
}
