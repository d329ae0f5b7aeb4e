//! The dual-branch error-prediction network.
//!
//! * The boundary branch is a u-net over the image that regresses the
//!   enhanced class boundary.
//! * The main branch is a u-net over the one-hot mask that predicts a
//!   two-channel error map. Its encoder level `l` consumes the boundary
//!   branch's level-`l` encoder features by channel concatenation; its
//!   decoder levels are gated by the boundary branch's decoder features
//!   through [`attention_fuse`].
//! * The context-encoding head sits on the deepest main-branch encoder
//!   features and regresses the global error rate.

mod layers;
mod params;

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

pub use layers::{ConvBlock, ConvLayer, DenseLayer, NormLayer, UNet};
pub use params::ParamStore;

use crate::autodiff::Var;
use crate::nn::{self, ConvSpec};
use crate::rng::{self, Purpose};
use crate::{Error, Result, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AepNetConfig {
    /// One-hot channels of the input mask.
    pub num_classes: usize,
    /// Encoder levels; level `l` runs at `1/2^l` resolution.
    pub depth: usize,
    /// Channels at level 0, doubled per level.
    pub base_channels: usize,
    pub gn_groups: usize,
    pub ceu_hidden: usize,
    /// Training crop extents.
    pub crop: [usize; 3],
}

impl Default for AepNetConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            depth: 3,
            base_channels: 8,
            gn_groups: 4,
            ceu_hidden: 32,
            crop: [16, 16, 16],
        }
    }
}

impl AepNetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2");
        }
        if self.depth == 0 {
            return fail("depth must be at least 1");
        }
        if self.base_channels == 0 || self.gn_groups == 0 || self.base_channels % self.gn_groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "base_channels {} must be a positive multiple of gn_groups {}",
                self.base_channels, self.gn_groups
            )));
        }
        if self.ceu_hidden == 0 {
            return fail("ceu_hidden must be positive");
        }
        self.check_extents(self.crop)
    }

    /// Spatial extents must be divisible by `2^depth`: `depth − 1` poolings in
    /// the encoders plus one in the context-encoding head.
    pub fn check_extents(&self, dims: [usize; 3]) -> Result<()> {
        let m = 1usize << self.depth;
        if dims.iter().any(|&d| d == 0 || d % m != 0) {
            return Err(Error::InvalidConfig(format!(
                "extents {dims:?} must be positive multiples of 2^depth = {m}"
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<usize> {
        (0..self.depth).map(|l| self.base_channels << l).collect()
    }
}

/// Which network to build. `NoCeu` drops the context-encoding head;
/// `PlainConcat` is a single u-net over the concatenated image and mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    #[default]
    Full,
    NoCeu,
    PlainConcat,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::PlainConcat, Variant::NoCeu, Variant::Full];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCeu => "no_ceu",
            Variant::PlainConcat => "plain_concat",
        }
    }

    pub fn has_boundary_branch(&self) -> bool {
        !matches!(self, Variant::PlainConcat)
    }

    pub fn has_ceu(&self) -> bool {
        matches!(self, Variant::Full)
    }
}

/// The context-encoding head.
#[derive(Clone, Debug, PartialEq)]
pub struct Ceu {
    pub conv1: ConvLayer,
    pub norm1: NormLayer,
    pub conv2: ConvLayer,
    pub norm2: NormLayer,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

impl Ceu {
    /// conv-norm-relu, max-pool, conv-norm-relu, global average pool,
    /// dense-relu, dense-sigmoid. Returns a scalar in (0, 1).
    pub fn forward<'g>(&self, p: &[Var<'g>], features: Var<'g>) -> Result<Var<'g>> {
        let h = self.norm1.forward(p, self.conv1.forward(p, features)?)?.relu();
        let h = nn::max_pool3d(h)?;
        let h = self.norm2.forward(p, self.conv2.forward(p, h)?)?.relu();
        let v = nn::global_avg_pool(h)?;
        let v = self.fc1.forward(p, v)?.relu();
        self.fc2.forward(p, v)?.sigmoid().reshape(&[])
    }
}

/// `f_main + f_main ⊗ σ(conv1×1×1(f_boundary))`.
pub fn attention_fuse<'g>(f_main: Var<'g>, f_boundary: Var<'g>, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
    let wshape = weight.shape();
    if wshape.len() != 5 || wshape[2..] != [1, 1, 1] {
        return Err(Error::ShapeMismatch {
            op: "attention_fuse",
            lhs: vec![0, 0, 1, 1, 1],
            rhs: wshape,
        });
    }
    let spec = ConvSpec::cubic(wshape[1], wshape[0], 1, 1, 0);
    let gate = nn::conv3d(f_boundary, weight, bias, &spec)?.sigmoid();
    f_main.add(f_main.mul(gate)?)
}

/// Network outputs for one volume.
#[derive(Clone, Copy, Debug)]
pub struct Prediction<'g> {
    /// `[2, D, H, W]`, softmax over channels; channel 0 is "error",
    /// channel 1 is "correct".
    pub error_prob: Var<'g>,
    /// `[1, D, H, W]` in (0, 1); absent for the plain variant.
    pub boundary: Option<Var<'g>>,
    /// Scalar predicted error rate; present only with the context head.
    pub cer: Option<Var<'g>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AepNet {
    pub config: AepNetConfig,
    pub variant: Variant,
    pub params: ParamStore,
    /// Error-prediction branch (the only u-net for the plain variant).
    pub main: UNet,
    pub boundary: Option<UNet>,
    /// One 1×1×1 gate convolution per decoder level.
    pub attention: Vec<ConvLayer>,
    pub ceu: Option<Ceu>,
}

impl AepNet {
    /// Deterministic construction: weights are Xavier-uniform from the
    /// `Init` stream of `seed`, biases and norm shifts zero, norm scales one.
    pub fn build(config: &AepNetConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        let mut store = ParamStore::new();
        let ch = config.channels();
        let groups = config.gn_groups;
        let depth = config.depth;

        let (main, boundary, attention, ceu) = if variant.has_boundary_branch() {
            let boundary = UNet::new(&mut store, "boundary", 1, &ch, &vec![0; depth], 1, groups, &mut rng);
            let main = UNet::new(&mut store, "main", config.num_classes, &ch, &ch, 2, groups, &mut rng);
            let attention = (0..depth - 1)
                .map(|l| ConvLayer::new(&mut store, &format!("main.attn{l}"), ConvSpec::cubic(ch[l], ch[l], 1, 1, 0), &mut rng))
                .collect();
            let ceu = variant.has_ceu().then(|| {
                let c = ch[depth - 1];
                Ceu {
                    conv1: ConvLayer::new(&mut store, "ceu.conv1", ConvSpec::cubic(c, c, 3, 1, 1), &mut rng),
                    norm1: NormLayer::new(&mut store, "ceu.norm1", c, groups),
                    conv2: ConvLayer::new(&mut store, "ceu.conv2", ConvSpec::cubic(c, c, 3, 1, 1), &mut rng),
                    norm2: NormLayer::new(&mut store, "ceu.norm2", c, groups),
                    fc1: DenseLayer::new(&mut store, "ceu.fc1", c, config.ceu_hidden, &mut rng),
                    fc2: DenseLayer::new(&mut store, "ceu.fc2", config.ceu_hidden, 1, &mut rng),
                }
            });
            (main, Some(boundary), attention, ceu)
        } else {
            let main = UNet::new(&mut store, "plain", 1 + config.num_classes, &ch, &vec![0; depth], 2, groups, &mut rng);
            (main, None, Vec::new(), None)
        };
        Ok(Self {
            config: config.clone(),
            variant,
            params: store,
            main,
            boundary,
            attention,
            ceu,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_inputs(&self, image: &Tensor, mask: &Tensor) -> Result<()> {
        let c = self.config.num_classes;
        if image.rank() != 4 || image.shape()[0] != 1 {
            return Err(Error::ShapeMismatch {
                op: "forward(image)",
                lhs: vec![1, 0, 0, 0],
                rhs: image.shape().to_vec(),
            });
        }
        if mask.rank() != 4 || mask.shape()[0] != c || mask.shape()[1..] != image.shape()[1..] {
            return Err(Error::ShapeMismatch {
                op: "forward(mask)",
                lhs: vec![c, image.shape()[1], image.shape()[2], image.shape()[3]],
                rhs: mask.shape().to_vec(),
            });
        }
        self.config
            .check_extents([image.shape()[1], image.shape()[2], image.shape()[3]])
    }

    /// Runs the network on `image: [1, D, H, W]` and `mask: [C, D, H, W]`
    /// with parameters already placed on the graph (see
    /// [`ParamStore::register`]).
    pub fn forward_with<'g>(&self, p: &[Var<'g>], image: Var<'g>, mask: Var<'g>) -> Result<Prediction<'g>> {
        self.check_inputs(&image.value(), &mask.value())?;
        let depth = self.config.depth;

        let Some(bnet) = &self.boundary else {
            let input = nn::concat_channels(image, mask)?;
            let (_, dec) = run_unet(&self.main, p, input, |_, x| Ok(x), |_, x| Ok(x))?;
            let logits = self.main.head.forward(p, dec)?;
            return Ok(Prediction {
                error_prob: logits.channel_softmax()?,
                boundary: None,
                cer: None,
            });
        };

        // Boundary branch first: its encoder and decoder features feed the
        // main branch.
        let mut b_dec: Vec<Option<Var<'g>>> = vec![None; depth];
        let (b_enc, b_out) = run_unet(
            bnet,
            p,
            image,
            |_, x| Ok(x),
            |l, x| {
                b_dec[l] = Some(x);
                Ok(x)
            },
        )?;
        let boundary = bnet.head.forward(p, b_out)?.sigmoid();

        let (m_enc, m_out) = run_unet(
            &self.main,
            p,
            mask,
            |l, x| nn::concat_channels(x, b_enc[l]),
            |l, x| {
                let gate = &self.attention[l];
                attention_fuse(x, b_dec[l].expect("decoder level visited"), p[gate.weight.0], p[gate.bias.0])
            },
        )?;
        let logits = self.main.head.forward(p, m_out)?;
        let cer = match &self.ceu {
            Some(ceu) => Some(ceu.forward(p, m_enc[depth - 1])?),
            None => None,
        };
        Ok(Prediction {
            error_prob: logits.channel_softmax()?,
            boundary: Some(boundary),
            cer,
        })
    }

    /// Registers the parameters on `graph` and runs [`Self::forward_with`].
    pub fn forward<'g>(&self, graph: &'g crate::Graph, image: &Tensor, mask: &Tensor) -> Result<Prediction<'g>> {
        let p = self.params.register(graph);
        let image = graph.constant(image.clone());
        let mask = graph.constant(mask.clone());
        self.forward_with(&p, image, mask)
    }
}

/// Encoder then decoder. `share_in(l, x)` transforms the input of encoder
/// level `l`; `share_out(l, x)` transforms the output of decoder level `l`.
/// Returns the encoder outputs per level and the final decoder output.
fn run_unet<'g>(
    net: &UNet,
    p: &[Var<'g>],
    input: Var<'g>,
    mut share_in: impl FnMut(usize, Var<'g>) -> Result<Var<'g>>,
    mut share_out: impl FnMut(usize, Var<'g>) -> Result<Var<'g>>,
) -> Result<(Vec<Var<'g>>, Var<'g>)> {
    let depth = net.depth();
    let mut enc = Vec::with_capacity(depth);
    let mut h = input;
    for (l, block) in net.encoder.iter().enumerate() {
        if l > 0 {
            h = nn::max_pool3d(h)?;
        }
        h = block.forward(p, share_in(l, h)?)?;
        enc.push(h);
    }
    let mut d = h;
    for l in (0..depth - 1).rev() {
        let up = net.up[l].forward(p, d)?;
        let merged = nn::concat_channels(enc[l], up)?;
        d = share_out(l, net.decoder[l].forward(p, merged)?)?;
    }
    Ok((enc, d))
}
