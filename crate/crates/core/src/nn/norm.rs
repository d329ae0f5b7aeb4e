use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Op, Var};
use crate::math::sqrt;
use crate::{Error, Result, Tensor};

pub const GROUP_NORM_EPS: f64 = 1e-5;

struct GroupNorm {
    groups: usize,
    eps: f64,
    // per group: (mean, 1/sqrt(var + eps))
    stats: Vec<(f64, f64)>,
}

impl Op for GroupNorm {
    fn name(&self) -> &'static str {
        "group_norm"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
        if x.rank() < 2 {
            return Err(Error::ShapeMismatch {
                op: "group_norm",
                lhs: vec![0; 4],
                rhs: x.shape().to_vec(),
            });
        }
        let c = x.shape()[0];
        if self.groups == 0 || c % self.groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "{c} channels are not divisible into {} groups",
                self.groups
            )));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "group_norm",
                lhs: vec![c],
                rhs: gamma.shape().to_vec(),
            });
        }
        let spatial = x.len() / c;
        let group_len = spatial * (c / self.groups);
        let mut out = Tensor::zeros(x.shape());
        self.stats.clear();
        for (gi, (src, dst)) in x
            .data()
            .chunks(group_len)
            .zip(out.data_mut().chunks_mut(group_len))
            .enumerate()
        {
            let n = src.len() as f64;
            let mean = src.iter().sum::<f64>() / n;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / sqrt(var + self.eps);
            self.stats.push((mean, inv_std));
            for (k, (s, d)) in src.chunks(spatial).zip(dst.chunks_mut(spatial)).enumerate() {
                let ch = gi * (c / self.groups) + k;
                let (g, b) = (gamma.data()[ch], beta.data()[ch]);
                for (sv, dv) in s.iter().zip(d.iter_mut()) {
                    *dv = g * (sv - mean) * inv_std + b;
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let c = x.shape()[0];
        let per_group = c / self.groups;
        let spatial = x.len() / c;
        let group_len = spatial * per_group;
        let mut gx = Tensor::zeros(x.shape());
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for (gi, ((src, g), dx)) in x
            .data()
            .chunks(group_len)
            .zip(grad.data().chunks(group_len))
            .zip(gx.data_mut().chunks_mut(group_len))
            .enumerate()
        {
            let (mean, inv_std) = self.stats[gi];
            let n = group_len as f64;
            // dxhat = g·gamma; dx = inv_std·(dxhat − mean(dxhat) − xhat·mean(dxhat·xhat))
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for k in 0..per_group {
                let ch = gi * per_group + k;
                let gm = gamma.data()[ch];
                let range = k * spatial..(k + 1) * spatial;
                for (sv, gv) in src[range.clone()].iter().zip(&g[range]) {
                    let xhat = (sv - mean) * inv_std;
                    sum_dxhat += gv * gm;
                    sum_dxhat_xhat += gv * gm * xhat;
                    ggamma[ch] += gv * xhat;
                    gbeta[ch] += gv;
                }
            }
            let mean_dxhat = sum_dxhat / n;
            let mean_dxhat_xhat = sum_dxhat_xhat / n;
            for k in 0..per_group {
                let ch = gi * per_group + k;
                let gm = gamma.data()[ch];
                let range = k * spatial..(k + 1) * spatial;
                for ((sv, gv), d) in src[range.clone()].iter().zip(&g[range.clone()]).zip(&mut dx[range]) {
                    let xhat = (sv - mean) * inv_std;
                    *d = inv_std * (gv * gm - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
        vec![
            wants[0].then_some(gx),
            wants[1].then(|| Tensor::from_vec(ggamma)),
            wants[2].then(|| Tensor::from_vec(gbeta)),
        ]
    }
}

/// Group normalization of `[C, ...]` with per-channel affine `gamma`, `beta`.
/// Statistics are taken over the channels of each group and all spatial
/// positions.
pub fn group_norm<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>, groups: usize, eps: f64) -> Result<Var<'g>> {
    let op = GroupNorm {
        groups,
        eps,
        stats: Vec::new(),
    };
    x.graph().apply(op, &[x, gamma, beta])
}
