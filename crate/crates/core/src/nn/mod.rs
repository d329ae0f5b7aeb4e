//! Differentiable 3D network primitives over `[C, D, H, W]` tensors.

mod conv;
mod norm;
mod pool;

use alloc::vec;
use alloc::vec::Vec;

pub use conv::{conv3d, transposed_conv3d, ConvSpec};
pub use norm::{group_norm, GROUP_NORM_EPS};
pub use pool::{global_avg_pool, max_pool3d};

use crate::autodiff::{Op, Var};
use crate::{Error, Result, Tensor};

struct ConcatChannels;

impl Op for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.rank() != 4 || b.rank() != 4 || a.shape()[1..] != b.shape()[1..] {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut shape = a.shape().to_vec();
        shape[0] += b.shape()[0];
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        Tensor::new(shape, data)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (ga, gb) = grad.data().split_at(a.len());
        vec![
            Some(Tensor::new(a.shape().to_vec(), ga.to_vec()).expect("slice of a")),
            Some(Tensor::new(b.shape().to_vec(), gb.to_vec()).expect("slice of b")),
        ]
    }
}

/// Stacks `a: [C1, D, H, W]` and `b: [C2, D, H, W]` into `[C1 + C2, D, H, W]`,
/// `a` first.
pub fn concat_channels<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    a.graph().apply(ConcatChannels, &[a, b])
}
