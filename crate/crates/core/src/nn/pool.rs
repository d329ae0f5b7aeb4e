use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Op, Reduction, Var};
use crate::{Error, Result, Tensor};

/// 2×2×2 max pooling with stride 2. Ties resolve to the first element of the
/// window in row-major order.
struct MaxPool2 {
    argmax: Vec<usize>,
}

impl Op for MaxPool2 {
    fn name(&self) -> &'static str {
        "max_pool3d"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch {
                op: "max_pool3d",
                lhs: vec![0; 4],
                rhs: x.shape().to_vec(),
            });
        }
        let [c, d, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "max_pool3d needs even spatial extents, got {:?}",
                &x.shape()[1..]
            )));
        }
        let (od, oh, ow) = (d / 2, h / 2, w / 2);
        let src = x.data();
        let mut out = Vec::with_capacity(c * od * oh * ow);
        self.argmax = Vec::with_capacity(out.capacity());
        for ch in 0..c {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = ((ch * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * xx + dx;
                                    if best == usize::MAX || src[i] > best_v {
                                        best = i;
                                        best_v = src[i];
                                    }
                                }
                            }
                        }
                        out.push(best_v);
                        self.argmax.push(best);
                    }
                }
            }
        }
        Tensor::new(vec![c, od, oh, ow], out)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = Tensor::zeros(inputs[0].shape());
        let dst = gx.data_mut();
        for (&i, &g) in self.argmax.iter().zip(grad.data()) {
            dst[i] += g;
        }
        vec![Some(gx)]
    }
}

/// Max pooling with window 2 and stride 2 over `[C, D, H, W]`; every spatial
/// extent must be even.
pub fn max_pool3d(x: Var<'_>) -> Result<Var<'_>> {
    x.graph().apply(MaxPool2 { argmax: Vec::new() }, &[x])
}

/// Per-channel mean over the spatial axes: `[C, D, H, W] -> [C]`.
pub fn global_avg_pool(x: Var<'_>) -> Result<Var<'_>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "global_avg_pool",
            lhs: vec![0; 4],
            rhs: shape,
        });
    }
    x.reduce(Reduction::Mean, Some(&[1, 2, 3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, ParamId};

    #[test]
    fn constant_volume_halves() {
        let g = Graph::new();
        let y = max_pool3d(g.constant(Tensor::full(&[2, 4, 4, 2], 1.5))).unwrap();
        assert_eq!(y.shape(), vec![2, 2, 2, 1]);
        assert!(y.value().data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn block_maximum_and_routing() {
        let g = Graph::new();
        let x = g.param(ParamId(0), Tensor::new(vec![1, 2, 2, 2], (1..=8).map(f64::from).collect()).unwrap());
        let y = max_pool3d(x).unwrap();
        assert_eq!(y.item(), Some(8.0));
        let grads = g.backward(y.sum()).unwrap();
        let gx = grads.get(ParamId(0)).unwrap();
        assert_eq!(gx.data(), &[0., 0., 0., 0., 0., 0., 0., 1.]);
    }

    #[test]
    fn ties_route_to_first_in_scan_order() {
        let g = Graph::new();
        let x = g.param(ParamId(0), Tensor::full(&[1, 2, 2, 2], 3.0));
        let grads = g.backward(max_pool3d(x).unwrap().sum()).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[1., 0., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn odd_extent_rejected() {
        let g = Graph::new();
        assert!(max_pool3d(g.constant(Tensor::zeros(&[1, 3, 2, 2]))).is_err());
    }

    #[test]
    fn global_average() {
        let g = Graph::new();
        let c = global_avg_pool(g.constant(Tensor::full(&[3, 2, 2, 2], 0.75))).unwrap();
        assert_eq!(c.value().data(), &[0.75; 3]);

        let mut one = Tensor::zeros(&[1, 2, 3, 4]);
        one.data_mut()[5] = 1.0;
        let x = g.param(ParamId(0), one);
        let m = global_avg_pool(x).unwrap();
        assert_eq!(m.item(), Some(1.0 / 24.0));
        let grads = g.backward(m.sum()).unwrap();
        assert!(grads.get(ParamId(0)).unwrap().data().iter().all(|&v| v == 1.0 / 24.0));
    }
}
