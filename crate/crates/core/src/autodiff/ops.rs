//! Elementwise, activation, dense and reduction operations.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Op, Var};
use crate::math::{exp, sigmoid};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryOp(Binary);

impl Op for BinaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        a.check_same_shape(b, self.name())?;
        Ok(match self.0 {
            Binary::Add => a.zip_map(b, |x, y| x + y),
            Binary::Sub => a.zip_map(b, |x, y| x - y),
            Binary::Mul => a.zip_map(b, |x, y| x * y),
        })
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
        match self.0 {
            Binary::Add => vec![Some(grad.clone()), Some(grad.clone())],
            Binary::Sub => vec![Some(grad.clone()), Some(grad.map(|g| -g))],
            Binary::Mul => vec![
                wants[0].then(|| grad.zip_map(inputs[1], |g, y| g * y)),
                wants[1].then(|| grad.zip_map(inputs[0], |g, x| g * x)),
            ],
        }
    }
}

struct Scale(f64);

impl Op for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let c = self.0;
        Ok(inputs[0].map(|x| x * c))
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let c = self.0;
        vec![Some(grad.map(|g| g * c))]
    }
}

struct AddScalar(f64);

impl Op for AddScalar {
    fn name(&self) -> &'static str {
        "add_scalar"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let c = self.0;
        Ok(inputs[0].map(|x| x + c))
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone())]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

struct ActivationOp(Activation);

impl Op for ActivationOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(match self.0 {
            Activation::Relu => inputs[0].map(|x| if x > 0.0 { x } else { 0.0 }),
            Activation::Sigmoid => inputs[0].map(sigmoid),
        })
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        // relu'(0) is taken as 0.
        let g = match self.0 {
            Activation::Relu => grad.zip_map(inputs[0], |g, x| if x > 0.0 { g } else { 0.0 }),
            Activation::Sigmoid => grad.zip_map(output, |g, s| g * s * (1.0 - s)),
        };
        vec![Some(g)]
    }
}

/// `W x + b` for a vector `x`.
struct Linear;

impl Op for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let mismatch = || Error::ShapeMismatch {
            op: "linear",
            lhs: w.shape().to_vec(),
            rhs: x.shape().to_vec(),
        };
        if x.rank() != 1 || w.rank() != 2 || w.shape()[1] != x.len() {
            return Err(mismatch());
        }
        let n_out = w.shape()[0];
        if b.shape() != [n_out] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: vec![n_out],
                rhs: b.shape().to_vec(),
            });
        }
        let n_in = x.len();
        let out = (0..n_out)
            .map(|o| {
                let row = &w.data()[o * n_in..(o + 1) * n_in];
                row.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>() + b.data()[o]
            })
            .collect();
        Ok(Tensor::from_vec(out))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let n_in = x.len();
        let n_out = grad.len();
        let gx = wants[0].then(|| {
            let mut gx = vec![0.0; n_in];
            for (o, &g) in grad.data().iter().enumerate() {
                let row = &w.data()[o * n_in..(o + 1) * n_in];
                for (acc, &wv) in gx.iter_mut().zip(row) {
                    *acc += g * wv;
                }
            }
            Tensor::from_vec(gx)
        });
        let gw = wants[1].then(|| {
            let mut gw = Vec::with_capacity(n_out * n_in);
            for &g in grad.data() {
                gw.extend(x.data().iter().map(|&xv| g * xv));
            }
            Tensor::new(w.shape().to_vec(), gw).expect("weight shape")
        });
        vec![gx, gw, Some(grad.clone())]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

struct Reduce {
    kind: Reduction,
    axes: Option<Vec<usize>>,
}

impl Reduce {
    /// Output shape and, for every input element, the index it reduces into.
    fn plan(&self, shape: &[usize]) -> Result<(Vec<usize>, Vec<usize>, usize)> {
        let Some(axes) = &self.axes else {
            let n = shape.iter().product();
            return Ok((Vec::new(), vec![0; n], n));
        };
        let rank = shape.len();
        for &axis in axes {
            if axis >= rank {
                return Err(Error::InvalidAxis { axis, rank });
            }
        }
        let keep: Vec<usize> = (0..rank).filter(|a| !axes.contains(a)).collect();
        let out_shape: Vec<usize> = keep.iter().map(|&a| shape[a]).collect();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let n: usize = shape.iter().product();
        let mut target = Vec::with_capacity(n);
        let mut index = vec![0usize; rank];
        for _ in 0..n {
            let mut t = 0;
            for &a in &keep {
                t = t * shape[a] + index[a];
            }
            target.push(t);
            for a in (0..rank).rev() {
                index[a] += 1;
                if index[a] < shape[a] {
                    break;
                }
                index[a] = 0;
            }
        }
        Ok((out_shape, target, count))
    }
}

impl Op for Reduce {
    fn name(&self) -> &'static str {
        match self.kind {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let (out_shape, target, count) = self.plan(x.shape())?;
        let mut out = Tensor::zeros(&out_shape);
        for (&t, &v) in target.iter().zip(x.data()) {
            out.data_mut()[t] += v;
        }
        if self.kind == Reduction::Mean && count > 0 {
            let inv = 1.0 / count as f64;
            out.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (_, target, count) = self.plan(x.shape()).expect("validated in forward");
        let scale = match self.kind {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / count.max(1) as f64,
        };
        let data = target.iter().map(|&t| grad.data()[t] * scale).collect();
        vec![Some(Tensor::new(x.shape().to_vec(), data).expect("input shape"))]
    }
}

struct Reshape(Vec<usize>);

impl Op for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let n: usize = self.0.iter().product();
        if n != x.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: self.0.clone(),
            });
        }
        Ok(Tensor::new(self.0.clone(), x.data().to_vec())?)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let g = Tensor::new(inputs[0].shape().to_vec(), grad.data().to_vec()).expect("same length");
        vec![Some(g)]
    }
}

/// Softmax across the leading (channel) axis, independently per voxel.
struct ChannelSoftmax;

impl Op for ChannelSoftmax {
    fn name(&self) -> &'static str {
        "channel_softmax"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if x.rank() < 1 || x.shape()[0] == 0 {
            return Err(Error::InvalidArgument("softmax needs a channel axis".to_string()));
        }
        let c = x.shape()[0];
        let n = x.len() / c;
        let mut out = Tensor::zeros(x.shape());
        let src = x.data();
        let dst = out.data_mut();
        for i in 0..n {
            let max = (0..c).map(|k| src[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..c {
                let e = exp(src[k * n + i] - max);
                dst[k * n + i] = e;
                total += e;
            }
            for k in 0..c {
                dst[k * n + i] /= total;
            }
        }
        Ok(out)
    }

    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let c = output.shape()[0];
        let n = output.len() / c;
        let y = output.data();
        let g = grad.data();
        let mut dx = Tensor::zeros(output.shape());
        let d = dx.data_mut();
        for i in 0..n {
            let dot: f64 = (0..c).map(|k| g[k * n + i] * y[k * n + i]).sum();
            for k in 0..c {
                d[k * n + i] = y[k * n + i] * (g[k * n + i] - dot);
            }
        }
        vec![Some(dx)]
    }
}

impl<'g> Var<'g> {
    pub fn binary(self, kind: Binary, other: Var<'g>) -> Result<Var<'g>> {
        self.graph().apply(BinaryOp(kind), &[self, other])
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(Binary::Add, other)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(Binary::Sub, other)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(Binary::Mul, other)
    }

    /// Multiplication by a constant.
    pub fn scale(self, c: f64) -> Var<'g> {
        self.graph().apply(Scale(c), &[self]).expect("scale is shape-total")
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.graph().apply(AddScalar(c), &[self]).expect("add_scalar is shape-total")
    }

    pub fn activation(self, kind: Activation) -> Var<'g> {
        self.graph().apply(ActivationOp(kind), &[self]).expect("activations are shape-total")
    }

    pub fn relu(self) -> Var<'g> {
        self.activation(Activation::Relu)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.activation(Activation::Sigmoid)
    }

    /// `weight · self + bias` with `weight: [n_out, n_in]`, `self: [n_in]`.
    pub fn linear(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        self.graph().apply(Linear, &[self, weight, bias])
    }

    pub fn reduce(self, kind: Reduction, axes: Option<&[usize]>) -> Result<Var<'g>> {
        let op = Reduce {
            kind,
            axes: axes.map(|a| a.to_vec()),
        };
        self.graph().apply(op, &[self])
    }

    pub fn sum(self) -> Var<'g> {
        self.reduce(Reduction::Sum, None).expect("full reduction is total")
    }

    pub fn mean(self) -> Var<'g> {
        self.reduce(Reduction::Mean, None).expect("full reduction is total")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        self.graph().apply(Reshape(shape.to_vec()), &[self])
    }

    /// Softmax over axis 0.
    pub fn channel_softmax(self) -> Result<Var<'g>> {
        self.graph().apply(ChannelSoftmax, &[self])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::grad_check;
    use crate::{Graph, ParamId};

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn add_componentwise() {
        let g = Graph::new();
        let a = g.constant(t(&[1.0, 2.0]));
        let b = g.constant(t(&[3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let g = Graph::new();
        let a = g.constant(t(&[1.0, 2.0]));
        let b = g.constant(t(&[3.0, 4.0, 5.0]));
        assert_eq!(
            a.add(b).unwrap_err(),
            Error::ShapeMismatch {
                op: "add",
                lhs: vec![2],
                rhs: vec![3]
            }
        );
    }

    #[test]
    fn mul_by_zeros_annihilates() {
        let g = Graph::new();
        let x = g.param(ParamId(0), t(&[1.5, -2.0]));
        let z = g.constant(t(&[0.0, 0.0]));
        let y = x.mul(z).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0]);
        let grads = g.backward(y.sum()).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn activation_values() {
        let g = Graph::new();
        let x = g.param(ParamId(0), t(&[0.0]));
        let s = x.sigmoid();
        assert_eq!(s.item(), Some(0.5));
        let grads = g.backward(s.sum()).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[0.25]);
        let r = g.constant(t(&[-3.0, 3.0])).relu();
        assert_eq!(r.value().data(), &[0.0, 3.0]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let g = Graph::new();
        let x = g.param(ParamId(0), t(&[0.0, 1.0]));
        let grads = g.backward(x.relu().sum()).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn linear_values_and_weight_gradient() {
        let g = Graph::new();
        let x = g.constant(t(&[1.0, 1.0]));
        let w = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = g.constant(t(&[3.0]));
        assert_eq!(x.linear(w, b).unwrap().value().data(), &[6.0]);

        let g = Graph::new();
        let x = g.constant(t(&[2.0, -1.0, 0.5]));
        let ident = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let y = x.linear(g.constant(ident), g.constant(t(&[0.0; 3]))).unwrap();
        assert_eq!(y.value().data(), x.value().data());

        // dL/dW = g xᵀ for L = <upstream, Wx + b>
        let g = Graph::new();
        let xv = t(&[2.0, -1.0]);
        let x = g.constant(xv.clone());
        let w = g.param(ParamId(0), Tensor::new(vec![2, 2], vec![0.3, 0.1, -0.2, 0.7]).unwrap());
        let b = g.constant(t(&[0.0, 0.0]));
        let upstream = t(&[5.0, -3.0]);
        let y = x.linear(w, b).unwrap();
        let loss = y.mul(g.constant(upstream.clone())).unwrap().sum();
        let gw = g.backward(loss).unwrap().get(ParamId(0)).unwrap().clone();
        assert_eq!(gw.data(), &[10.0, -5.0, -6.0, 3.0]);
    }

    #[test]
    fn linear_dimension_mismatch() {
        let g = Graph::new();
        let x = g.constant(t(&[1.0, 1.0, 1.0]));
        let w = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = g.constant(t(&[3.0]));
        assert!(matches!(x.linear(w, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn reductions() {
        let g = Graph::new();
        let x = g.param(ParamId(0), t(&[1.0, 2.0, 3.0]));
        let s = x.sum();
        assert_eq!(s.item(), Some(6.0));
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[1.0, 1.0, 1.0]);

        let g = Graph::new();
        let c = g.constant(Tensor::full(&[2, 3, 4], 2.5));
        assert_eq!(c.mean().item(), Some(2.5));
        let m = c.reduce(Reduction::Mean, Some(&[1, 2])).unwrap();
        assert_eq!(m.value().data(), &[2.5, 2.5]);
        assert_eq!(
            c.reduce(Reduction::Sum, Some(&[3])).unwrap_err(),
            Error::InvalidAxis { axis: 3, rank: 3 }
        );
    }

    #[test]
    fn axis_sum_layout() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        assert_eq!(x.reduce(Reduction::Sum, Some(&[0])).unwrap().value().data(), &[5., 7., 9.]);
        assert_eq!(x.reduce(Reduction::Sum, Some(&[1])).unwrap().value().data(), &[6., 15.]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![0.0, 10.0, -4.0, 1.0, -10.0, 2.0]).unwrap());
        let y = x.channel_softmax().unwrap().value();
        for i in 0..3 {
            assert!((y.data()[i] + y.data()[3 + i] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_of_each_op() {
        let a = t(&[0.3, -1.2, 0.8, 2.0]);
        let b = t(&[1.1, 0.4, -0.6, 0.25]);
        let w = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let bias = t(&[0.1, -0.2, 0.3]);
        let up = t(&[0.5, -1.5, 2.0, 0.7]);
        let up3 = t(&[0.9, -0.4, 1.3]);
        let cases: Vec<(&str, f64)> = vec![
            ("add", grad_check(|g, p| { let u = g.constant(up.clone()); p[0].add(p[1])?.mul(u).map(|v| v.sum()) }, &[a.clone(), b.clone()], 1e-5).unwrap().max_rel_error),
            ("sub", grad_check(|g, p| { let u = g.constant(up.clone()); p[0].sub(p[1])?.mul(u).map(|v| v.sum()) }, &[a.clone(), b.clone()], 1e-5).unwrap().max_rel_error),
            ("mul", grad_check(|g, p| { let u = g.constant(up.clone()); p[0].mul(p[1])?.mul(u).map(|v| v.sum()) }, &[a.clone(), b.clone()], 1e-5).unwrap().max_rel_error),
            ("scale", grad_check(|g, p| { let u = g.constant(up.clone()); p[0].scale(-2.5).mul(u).map(|v| v.sum()) }, &[a.clone()], 1e-5).unwrap().max_rel_error),
            ("sigmoid", grad_check(|g, p| { let u = g.constant(up.clone()); p[0].sigmoid().mul(u).map(|v| v.sum()) }, &[a.clone()], 1e-5).unwrap().max_rel_error),
            ("relu", grad_check(|g, p| { let u = g.constant(up.clone()); p[0].relu().mul(u).map(|v| v.sum()) }, &[a.clone()], 1e-5).unwrap().max_rel_error),
            ("linear", grad_check(|g, p| { let u = g.constant(up3.clone()); p[0].linear(p[1], p[2])?.mul(u).map(|v| v.sum()) }, &[a.clone(), w.clone(), bias.clone()], 1e-5).unwrap().max_rel_error),
            ("mean_axes", grad_check(|g, p| { let u = g.constant(t(&[1.0, -2.0])); p[0].reshape(&[2, 2])?.reduce(Reduction::Mean, Some(&[1]))?.mul(u).map(|v| v.sum()) }, &[a.clone()], 1e-5).unwrap().max_rel_error),
            ("softmax", grad_check(|g, p| { let u = g.constant(Tensor::new(vec![2, 2], up.data().to_vec()).unwrap()); p[0].reshape(&[2, 2])?.channel_softmax()?.mul(u).map(|v| v.sum()) }, &[a.clone()], 1e-5).unwrap().max_rel_error),
        ];
        for (name, err) in cases {
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}
