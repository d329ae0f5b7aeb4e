//! Adam with a poly learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::math::{powf, sqrt};
use crate::model::ParamStore;
use crate::{Error, Gradients, ParamId, Result, Tensor};

/// `lr0 · (1 − iter / max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, lr0: f64, power: f64) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        return Err(Error::OutOfRange(format!("iteration {iter} outside 0..={max_iter}")));
    }
    Ok(lr0 * powf(1.0 - iter as f64 / max_iter as f64, power))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for every tensor of a [`ParamStore`], in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(Tensor::zeros_like).collect();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: alloc::vec![self.m.len()],
                rhs: alloc::vec![params.len()],
            });
        }
        for ((w, m), v) in params.values().iter().zip(&self.m).zip(&self.v) {
            w.check_same_shape(m, "adam_step")?;
            w.check_same_shape(v, "adam_step")?;
        }
        for (id, g) in grads.iter() {
            if id.0 >= params.len() {
                return Err(Error::InvalidArgument(format!("gradient for unknown parameter {}", id.0)));
            }
            params.get(id).check_same_shape(g, "adam_step")?;
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - powf(self.beta1, t);
        let bc2 = 1.0 - powf(self.beta2, t);
        for (i, w) in params.values_mut().iter_mut().enumerate() {
            let g = grads.get(ParamId(i));
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, w) in w.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}
