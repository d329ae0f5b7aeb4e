//! Training losses: two-class generalized Dice on the error map, MSE on the
//! enhanced boundary, squared error on the global error rate, and their
//! weighted total.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Op, Var};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.3,
            gamma: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    /// `(α·l1 + β·l2) + γ·l3`, in that order.
    pub fn combine(&self, l1: f64, l2: f64, l3: f64) -> f64 {
        (self.alpha * l1 + self.beta * l2) + self.gamma * l3
    }
}

/// Generalized Dice over channels with weights `1 / (Σᵢ rᵢ(c))²`; absent
/// classes get weight zero.
struct GeneralizedDice {
    reference: Tensor,
    weights: Vec<f64>,
    // Σ_c ω_c Σᵢ pᵢ(c) rᵢ(c), Σ_c ω_c Σᵢ (pᵢ(c) + rᵢ(c))
    overlap: f64,
    total: f64,
}

impl Op for GeneralizedDice {
    fn name(&self) -> &'static str {
        "generalized_dice_loss"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let p = inputs[0];
        let r = &self.reference;
        let c = r.shape()[0];
        let n = r.len() / c;
        self.overlap = 0.0;
        self.total = 0.0;
        for k in 0..c {
            let pc = &p.data()[k * n..(k + 1) * n];
            let rc = &r.data()[k * n..(k + 1) * n];
            let w = self.weights[k];
            self.overlap += w * pc.iter().zip(rc).map(|(a, b)| a * b).sum::<f64>();
            self.total += w * pc.iter().zip(rc).map(|(a, b)| a + b).sum::<f64>();
        }
        Ok(Tensor::scalar(1.0 - 2.0 * self.overlap / self.total))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        // dL/dpᵢ(c) = −2 ω_c (rᵢ(c)·T − O) / T²
        let g = grad.data()[0];
        let r = &self.reference;
        let c = r.shape()[0];
        let n = r.len() / c;
        let (o, t) = (self.overlap, self.total);
        let mut dp = Tensor::zeros(inputs[0].shape());
        for k in 0..c {
            let w = self.weights[k];
            let rc = &r.data()[k * n..(k + 1) * n];
            for (d, &rv) in dp.data_mut()[k * n..(k + 1) * n].iter_mut().zip(rc) {
                *d = g * -2.0 * w * (rv * t - o) / (t * t);
            }
        }
        vec![Some(dp)]
    }
}

/// Loss on predicted probabilities `p` and one-hot reference `r`, both
/// `[2, ...]` (any trailing shape). Every voxel's probabilities must sum to
/// one within 1e-6.
pub fn generalized_dice_loss<'g>(p: Var<'g>, r: &Tensor) -> Result<Var<'g>> {
    let pv = p.value();
    pv.check_same_shape(r, "generalized_dice_loss")?;
    if r.rank() == 0 || r.shape()[0] != 2 || r.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "generalized_dice_loss",
            lhs: vec![2],
            rhs: r.shape().to_vec(),
        });
    }
    let n = r.len() / 2;
    for i in 0..n {
        let (r0, r1) = (r.data()[i], r.data()[n + i]);
        if !((r0 == 1.0 && r1 == 0.0) || (r0 == 0.0 && r1 == 1.0)) {
            return Err(Error::NotOneHot(format!("reference voxel {i} is ({r0}, {r1})")));
        }
        let s = pv.data()[i] + pv.data()[n + i];
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probabilities at voxel {i} sum to {s}")));
        }
    }
    let weights = (0..2)
        .map(|k| {
            let count: f64 = r.data()[k * n..(k + 1) * n].iter().sum();
            if count > 0.0 {
                1.0 / (count * count)
            } else {
                0.0
            }
        })
        .collect();
    let op = GeneralizedDice {
        reference: r.clone(),
        weights,
        overlap: 0.0,
        total: 0.0,
    };
    p.graph().apply(op, &[p])
}

/// Mean squared error between `pred` and `target`, compared element by
/// element; only the element counts must agree.
pub fn boundary_mse<'g>(pred: Var<'g>, target: &Tensor) -> Result<Var<'g>> {
    let shape = pred.shape();
    if target.len() != shape.iter().product::<usize>() {
        return Err(Error::ShapeMismatch {
            op: "boundary_mse",
            lhs: shape,
            rhs: target.shape().to_vec(),
        });
    }
    let t = pred.graph().constant(Tensor::new(shape, target.data().to_vec())?);
    let d = pred.sub(t)?;
    Ok(d.mul(d)?.mean())
}

/// Fraction of voxels marked as errors (value 0) in a map where 1 means
/// correct.
pub fn real_error_rate(error_map: &[u8]) -> Result<f64> {
    if error_map.is_empty() {
        return Err(Error::InvalidArgument("empty error map".into()));
    }
    let mut errors = 0usize;
    for (i, &v) in error_map.iter().enumerate() {
        match v {
            0 => errors += 1,
            1 => {}
            other => return Err(Error::NotBinary(format!("value {other} at voxel {i}"))),
        }
    }
    Ok(errors as f64 / error_map.len() as f64)
}

/// `(cer − rer)²`.
pub fn ceu_loss(cer: Var<'_>, rer: f64) -> Var<'_> {
    let d = cer.add_scalar(-rer);
    d.mul(d).expect("same shape")
}

/// `(α·l1 + β·l2) + γ·l3`; a missing `l3` (no context head) drops the γ term.
pub fn total_loss<'g>(l1: Var<'g>, l2: Option<Var<'g>>, l3: Option<Var<'g>>, weights: &LossWeights) -> Result<Var<'g>> {
    let mut total = l1.scale(weights.alpha);
    if let Some(l2) = l2 {
        total = total.add(l2.scale(weights.beta))?;
    }
    if let Some(l3) = l3 {
        total = total.add(l3.scale(weights.gamma))?;
    }
    Ok(total)
}
