//! Central finite-difference checks of analytic gradients.

use alloc::format;
use alloc::vec::Vec;

use super::graph::{Graph, ParamId, Var};
use crate::{Error, Result, Tensor};

/// The coordinate with the largest disagreement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Worst {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Worst>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Checks every coordinate of every tensor in `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect();
    grad_check_at(f, params, step, &coords)
}

/// Checks only the listed `(param, flat index)` coordinates.
pub fn grad_check_at<F>(f: F, params: &[Tensor], step: f64, coords: &[(usize, usize)]) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let graph = Graph::new();
        let vars: Vec<Var<'_>> = values
            .iter()
            .enumerate()
            .map(|(i, t)| graph.param(ParamId(i), t.clone()))
            .collect();
        let out = f(&graph, &vars)?;
        out.item().ok_or_else(|| Error::NonScalarLoss(out.shape()))
    };

    let analytic = {
        let graph = Graph::new();
        let vars: Vec<Var<'_>> = params
            .iter()
            .enumerate()
            .map(|(i, t)| graph.param(ParamId(i), t.clone()))
            .collect();
        let out = f(&graph, &vars)?;
        graph.backward(out)?
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for &(p, i) in coords {
        if p >= params.len() || i >= params[p].len() {
            return Err(Error::OutOfRange(format!("coordinate ({p}, {i})")));
        }
        let original = params[p].data()[i];
        work[p].data_mut()[i] = original + step;
        let plus = eval(&work)?;
        work[p].data_mut()[i] = original - step;
        let minus = eval(&work)?;
        work[p].data_mut()[i] = original;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.get(ParamId(p)).map_or(0.0, |g| g.data()[i]);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(Worst {
                param: p,
                index: i,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(report)
}
