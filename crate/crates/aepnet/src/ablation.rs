//! Ablation: the three variants trained under one protocol on one dataset,
//! with parameter budgets matched to the full network, over several seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aepnet_core::model::{AepNet, AepNetConfig, Variant};

use crate::config::TrainConfig;
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation};
use crate::trainer::train;

/// Largest allowed relative parameter-count difference from the full network.
pub const BUDGET_TOLERANCE: f64 = 0.10;

pub fn parameter_count(model: &AepNetConfig, variant: Variant) -> Result<usize> {
    Ok(AepNet::build(model, variant, 0)?.parameter_count())
}

fn relative_gap(count: usize, reference: usize) -> f64 {
    (count as f64 - reference as f64).abs() / reference as f64
}

/// Model configuration for `variant` whose parameter count is within
/// [`BUDGET_TOLERANCE`] of the full network built from `base`. The base
/// configuration is kept when it already fits; otherwise the width and
/// group count closest to the budget are chosen.
pub fn budget_matched(base: &AepNetConfig, variant: Variant) -> Result<AepNetConfig> {
    let reference = parameter_count(base, Variant::Full)?;
    if relative_gap(parameter_count(base, variant)?, reference) <= BUDGET_TOLERANCE {
        return Ok(base.clone());
    }
    let mut best: Option<(f64, AepNetConfig)> = None;
    for width in 1..=4 * base.base_channels {
        for groups in (1..=width).filter(|g| width % g == 0) {
            let candidate = AepNetConfig {
                base_channels: width,
                gn_groups: groups,
                ..base.clone()
            };
            if candidate.validate().is_err() {
                continue;
            }
            let gap = relative_gap(parameter_count(&candidate, variant)?, reference);
            // Among equal gaps prefer the group count nearest the base one.
            let better = match &best {
                None => true,
                Some((g, c)) => {
                    gap < *g || (gap == *g && groups.abs_diff(base.gn_groups) < c.gn_groups.abs_diff(base.gn_groups))
                }
            };
            if better {
                best = Some((gap, candidate));
            }
        }
    }
    match best {
        Some((gap, c)) if gap <= BUDGET_TOLERANCE => Ok(c),
        _ => Err(Error::Invalid(format!(
            "no {} configuration within {}% of the {reference}-parameter budget",
            variant.name(),
            BUDGET_TOLERANCE * 100.0
        ))),
    }
}

/// Overall error-map metrics of one trained model on the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub variant: Variant,
    pub seed: u64,
    pub parameters: usize,
    pub dsc: f64,
    pub acc: f64,
    pub prec: Option<f64>,
    pub recl: Option<f64>,
}

impl Run {
    fn from_evaluation(variant: Variant, seed: u64, parameters: usize, e: &Evaluation) -> Self {
        let n = e.records.len() as f64;
        let mean = |f: &dyn Fn(&aepnet_core::metrics::Record) -> Option<f64>| {
            let vals: Vec<f64> = e.records.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Self {
            variant,
            seed,
            parameters,
            dsc: e.records.iter().map(|r| r.dsc).sum::<f64>() / n,
            acc: e.records.iter().map(|r| r.acc).sum::<f64>() / n,
            prec: mean(&|r| r.prec),
            recl: mean(&|r| r.recl),
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Per-variant medians over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub parameters: usize,
    pub dsc: f64,
    pub acc: f64,
    pub prec: Option<f64>,
    pub recl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<Run>,
    /// In [`Variant::ALL`] order: plain, no-CEU, full.
    pub summaries: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn from_runs(runs: Vec<Run>) -> Self {
        let summaries = Variant::ALL
            .iter()
            .filter_map(|&variant| {
                let of: Vec<&Run> = runs.iter().filter(|r| r.variant == variant).collect();
                let first = of.first()?;
                let med = |f: &dyn Fn(&Run) -> Option<f64>| median(&of.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
                Some(VariantSummary {
                    variant,
                    parameters: first.parameters,
                    dsc: med(&|r| Some(r.dsc))?,
                    acc: med(&|r| Some(r.acc))?,
                    prec: med(&|r| r.prec),
                    recl: med(&|r| r.recl),
                })
            })
            .collect();
        Self { runs, summaries }
    }

    /// Median-DSC differences (no-CEU − plain, full − no-CEU).
    pub fn effect_sizes(&self) -> Option<(f64, f64)> {
        match self.summaries.as_slice() {
            [plain, no_ceu, full] => Some((no_ceu.dsc - plain.dsc, full.dsc - no_ceu.dsc)),
            _ => None,
        }
    }

    /// Whether median DSC satisfies plain ≤ no-CEU ≤ full.
    pub fn ordering_holds(&self) -> Option<bool> {
        self.effect_sizes().map(|(a, b)| a >= 0.0 && b >= 0.0)
    }

    pub fn render(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>10} {:>8} {:>8} {:>8} {:>8}",
            "variant", "params", "DSC", "Acc", "Prec", "Recl"
        );
        for v in &self.summaries {
            let _ = writeln!(
                s,
                "{:<14} {:>10} {:>8} {:>8} {:>8} {:>8}",
                v.variant.name(),
                v.parameters,
                cell(Some(v.dsc)),
                cell(Some(v.acc)),
                cell(v.prec),
                cell(v.recl)
            );
        }
        let seeds = self.runs.iter().filter(|r| r.variant == Variant::Full).count();
        let _ = writeln!(s, "medians over {seeds} seed(s)");
        if let (Some(holds), Some((a, b))) = (self.ordering_holds(), self.effect_sizes()) {
            let verdict = if holds { "holds" } else { "violated" };
            let _ = writeln!(
                s,
                "ordering plain <= no_ceu <= full {verdict}: no_ceu - plain = {a:+.4}, full - no_ceu = {b:+.4}"
            );
        }
        s
    }

    pub fn write_runs(&self, path: &Path) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
        w.write_record(["variant", "seed", "params", "dsc", "acc", "prec", "recl"])
            .map_err(Error::csv(path))?;
        for r in &self.runs {
            w.write_record([
                r.variant.name().to_string(),
                r.seed.to_string(),
                r.parameters.to_string(),
                r.dsc.to_string(),
                r.acc.to_string(),
                opt(r.prec),
                opt(r.recl),
            ])
            .map_err(Error::csv(path))?;
        }
        w.flush().map_err(Error::io(path))
    }
}

/// Trains every variant for every seed under `base`'s protocol and
/// evaluates each on the test split. Runs go to `out/<variant>/seed<s>`;
/// `out/runs.csv` and `out/ablation.txt` hold the comparison.
pub fn run(
    base: &TrainConfig,
    data: &Path,
    out: &Path,
    seeds: &[u64],
    log: &mut dyn FnMut(&str),
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Invalid("at least one seed is required".into()));
    }
    base.validate()?;
    let manifest = Manifest::load(data)?;
    let mut runs = Vec::new();
    for variant in Variant::ALL {
        let model = budget_matched(&base.model, variant)?;
        for &seed in seeds {
            let config = TrainConfig {
                seed,
                variant,
                model: model.clone(),
                ..base.clone()
            };
            let dir = out.join(variant.name()).join(format!("seed{seed}"));
            let outcome = train(&config, data, &dir, None, &mut |_, _, _| {})?;
            let trained = crate::checkpoint::Checkpoint::load(&outcome.checkpoint)?.model;
            let e = evaluate(&trained, data, &manifest, Split::Test, &mut |_| {})?;
            let r = Run::from_evaluation(variant, seed, trained.parameter_count(), &e);
            log(&format!("{} seed {seed}: DSC {:.4}", variant.name(), r.dsc));
            runs.push(r);
        }
    }
    let report = AblationReport::from_runs(runs);
    fs::create_dir_all(out).map_err(Error::io(out))?;
    report.write_runs(&out.join("runs.csv"))?;
    let text = out.join("ablation.txt");
    fs::write(&text, report.render()).map_err(Error::io(&text))?;
    Ok(report)
}
