//! Error-map and segmentation-quality metrics, correlation statistics and
//! Seg.DSC-binned reporting.
//!
//! Error maps use 1 = correct, 0 = error. Error-map metrics treat the error
//! voxels as the positive class.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{LabelVolume, Volume};
use crate::math::sqrt;
use crate::{Error, Result, Tensor};

/// Seg.DSC bin edges of the binned report.
pub const DEFAULT_BIN_EDGES: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorMapMetrics {
    pub dsc: f64,
    pub acc: f64,
    /// `None` when nothing is predicted as error.
    pub prec: Option<f64>,
    /// `None` when the real map has no errors.
    pub recl: Option<f64>,
}

impl ErrorMapMetrics {
    pub fn from_confusion(c: &Confusion) -> Self {
        let denom = 2 * c.tp + c.fp + c.fn_;
        Self {
            dsc: if denom == 0 { 1.0 } else { (2 * c.tp) as f64 / denom as f64 },
            acc: (c.tp + c.tn) as f64 / c.total() as f64,
            prec: (c.tp + c.fp > 0).then(|| c.tp as f64 / (c.tp + c.fp) as f64),
            recl: (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64),
        }
    }
}

fn check_binary(v: &LabelVolume, what: &str) -> Result<()> {
    match v.data().iter().find(|&&x| x > 1) {
        Some(bad) => Err(Error::NotBinary(format!("{what} contains {bad}"))),
        None => Ok(()),
    }
}

/// Binary error map from `[2, ...]` probabilities (channel 0 = error,
/// channel 1 = correct). Ties go to correct.
pub fn binarize(pred_prob: &Tensor) -> Result<LabelVolume> {
    let s = pred_prob.shape();
    if s.len() != 4 || s[0] != 2 {
        return Err(Error::InvalidArgument(format!("expected [2, dx, dy, dz] probabilities, got {s:?}")));
    }
    let n = s[1] * s[2] * s[3];
    let d = pred_prob.data();
    let data = (0..n).map(|i| u8::from(d[n + i] >= d[i])).collect();
    Volume::new([s[1], s[2], s[3]], data)
}

pub fn confusion(pred: &LabelVolume, real: &LabelVolume) -> Result<Confusion> {
    if pred.dims() != real.dims() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: pred.dims().to_vec(),
            rhs: real.dims().to_vec(),
        });
    }
    check_binary(pred, "predicted error map")?;
    check_binary(real, "real error map")?;
    let mut c = Confusion::default();
    for (&p, &r) in pred.data().iter().zip(real.data()) {
        match (p == 0, r == 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// DSC, Acc, Prec and Recl of the error class after argmax binarization.
pub fn error_map_metrics(pred_prob: &Tensor, real: &LabelVolume) -> Result<ErrorMapMetrics> {
    let pred = binarize(pred_prob)?;
    Ok(ErrorMapMetrics::from_confusion(&confusion(&pred, real)?))
}

/// Fraction of voxels a binary error map marks as correct.
pub fn predicted_accuracy(pred: &LabelVolume) -> Result<f64> {
    check_binary(pred, "predicted error map")?;
    let correct = pred.data().iter().filter(|&&v| v == 1).count();
    Ok(correct as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegQuality {
    /// Unweighted mean binary DSC over foreground classes present in mask
    /// or ground truth; 1 when none is.
    pub dsc: f64,
    pub acc: f64,
}

pub fn seg_quality(mask: &LabelVolume, gt: &LabelVolume, num_classes: usize) -> Result<SegQuality> {
    if mask.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            op: "seg_quality",
            lhs: mask.dims().to_vec(),
            rhs: gt.dims().to_vec(),
        });
    }
    let mut inter = vec![0usize; num_classes];
    let mut in_mask = vec![0usize; num_classes];
    let mut in_gt = vec![0usize; num_classes];
    let mut agree = 0usize;
    for (&m, &g) in mask.data().iter().zip(gt.data()) {
        let (m, g) = (m as usize, g as usize);
        if m >= num_classes || g >= num_classes {
            return Err(Error::OutOfRange(format!("label {} with {num_classes} classes", m.max(g))));
        }
        in_mask[m] += 1;
        in_gt[g] += 1;
        if m == g {
            inter[m] += 1;
            agree += 1;
        }
    }
    let dscs: Vec<f64> = (1..num_classes)
        .filter(|&c| in_mask[c] + in_gt[c] > 0)
        .map(|c| 2.0 * inter[c] as f64 / (in_mask[c] + in_gt[c]) as f64)
        .collect();
    let dsc = if dscs.is_empty() { 1.0 } else { dscs.iter().sum::<f64>() / dscs.len() as f64 };
    Ok(SegQuality {
        dsc,
        acc: agree as f64 / mask.len() as f64,
    })
}

fn check_pairs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            op: "paired statistic",
            lhs: vec![xs.len()],
            rhs: vec![ys.len()],
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in paired statistic".into()));
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys)?;
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(format!("pearson needs at least 2 pairs, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if sxx == 0.0 || syy == 0.0 || constant(xs) || constant(ys) {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Mean absolute difference.
pub fn mae(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys)?;
    if xs.is_empty() {
        return Err(Error::InvalidArgument("mae of no pairs".into()));
    }
    Ok(xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / xs.len() as f64)
}

/// Average ranks, 1-based, ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys)?;
    pearson(&ranks(xs), &ranks(ys))
}

/// Metrics of one (case, mask) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub case: String,
    pub mask_index: usize,
    pub seg_dsc: f64,
    pub seg_acc: f64,
    pub dsc: f64,
    pub acc: f64,
    pub prec: Option<f64>,
    pub recl: Option<f64>,
    pub p_acc: f64,
    /// Real error rate of the mask.
    pub r_er: f64,
    /// Error rate predicted by the CEU head, when the model has one.
    pub c_er: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowSummary {
    pub label: String,
    pub count: usize,
    pub seg_dsc: Option<f64>,
    pub seg_acc: Option<f64>,
    pub dsc: Option<f64>,
    pub acc: Option<f64>,
    pub prec: Option<f64>,
    pub recl: Option<f64>,
    pub p_acc: Option<f64>,
    pub r_er: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl RowSummary {
    pub fn of(label: String, records: &[&Record]) -> Self {
        let m = |f: &dyn Fn(&Record) -> Option<f64>| mean_of(records.iter().map(|r| f(r)));
        Self {
            label,
            count: records.len(),
            seg_dsc: m(&|r| Some(r.seg_dsc)),
            seg_acc: m(&|r| Some(r.seg_acc)),
            dsc: m(&|r| Some(r.dsc)),
            acc: m(&|r| Some(r.acc)),
            prec: m(&|r| r.prec),
            recl: m(&|r| r.recl),
            p_acc: m(&|r| Some(r.p_acc)),
            r_er: m(&|r| Some(r.r_er)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    /// Pearson between Seg.Acc and pAcc.
    pub pcc_a: Option<f64>,
    /// Pearson between Seg.DSC and pAcc.
    pub pcc_d: Option<f64>,
    /// Mean |Seg.Acc − pAcc|.
    pub mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub edges: Vec<f64>,
    /// Seg.DSC ≤ the lowest edge.
    pub underflow: RowSummary,
    /// One row per `(edges[i], edges[i + 1]]`.
    pub bins: Vec<RowSummary>,
    /// Seg.DSC above the highest edge.
    pub overflow: RowSummary,
    pub overall: RowSummary,
    pub correlation: Correlation,
}

impl MetricsReport {
    /// Rows in display order: underflow, bins, overflow, overall.
    pub fn rows(&self) -> impl Iterator<Item = &RowSummary> {
        core::iter::once(&self.underflow)
            .chain(&self.bins)
            .chain(core::iter::once(&self.overflow))
            .chain(core::iter::once(&self.overall))
    }
}

/// Which row of `edges` a Seg.DSC value falls into: `None` for underflow,
/// `Some(edges.len() - 1)` for overflow.
pub fn bin_index(edges: &[f64], seg_dsc: f64) -> Option<usize> {
    if seg_dsc <= edges[0] {
        return None;
    }
    Some(edges.windows(2).position(|w| seg_dsc > w[0] && seg_dsc <= w[1]).unwrap_or(edges.len() - 1))
}

fn edge_label(lo: f64, hi: f64) -> String {
    format!("({lo}, {hi}]")
}

/// Groups `records` into half-open `(lo, hi]` Seg.DSC bins and computes
/// per-row means and the overall correlation summary.
pub fn binned_report(records: &[Record], edges: &[f64]) -> Result<MetricsReport> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!("bin edges must be strictly increasing, got {edges:?}")));
    }
    let mut groups: Vec<Vec<&Record>> = vec![Vec::new(); edges.len() + 1];
    for r in records {
        let slot = match bin_index(edges, r.seg_dsc) {
            None => 0,
            Some(i) => i + 1,
        };
        groups[slot].push(r);
    }
    let last = *edges.last().unwrap_or(&1.0);
    let underflow = RowSummary::of(format!("<= {}", edges[0]), &groups[0]);
    let bins = (0..edges.len() - 1)
        .map(|i| RowSummary::of(edge_label(edges[i], edges[i + 1]), &groups[i + 1]))
        .collect();
    let overflow = RowSummary::of(format!("> {last}"), &groups[edges.len()]);
    let all: Vec<&Record> = records.iter().collect();
    let overall = RowSummary::of("overall".into(), &all);
    let seg_acc: Vec<f64> = records.iter().map(|r| r.seg_acc).collect();
    let seg_dsc: Vec<f64> = records.iter().map(|r| r.seg_dsc).collect();
    let p_acc: Vec<f64> = records.iter().map(|r| r.p_acc).collect();
    let correlation = Correlation {
        pcc_a: pearson(&seg_acc, &p_acc).ok(),
        pcc_d: pearson(&seg_dsc, &p_acc).ok(),
        mae: mae(&seg_acc, &p_acc).ok(),
    };
    Ok(MetricsReport {
        edges: edges.to_vec(),
        underflow,
        bins,
        overflow,
        overall,
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_error_map, one_hot};
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_binary(n: usize, p: f64, seed: u64) -> LabelVolume {
        let mut rng = stream(seed, Purpose::Sample, 2);
        Volume::new([1, 1, n], (0..n).map(|_| u8::from(!rng.random_bool(p))).collect()).unwrap()
    }

    fn probs_from_map(map: &LabelVolume) -> Tensor {
        one_hot(map, 2).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let real = random_binary(64, 0.3, 1);
        let m = error_map_metrics(&probs_from_map(&real), &real).unwrap();
        assert_eq!(m, ErrorMapMetrics { dsc: 1.0, acc: 1.0, prec: Some(1.0), recl: Some(1.0) });
    }

    #[test]
    fn all_correct_prediction() {
        let real = random_binary(64, 0.3, 2);
        let e = real.data().iter().filter(|&&v| v == 0).count();
        assert!(e > 0);
        let pred = LabelVolume::filled(real.dims(), 1);
        let m = error_map_metrics(&probs_from_map(&pred), &real).unwrap();
        assert_eq!(m.recl, Some(0.0));
        assert_eq!(m.prec, None);
        assert_eq!(m.dsc, 0.0);
        assert_eq!(m.acc, 1.0 - e as f64 / 64.0);
    }

    #[test]
    fn no_errors_anywhere_is_perfect_dsc() {
        let real = LabelVolume::filled([2, 2, 2], 1);
        let m = error_map_metrics(&probs_from_map(&real), &real).unwrap();
        assert_eq!(m.dsc, 1.0);
        assert_eq!(m.recl, None);
        assert_eq!(m.prec, None);
    }

    #[test]
    fn confusion_matches_loop_oracle_on_random_4_cubed() {
        let mut rng = stream(3, Purpose::Sample, 3);
        let n = 64;
        let p_err: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut data = p_err.clone();
        data.extend(p_err.iter().map(|p| 1.0 - p));
        let probs = Tensor::new(vec![2, 4, 4, 4], data).unwrap();
        let real = Volume::new([4, 4, 4], (0..n).map(|_| u8::from(rng.random_bool(0.6))).collect()).unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for i in 0..n {
            let pred_err = p_err[i] > 1.0 - p_err[i];
            let real_err = real.data()[i] == 0;
            if pred_err && real_err {
                tp += 1;
            } else if pred_err {
                fp += 1;
            } else if real_err {
                fn_ += 1;
            } else {
                tn += 1;
            }
        }
        let m = error_map_metrics(&probs, &real).unwrap();
        assert_eq!(m.dsc, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        assert_eq!(m.acc, (tp + tn) as f64 / n as f64);
        assert_eq!(m.prec, Some(tp as f64 / (tp + fp) as f64));
        assert_eq!(m.recl, Some(tp as f64 / (tp + fn_) as f64));
    }

    #[test]
    fn ties_binarize_to_correct() {
        let probs = Tensor::full(&[2, 1, 1, 2], 0.5);
        assert_eq!(binarize(&probs).unwrap().data(), &[1, 1]);
        assert!(binarize(&Tensor::zeros(&[3, 1, 1, 1])).is_err());
    }

    #[test]
    fn metrics_shape_mismatch() {
        let probs = Tensor::full(&[2, 1, 1, 2], 0.5);
        let real = LabelVolume::filled([1, 1, 3], 1);
        assert!(matches!(error_map_metrics(&probs, &real), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn p_acc_examples() {
        assert_eq!(predicted_accuracy(&LabelVolume::filled([2, 2, 2], 1)).unwrap(), 1.0);
        assert_eq!(predicted_accuracy(&LabelVolume::filled([2, 2, 2], 0)).unwrap(), 0.0);
        let mut v = LabelVolume::filled([2, 2, 2], 1);
        v.set(0, 0, 0, 0);
        v.set(1, 1, 1, 0);
        v.set(0, 1, 0, 0);
        assert_eq!(predicted_accuracy(&v).unwrap(), 1.0 - 3.0 / 8.0);
        assert!(predicted_accuracy(&LabelVolume::filled([1, 1, 1], 2)).is_err());
    }

    #[test]
    fn seg_quality_examples() {
        let mut rng = stream(5, Purpose::Sample, 4);
        let gt = Volume::new([4, 4, 4], (0..64).map(|_| rng.random_range(0..4u8)).collect()).unwrap();
        assert_eq!(seg_quality(&gt, &gt, 4).unwrap(), SegQuality { dsc: 1.0, acc: 1.0 });
        let mut m = gt.clone();
        let v = *m.get(0, 0, 0);
        m.set(0, 0, 0, (v + 1) % 4);
        assert_eq!(seg_quality(&m, &gt, 4).unwrap().acc, 1.0 - 1.0 / 64.0);
    }

    #[test]
    fn seg_dsc_two_class_hand_case() {
        // gt foreground 4 voxels, mask foreground 3 voxels, overlap 2.
        let gt = Volume::new([1, 1, 8], vec![1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
        let mask = Volume::new([1, 1, 8], vec![0, 0, 1, 1, 1, 0, 0, 0]).unwrap();
        let q = seg_quality(&mask, &gt, 2).unwrap();
        let mut inter = 0;
        let (mut a, mut b) = (0, 0);
        for i in 0..8 {
            let (m, g) = (mask.data()[i] == 1, gt.data()[i] == 1);
            inter += usize::from(m && g);
            a += usize::from(m);
            b += usize::from(g);
        }
        assert_eq!(q.dsc, 2.0 * inter as f64 / (a + b) as f64);
        assert_eq!(q.dsc, 4.0 / 7.0);
        assert_eq!(q.acc, 5.0 / 8.0);
    }

    #[test]
    fn seg_dsc_skips_absent_classes() {
        let gt = Volume::new([1, 1, 4], vec![0, 1, 1, 0]).unwrap();
        assert_eq!(seg_quality(&gt, &gt, 5).unwrap().dsc, 1.0);
        let bg = LabelVolume::filled([1, 1, 4], 0);
        assert_eq!(seg_quality(&bg, &bg, 3).unwrap().dsc, 1.0);
        assert!(seg_quality(&gt, &gt, 1).is_err());
    }

    #[test]
    fn perfect_prediction_p_acc_equals_seg_acc() {
        let mut rng = stream(6, Purpose::Sample, 5);
        let gt = Volume::new([4, 4, 4], (0..64).map(|_| rng.random_range(0..3u8)).collect()).unwrap();
        let mut mask = gt.clone();
        for i in [3usize, 10, 40] {
            mask.data_mut()[i] = (mask.data()[i] + 1) % 3;
        }
        let real = make_error_map(&mask, &gt).unwrap();
        let p = predicted_accuracy(&real).unwrap();
        assert_eq!(p, seg_quality(&mask, &gt, 3).unwrap().acc);
        let errors = real.data().iter().filter(|&&v| v == 0).count() as f64 / 64.0;
        assert_eq!(p + errors, 1.0);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&xs, &[1.0; 4]), Err(Error::ZeroVariance)));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&xs, &ys[..3]).is_err());
    }

    #[test]
    fn pearson_against_direct_formula() {
        let mut rng = stream(7, Purpose::Sample, 6);
        let xs: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect();
        // n·Σxy − Σx·Σy over the product of root terms.
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let syy: f64 = ys.iter().map(|y| y * y).sum();
        let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((pearson(&xs, &ys).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn mae_examples() {
        let xs = [0.1, 0.5, 0.9];
        assert_eq!(mae(&xs, &xs).unwrap(), 0.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x - 0.25).collect();
        assert!((mae(&xs, &shifted).unwrap() - 0.25).abs() < 1e-15);
        let ys = [0.2, 0.3, 1.0];
        let mut s = 0.0;
        for i in 0..3 {
            s += (xs[i] - ys[i]).abs();
        }
        assert_eq!(mae(&xs, &ys).unwrap(), s / 3.0);
        assert!(mae(&xs, &ys[..2]).is_err());
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 8.0, 27.0, 64.0];
        assert!((spearman(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
    }

    fn record(seg_dsc: f64, p_acc: f64) -> Record {
        Record {
            case: "c".into(),
            mask_index: 0,
            seg_dsc,
            seg_acc: 0.9,
            dsc: 0.5,
            acc: 0.9,
            prec: None,
            recl: Some(0.4),
            p_acc,
            r_er: 0.1,
            c_er: None,
        }
    }

    #[test]
    fn single_record_lands_in_one_bin() {
        for dsc in [0.3, 0.5, 0.55, 0.6, 0.93, 0.95, 0.99, 1.0] {
            let r = binned_report(&[record(dsc, 0.9)], &DEFAULT_BIN_EDGES).unwrap();
            let populated: usize = r.rows().filter(|row| row.count == 1).count();
            assert_eq!(populated, 2, "dsc {dsc}");
            assert_eq!(r.overall.count, 1);
        }
        let r = binned_report(&[record(0.6, 0.9)], &DEFAULT_BIN_EDGES).unwrap();
        assert_eq!(r.bins[0].count, 1);
        assert_eq!(r.bins[0].label, "(0.5, 0.6]");
    }

    #[test]
    fn identical_records_average_to_themselves() {
        let recs = vec![record(0.75, 0.9); 4];
        let r = binned_report(&recs, &DEFAULT_BIN_EDGES).unwrap();
        let row = &r.bins[2];
        assert_eq!(row.count, 4);
        assert_eq!(row.seg_dsc, Some(0.75));
        assert_eq!(row.dsc, Some(0.5));
        assert_eq!(row.prec, None);
        assert_eq!(row.recl, Some(0.4));
        assert_eq!(r.bins[0].dsc, None);
    }

    #[test]
    fn unsorted_edges_rejected() {
        assert!(binned_report(&[], &[0.5, 0.5, 0.7]).is_err());
        assert!(binned_report(&[], &[0.7, 0.6]).is_err());
    }

    #[test]
    fn synthetic_cohort_matches_hand_counts() {
        let dscs = [0.42, 0.51, 0.58, 0.6, 0.61, 0.79, 0.8, 0.85, 0.9, 0.91, 0.949, 0.95, 0.97, 1.0];
        let recs: Vec<Record> = dscs.iter().enumerate().map(|(i, &d)| record(d, 0.8 + 0.01 * i as f64)).collect();
        let r = binned_report(&recs, &DEFAULT_BIN_EDGES).unwrap();
        assert_eq!(r.underflow.count, 1);
        let counts: Vec<usize> = r.bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![3, 1, 2, 2, 3]);
        assert_eq!(r.overflow.count, 2);
        let total: usize = r.underflow.count + counts.iter().sum::<usize>() + r.overflow.count;
        assert_eq!(total, recs.len());
        assert!(r.correlation.pcc_a.is_none());
        assert!(r.correlation.pcc_d.unwrap() > 0.9);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                let t: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r2 = pearson(&t, &ys).unwrap();
                prop_assert!((r - r2).abs() < 1e-12, "{} vs {}", r, r2);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn error_metrics_ranges_and_harmonic_identity(seed in 0u64..2000, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
            let real = random_binary(50, p1, seed);
            let pred = random_binary(50, p2, seed + 7919);
            let m = ErrorMapMetrics::from_confusion(&confusion(&pred, &real).unwrap());
            prop_assert!((0.0..=1.0).contains(&m.dsc));
            prop_assert!((0.0..=1.0).contains(&m.acc));
            if let (Some(p), Some(r)) = (m.prec, m.recl) {
                prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
                if p + r > 0.0 {
                    prop_assert!((m.dsc - 2.0 * p * r / (p + r)).abs() < 1e-12);
                }
            }
            let pa = predicted_accuracy(&pred).unwrap();
            let err_frac = pred.data().iter().filter(|&&v| v == 0).count() as f64 / 50.0;
            prop_assert_eq!(pa + err_frac, 1.0);
        }
    }
}
