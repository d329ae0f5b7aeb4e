//! Inference on whole volumes, per-record metrics, binned reports and
//! report export.
//!
//! `records.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `case` | case id |
//! | `mask_index` | mask number within the case |
//! | `seg_dsc`, `seg_acc` | quality of the mask against ground truth |
//! | `dsc`, `acc`, `prec`, `recl` | predicted vs. real error map, error class positive |
//! | `p_acc` | fraction of voxels predicted correct |
//! | `r_er` | real error rate |
//! | `c_er` | context-head error rate (blank without the head) |
//!
//! `prec` is blank when nothing is predicted as error, `recl` when the mask
//! has no errors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aepnet_core::data::{LabelVolume, Sample, Volume};
use aepnet_core::losses::real_error_rate;
use aepnet_core::metrics::{
    binarize, binned_report, confusion, predicted_accuracy, seg_quality, Confusion, ErrorMapMetrics, MetricsReport,
    Record, RowSummary,
};
use aepnet_core::model::AepNet;
use aepnet_core::train::network_inputs;
use aepnet_core::Graph;
use serde::Serialize;

use crate::dataset::{case_samples, load_case, Manifest, Split};
use crate::error::{write_toml, Error, Result};

pub const RECORD_COLUMNS: [&str; 11] = [
    "case", "mask_index", "seg_dsc", "seg_acc", "dsc", "acc", "prec", "recl", "p_acc", "r_er", "c_er",
];

/// Network output for one whole volume.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumePrediction {
    /// Probability of "error" per voxel.
    pub error_prob: Volume<f64>,
    /// Binarized map, 1 = correct, 0 = error.
    pub error_map: LabelVolume,
    pub boundary: Option<Volume<f64>>,
    pub p_acc: f64,
    pub c_er: Option<f64>,
}

/// Runs `model` on a sample whose image is already preprocessed.
pub fn predict(model: &AepNet, sample: &Sample) -> Result<VolumePrediction> {
    let dims = sample.dims();
    let (image, mask) = network_inputs(sample, model.config.num_classes)?;
    let graph = Graph::new();
    let pred = model.forward(&graph, &image, &mask)?;
    let prob = pred.error_prob.value();
    let n = dims.iter().product::<usize>();
    let error_map = binarize(&prob)?;
    let boundary = match pred.boundary {
        Some(b) => Some(Volume::new(dims, b.value().data().to_vec())?),
        None => None,
    };
    Ok(VolumePrediction {
        error_prob: Volume::new(dims, prob.data()[..n].to_vec())?,
        p_acc: predicted_accuracy(&error_map)?,
        error_map,
        boundary,
        c_er: pred.cer.and_then(|c| c.item()),
    })
}

/// Metrics of `prediction` for the mask in `sample`.
pub fn record(case: &str, mask_index: usize, sample: &Sample, prediction: &VolumePrediction, num_classes: usize) -> Result<Record> {
    let seg = seg_quality(&sample.mask, &sample.gt, num_classes)?;
    let m = ErrorMapMetrics::from_confusion(&confusion(&prediction.error_map, &sample.error_map)?);
    Ok(Record {
        case: case.into(),
        mask_index,
        seg_dsc: seg.dsc,
        seg_acc: seg.acc,
        dsc: m.dsc,
        acc: m.acc,
        prec: m.prec,
        recl: m.recl,
        p_acc: prediction.p_acc,
        r_er: real_error_rate(sample.error_map.data())?,
        c_er: prediction.c_er,
    })
}

/// Mean error-class DSC of the two constant predictors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Baselines {
    pub all_error_dsc: f64,
    pub all_correct_dsc: f64,
}

fn baseline_dsc(real: &LabelVolume, predicted: u8) -> Result<f64> {
    Ok(ErrorMapMetrics::from_confusion(&constant_confusion(real, predicted)?).dsc)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub records: Vec<Record>,
    pub baselines: Baselines,
}

/// Evaluates `model` on every (case, mask) of `split`, in manifest order.
pub fn evaluate(
    model: &AepNet,
    dir: &Path,
    manifest: &Manifest,
    split: Split,
    progress: &mut dyn FnMut(&Record),
) -> Result<Evaluation> {
    if manifest.num_classes() != model.config.num_classes {
        return Err(Error::Invalid(format!(
            "dataset has {} classes, model expects {}",
            manifest.num_classes(),
            model.config.num_classes
        )));
    }
    let mut records = Vec::new();
    let (mut all_error, mut all_correct) = (0.0, 0.0);
    for i in manifest.split(split) {
        let case = load_case(dir, manifest, i)?;
        let id = &manifest.cases[i].id;
        for (k, sample) in case_samples(&case).iter().enumerate() {
            let p = predict(model, sample)?;
            let r = record(id, k, sample, &p, model.config.num_classes)?;
            progress(&r);
            records.push(r);
            all_error += baseline_dsc(&sample.error_map, 0)?;
            all_correct += baseline_dsc(&sample.error_map, 1)?;
        }
    }
    if records.is_empty() {
        return Err(Error::Invalid("no records to evaluate".into()));
    }
    let n = records.len() as f64;
    Ok(Evaluation {
        records,
        baselines: Baselines {
            all_error_dsc: all_error / n,
            all_correct_dsc: all_correct / n,
        },
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    w.write_record(RECORD_COLUMNS).map_err(Error::csv(path))?;
    for r in records {
        w.write_record([
            r.case.clone(),
            r.mask_index.to_string(),
            r.seg_dsc.to_string(),
            r.seg_acc.to_string(),
            r.dsc.to_string(),
            r.acc.to_string(),
            opt(r.prec),
            opt(r.recl),
            r.p_acc.to_string(),
            r.r_er.to_string(),
            opt(r.c_er),
        ])
        .map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

fn write_pairs(path: &Path, header: [&str; 2], pairs: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    w.write_record(header).map_err(Error::csv(path))?;
    for (x, y) in pairs {
        w.write_record([x.to_string(), y.to_string()]).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

#[derive(Serialize)]
struct SummaryRow {
    label: String,
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seg_dsc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seg_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dsc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_er: Option<f64>,
}

impl From<&RowSummary> for SummaryRow {
    fn from(r: &RowSummary) -> Self {
        Self {
            label: r.label.clone(),
            count: r.count,
            seg_dsc: r.seg_dsc,
            seg_acc: r.seg_acc,
            dsc: r.dsc,
            acc: r.acc,
            prec: r.prec,
            recl: r.recl,
            p_acc: r.p_acc,
            r_er: r.r_er,
        }
    }
}

#[derive(Serialize)]
struct CorrelationSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pcc_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pcc_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mae: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    records: usize,
    seg_dsc: &'static str,
    edges: Vec<f64>,
    baselines: Baselines,
    correlation: CorrelationSummary,
    rows: Vec<SummaryRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Fixed-width table: one row per bin plus underflow, overflow and overall.
pub fn render_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "Seg.DSC", "n", "DSC", "Acc", "Prec", "Recl", "pAcc", "Seg.Acc", "rER"
    );
    for r in report.rows() {
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            r.label,
            r.count,
            cell(r.dsc),
            cell(r.acc),
            cell(r.prec),
            cell(r.recl),
            cell(r.p_acc),
            cell(r.seg_acc),
            cell(r.r_er)
        );
    }
    let c = &report.correlation;
    let _ = writeln!(s, "PCC_a {}  PCC_d {}  MAE {}", cell(c.pcc_a), cell(c.pcc_d), cell(c.mae));
    s
}

/// Writes `records.csv`, `summary.toml`, `table.txt`, `scatter_acc.csv`
/// (Seg.Acc vs pAcc) and `scatter_dsc.csv` (Seg.DSC vs pAcc) into `dir`.
pub fn export(dir: &Path, evaluation: &Evaluation, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let records = &evaluation.records;
    write_records(&dir.join("records.csv"), records)?;
    write_pairs(
        &dir.join("scatter_acc.csv"),
        ["seg_acc", "p_acc"],
        records.iter().map(|r| (r.seg_acc, r.p_acc)),
    )?;
    write_pairs(
        &dir.join("scatter_dsc.csv"),
        ["seg_dsc", "p_acc"],
        records.iter().map(|r| (r.seg_dsc, r.p_acc)),
    )?;
    let c = &report.correlation;
    let summary = Summary {
        records: records.len(),
        seg_dsc: "unweighted mean over foreground classes",
        edges: report.edges.clone(),
        baselines: evaluation.baselines,
        correlation: CorrelationSummary {
            pcc_a: c.pcc_a,
            pcc_d: c.pcc_d,
            mae: c.mae,
        },
        rows: report.rows().map(SummaryRow::from).collect(),
    };
    write_toml(&dir.join("summary.toml"), &summary)?;
    let table = dir.join("table.txt");
    fs::write(&table, render_table(report)).map_err(Error::io(&table))
}

pub fn report(evaluation: &Evaluation, edges: &[f64]) -> Result<MetricsReport> {
    Ok(binned_report(&evaluation.records, edges)?)
}

/// Confusion of a prediction that is `predicted` everywhere.
pub fn constant_confusion(real: &LabelVolume, predicted: u8) -> Result<Confusion> {
    Ok(confusion(&LabelVolume::filled(real.dims(), predicted), real)?)
}

/// Binary PGM (P5) of the middle slice along the last axis, values scaled
/// from `[0, max]` to `[0, 255]`.
pub fn write_mid_slice(path: &Path, dims: [usize; 3], values: &[f64], max: f64) -> Result<()> {
    let [dx, dy, dz] = dims;
    let z = dz / 2;
    let mut bytes = format!("P5\n{dy} {dx}\n255\n").into_bytes();
    for x in 0..dx {
        for y in 0..dy {
            let v = values[(x * dy + y) * dz + z];
            let scaled = if max > 0.0 { (v / max).clamp(0.0, 1.0) * 255.0 } else { 0.0 };
            bytes.push(scaled.round() as u8);
        }
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

/// Mid-slice graymaps of image, mask, real and predicted error maps.
pub fn export_slices(dir: &Path, sample: &Sample, prediction: &VolumePrediction, num_classes: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let dims = sample.dims();
    let as_f64 = |v: &LabelVolume| v.data().iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    write_mid_slice(&dir.join("image.pgm"), dims, sample.image.data(), 1.0)?;
    write_mid_slice(&dir.join("mask.pgm"), dims, &as_f64(&sample.mask), (num_classes - 1) as f64)?;
    write_mid_slice(&dir.join("error_real.pgm"), dims, &as_f64(&sample.error_map), 1.0)?;
    write_mid_slice(&dir.join("error_pred.pgm"), dims, &as_f64(&prediction.error_map), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aepnet_core::model::{AepNetConfig, Variant};

    fn sample(dims: [usize; 3]) -> Sample {
        let n = dims.iter().product::<usize>();
        let gt = Volume::new(dims, (0..n).map(|i| ((i / 7) % 4) as u8).collect()).unwrap();
        let mut mask = gt.clone();
        mask.data_mut()[..40].iter_mut().for_each(|v| *v = 0);
        let image = gt.map(|&v| f64::from(v) / 3.0);
        Sample::new(image, mask, gt, 4).unwrap()
    }

    #[test]
    fn prediction_fields_are_consistent() {
        let cfg = AepNetConfig {
            crop: [8, 8, 8],
            ..AepNetConfig::default()
        };
        let model = AepNet::build(&cfg, Variant::Full, 1).unwrap();
        let s = sample([8, 8, 8]);
        let p = predict(&model, &s).unwrap();
        let errors = p.error_map.data().iter().filter(|&&v| v == 0).count();
        assert_eq!(p.p_acc + errors as f64 / 512.0, 1.0);
        for (&prob, &bin) in p.error_prob.data().iter().zip(p.error_map.data()) {
            assert_eq!(bin == 0, prob > 0.5);
        }
        assert!(p.c_er.is_some() && p.boundary.is_some());
        let r = record("c", 0, &s, &p, 4).unwrap();
        assert!((0.0..=1.0).contains(&r.dsc) && (0.0..=1.0).contains(&r.seg_dsc));
        assert!(r.r_er > 0.0);
    }

    #[test]
    fn perfect_prediction_makes_pacc_equal_seg_acc() {
        let s = sample([8, 8, 8]);
        let p = VolumePrediction {
            error_prob: s.error_map.map(|&v| 1.0 - f64::from(v)),
            error_map: s.error_map.clone(),
            boundary: None,
            p_acc: predicted_accuracy(&s.error_map).unwrap(),
            c_er: None,
        };
        let r = record("c", 0, &s, &p, 4).unwrap();
        assert_eq!(r.p_acc, r.seg_acc);
        assert_eq!((r.dsc, r.prec, r.recl), (1.0, Some(1.0), Some(1.0)));
    }

    #[test]
    fn baselines_by_counting() {
        let s = sample([4, 4, 4]);
        let e = s.error_map.data().iter().filter(|&&v| v == 0).count() as f64;
        assert_eq!(baseline_dsc(&s.error_map, 1).unwrap(), 0.0);
        let expected = 2.0 * e / (e + 64.0);
        assert!((baseline_dsc(&s.error_map, 0).unwrap() - expected).abs() < 1e-15);
        let c = constant_confusion(&s.error_map, 0).unwrap();
        assert_eq!((c.tp as f64, c.fn_), (e, 0));
    }

    #[test]
    fn pgm_slice_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pgm");
        let dims = [2, 3, 4];
        let values: Vec<f64> = (0..24).map(|i| i as f64).collect();
        write_mid_slice(&p, dims, &values, 23.0).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 6);
        let expect: Vec<u8> = [2.0, 6.0, 10.0, 14.0, 18.0, 22.0]
            .iter()
            .map(|v: &f64| (v / 23.0 * 255.0).round() as u8)
            .collect();
        assert_eq!(body, expect.as_slice());
    }

    #[test]
    fn records_csv_has_documented_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let r = Record {
            case: "case000".into(),
            mask_index: 2,
            seg_dsc: 0.75,
            seg_acc: 0.9,
            dsc: 0.5,
            acc: 0.95,
            prec: None,
            recl: Some(0.25),
            p_acc: 0.92,
            r_er: 0.1,
            c_er: None,
        };
        write_records(&p, &[r]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RECORD_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "case000,2,0.75,0.9,0.5,0.95,,0.25,0.92,0.1,");
    }
}
