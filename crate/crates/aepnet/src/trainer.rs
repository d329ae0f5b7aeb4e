//! The training loop: per-iteration sampling, augmentation, Adam with the
//! poly schedule, a CSV loss log and periodic checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use aepnet_core::data::Sample;
use aepnet_core::model::AepNet;
use aepnet_core::optim::{poly_lr, AdamState};
use aepnet_core::rng::{self, Purpose};
use aepnet_core::train::{augment, dead_parameters, loss_and_gradients, train_step_batch, StepLosses};
use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{case_samples, load_case, Manifest, Split};
use crate::error::{Error, Result};

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.toml";
pub const LOG_HEADER: [&str; 6] = ["iter", "l1", "l2", "l3", "total", "lr"];

/// A training sample with the identifiers it came from.
#[derive(Clone, Debug)]
pub struct Labeled {
    pub case: String,
    pub mask_index: usize,
    pub sample: Sample,
}

/// Every (case, mask) sample of `split`, images preprocessed.
pub fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Labeled>> {
    let mut out = Vec::new();
    for i in manifest.split(split) {
        let case = load_case(dir, manifest, i)?;
        for (k, sample) in case_samples(&case).into_iter().enumerate() {
            out.push(Labeled {
                case: manifest.cases[i].id.clone(),
                mask_index: k,
                sample,
            });
        }
    }
    Ok(out)
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration:06}.toml")
}

/// Index into `pool` drawn for draw `index` of the run.
fn pick(seed: u64, index: u64, pool: usize) -> usize {
    rng::stream(seed, Purpose::Sample, index).random_range(0..pool)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn log_row(iter: usize, l: &StepLosses, lr: f64) -> [String; 6] {
    [
        iter.to_string(),
        l.l1.to_string(),
        opt(l.l2),
        opt(l.l3),
        l.total.to_string(),
        lr.to_string(),
    ]
}

/// Rows of an existing log with `iter <= keep`.
fn read_log_prefix(path: &Path, keep: usize) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(Error::csv(path))?;
        let iter: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "log row without an iteration number"))?;
        if iter <= keep {
            rows.push(rec);
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub last: Option<StepLosses>,
    pub iterations_run: usize,
}

/// Trains on the train split of the dataset in `data` and writes the log
/// and checkpoints to `out`. With `resume`, continues from that checkpoint
/// (which must carry the same configuration) and reproduces the remainder
/// of an uninterrupted run.
pub fn train(
    config: &TrainConfig,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    progress: &mut dyn FnMut(usize, &StepLosses, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest = Manifest::load(data)?;
    if manifest.num_classes() != config.model.num_classes {
        return Err(Error::Invalid(format!(
            "dataset has {} classes, model expects {}",
            manifest.num_classes(),
            config.model.num_classes
        )));
    }
    let pool = load_split(data, &manifest, Split::Train)?;
    if pool.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    fs::create_dir_all(out).map_err(Error::io(out))?;

    let (mut model, mut adam, start) = match resume {
        Some(path) => {
            let c = Checkpoint::load_matching(path, config)?;
            (c.model, c.adam, c.iteration)
        }
        None => {
            let model = AepNet::build(&config.model, config.variant, config.seed)?;
            let adam = AdamState::new(&model.params);
            (model, adam, 0)
        }
    };

    let log_path = out.join(LOG_FILE);
    let kept = if start > 0 && log_path.exists() {
        read_log_prefix(&log_path, start)?
    } else {
        Vec::new()
    };
    let mut log = csv::Writer::from_path(&log_path).map_err(Error::csv(&log_path))?;
    log.write_record(LOG_HEADER).map_err(Error::csv(&log_path))?;
    for rec in &kept {
        log.write_record(rec).map_err(Error::csv(&log_path))?;
    }

    let b = config.batch_size;
    let draw = |index: usize| -> Result<(usize, Sample)> {
        let k = pick(config.seed, index as u64, pool.len());
        let s = augment(&pool[k].sample, config.model.crop, &config.flip_axes, config.seed, index)?;
        Ok((k, s))
    };

    if start == 0 {
        let (_, first) = draw(0)?;
        let (_, grads) = loss_and_gradients(&model, &first, &config.loss)?;
        let dead = dead_parameters(&model, &grads);
        if !dead.is_empty() {
            return Err(Error::Invalid(format!("parameters without gradient: {}", dead.join(", "))));
        }
    }

    let mut last = None;
    for i in start..config.max_iter {
        let lr = poly_lr(i, config.max_iter, config.lr0, config.poly_power)?;
        let drawn = (0..b).map(|j| draw(i * b + j)).collect::<Result<Vec<_>>>()?;
        let batch: Vec<Sample> = drawn.iter().map(|(_, s)| s.clone()).collect();
        let losses = match train_step_batch(&mut model, &mut adam, &batch, &config.loss, lr, i + 1) {
            Ok(l) => l,
            Err(aepnet_core::Error::NonFiniteLoss { iteration, detail }) => {
                let dump = out.join(format!("nonfinite_iter{iteration}.txt"));
                let sources: Vec<String> = drawn
                    .iter()
                    .map(|(k, _)| format!("{} mask {}", pool[*k].case, pool[*k].mask_index))
                    .collect();
                let text = format!("iteration = {iteration}\nlr = {lr}\nlosses = {detail}\nsamples = {sources:?}\n");
                fs::write(&dump, text).map_err(Error::io(&dump))?;
                log.flush().map_err(Error::io(&log_path))?;
                return Err(Error::Invalid(format!(
                    "non-finite loss at iteration {iteration}; details in {}",
                    dump.display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        log.write_record(log_row(i + 1, &losses, lr)).map_err(Error::csv(&log_path))?;
        progress(i + 1, &losses, lr);
        last = Some(losses);
        let done = i + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.max_iter {
            log.flush().map_err(Error::io(&log_path))?;
            snapshot(config, &model, &adam, done).save(&out.join(checkpoint_name(done)))?;
        }
    }
    log.flush().map_err(Error::io(&log_path))?;
    let checkpoint = out.join(FINAL_CHECKPOINT);
    snapshot(config, &model, &adam, config.max_iter).save(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        last,
        iterations_run: config.max_iter - start,
    })
}

fn snapshot(config: &TrainConfig, model: &AepNet, adam: &AdamState, iteration: usize) -> Checkpoint {
    Checkpoint {
        config: config.clone(),
        iteration,
        model: model.clone(),
        adam: adam.clone(),
    }
}

/// `(iter, total)` pairs from a training log.
pub fn read_totals(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(Error::csv(path))?;
            let iter = rec.get(0).and_then(|s| s.parse().ok());
            let total = rec.get(4).and_then(|s| s.parse().ok());
            iter.zip(total).ok_or_else(|| Error::format(path, "malformed log row"))
        })
        .collect()
}
