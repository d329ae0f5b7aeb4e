use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aepnet::checkpoint::Checkpoint;
use aepnet::config::TrainConfig;
use aepnet::dataset::{self, GenOptions, Manifest, Split};
use aepnet::{ablation, eval, rvol, trainer};
use aepnet_core::data::{preprocess, PhantomParams, Sample};
use aepnet_core::losses::real_error_rate;
use aepnet_core::metrics::DEFAULT_BIN_EDGES;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// Error-map prediction for segmentation quality assessment on synthetic
/// 3D phantoms.
#[derive(Parser)]
#[command(name = "aepnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantoms, degraded masks, error maps and boundary targets.
    GenData(GenData),
    /// Train a model on the train split of a dataset.
    Train(Train),
    /// Predict the error map of one mask.
    Predict(Predict),
    /// Evaluate a checkpoint and write a metrics report.
    Eval(Eval),
    /// Train and compare the three variants over several seeds.
    Ablate(Ablate),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    count: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [32, 32, 32])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    masks_per_case: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written under the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print losses every N iterations (0 = never).
    #[arg(long, default_value_t = 100)]
    print_every: usize,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    case: String,
    #[arg(long, required_unless_present = "mask")]
    mask_index: Option<usize>,
    /// Assess this label volume (RVOL, u8) instead of a stored mask.
    #[arg(long, conflicts_with = "mask_index")]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write mid-slice PGM images.
    #[arg(long)]
    slices: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    report: PathBuf,
    /// Seg.DSC bin edges.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BIN_EDGES)]
    edges: Vec<f64>,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    seeds: Vec<u64>,
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("{}: no such directory", path.display());
    }
    Ok(())
}

fn gen_data(a: GenData) -> Result<()> {
    let dims: [usize; 3] = a.dims.as_slice().try_into().context("--dims takes three values")?;
    let opts = GenOptions {
        count: a.count,
        masks_per_case: a.masks_per_case,
        seed: a.seed,
        phantom: PhantomParams {
            dims,
            num_classes: a.classes,
            ..PhantomParams::default()
        },
    };
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let manifest = dataset::generate(&a.out, &opts)?;
    let masks: usize = manifest.cases.iter().map(|c| c.masks.len()).sum();
    println!("wrote {} cases, {masks} masks to {}", manifest.cases.len(), a.out.display());
    println!("Seg.DSC of generated masks (unweighted foreground mean):");
    print!("{}", dataset::dsc_histogram(&manifest));
    Ok(())
}

fn train(a: Train) -> Result<()> {
    require_dir(&a.data)?;
    let config = TrainConfig::load(&a.config)?;
    let start = Instant::now();
    let every = a.print_every;
    let outcome = trainer::train(&config, &a.data, &a.out, a.resume.as_deref(), &mut |iter, l, lr| {
        if every > 0 && (iter % every == 0 || iter == 1) {
            let opt = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.5}"));
            println!(
                "iter {iter:>6}  total {:.5}  l1 {:.5}  l2 {}  l3 {}  lr {lr:.3e}",
                l.total,
                l.l1,
                opt(l.l2),
                opt(l.l3)
            );
        }
    })?;
    println!(
        "{} iterations in {:.1} s; checkpoint {}",
        outcome.iterations_run,
        start.elapsed().as_secs_f64(),
        outcome.checkpoint.display()
    );
    Ok(())
}

fn predict(a: Predict) -> Result<()> {
    require_dir(&a.data)?;
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let manifest = Manifest::load(&a.data)?;
    let idx = manifest
        .find(&a.case)
        .with_context(|| format!("no case {:?} in {}", a.case, a.data.display()))?;
    let case = dataset::load_case(&a.data, &manifest, idx)?;
    let mask = match (&a.mask, a.mask_index) {
        (Some(path), _) => rvol::read_u8(path)?,
        (None, Some(k)) => {
            let n = case.masks.len();
            case.masks
                .get(k)
                .with_context(|| format!("case {} has {n} masks, no index {k}", a.case))?
                .mask
                .clone()
        }
        (None, None) => bail!("one of --mask-index or --mask is required"),
    };
    let c = manifest.num_classes();
    let sample = Sample::new(preprocess(&case.image), mask, case.gt.clone(), c)?;
    let p = eval::predict(&model, &sample)?;
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    rvol::write_u8(&a.out.join("error_map.rvol"), &p.error_map)?;
    rvol::write_f32(&a.out.join("error_prob.rvol"), &p.error_prob)?;
    if let Some(b) = &p.boundary {
        rvol::write_f32(&a.out.join("boundary.rvol"), b)?;
    }
    if a.slices {
        eval::export_slices(&a.out.join("slices"), &sample, &p, c)?;
    }
    println!("pAcc {:.6}", p.p_acc);
    match p.c_er {
        Some(v) => println!("cER {v:.6}"),
        None => println!("cER -"),
    }
    println!("rER {:.6}", real_error_rate(sample.error_map.data())?);
    Ok(())
}

fn evaluate(a: Eval) -> Result<()> {
    require_dir(&a.data)?;
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let manifest = Manifest::load(&a.data)?;
    let e = eval::evaluate(&model, &a.data, &manifest, a.split, &mut |_| {})?;
    let report = eval::report(&e, &a.edges)?;
    eval::export(&a.report, &e, &report)?;
    print!("{}", eval::render_table(&report));
    println!(
        "trivial predictors: all-error DSC {:.4}, all-correct DSC {:.4}",
        e.baselines.all_error_dsc, e.baselines.all_correct_dsc
    );
    println!("{} records; report in {}", e.records.len(), a.report.display());
    Ok(())
}

fn ablate(a: Ablate) -> Result<()> {
    require_dir(&a.data)?;
    let config = TrainConfig::load(&a.config)?;
    let report = ablation::run(&config, &a.data, &a.out, &a.seeds, &mut |line| println!("{line}"))?;
    print!("{}", report.render());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
