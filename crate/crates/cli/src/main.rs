//! Command-line front end: dataset generation, training, evaluation,
//! prediction and CSV export.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use unisolver::components::SplitTag;
use unisolver::data::Dataset;
use unisolver::records::{self, CurveLine, ReportLine};
use unisolver::solvers::generate_dataset;
use unisolver::train::{self, evaluate, evaluate_predictions, Checkpoint, EvalReport};

#[derive(Parser)]
#[command(name = "unisolver", version, about = "Conditioned PDE transformer toolkit")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset file.
    Generate {
        /// string, advection, family1d or heterns-mini
        family: String,
        /// TOML file with `samples`, `dtype` and a `[task]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model as described by a run config.
    Train {
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        /// Run config whose model section must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report to compare against for relative promotion.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Score the stored targets instead of model predictions.
        #[arg(long)]
        inject_truth: bool,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the output field of one dataset sample.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Field file, or CSV when the name ends in `.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a report or loss curve into CSV.
    Export {
        #[arg(long, conflicts_with = "curve", required_unless_present = "curve")]
        report: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Id,
    Ood,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = configure_threads().and_then(|_| run(cli.command)) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("UNISOLVER_THREADS") {
        let n: usize = v.parse().with_context(|| format!("UNISOLVER_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { family, config, seed, out } => generate(&family, config.as_deref(), seed, &out),
        Command::Train { config } => train_cmd(&config),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            config,
            baseline,
            inject_truth,
            label,
            out,
        } => eval(&EvalArgs {
            checkpoint,
            dataset,
            split,
            config,
            baseline,
            inject_truth,
            label,
            out,
        }),
        Command::Predict {
            checkpoint,
            dataset,
            index,
            out,
        } => predict(&checkpoint, &dataset, index, &out),
        Command::Export { report, curve, csv } => match (report, curve) {
            (Some(r), _) => export_report(&r, &csv),
            (None, Some(c)) => export_curve(&c, &csv),
            (None, None) => bail!("pass --report or --curve"),
        },
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn generate(family: &str, config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg = config::load_generate(family, config)?;
    let (mut data, report) = generate_dataset(&cfg.task, cfg.samples, seed)?;
    data.dtype = cfg.dtype;
    data.save(out).with_context(|| format!("writing {}", out.display()))?;
    let groups = data.condition_groups();
    println!("samples {}", report.samples);
    println!("retries {}", report.retries);
    println!("condition groups {}", groups.len());
    for (coefficients, split) in &groups {
        let values: Vec<String> = coefficients.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("  {split} {}", values.join(" "));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn train_cmd(path: &Path) -> Result<()> {
    let cfg = config::load_run(path)?;
    let data = load_dataset(&cfg.dataset)?;
    data.validate()?;
    let outcome = train::train(&cfg.model, &cfg.train, &data)?;
    outcome.checkpoint.save(&cfg.checkpoint)?;
    let mut f = create(&cfg.curve)?;
    records::write_curve(&mut f, &outcome.curve, outcome.checkpoint.epoch, outcome.final_loss)?;
    f.flush()?;
    println!("epochs {}", outcome.curve.len());
    println!("kept epoch {}", outcome.checkpoint.epoch);
    println!("final loss {:.17e}", outcome.final_loss);
    println!("wrote {} and {}", cfg.checkpoint.display(), cfg.curve.display());
    Ok(())
}

struct EvalArgs {
    checkpoint: PathBuf,
    dataset: PathBuf,
    split: SplitArg,
    config: Option<PathBuf>,
    baseline: Option<PathBuf>,
    inject_truth: bool,
    label: Option<String>,
    out: PathBuf,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    if let Some(cfg) = &a.config {
        ck.check_config(&config::load_run(cfg)?.model)?;
    }
    let mut data = load_dataset(&a.dataset)?;
    data = match a.split {
        SplitArg::Id => data.filter_split(SplitTag::InDistribution),
        SplitArg::Ood => data.filter_split(SplitTag::OutOfDistribution),
        SplitArg::All => data,
    };
    if data.is_empty() {
        bail!("no samples in the requested split");
    }
    let label = a.label.clone().unwrap_or_else(|| a.checkpoint.display().to_string());
    let report = if a.inject_truth {
        evaluate_predictions(&label, &data, |s| Ok(s.output.clone()))?
    } else {
        evaluate(&label, &ck.model()?, &data)?
    };
    let baseline: Option<EvalReport> = match &a.baseline {
        Some(p) => Some(records::read_report(BufReader::new(
            File::open(p).with_context(|| format!("opening {}", p.display()))?,
        ))?),
        None => None,
    };
    let mut f = create(&a.out)?;
    records::write_report(&mut f, &report, baseline.as_ref())?;
    f.flush()?;
    for (split, mean) in &report.split_means {
        println!("{split} mean {mean:.17e}");
    }
    println!("overall mean {:.17e}", report.mean);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn predict(checkpoint: &Path, dataset: &Path, index: usize, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?.model()?;
    let data = load_dataset(dataset)?;
    let Some(sample) = data.samples.get(index) else {
        bail!("sample {index} out of range; dataset holds {}", data.len());
    };
    let pred = model.predict(&sample.input, &sample.components)?;
    if out.extension().is_some_and(|e| e == "csv") {
        let mut w = csv::Writer::from_path(out)?;
        let shape = pred.shape();
        let (h, wd) = (shape[1], shape[2]);
        w.write_record(["channel", "row", "col", "value"])?;
        for (i, v) in pred.data().iter().enumerate() {
            let (c, r, col) = (i / (h * wd), (i / wd) % h, i % wd);
            w.write_record([c.to_string(), r.to_string(), col.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
    } else {
        let mut f = create(out)?;
        records::write_field(&mut f, &pred)?;
        f.flush()?;
    }
    println!("predicted {:?} for sample {index}", pred.shape());
    println!("wrote {}", out.display());
    Ok(())
}

fn export_report(path: &Path, csv_path: &Path) -> Result<()> {
    let lines = records::read_report_lines(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))?;
    let mut keys: Vec<String> = Vec::new();
    for l in &lines {
        let coeffs = match l {
            ReportLine::Group { group, .. } => &group.coefficients,
            ReportLine::Promotion { promotion, .. } => &promotion.coefficients,
            _ => continue,
        };
        for k in coeffs.keys() {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    keys.sort();
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["label".to_string()];
    header.extend(keys.iter().cloned());
    header.extend(["split", "samples", "rel_l2", "baseline_rel_l2", "promotion"].map(String::from));
    w.write_record(&header)?;
    let num = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut rows = 0;
    for l in &lines {
        let (label, coeffs, split, samples, ours, base, promo) = match l {
            ReportLine::Group { label, group } => (label, &group.coefficients, group.split, Some(group.samples), Some(group.rel_l2), None, None),
            ReportLine::Promotion { label, promotion, .. } => (
                label,
                &promotion.coefficients,
                promotion.split,
                None,
                promotion.ours,
                promotion.baseline,
                promotion.promotion,
            ),
            _ => continue,
        };
        let mut rec = vec![label.clone()];
        rec.extend(keys.iter().map(|k| coeffs.get(k).map(|v| format!("{v:e}")).unwrap_or_default()));
        rec.push(split.to_string());
        rec.push(samples.map(|s| s.to_string()).unwrap_or_default());
        rec.extend([num(ours), num(base), num(promo)]);
        w.write_record(&rec)?;
        rows += 1;
    }
    w.flush()?;
    println!("rows {rows}");
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn export_curve(path: &Path, csv_path: &Path) -> Result<()> {
    let lines = records::read_curve(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))?;
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    let mut rows = 0;
    for l in &lines {
        if let CurveLine::Epoch(r) = l {
            w.write_record([
                r.epoch.to_string(),
                format!("{:e}", r.train_loss),
                r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default(),
                format!("{:e}", r.lr),
            ])?;
            rows += 1;
        }
    }
    w.flush()?;
    println!("rows {rows}");
    println!("wrote {}", csv_path.display());
    Ok(())
}
