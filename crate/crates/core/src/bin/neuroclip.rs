use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neuroclip::harness::{
    build_task, crossval, fit_task, fit_unimodal, normalization_shift, preprocess_dataset, train_alignment,
    unimodal_head, wilcoxon_signed_rank, CrossvalConfig, FoldPlan, FoldScheme, HarnessError, ModelKind, RunConfig,
};
use neuroclip::model::{HeadInput, ModelParams};
use neuroclip::saliency::{class_profile, write_profile_csv, write_summary_csv, CrossingSummary, SampleFilter};
use neuroclip::signalio::{generate_synthetic_dataset, read_dataset, write_dataset, Dataset, Group};

#[derive(Parser)]
#[command(name = "neuroclip", version, about = "Paired EEG/fNIRS contrastive learning toolkit")]
struct Cli {
    /// TOML run configuration; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of every seeded section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Folds trained concurrently.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset into the output directory.
    Synth,
    /// Filter and standardise a dataset.
    Preprocess(DataArg),
    /// Contrastive alignment of the two encoders.
    TrainAlign(DataArg),
    /// Fit a task head (fused on an aligned backbone, or a unimodal model).
    TrainTask {
        #[command(flatten)]
        data: DataArg,
        /// Aligned checkpoint; a fresh backbone when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind, default_value = "fused")]
        kind: ModelKind,
    },
    /// Cross-validate one classifier family on the configured task.
    Crossval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ModelKind>,
    },
    /// Class saliency profile and onset crossing of a unimodal head.
    Saliency {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        head: String,
        #[arg(long, default_value_t = 1)]
        class: usize,
        /// Average over every epoch of the class, not only those the model assigns to it.
        #[arg(long)]
        all_samples: bool,
    },
    /// Paired statistics.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Distance of patient embeddings to the control centroid.
    Shift {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Exact Wilcoxon signed-rank test on a CSV with `pre,post` columns.
    Wilcoxon {
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    match s {
        "fused" => Ok(ModelKind::Fused),
        "eeg" => Ok(ModelKind::Eeg),
        "fnirs" => Ok(ModelKind::Fnirs),
        _ => Err(format!("expected fused, eeg or fnirs, got `{s}`")),
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    Ok(read_dataset(dir)?)
}

fn load_model(dir: &Path) -> Result<ModelParams, HarnessError> {
    Ok(ModelParams::load(dir)?)
}

fn write_loss_curve(curve: &[f64], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_pairs(path: &Path) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| HarnessError::Data(format!("{} has no `{name}` column", path.display())))
    };
    let (ip, iq) = (col("pre")?, col("post")?);
    let (mut pre, mut post) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i).unwrap_or("").trim().parse().map_err(|_| {
                HarnessError::Data(format!(
                    "row {}: `{}` is not a number",
                    line + 2,
                    rec.get(i).unwrap_or("")
                ))
            })
        };
        pre.push(field(ip)?);
        post.push(field(iq)?);
    }
    Ok((pre, post))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(w) = cli.workers {
        cfg.crossval.workers = w;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();

    match cli.command {
        Command::Synth => {
            let ds = generate_synthetic_dataset(&cfg.synth)?;
            write_dataset(&ds, out)?;
            println!(
                "wrote {} epochs of {} subjects to {}",
                ds.epochs.len(),
                ds.subject_ids().len(),
                out.display()
            );
        }
        Command::Preprocess(d) => {
            let ds = preprocess_dataset(&load_dataset(&d.data)?, &cfg.preprocess)?;
            write_dataset(&ds, out)?;
            println!("wrote {} preprocessed epochs to {}", ds.epochs.len(), out.display());
        }
        Command::TrainAlign(d) => {
            let ds = load_dataset(&d.data)?;
            let fitted = train_alignment(&ds, &cfg.model, &cfg.train)?;
            fitted.params.save(&out.join("model"))?;
            write_loss_curve(&fitted.loss_curve, &out.join("align_loss.csv"))?;
            println!(
                "alignment loss {:.4}, logit scale {:.2}",
                fitted.loss_curve.last().copied().unwrap_or(f64::NAN),
                fitted.params.logit_scale()
            );
        }
        Command::TrainTask { data, model, kind } => {
            let ds = load_dataset(&data.data)?;
            let set = build_task(&ds, cfg.train.task()?, &cfg.task)?;
            let all: Vec<usize> = (0..set.samples.len()).collect();
            let (fitted, head) = match kind {
                ModelKind::Fused => {
                    let base = match model {
                        Some(dir) => load_model(&dir)?,
                        None => ModelParams::init(cfg.model.clone(), cfg.train.seed)?,
                    };
                    (fit_task(&set, &all, &base, &cfg.train)?, set.task.as_str().to_string())
                }
                k => (
                    fit_unimodal(&set, &all, &cfg.model, k, &cfg.train)?,
                    unimodal_head(set.task, k),
                ),
            };
            fitted.params.save(&out.join("model"))?;
            write_loss_curve(&fitted.loss_curve, &out.join("task_loss.csv"))?;
            println!(
                "head `{head}` trained on {} samples, final loss {:.4}",
                all.len(),
                fitted.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Crossval { data, kind } => {
            let ds = load_dataset(&data.data)?;
            let set = build_task(&ds, cfg.train.task()?, &cfg.task)?;
            let plan = match cfg.crossval.fold_scheme() {
                FoldScheme::KFold { k } => FoldPlan::kfold(&set, k, cfg.crossval.seed)?,
                FoldScheme::Loso => FoldPlan::loso(&set)?,
            };
            let cv = CrossvalConfig {
                train: cfg.train.clone(),
                model: cfg.model.clone(),
                kind: kind.unwrap_or(cfg.crossval.kind),
                workers: cfg.crossval.workers,
            };
            let report = crossval(&ds, &set, &plan, &cv)?;
            report.metrics.write_csv(&out.join("crossval.csv"))?;
            std::fs::write(
                out.join("crossval.json"),
                serde_json::to_string_pretty(&report).expect("report serialises"),
            )?;
            println!(
                "{} {} over {} folds: accuracy {}, macro F1 {}",
                report.task,
                report.kind.as_str(),
                plan.n_folds,
                report.metrics.accuracy.percent(),
                report.metrics.macro_f1.percent()
            );
        }
        Command::Saliency {
            data,
            model,
            head,
            class,
            all_samples,
        } => {
            let ds = load_dataset(&data.data)?;
            let params = load_model(&model)?;
            let input = params.head(&head)?.input;
            let set = build_task(&ds, cfg.train.task()?, &cfg.task)?;
            let of_class = set.samples.iter().filter(|s| s.label == class);
            let (epochs, fs) = match input {
                HeadInput::Eeg => (of_class.map(|s| &s.eeg).collect::<Vec<_>>(), set.fs_eeg),
                HeadInput::Fnirs => (of_class.map(|s| &s.fnirs).collect(), set.fs_fnirs),
                HeadInput::Fused => {
                    return Err(HarnessError::Config(format!(
                        "head `{head}` reads the fused embedding; saliency needs a single-modality head"
                    )))
                }
            };
            let filter = if all_samples {
                SampleFilter::All
            } else {
                SampleFilter::CorrectOnly
            };
            let profile = class_profile(&params, &head, &epochs, class, fs, filter)?;
            write_profile_csv(&profile, &out.join("saliency_profile.csv"))?;
            let summary = CrossingSummary::of(&format!("{head}/class{class}"), &profile);
            write_summary_csv(std::slice::from_ref(&summary), &out.join("saliency_summary.csv"))?;
            match summary.crossing_s {
                Some(t) => println!(
                    "{} samples, threshold {:.4}, crossing at {t:.3} s",
                    summary.n_samples, summary.threshold
                ),
                None => println!(
                    "{} samples, threshold {:.4}, no crossing",
                    summary.n_samples, summary.threshold
                ),
            }
        }
        Command::Stats(StatsCommand::Wilcoxon { input }) => {
            let (pre, post) = read_pairs(&input)?;
            let r = wilcoxon_signed_rank(&pre, &post)?;
            let mut w = csv::Writer::from_path(out.join("wilcoxon.csv"))?;
            w.write_record(["n_effective", "w_plus", "w_minus", "p_value", "method"])?;
            w.write_record([
                r.n_effective.to_string(),
                r.w_plus.to_string(),
                r.w_minus.to_string(),
                r.p_value.to_string(),
                format!("{:?}", r.method).to_lowercase(),
            ])?;
            w.flush()?;
            println!(
                "n = {}  W+ = {}  W- = {}  p = {}",
                r.n_effective, r.w_plus, r.w_minus, r.p_value
            );
        }
        Command::Shift { data, model } => {
            let ds = load_dataset(&data.data)?;
            let params = load_model(&model)?;
            let group = |g: Group| {
                ds.epochs
                    .iter()
                    .filter(|e| e.group == g)
                    .map(|e| (&e.eeg, &e.fnirs))
                    .collect::<Vec<_>>()
            };
            let r = normalization_shift(&params, &group(Group::Mbt), &group(Group::Mat), &group(Group::Hc))?;
            let mut w = csv::Writer::from_path(out.join("shift.csv"))?;
            w.serialize(&r)?;
            w.flush()?;
            println!("{r}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
