//! `mcod` command-line interface: train, score, evaluate and inspect runs
//! on IDX image directories.

use std::fs::{self, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mcod::io::csv::{self as csv_io, LossLogWriter};
use mcod::io::{load_checkpoint, load_idx_dir, mix_dataset, save_checkpoint, LabeledImageSet, MixSpec, RunConfig, Split};
use mcod::metrics::{self, Label, MetricsReport, ScoreRecord};
use mcod::trainer::TrainState;

#[derive(Parser)]
#[command(name = "mcod", version, about = "Unsupervised outlier detection on image mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a one-class mixture drawn from an IDX directory.
    Train(TrainArgs),
    /// Score images with a trained checkpoint.
    Score(ScoreArgs),
    /// AUROC, AUPR-IN and AUPR-OUT of a labeled score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
    },
    /// 100-bin per-class histogram of normalized similarities.
    Analyze {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump query-tower features `f` as CSV.
    ExportFeatures(ScoreArgs),
    /// Train and evaluate once per value of one configuration key.
    Sweep(SweepArgs),
    /// Write the synthetic blob/stripe dataset as IDX files.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum SplitArg {
    #[default]
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Directory with `<split>-images-idx3-ubyte` and `<split>-labels-idx1-ubyte`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    split: SplitArg,
}

impl DataArgs {
    fn load(&self) -> Result<LabeledImageSet> {
        load_idx_dir(&self.data, self.split.into()).with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    inlier_class: Option<u32>,
    /// Outlier fraction of the mixture.
    #[arg(long)]
    p: Option<f64>,
    /// Seed for training, weight initialization and mixing.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_inliers: Option<usize>,
    /// Extra `section.key=value` overrides, e.g. `train.epochs_warmup=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(k) = self.inlier_class {
            cfg.mix.inlier_class = k;
        }
        if let Some(p) = self.p {
            cfg.mix.p = p;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.train.encoder.init_seed = seed;
            cfg.mix.seed = seed;
        }
        if self.max_inliers.is_some() {
            cfg.mix.max_inliers = self.max_inliers;
        }
        for o in &self.overrides {
            let (key, value) = split_assignment(o)?;
            cfg = cfg.with_override(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => bail!("expected KEY=VALUE, got {s:?}"),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out>.losses.csv`.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Continue the run stored in this checkpoint instead of starting anew.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation; `--resume` continues.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Use every image of the split, labeled by the checkpoint's inlier
    /// class, instead of rebuilding the training mixture.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    /// `key=v1,v2,...`; bare `p`, `inlier_class` and `max_inliers` refer to
    /// the `mix` section, other bare keys to `train`.
    #[arg(long)]
    param: String,
    /// Optional CSV of per-value results.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 900)]
    blobs: usize,
    #[arg(long, default_value_t = 500)]
    stripes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t)]
    split: SplitArg,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Score(args) => score(args),
        Command::Eval { scores } => eval(&scores),
        Command::Analyze { scores, out } => analyze(&scores, &out),
        Command::ExportFeatures(args) => export_features(args),
        Command::Sweep(args) => sweep(args),
        Command::Synth(args) => synth(args),
    }
}

/// Matches the encoder input to the data, which fixes it anyway.
fn fit_input_shape(cfg: &mut RunConfig, full: &LabeledImageSet) {
    let shape = full.images.shape();
    if cfg.train.encoder.input_shape != shape {
        log::info!(
            "encoder input shape set to {shape:?} from the data (config had {:?})",
            cfg.train.encoder.input_shape
        );
        cfg.train.encoder.input_shape = shape;
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let full = args.data.load()?;
    let (mut state, mix, fresh) = match &args.resume {
        Some(path) => {
            let saved = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
            let mix = saved.mix.context("checkpoint does not record its mixture")?;
            log::info!("resuming at epoch {} of {}", saved.state.epoch, saved.state.config.total_epochs());
            (saved.state, mix, false)
        }
        None => {
            let mut cfg = args.run.resolve()?;
            fit_input_shape(&mut cfg, &full);
            (TrainState::new(cfg.train)?, cfg.mix, true)
        }
    };
    let data = mix_dataset(&full, &mix)?;
    log::info!(
        "mixture of {} images ({} outliers) from {}",
        data.len(),
        data.truth.outliers(),
        full.provenance
    );

    let log_path = args.loss_log.unwrap_or_else(|| suffixed(&args.out, ".losses.csv"));
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut losses = LossLogWriter::new(file, fresh)?;

    let mut budget = args.stop_after.unwrap_or(usize::MAX);
    while !state.is_finished() && budget > 0 {
        let log = state.train_epoch(&data.images)?;
        losses.append(&log)?;
        save_checkpoint(&state, Some(&mix), &args.out)?;
        budget -= 1;
    }
    save_checkpoint(&state, Some(&mix), &args.out)?;
    log::info!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

/// The images a scoring command works on, with labels when known.
fn scoring_set(args: &ScoreArgs, mix: Option<&MixSpec>) -> Result<(mcod::image::ImageSet, Option<Vec<Label>>)> {
    let full = args.data.load()?;
    Ok(match (mix, args.all) {
        (Some(spec), false) => {
            let data = mix_dataset(&full, spec)?;
            (data.images, Some(data.truth.labels))
        }
        (Some(spec), true) => {
            let labels = full
                .labels
                .iter()
                .map(|&l| if l == spec.inlier_class { Label::Inlier } else { Label::Outlier })
                .collect();
            (full.images, Some(labels))
        }
        (None, _) => (full.images, None),
    })
}

fn score(args: ScoreArgs) -> Result<()> {
    let saved = load_checkpoint(&args.ckpt).with_context(|| format!("reading {}", args.ckpt.display()))?;
    let (images, labels) = scoring_set(&args, saved.mix.as_ref())?;
    let mut records = metrics::score(&saved.state, &images)?;
    if let Some(labels) = labels {
        for (r, l) in records.iter_mut().zip(labels) {
            r.label = Some(l);
        }
    }
    csv_io::write_scores(BufWriter::new(create(&args.out)?), &records)?;
    log::info!("{} scores written to {}", records.len(), args.out.display());
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    csv_io::create(path).with_context(|| format!("creating {}", path.display()))
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv_io::read_scores(io::BufReader::new(file))?)
}

fn print_report(out: &mut impl Write, report: &MetricsReport) -> io::Result<()> {
    writeln!(out, "{:<10}{:>10}", "metric", "value")?;
    writeln!(out, "{:<10}{:>10.4}", "AUROC", report.auroc)?;
    writeln!(out, "{:<10}{:>10.4}", "AUPR-IN", report.aupr_in)?;
    writeln!(out, "{:<10}{:>10.4}", "AUPR-OUT", report.aupr_out)?;
    writeln!(out)?;
    writeln!(out, "auroc={}", report.auroc)?;
    writeln!(out, "aupr_in={}", report.aupr_in)?;
    writeln!(out, "aupr_out={}", report.aupr_out)?;
    writeln!(out, "inliers={}", report.inliers)?;
    writeln!(out, "outliers={}", report.outliers)
}

fn eval(scores: &Path) -> Result<()> {
    let report = metrics::evaluate(&read_scores(scores)?)?;
    print_report(&mut io::stdout().lock(), &report)?;
    Ok(())
}

fn analyze(scores: &Path, out: &Path) -> Result<()> {
    let hist = metrics::similarity_histogram(&read_scores(scores)?)?;
    csv_io::write_histogram(BufWriter::new(create(out)?), &hist)?;
    Ok(())
}

fn export_features(args: ScoreArgs) -> Result<()> {
    let saved = load_checkpoint(&args.ckpt).with_context(|| format!("reading {}", args.ckpt.display()))?;
    let (images, labels) = scoring_set(&args, saved.mix.as_ref())?;
    let features = metrics::features(&saved.state, &images)?;
    csv_io::write_features(BufWriter::new(create(&args.out)?), &features, labels.as_deref())?;
    Ok(())
}

const MIX_KEYS: [&str; 3] = ["p", "inlier_class", "max_inliers"];

fn sweep(args: SweepArgs) -> Result<()> {
    let base = args.run.resolve()?;
    let (key, values) = split_assignment(&args.param)?;
    let key = if key.contains('.') {
        key.to_string()
    } else if MIX_KEYS.contains(&key) {
        format!("mix.{key}")
    } else {
        format!("train.{key}")
    };
    let full = args.data.load()?;

    let mut rows = Vec::new();
    for value in values.split(',').map(str::trim) {
        let mut cfg = base.with_override(&key, value)?;
        fit_input_shape(&mut cfg, &full);
        let data = mix_dataset(&full, &cfg.mix)?;
        log::info!("{key} = {value}: {} images, {} outliers", data.len(), data.truth.outliers());
        let mut state = TrainState::new(cfg.train)?;
        state.run(&data.images, |_, _| Ok(()))?;
        let mut records = metrics::score(&state, &data.images)?;
        for (r, &l) in records.iter_mut().zip(&data.truth.labels) {
            r.label = Some(l);
        }
        rows.push((value.to_string(), metrics::evaluate(&records)?));
    }

    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{:<12}{:>10}{:>10}{:>10}", key, "AUROC", "AUPR-IN", "AUPR-OUT")?;
    for (value, r) in &rows {
        writeln!(stdout, "{value:<12}{:>10.4}{:>10.4}{:>10.4}", r.auroc, r.aupr_in, r.aupr_out)?;
    }
    if let Some(out) = &args.out {
        let mut w = BufWriter::new(create(out)?);
        writeln!(w, "{key},auroc,aupr_in,aupr_out")?;
        for (value, r) in &rows {
            writeln!(w, "{value},{},{},{}", r.auroc, r.aupr_in, r.aupr_out)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let set = mcod::io::synthetic::two_pattern(args.blobs, args.stripes, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let prefix = match args.split {
        SplitArg::Train => "train",
        SplitArg::Test => "t10k",
    };
    mcod::io::write_idx(
        &set,
        &args.out.join(format!("{prefix}-images-idx3-ubyte")),
        &args.out.join(format!("{prefix}-labels-idx1-ubyte")),
    )?;
    log::info!(
        "{} blobs (class 0) and {} stripes (class 1) written to {}",
        args.blobs,
        args.stripes,
        args.out.display()
    );
    Ok(())
}
