use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hypad::config::{resolve, Overrides};
use hypad::evalkit::{format_table, profile_svg, trace_svg, write_report_csv, write_text, EvalReport};
use hypad::pipeline::{analyze, detect, load_series, train, write_training_log};
use hypad::scoring::ScoreMode;
use hypad::series::{label_path_for, load_labels, synth_generate, write_csv, write_labels, SynthSpec};
use hypad::{Checkpoint, RunConfig};

const CHECKPOINT: &str = "model.ckpt";

#[derive(Parser)]
#[command(name = "hypad", version, about = "Hyperbolic-uncertainty anomaly detection for time series")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, training log and resolved config.
    Train(RunArgs),
    /// Score a series with a trained checkpoint and flag anomalous intervals.
    Detect(DetectArgs),
    /// Compare predicted intervals against ground truth.
    Eval(EvalArgs),
    /// Bin reconstruction embeddings by uncertainty and report cosine distances.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic sine series with injected anomalies.
    Synth(SynthArgs),
}

/// Settings shared by every run; flags beat the config file, which beats
/// built-in defaults.
#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    critic_iters: Option<usize>,
    /// euclidean_pointwise, euclidean_area, euclidean_dtw, hyperbolic or hyperbolic_uncertainty.
    #[arg(long)]
    mode: Option<ScoreMode>,
    #[arg(long)]
    d_z: Option<usize>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    lstm_steps: Option<usize>,
    /// Threshold in standard deviations above the mean combined score.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long, env = "HYPAD_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            data: self.data.clone(),
            test_data: self.test_data.clone(),
            labels: self.labels.clone(),
            train_frac: self.train_frac,
            window: self.window,
            stride: self.stride,
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            critic_iters: self.critic_iters,
            mode: self.mode,
            d_z: self.d_z,
            d_h: self.d_h,
            lstm_steps: self.lstm_steps,
            k: self.k,
            seed: self.seed,
            output: self.output.clone(),
        }
    }

    fn resolve(&self) -> Result<RunConfig> {
        Ok(resolve(self.config.as_deref(), &self.overrides())?)
    }
}

#[derive(Args)]
struct DetectArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Skip the SVG score plot.
    #[arg(long)]
    no_svg: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted intervals, e.g. `intervals.csv` from `detect`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth `start,end` file.
    #[arg(long)]
    truth: PathBuf,
    /// Also write the report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic series description (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Series CSV to write; labels go to the sibling `<stem>.labels.csv`.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, env = "HYPAD_SEED")]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_train(a: &RunArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let (train_frame, _) = load_series(&cfg)?;
    create_dir(&cfg.output)?;
    let digest = cfg.digest();
    std::fs::write(cfg.output.join("config.toml"), cfg.to_toml())?;
    let ckpt_path = cfg.output.join(CHECKPOINT);
    let log_path = cfg.output.join("training_log.csv");
    eprintln!("training {} on {} points, config digest {digest}", cfg.mode, train_frame.len());

    // The checkpoint is rewritten after every finished epoch, so a diverging
    // run leaves the last good one behind.
    let result = train(&cfg, &train_frame, |ck, logs| {
        ck.save(&ckpt_path)?;
        write_training_log(logs, &log_path, Some(&digest))?;
        if let Some(l) = logs.last() {
            let r = &l.report;
            eprintln!(
                "epoch {:>3}: critic_x {:.4} critic_z {:.4} gen {:.4} cycle {:.4} gp {:.4}",
                l.epoch, r.critic_x_loss, r.critic_z_loss, r.generator_loss, r.cycle_loss, r.gradient_penalty
            );
        }
        Ok(())
    });
    match result {
        Ok((ck, _)) => {
            println!("checkpoint: {} (epoch {})", ckpt_path.display(), ck.epoch);
            Ok(())
        }
        Err(e) => Err(anyhow::Error::new(e)
            .context(format!("training failed; last good checkpoint kept at {}", ckpt_path.display()))),
    }
}

/// Checkpoint config, then the optional file, then flags. Shape-fixing
/// fields must still match what was trained.
fn inference_config(ckpt: &Checkpoint, run: &RunArgs) -> Result<RunConfig> {
    let base = match &run.config {
        Some(p) => RunConfig::load(p)?,
        None => ckpt.config.clone(),
    };
    let cfg = run.overrides().apply(base)?;
    cfg.check_compatible(&ckpt.config)?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cfg = inference_config(&ckpt, &a.run)?;
    let (_, test) = load_series(&cfg)?;
    let trace = detect(&ckpt, &test, cfg.mode, &cfg.detect_config())?;
    create_dir(&cfg.output)?;
    let digest = ckpt.digest();
    trace.write_csv(&cfg.output.join("scores.csv"), Some(&digest))?;
    trace.write_intervals_csv(&cfg.output.join("intervals.csv"), Some(&digest))?;
    if !a.no_svg {
        write_text(&cfg.output.join("scores.svg"), &trace_svg(&trace, &test.labels, Some(&digest)))?;
    }
    println!("mode {}: threshold {:.4}, {} interval(s)", trace.mode, trace.threshold, trace.detected.len());
    for (s, e) in &trace.detected {
        println!("  {s},{e}");
    }
    if !test.labels.is_empty() {
        let r = EvalReport::evaluate(&trace.detected, &test.labels)?;
        print!("{}", format_table(&[(trace.mode.to_string(), r)]));
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = load_labels(&a.pred)?;
    let truth = load_labels(&a.truth)?;
    let rows = [("eval".to_string(), EvalReport::evaluate(&pred, &truth)?)];
    print!("{}", format_table(&rows));
    if let Some(out) = &a.out {
        write_report_csv(&rows, out, None)?;
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cfg = inference_config(&ckpt, &a.run)?;
    let (_, test) = load_series(&cfg)?;
    let profile = analyze(&ckpt, &test, a.bins.unwrap_or(cfg.bins))?;
    create_dir(&cfg.output)?;
    let digest = ckpt.digest();
    profile.write_csv(&cfg.output.join("uncertainty_profile.csv"), Some(&digest))?;
    write_text(&cfg.output.join("uncertainty_profile.svg"), &profile_svg(&profile, Some(&digest)))?;
    println!("{:>8} {:>8} {:>8} {:>12}", "bin_lo", "bin_hi", "count", "mean_cosine");
    for b in &profile.bins {
        let m = b.mean_cosine.map_or("-".to_string(), |m| format!("{m:.6}"));
        println!("{:>8.2} {:>8.2} {:>8} {:>12}", b.lo, b.hi, b.count, m);
    }
    if profile.skipped > 0 {
        println!("skipped {} zero-norm pair(s)", profile.skipped);
    }
    match hypad::evalkit::profile_trend(&profile) {
        Some(rho) => println!("spearman(bin, mean_cosine) = {rho:.4}"),
        None => println!("spearman(bin, mean_cosine) undefined (fewer than two occupied bins)"),
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec = SynthSpec::from_toml(&text)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let frame = synth_generate(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    if a.out.extension().is_none() {
        bail!("output {} needs a file extension such as .csv", a.out.display());
    }
    write_csv(&frame, &a.out)?;
    let lp = label_path_for(&a.out);
    write_labels(&frame.labels, &lp)?;
    println!("wrote {} points to {} and {} label(s) to {}", frame.len(), a.out.display(), frame.labels.len(), lp.display());
    Ok(())
}
