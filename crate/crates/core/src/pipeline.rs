//! Training, scoring and analysis runs built from a [`RunConfig`].

use std::io::Write;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nets::head::poincare_distance_rows;
use crate::nets::{Binder, LossReport, ModelBundle, TrainMode, Trainer};
use crate::scoring::{
    build_trace, digest_header, re_area_channels, re_dtw_channels, re_pointwise, uncertainty_profile,
    DetectConfig, ScoreMode, ScoreTrace, UncertaintyProfile, WindowScores,
};
use crate::series::{chrono_split, load_csv, load_csv_with_labels, load_labels, make_windows, MinMaxScaler, SeriesFrame, WindowSet};

/// Windows scored per forward pass during inference.
const INFER_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub report: LossReport,
}

pub fn write_training_log(logs: &[EpochLog], path: &Path, digest: Option<&str>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    digest_header(&mut f, digest)?;
    writeln!(f, "epoch,critic_x_loss,critic_z_loss,generator_loss,cycle_loss,gradient_penalty")?;
    for l in logs {
        let r = &l.report;
        writeln!(
            f,
            "{},{},{},{},{},{}",
            l.epoch, r.critic_x_loss, r.critic_z_loss, r.generator_loss, r.cycle_loss, r.gradient_penalty
        )?;
    }
    f.flush()?;
    Ok(())
}

fn load_frame(path: &Path, labels: Option<&Path>) -> Result<SeriesFrame> {
    match labels {
        Some(l) => load_csv_with_labels(path, load_labels(l)?),
        None => load_csv(path),
    }
}

/// `(train, test)` frames in original units. With `test_data` set, all of
/// `data` trains and the test file is scored whole; otherwise `data` is
/// split chronologically.
pub fn load_series(cfg: &RunConfig) -> Result<(SeriesFrame, SeriesFrame)> {
    let data = cfg
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("no data file configured".into()))?;
    match &cfg.test_data {
        Some(test) => Ok((load_frame(data, None)?, load_frame(test, cfg.labels.as_deref())?)),
        None => chrono_split(&load_frame(data, cfg.labels.as_deref())?, cfg.train_frac),
    }
}

/// Trains on `train` (original units). `on_checkpoint` sees the initial
/// model and the model after every epoch, together with the log so far.
pub fn train(
    cfg: &RunConfig,
    train: &SeriesFrame,
    mut on_checkpoint: impl FnMut(&Checkpoint, &[EpochLog]) -> Result<()>,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    cfg.validate()?;
    let scaler = MinMaxScaler::fit(train)?;
    let scaled = scaler.transform(train)?;
    let windows = make_windows(&scaled, cfg.window, cfg.stride)?.as_tensor()?;
    let bundle = ModelBundle::new(cfg.architecture(train.channels), cfg.seed)?;
    let mut trainer = Trainer::new(bundle, cfg.train_config(), cfg.seed)?;
    let snapshot = |t: &Trainer, epoch: usize| Checkpoint {
        config: cfg.clone(),
        bundle: t.bundle.clone(),
        optimizer: t.state.clone(),
        scaler: scaler.clone(),
        epoch,
    };
    let mut logs = Vec::with_capacity(cfg.epochs);
    on_checkpoint(&snapshot(&trainer, 0), &logs)?;
    for epoch in 1..=cfg.epochs {
        let report = trainer.train_epoch(&windows)?;
        logs.push(EpochLog { epoch, report });
        on_checkpoint(&snapshot(&trainer, epoch), &logs)?;
    }
    Ok((snapshot(&trainer, cfg.epochs), logs))
}

/// Continues training a checkpoint for `extra` epochs on `train`.
pub fn resume(ckpt: &Checkpoint, train: &SeriesFrame, extra: usize) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let cfg = &ckpt.config;
    let scaled = ckpt.scaler.transform(train)?;
    let windows = make_windows(&scaled, cfg.window, cfg.stride)?.as_tensor()?;
    // the stream is re-seeded from seed and completed epochs
    let seed = cfg.seed.wrapping_add(ckpt.epoch as u64);
    let mut trainer = Trainer::new(ckpt.bundle.clone(), cfg.train_config(), seed)?
        .with_state(ckpt.optimizer.clone());
    let mut logs = Vec::new();
    for i in 1..=extra {
        let report = trainer.train_epoch(&windows)?;
        logs.push(EpochLog {
            epoch: ckpt.epoch + i,
            report,
        });
    }
    let out = Checkpoint {
        config: cfg.clone(),
        bundle: trainer.bundle,
        optimizer: trainer.state,
        scaler: ckpt.scaler.clone(),
        epoch: ckpt.epoch + extra,
    };
    Ok((out, logs))
}

/// Per-window model outputs on a test frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub windows: WindowSet,
    pub scores: WindowScores,
    /// Ball embeddings of input and reconstruction (hyperbolic checkpoints).
    pub embeddings: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

fn rows(t: &crate::tensor::Tensor) -> Vec<Vec<f64>> {
    let c = t.shape()[1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

/// Scores every window of `test` (original units) under `mode`.
pub fn infer(ckpt: &Checkpoint, test: &SeriesFrame, mode: ScoreMode) -> Result<Inference> {
    let cfg = &ckpt.config;
    let hyperbolic = cfg.train_mode() == TrainMode::Hyperbolic;
    if mode.is_hyperbolic() && !hyperbolic {
        return Err(Error::UnsupportedMode(format!(
            "{mode} scoring needs a checkpoint trained in a hyperbolic mode, this one used {}",
            cfg.mode
        )));
    }
    if test.channels != ckpt.scaler.min.len() {
        return Err(Error::Config(format!(
            "series has {} channels, checkpoint expects {}",
            test.channels,
            ckpt.scaler.min.len()
        )));
    }
    let geom = cfg.geometry();
    let scaled = ckpt.scaler.transform(test)?;
    let windows = make_windows(&scaled, cfg.window, 1)?;
    let frozen = Binder::frozen();
    let (mut re, mut critic, mut unc) = (Vec::new(), Vec::new(), Vec::new());
    let (mut hs, mut h2s) = (Vec::new(), Vec::new());
    let n = windows.len();
    let mut start = 0;
    while start < n {
        let end = (start + INFER_BLOCK).min(n);
        let x = windows.batch(start, end)?;
        let recon = ckpt.bundle.reconstruct_batch(&frozen, &x)?;
        critic.extend_from_slice(ckpt.bundle.critic_x_batch(&frozen, &x)?.data());
        if hyperbolic {
            let h = ckpt.bundle.project_batch(&frozen, &x, &geom)?;
            let h2 = ckpt.bundle.project_batch(&frozen, &recon, &geom)?;
            if mode.is_hyperbolic() {
                re.extend_from_slice(poincare_distance_rows(&h, &h2, &geom)?.data());
            }
            let h2r = rows(&h2);
            unc.extend(h2r.iter().map(|r| (1.0 - r.iter().map(|v| v * v).sum::<f64>()).clamp(0.0, 1.0)));
            hs.extend(rows(&h));
            h2s.extend(h2r);
        }
        if !mode.is_hyperbolic() {
            let c = windows.channels;
            for (xa, ra) in rows(&x).iter().zip(rows(&recon).iter()) {
                re.push(match mode {
                    ScoreMode::EuclideanPointwise => re_pointwise(xa, ra)?,
                    ScoreMode::EuclideanArea => re_area_channels(xa, ra, c, cfg.area_sub_len)?,
                    _ => re_dtw_channels(xa, ra, c)?,
                });
            }
        }
        start = end;
    }
    Ok(Inference {
        windows,
        scores: WindowScores {
            re,
            critic,
            uncertainty: hyperbolic.then_some(unc),
        },
        embeddings: hyperbolic.then_some((hs, h2s)),
    })
}

/// Per-timestamp scores and detected intervals on `test`.
pub fn detect(ckpt: &Checkpoint, test: &SeriesFrame, mode: ScoreMode, det: &DetectConfig) -> Result<ScoreTrace> {
    let inf = infer(ckpt, test, mode)?;
    build_trace(&inf.scores, &inf.windows.origins, inf.windows.width, &test.timestamps, mode, det)
}

/// Cosine distance between input and reconstruction embeddings binned by
/// uncertainty.
pub fn analyze(ckpt: &Checkpoint, test: &SeriesFrame, bins: usize) -> Result<UncertaintyProfile> {
    if ckpt.config.train_mode() != TrainMode::Hyperbolic {
        return Err(Error::UnsupportedMode(format!(
            "analysis needs a hyperbolic checkpoint, this one used {}",
            ckpt.config.mode
        )));
    }
    let inf = infer(ckpt, test, ScoreMode::Hyperbolic)?;
    let (h, h2) = inf.embeddings.expect("hyperbolic checkpoint has embeddings");
    uncertainty_profile(&h, &h2, bins)
}
