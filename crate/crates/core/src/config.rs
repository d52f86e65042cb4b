//! Run configuration: keyed-text file, overrides and content digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hypgeo::GeometryConfig;
use crate::nets::{Architecture, TrainConfig, TrainMode};
use crate::scoring::{Aggregation, CriticScore, DetectConfig, ScoreMode};

/// Every knob of a train/detect/analyze run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Series CSV; the training split is its prefix.
    pub data: Option<PathBuf>,
    /// Separate series to score; defaults to the suffix of `data`.
    pub test_data: Option<PathBuf>,
    /// Label file overriding the sibling `<stem>.labels.csv`.
    pub labels: Option<PathBuf>,
    pub train_frac: f64,
    pub window: usize,
    pub stride: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub critic_iters: usize,
    pub mode: ScoreMode,
    pub d_z: usize,
    pub d_h: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub critic_hidden: usize,
    pub lstm_steps: usize,
    pub lambda_gp: f64,
    pub lambda_cycle: f64,
    pub train_head_weight: bool,
    pub k: f64,
    pub min_gap: usize,
    pub aggregation: Aggregation,
    pub critic_score: CriticScore,
    pub area_sub_len: usize,
    pub bins: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub ball_margin: f64,
    pub acosh_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        let train = TrainConfig::default();
        let det = DetectConfig::default();
        let geom = GeometryConfig::default();
        Self {
            data: None,
            test_data: None,
            labels: None,
            train_frac: 0.3,
            window: arch.window,
            stride: 1,
            epochs: 30,
            batch: train.batch,
            lr: train.lr,
            critic_iters: train.critic_iters,
            mode: ScoreMode::HyperbolicUncertainty,
            d_z: arch.d_z,
            d_h: arch.d_h,
            encoder_hidden: arch.encoder_hidden,
            decoder_hidden: arch.decoder_hidden,
            critic_hidden: arch.critic_hidden,
            lstm_steps: arch.lstm_steps,
            lambda_gp: train.lambda_gp,
            lambda_cycle: train.lambda_cycle,
            train_head_weight: train.train_head_weight,
            k: det.k,
            min_gap: det.min_gap,
            aggregation: det.aggregation,
            critic_score: det.critic,
            area_sub_len: 10,
            bins: 10,
            seed: 0,
            output: PathBuf::from("out"),
            ball_margin: geom.ball_margin,
            acosh_eps: geom.acosh_eps,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("stride", self.stride),
            ("batch", self.batch),
            ("d_z", self.d_z),
            ("d_h", self.d_h),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("critic_hidden", self.critic_hidden),
            ("lstm_steps", self.lstm_steps),
            ("area_sub_len", self.area_sub_len),
            ("bins", self.bins),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let reals = [
            ("lr", self.lr),
            ("lambda_gp", self.lambda_gp),
            ("lambda_cycle", self.lambda_cycle),
            ("k", self.k),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac {} outside (0, 1)", self.train_frac)));
        }
        self.architecture(1).validate()?;
        self.geometry().validate()
    }

    pub fn train_mode(&self) -> TrainMode {
        if self.mode.is_hyperbolic() {
            TrainMode::Hyperbolic
        } else {
            TrainMode::Euclidean
        }
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            ball_margin: self.ball_margin,
            acosh_eps: self.acosh_eps,
            ..GeometryConfig::default()
        }
    }

    pub fn architecture(&self, channels: usize) -> Architecture {
        Architecture {
            window: self.window,
            channels,
            d_z: self.d_z,
            d_h: self.d_h,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            critic_hidden: self.critic_hidden,
            lstm_steps: self.lstm_steps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train_mode(),
            lr: self.lr,
            critic_iters: self.critic_iters,
            batch: self.batch,
            lambda_gp: self.lambda_gp,
            lambda_cycle: self.lambda_cycle,
            train_head_weight: self.train_head_weight,
            geom: self.geometry(),
        }
    }

    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            k: self.k,
            min_gap: self.min_gap,
            aggregation: self.aggregation,
            critic: self.critic_score,
        }
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(digest_bytes(&self.to_toml()))
    }

    /// Fields that fix parameter shapes must agree with a checkpoint's.
    pub fn check_compatible(&self, trained: &RunConfig) -> Result<()> {
        let pairs = [
            ("window", self.window, trained.window),
            ("d_z", self.d_z, trained.d_z),
            ("d_h", self.d_h, trained.d_h),
            ("encoder_hidden", self.encoder_hidden, trained.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden, trained.decoder_hidden),
            ("critic_hidden", self.critic_hidden, trained.critic_hidden),
            ("lstm_steps", self.lstm_steps, trained.lstm_steps),
        ];
        for (name, ours, theirs) in pairs {
            if ours != theirs {
                return Err(Error::Config(format!(
                    "{name} {ours} does not match the checkpoint's {theirs}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn digest_bytes(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Values given on the command line; `None` keeps the file/default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train_frac: Option<f64>,
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub critic_iters: Option<usize>,
    pub mode: Option<ScoreMode>,
    pub d_z: Option<usize>,
    pub d_h: Option<usize>,
    pub lstm_steps: Option<usize>,
    pub k: Option<f64>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($f:ident),*) => {
        $( if let Some(v) = $o.$f.clone() { $cfg.$f = v; } )*
    };
}

impl Overrides {
    pub fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        let o = self;
        apply!(cfg, o; train_frac, window, stride, epochs, batch, lr, critic_iters, mode, d_z, d_h,
            lstm_steps, k, seed, output);
        if o.data.is_some() {
            cfg.data = o.data.clone();
        }
        if o.test_data.is_some() {
            cfg.test_data = o.test_data.clone();
        }
        if o.labels.is_some() {
            cfg.labels = o.labels.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Defaults, then the optional file, then overrides.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let base = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(base)
}
