//! Loading, scaling, windowing and splitting of time series, plus a seeded
//! synthetic generator with injected anomalies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inclusive `(start, end)` interval in timestamp units.
pub type Interval = (i64, i64);

/// `T × C` values with integer timestamps and optional anomaly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub timestamps: Vec<i64>,
    /// Row-major, `len() × channels`.
    pub values: Vec<f64>,
    pub channels: usize,
    pub labels: Vec<Interval>,
}

impl SeriesFrame {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>, channels: usize, labels: Vec<Interval>) -> Result<Self> {
        if channels == 0 || values.len() != timestamps.len() * channels {
            return Err(Error::Data(format!(
                "{} values do not fill {} rows of {channels} channels",
                values.len(),
                timestamps.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!("timestamps not strictly increasing at {}", w[1])));
        }
        let frame = Self {
            timestamps,
            values,
            channels,
            labels,
        };
        frame.check_labels()?;
        Ok(frame)
    }

    fn check_labels(&self) -> Result<()> {
        let (Some(&first), Some(&last)) = (self.timestamps.first(), self.timestamps.last()) else {
            return if self.labels.is_empty() {
                Ok(())
            } else {
                Err(Error::Data("labels on an empty series".into()))
            };
        };
        for &(s, e) in &self.labels {
            if s > e || s < first || e > last {
                return Err(Error::Data(format!(
                    "label ({s}, {e}) outside series span [{first}, {last}]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Rows `[start, end)` with the labels that fall inside them.
    pub fn slice(&self, start: usize, end: usize) -> SeriesFrame {
        let ts = self.timestamps[start..end].to_vec();
        let labels = match (ts.first(), ts.last()) {
            (Some(&a), Some(&b)) => self
                .labels
                .iter()
                .filter(|&&(s, e)| s >= a && e <= b)
                .copied()
                .collect(),
            _ => Vec::new(),
        };
        SeriesFrame {
            timestamps: ts,
            values: self.values[start * self.channels..end * self.channels].to_vec(),
            channels: self.channels,
            labels,
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Sibling label file of `data.csv`: `data.labels.csv`.
pub fn label_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    path.with_file_name(format!("{stem}.labels.csv"))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

/// Reads `timestamp,value[,value…]` rows and, if present, the sibling label
/// file.
pub fn load_csv(path: &Path) -> Result<SeriesFrame> {
    let labels = {
        let lp = label_path_for(path);
        if lp.exists() {
            load_labels(&lp)?
        } else {
            Vec::new()
        }
    };
    load_csv_with_labels(path, labels)
}

pub fn load_csv_with_labels(path: &Path, labels: Vec<Interval>) -> Result<SeriesFrame> {
    let mut rdr = reader(path)?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing header"))??;
    let hline = header.position().map_or(1, |p| p.line() as usize);
    if header.len() < 2 || &header[0] != "timestamp" {
        return Err(parse_err(path, hline, "header must be `timestamp,value[,value…]`"));
    }
    let channels = header.len() - 1;

    let mut rows: Vec<(i64, Vec<f64>, usize)> = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != channels + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", channels + 1, rec.len())));
        }
        let ts: i64 = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad timestamp `{}`", &rec[0])))?;
        let vals = (1..=channels)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("bad value `{}`", &rec[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, vals, line));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!(
            "{}: duplicate timestamp {} (lines {} and {})",
            path.display(),
            w[1].0,
            w[0].2,
            w[1].2
        )));
    }
    let timestamps = rows.iter().map(|r| r.0).collect();
    let values = rows.into_iter().flat_map(|r| r.1).collect();
    SeriesFrame::new(timestamps, values, channels, labels)
}

/// `start,end` rows; a leading header is skipped and trailing columns (such
/// as `score_peak` in detector output) are ignored.
pub fn load_labels(path: &Path) -> Result<Vec<Interval>> {
    let mut out = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if i == 0 && rec.get(0) == Some("start") {
            continue;
        }
        if rec.len() < 2 {
            return Err(parse_err(path, line, "expected `start,end`"));
        }
        let parse = |s: &str| s.parse::<i64>().map_err(|_| parse_err(path, line, format!("bad bound `{s}`")));
        let (s, e) = (parse(&rec[0])?, parse(&rec[1])?);
        if s > e {
            return Err(parse_err(path, line, format!("start {s} after end {e}")));
        }
        out.push((s, e));
    }
    out.sort();
    Ok(out)
}

pub fn write_csv(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend((0..frame.channels).map(|c| format!("value{c}")));
    w.write_record(&header)?;
    for (t, ts) in frame.timestamps.iter().enumerate() {
        let mut rec = vec![ts.to_string()];
        rec.extend(frame.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(labels: &[Interval], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["start", "end"])?;
    for (s, e) in labels {
        w.write_record([s.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-channel affine map of the fitted range onto `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(frame: &SeriesFrame) -> Result<Self> {
        if frame.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let c = frame.channels;
        let mut min = vec![f64::INFINITY; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for t in 0..frame.len() {
            for (j, v) in frame.row(t).iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        Ok(Self { min, max })
    }

    /// A constant channel is only re-centred (scale 1).
    fn coeffs(&self, j: usize) -> (f64, f64) {
        let (lo, hi) = (self.min[j], self.max[j]);
        let mid = 0.5 * (lo + hi);
        if hi - lo > 0.0 {
            (mid, 0.5 * (hi - lo))
        } else {
            (mid, 1.0)
        }
    }

    fn check(&self, frame: &SeriesFrame) -> Result<()> {
        if frame.channels != self.min.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} channels, frame has {}",
                self.min.len(),
                frame.channels
            )));
        }
        Ok(())
    }

    pub fn transform(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        self.check(frame)?;
        let c = frame.channels;
        let values = frame
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (mid, half) = self.coeffs(i % c);
                (v - mid) / half
            })
            .collect();
        Ok(SeriesFrame {
            values,
            ..frame.clone()
        })
    }

    pub fn inverse(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        self.check(frame)?;
        let c = frame.channels;
        let values = frame
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (mid, half) = self.coeffs(i % c);
                v * half + mid
            })
            .collect();
        Ok(SeriesFrame {
            values,
            ..frame.clone()
        })
    }
}

/// Fits on `fit_on` and returns its scaled copy together with the scaler.
pub fn minmax_scale(fit_on: &SeriesFrame) -> Result<(SeriesFrame, MinMaxScaler)> {
    let s = MinMaxScaler::fit(fit_on)?;
    Ok((s.transform(fit_on)?, s))
}

/// Overlapping sub-sequences of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// `n × width × channels`, row-major.
    pub windows: Vec<f64>,
    pub origins: Vec<usize>,
    pub width: usize,
    pub channels: usize,
    pub stride: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn window(&self, k: usize) -> &[f64] {
        let n = self.width * self.channels;
        &self.windows[k * n..(k + 1) * n]
    }

    /// `[n, width·channels]`
    pub fn as_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(self.windows.clone(), &[self.len(), self.width * self.channels])
    }

    /// Rows `[start, end)` as a tensor.
    pub fn batch(&self, start: usize, end: usize) -> Result<Tensor> {
        let n = self.width * self.channels;
        Tensor::from_vec(self.windows[start * n..end * n].to_vec(), &[end - start, n])
    }
}

pub fn make_windows(frame: &SeriesFrame, width: usize, stride: usize) -> Result<WindowSet> {
    if width == 0 || stride == 0 {
        return Err(Error::Config("window width and stride must be positive".into()));
    }
    let t = frame.len();
    if t < width {
        return Err(Error::InsufficientData { needed: width, got: t });
    }
    let c = frame.channels;
    let origins: Vec<usize> = (0..=(t - width)).step_by(stride).collect();
    let mut windows = Vec::with_capacity(origins.len() * width * c);
    for &o in &origins {
        windows.extend_from_slice(&frame.values[o * c..(o + width) * c]);
    }
    Ok(WindowSet {
        windows,
        origins,
        width,
        channels: c,
        stride,
    })
}

/// Prefix of `floor(T·train_frac)` rows for training, the rest for testing.
/// Every label must lie in the test part.
pub fn chrono_split(frame: &SeriesFrame, train_frac: f64) -> Result<(SeriesFrame, SeriesFrame)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction {train_frac} outside (0, 1)")));
    }
    let cut = (frame.len() as f64 * train_frac).floor() as usize;
    if cut == 0 || cut == frame.len() {
        return Err(Error::Split(format!("fraction {train_frac} leaves an empty split")));
    }
    let first_test = frame.timestamps[cut];
    if let Some(&(s, e)) = frame.labels.iter().find(|&&(s, _)| s < first_test) {
        return Err(Error::Split(format!(
            "anomaly ({s}, {e}) falls in the training span ending before {first_test}; choose a smaller train fraction"
        )));
    }
    Ok((frame.slice(0, cut), frame.slice(cut, frame.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Adds `magnitude` at a single index.
    PointSpike,
    /// Adds `magnitude` over the interval.
    LevelShift,
    /// Multiplies the periodic component by `magnitude` over the interval.
    AmplitudeBurst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: AnomalyKind,
    pub start: usize,
    /// Inclusive; defaults to `start`.
    #[serde(default)]
    pub end: Option<usize>,
    pub magnitude: f64,
}

impl Injection {
    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end.unwrap_or(self.start))
    }
}

/// Description of a synthetic single-channel sine series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub length: usize,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub anomalies: Vec<Injection>,
}

fn default_period() -> f64 {
    50.0
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.05
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || !(self.period > 0.0) || !(self.noise_sigma >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Spec("length, period and noise must be positive and finite".into()));
        }
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for a in &self.anomalies {
            let (s, e) = a.span();
            if s > e || e >= self.length {
                return Err(Error::Spec(format!("anomaly [{s}, {e}] outside [0, {})", self.length)));
            }
            if a.kind == AnomalyKind::PointSpike && s != e {
                return Err(Error::Spec(format!("point spike must have start = end, got [{s}, {e}]")));
            }
            if !a.magnitude.is_finite() {
                return Err(Error::Spec("non-finite anomaly magnitude".into()));
            }
            if let Some(o) = spans.iter().find(|o| s <= o.1 && o.0 <= e) {
                return Err(Error::Spec(format!("anomalies [{}, {}] and [{s}, {e}] overlap", o.0, o.1)));
            }
            spans.push((s, e));
        }
        Ok(())
    }
}

/// Timestamps are `0..length`; labels are exactly the injected spans.
pub fn synth_generate(spec: &SynthSpec) -> Result<SeriesFrame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;
    let mut gain = vec![1.0; spec.length];
    let mut offset = vec![0.0; spec.length];
    for a in &spec.anomalies {
        let (s, e) = a.span();
        for t in s..=e {
            match a.kind {
                AnomalyKind::PointSpike | AnomalyKind::LevelShift => offset[t] += a.magnitude,
                AnomalyKind::AmplitudeBurst => gain[t] *= a.magnitude,
            }
        }
    }
    let values = (0..spec.length)
        .map(|t| {
            let base = spec.amplitude * (std::f64::consts::TAU * t as f64 / spec.period).sin();
            let eps: f64 = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            gain[t] * base + offset[t] + eps
        })
        .collect();
    let mut labels: Vec<Interval> = spec
        .anomalies
        .iter()
        .map(|a| {
            let (s, e) = a.span();
            (s as i64, e as i64)
        })
        .collect();
    labels.sort();
    SeriesFrame::new((0..spec.length as i64).collect(), values, 1, labels)
}

/// Number of windows covering each index (used by aggregation and tests).
pub fn coverage_counts(ws: &WindowSet, len: usize) -> Vec<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &o in &ws.origins {
        for t in o..(o + ws.width).min(len) {
            *counts.entry(t).or_default() += 1;
        }
    }
    (0..len).map(|t| counts.get(&t).copied().unwrap_or(0)).collect()
}
