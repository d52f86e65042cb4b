//! Window-level errors turned into per-timestamp anomaly scores and
//! detected intervals.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypgeo;
use crate::series::Interval;

/// How the reconstruction error is measured and whether uncertainty scales
/// the combined score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    EuclideanPointwise,
    EuclideanArea,
    EuclideanDtw,
    Hyperbolic,
    HyperbolicUncertainty,
}

impl ScoreMode {
    pub const ALL: [ScoreMode; 5] = [
        ScoreMode::EuclideanPointwise,
        ScoreMode::EuclideanArea,
        ScoreMode::EuclideanDtw,
        ScoreMode::Hyperbolic,
        ScoreMode::HyperbolicUncertainty,
    ];

    pub fn is_hyperbolic(self) -> bool {
        matches!(self, ScoreMode::Hyperbolic | ScoreMode::HyperbolicUncertainty)
    }

    pub fn uses_uncertainty(self) -> bool {
        self == ScoreMode::HyperbolicUncertainty
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::EuclideanPointwise => "euclidean_pointwise",
            ScoreMode::EuclideanArea => "euclidean_area",
            ScoreMode::EuclideanDtw => "euclidean_dtw",
            ScoreMode::Hyperbolic => "hyperbolic",
            ScoreMode::HyperbolicUncertainty => "hyperbolic_uncertainty",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown score mode `{s}`")))
    }
}

fn same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("length {} vs {}", x.len(), y.len())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn re_pointwise(x: &[f64], recon: &[f64]) -> Result<f64> {
    same_len(x, recon)?;
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(x.iter().zip(recon).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// Mean over sub-windows of `|∫(x − x̃)| / (2·sub_len)` with the trapezoid
/// rule at unit spacing. A short final sub-window is padded with its last
/// residual.
pub fn re_area(x: &[f64], recon: &[f64], sub_len: usize) -> Result<f64> {
    same_len(x, recon)?;
    if sub_len == 0 {
        return Err(Error::Config("area sub-window length must be positive".into()));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let d: Vec<f64> = x.iter().zip(recon).map(|(a, b)| a - b).collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in d.chunks(sub_len) {
        let mut seg = chunk.to_vec();
        let last = *seg.last().expect("non-empty chunk");
        seg.resize(sub_len, last);
        let integral: f64 = seg.windows(2).map(|p| 0.5 * (p[0] + p[1])).sum();
        total += integral.abs() / (2.0 * sub_len as f64);
        count += 1;
    }
    Ok(total / count as f64)
}

/// Dynamic time warping with `|a − b|` local cost and unit steps.
pub fn re_dtw(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (a[i - 1] - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

fn split_channels(x: &[f64], channels: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|c| x.iter().skip(c).step_by(channels).copied().collect())
        .collect()
}

/// Area error averaged over channels of a time-major window.
pub fn re_area_channels(x: &[f64], recon: &[f64], channels: usize, sub_len: usize) -> Result<f64> {
    same_len(x, recon)?;
    let (xs, ys) = (split_channels(x, channels), split_channels(recon, channels));
    let mut s = 0.0;
    for (a, b) in xs.iter().zip(&ys) {
        s += re_area(a, b, sub_len)?;
    }
    Ok(s / channels as f64)
}

/// DTW summed over channels of a time-major window.
pub fn re_dtw_channels(x: &[f64], recon: &[f64], channels: usize) -> Result<f64> {
    same_len(x, recon)?;
    let (xs, ys) = (split_channels(x, channels), split_channels(recon, channels));
    Ok(xs.iter().zip(&ys).map(|(a, b)| re_dtw(a, b)).sum())
}

/// `(s − mean)/std` with population std; all zeros when std < 1e-12.
pub fn z_normalize(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: scores.len(),
        });
    }
    let (mean, std) = mean_std(scores);
    if std < 1e-12 {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores.iter().map(|s| (s - mean) / std).collect())
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `z_re · z_critic`, scaled by `(1 − u)` when uncertainty is given.
pub fn combine_scores(z_re: &[f64], z_critic: &[f64], u: Option<&[f64]>) -> Result<Vec<f64>> {
    same_len(z_re, z_critic)?;
    match u {
        None => Ok(z_re.iter().zip(z_critic).map(|(a, b)| a * b).collect()),
        Some(u) => {
            same_len(z_re, u)?;
            Ok(z_re
                .iter()
                .zip(z_critic)
                .zip(u)
                .map(|((a, b), u)| a * b * (1.0 - u))
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

/// How raw critic outputs become "larger is more anomalous" scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticScore {
    /// `−D_x(x)`: low critic output is anomalous.
    Flipped,
    /// `|D_x(x) − median D_x|` over the scored series: any departure from
    /// the typical critic output is anomalous. A Wasserstein critic is close
    /// to linear off the data support, so out-of-range windows can move its
    /// output either way.
    #[default]
    TwoSided,
}

/// Per-window critic scores under `how`.
pub fn critic_scores(raw: &[f64], how: CriticScore) -> Vec<f64> {
    match how {
        CriticScore::Flipped => raw.iter().map(|c| -c).collect(),
        CriticScore::TwoSided => {
            if raw.is_empty() {
                return Vec::new();
            }
            let center = median(&mut raw.to_vec());
            raw.iter().map(|c| (c - center).abs()).collect()
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Spreads window scores onto the `len` timestamps they cover. Indices that
/// no window covers take the value of the nearest covered index before
/// them (or after, at the start).
pub fn aggregate_to_timestamps(
    window_scores: &[f64],
    origins: &[usize],
    width: usize,
    len: usize,
    how: Aggregation,
) -> Result<Vec<f64>> {
    if window_scores.len() != origins.len() {
        return Err(Error::Shape(format!("{} scores for {} windows", window_scores.len(), origins.len())));
    }
    if origins.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); len];
    for (&s, &o) in window_scores.iter().zip(origins) {
        if o + width > len {
            return Err(Error::Shape(format!("window at {o} of width {width} exceeds length {len}")));
        }
        for b in &mut buckets[o..o + width] {
            b.push(s);
        }
    }
    let mut out: Vec<Option<f64>> = buckets
        .into_iter()
        .map(|mut b| match (b.is_empty(), how) {
            (true, _) => None,
            (false, Aggregation::Median) => Some(median(&mut b)),
            (false, Aggregation::Mean) => Some(b.iter().sum::<f64>() / b.len() as f64),
        })
        .collect();
    let first = out.iter().flatten().next().copied().expect("some index is covered");
    let mut last = first;
    for v in &mut out {
        match v {
            Some(x) => last = *x,
            None => *v = Some(last),
        }
    }
    Ok(out.into_iter().map(|v| v.expect("filled")).collect())
}

/// Threshold `mean + k·std` of the trace.
pub fn threshold(trace: &[f64], k: f64) -> f64 {
    let (m, s) = mean_std(trace);
    m + k * s
}

/// Index intervals (inclusive) of maximal runs strictly above the
/// threshold; runs separated by at most `min_gap` points are merged.
pub fn detect_intervals(trace: &[f64], k: f64, min_gap: usize) -> Result<Vec<(usize, usize)>> {
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite score trace"));
    }
    let theta = threshold(trace, k);
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &v) in trace.iter().enumerate() {
        match (v > theta, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, trace.len() - 1));
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if r.0 - last.1 - 1 <= min_gap => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    Ok(merged)
}

/// Per-timestamp scores of one run together with what was flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrace {
    pub mode: ScoreMode,
    pub timestamps: Vec<i64>,
    pub re_raw: Vec<f64>,
    /// Critic score (see [`CriticScore`]) before normalization; larger means
    /// more anomalous.
    pub critic_raw: Vec<f64>,
    pub uncertainty: Option<Vec<f64>>,
    pub z_re: Vec<f64>,
    pub z_critic: Vec<f64>,
    pub combined: Vec<f64>,
    pub threshold: f64,
    /// Index intervals into the arrays.
    pub detected_idx: Vec<(usize, usize)>,
    /// Same intervals in timestamp units.
    pub detected: Vec<Interval>,
}

/// Window-level quantities a model produces for one test series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScores {
    pub re: Vec<f64>,
    /// Raw critic output `D_x(x)`.
    pub critic: Vec<f64>,
    pub uncertainty: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub k: f64,
    pub min_gap: usize,
    pub aggregation: Aggregation,
    pub critic: CriticScore,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            k: 3.0,
            min_gap: 1,
            aggregation: Aggregation::Median,
            critic: CriticScore::TwoSided,
        }
    }
}

/// Aggregates window scores to timestamps, normalizes, combines and
/// thresholds.
pub fn build_trace(
    scores: &WindowScores,
    origins: &[usize],
    width: usize,
    timestamps: &[i64],
    mode: ScoreMode,
    cfg: &DetectConfig,
) -> Result<ScoreTrace> {
    let len = timestamps.len();
    let agg = |v: &[f64]| aggregate_to_timestamps(v, origins, width, len, cfg.aggregation);
    let re_raw = agg(&scores.re)?;
    let critic_raw = agg(&critic_scores(&scores.critic, cfg.critic))?;
    let uncertainty = match (&scores.uncertainty, mode.uses_uncertainty()) {
        (Some(u), true) => Some(agg(u)?),
        (None, true) => {
            return Err(Error::UnsupportedMode(format!("{mode} needs uncertainty values")));
        }
        (_, false) => None,
    };
    let z_re = z_normalize(&re_raw)?;
    let z_critic = z_normalize(&critic_raw)?;
    let combined = combine_scores(&z_re, &z_critic, uncertainty.as_deref())?;
    let detected_idx = detect_intervals(&combined, cfg.k, cfg.min_gap)?;
    let detected = detected_idx
        .iter()
        .map(|&(s, e)| (timestamps[s], timestamps[e]))
        .collect();
    Ok(ScoreTrace {
        mode,
        timestamps: timestamps.to_vec(),
        re_raw,
        critic_raw,
        uncertainty,
        z_re,
        z_critic,
        threshold: threshold(&combined, cfg.k),
        combined,
        detected_idx,
        detected,
    })
}

pub(crate) fn digest_header(w: &mut impl Write, digest: Option<&str>) -> std::io::Result<()> {
    if let Some(d) = digest {
        writeln!(w, "# config_digest: {d}")?;
    }
    Ok(())
}

impl ScoreTrace {
    /// `timestamp,re,critic,uncertainty,combined,flagged`; the uncertainty
    /// column is empty unless the mode uses it.
    pub fn write_csv(&self, path: &Path, digest: Option<&str>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        digest_header(&mut f, digest)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["timestamp", "re", "critic", "uncertainty", "combined", "flagged"])?;
        let mut flagged = vec![false; self.timestamps.len()];
        for &(s, e) in &self.detected_idx {
            flagged[s..=e].iter_mut().for_each(|f| *f = true);
        }
        for i in 0..self.timestamps.len() {
            let u = self
                .uncertainty
                .as_ref()
                .map_or(String::new(), |u| u[i].to_string());
            w.write_record([
                self.timestamps[i].to_string(),
                self.re_raw[i].to_string(),
                self.critic_raw[i].to_string(),
                u,
                self.combined[i].to_string(),
                u8::from(flagged[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `start,end,score_peak`
    pub fn write_intervals_csv(&self, path: &Path, digest: Option<&str>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        digest_header(&mut f, digest)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["start", "end", "score_peak"])?;
        for (&(s, e), &(ts, te)) in self.detected_idx.iter().zip(&self.detected) {
            let peak = self.combined[s..=e].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.write_record([ts.to_string(), te.to_string(), peak.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One equal-width bin of the uncertainty range.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` when the bin is empty.
    pub mean_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyProfile {
    pub bins: Vec<ProfileBin>,
    /// Pairs dropped because an embedding had zero norm.
    pub skipped: usize,
}

impl UncertaintyProfile {
    /// `(bin index, mean)` of occupied bins.
    pub fn occupied(&self) -> Vec<(usize, f64)> {
        self.bins
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.mean_cosine.map(|m| (i, m)))
            .collect()
    }

    pub fn write_csv(&self, path: &Path, digest: Option<&str>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        digest_header(&mut f, digest)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["bin_lo", "bin_hi", "count", "mean_cosine"])?;
        for b in &self.bins {
            w.write_record([
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
                b.mean_cosine.map_or(String::new(), |m| m.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bins window pairs by the uncertainty of the reconstruction embedding
/// `h̃` and averages their cosine distance per bin.
pub fn uncertainty_profile(h: &[Vec<f64>], h_recon: &[Vec<f64>], bins: usize) -> Result<UncertaintyProfile> {
    if h.len() != h_recon.len() {
        return Err(Error::Shape(format!("{} inputs vs {} reconstructions", h.len(), h_recon.len())));
    }
    if bins == 0 {
        return Err(Error::Config("bin count must be positive".into()));
    }
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let mut skipped = 0;
    for (a, b) in h.iter().zip(h_recon) {
        same_len(a, b)?;
        let Some(cd) = hypgeo::cosine_distance(a, b) else {
            skipped += 1;
            continue;
        };
        let u = (1.0 - b.iter().map(|v| v * v).sum::<f64>()).clamp(0.0, 1.0);
        let k = ((u * bins as f64) as usize).min(bins - 1);
        sums[k] += cd;
        counts[k] += 1;
    }
    let bins = (0..bins)
        .map(|k| ProfileBin {
            lo: k as f64 / bins as f64,
            hi: (k + 1) as f64 / bins as f64,
            count: counts[k],
            mean_cosine: (counts[k] > 0).then(|| sums[k] / counts[k] as f64),
        })
        .collect();
    Ok(UncertaintyProfile { bins, skipped })
}
