//! Overlap-based detection metrics, ablation runs and report output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::pipeline::detect;
use crate::scoring::{digest_header, DetectConfig, ScoreMode, ScoreTrace, UncertaintyProfile};
use crate::series::{Interval, SeriesFrame};

fn check_disjoint_sorted(list: &[Interval], what: &str) -> Result<()> {
    if let Some(&(s, e)) = list.iter().find(|(s, e)| s > e) {
        return Err(Error::Contract(format!("{what} interval ({s}, {e}) has start after end")));
    }
    if let Some(w) = list.windows(2).find(|w| w[1].0 <= w[0].1) {
        return Err(Error::Contract(format!(
            "{what} intervals {:?} and {:?} overlap or are unsorted",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn overlaps(a: Interval, b: Interval) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// `(tp, fp, fn)`: truth intervals hit by some prediction, predictions that
/// hit no truth, truth intervals hit by none.
pub fn overlap_confusion(predicted: &[Interval], truth: &[Interval]) -> Result<(usize, usize, usize)> {
    check_disjoint_sorted(predicted, "predicted")?;
    check_disjoint_sorted(truth, "truth")?;
    let tp = truth
        .iter()
        .filter(|&&t| predicted.iter().any(|&p| overlaps(p, t)))
        .count();
    let fp = predicted
        .iter()
        .filter(|&&p| !truth.iter().any(|&t| overlaps(p, t)))
        .count();
    Ok((tp, fp, truth.len() - tp))
}

/// `(precision, recall, f1, g)` with zero for any empty denominator.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1, (p * r).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub g_measure: f64,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let (precision, recall, f1, g_measure) = prf(tp, fp, fn_);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            g_measure,
        }
    }

    pub fn evaluate(predicted: &[Interval], truth: &[Interval]) -> Result<Self> {
        let (tp, fp, fn_) = overlap_confusion(predicted, truth)?;
        Ok(Self::from_counts(tp, fp, fn_))
    }
}

/// Aligned text table, one row per labelled report.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<w$}  {:>4} {:>4} {:>4}  {:>9} {:>9} {:>9} {:>9}\n",
        "mode", "tp", "fp", "fn", "precision", "recall", "f1", "g"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<w$}  {:>4} {:>4} {:>4}  {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            name, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1, r.g_measure
        );
    }
    s
}

pub fn write_report_csv(rows: &[(String, EvalReport)], path: &Path, digest: Option<&str>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    digest_header(&mut f, digest)?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["mode", "tp", "fp", "fn", "precision", "recall", "f1", "g_measure"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.g_measure.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scores `test` with each mode's checkpoint under one detection policy.
/// Hyperbolic modes may share a checkpoint; a missing one is an error.
pub fn ablation_run(
    test: &SeriesFrame,
    runs: &[(ScoreMode, Option<&Checkpoint>)],
    det: &DetectConfig,
) -> Result<Vec<(ScoreMode, EvalReport)>> {
    runs.iter()
        .map(|&(mode, ckpt)| {
            let ckpt = ckpt.ok_or_else(|| Error::Config(format!("no checkpoint given for mode {mode}")))?;
            let trace = detect(ckpt, test, mode, det)?;
            Ok((mode, EvalReport::evaluate(&trace.detected, &test.labels)?))
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // tied values share their average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` with fewer than two points or when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Rank correlation between bin index and mean cosine distance over the
/// occupied bins of a profile.
pub fn profile_trend(p: &UncertaintyProfile) -> Option<f64> {
    let occ = p.occupied();
    let idx: Vec<f64> = occ.iter().map(|&(i, _)| i as f64).collect();
    let m: Vec<f64> = occ.iter().map(|&(_, m)| m).collect();
    spearman(&idx, &m)
}

const SVG_W: f64 = 900.0;
const SVG_H: f64 = 300.0;
const PAD: f64 = 40.0;

fn svg_open(out: &mut String, digest: Option<&str>) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    if let Some(d) = digest {
        let _ = writeln!(out, "<!-- config_digest: {d} -->");
    }
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// Combined score line, threshold in red, labelled anomalies as shaded
/// bands and detections as ticks along the bottom.
pub fn trace_svg(trace: &ScoreTrace, truth: &[Interval], digest: Option<&str>) -> String {
    let n = trace.combined.len().max(2);
    let lo = trace.combined.iter().copied().fold(trace.threshold, f64::min);
    let hi = trace.combined.iter().copied().fold(trace.threshold, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (t0, t1) = (
        *trace.timestamps.first().unwrap_or(&0) as f64,
        *trace.timestamps.last().unwrap_or(&1) as f64,
    );
    let tspan = if t1 > t0 { t1 - t0 } else { 1.0 };
    let x_of_t = |t: f64| PAD + (t - t0) / tspan * (SVG_W - 2.0 * PAD);
    let x = |i: usize| PAD + i as f64 / (n - 1) as f64 * (SVG_W - 2.0 * PAD);
    let y = |v: f64| SVG_H - PAD - (v - lo) / span * (SVG_H - 2.0 * PAD);

    let mut s = String::new();
    svg_open(&mut s, digest);
    for &(a, b) in truth {
        let (xa, xb) = (x_of_t(a as f64), x_of_t(b as f64));
        let _ = writeln!(
            s,
            r##"<rect x="{xa:.2}" y="{PAD}" width="{:.2}" height="{:.2}" fill="#f4b183" fill-opacity="0.5"/>"##,
            (xb - xa).max(1.0),
            SVG_H - 2.0 * PAD
        );
    }
    let pts: Vec<String> = trace
        .combined
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f4e79" stroke-width="1" points="{}"/>"##,
        pts.join(" ")
    );
    let ty = y(trace.threshold);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="red" stroke-width="1.5"/>"#,
        SVG_W - PAD
    );
    for &(a, b) in &trace.detected_idx {
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="6" fill="black"/>"#,
            x(a),
            SVG_H - PAD + 4.0,
            (x(b) - x(a)).max(1.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="13">{} combined score</text>"#,
        trace.mode
    );
    s.push_str("</svg>\n");
    s
}

/// Bar per uncertainty bin with height equal to its mean cosine distance.
pub fn profile_svg(p: &UncertaintyProfile, digest: Option<&str>) -> String {
    let top = p
        .bins
        .iter()
        .filter_map(|b| b.mean_cosine)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let nb = p.bins.len().max(1) as f64;
    let bw = (SVG_W - 2.0 * PAD) / nb;
    let mut s = String::new();
    svg_open(&mut s, digest);
    for (i, b) in p.bins.iter().enumerate() {
        let x = PAD + i as f64 * bw;
        if let Some(m) = b.mean_cosine {
            let h = m / top * (SVG_H - 2.0 * PAD);
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#5b9bd5"/>"##,
                x + 2.0,
                SVG_H - PAD - h,
                bw - 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">{:.1}</text>"#,
            x + 2.0,
            SVG_H - PAD + 14.0,
            b.lo
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="13">mean cosine distance by uncertainty</text>"#
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ProfileBin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_confusion(&[(10, 20)], &[(15, 25)]).unwrap(), (1, 0, 0));
        assert_eq!(overlap_confusion(&[(10, 20)], &[(30, 40)]).unwrap(), (0, 1, 1));
        assert_eq!(overlap_confusion(&[], &[(5, 8)]).unwrap(), (0, 0, 1));
        // one prediction across two truths, two predictions on one truth
        assert_eq!(overlap_confusion(&[(0, 30)], &[(5, 8), (20, 25)]).unwrap(), (2, 0, 0));
        assert_eq!(overlap_confusion(&[(0, 2), (4, 6)], &[(1, 5)]).unwrap(), (1, 0, 0));
        assert!(matches!(
            overlap_confusion(&[(0, 5), (3, 8)], &[]),
            Err(Error::Contract(_))
        ));
    }

    fn random_layout(rng: &mut ChaCha8Rng, span: i64) -> Vec<Interval> {
        let mut out = Vec::new();
        let mut t = rng.gen_range(0..10);
        while t < span {
            let len = rng.gen_range(0..12);
            out.push((t, t + len));
            t += len + rng.gen_range(1..25);
        }
        out
    }

    /// Marks every covered point with the owning interval's index and counts
    /// through shared points.
    fn pointwise_oracle(pred: &[Interval], truth: &[Interval], span: i64) -> (usize, usize, usize) {
        let n = (span + 40) as usize;
        let mut owner_t = vec![None; n];
        for (k, &(s, e)) in truth.iter().enumerate() {
            for t in s..=e {
                owner_t[t as usize] = Some(k);
            }
        }
        let mut hit_t = vec![false; truth.len()];
        let mut fp = 0;
        for &(s, e) in pred {
            let mut any = false;
            for t in s..=e {
                if let Some(k) = owner_t[t as usize] {
                    hit_t[k] = true;
                    any = true;
                }
            }
            fp += usize::from(!any);
        }
        let tp = hit_t.iter().filter(|h| **h).count();
        (tp, fp, truth.len() - tp)
    }

    #[test]
    fn overlap_matches_pointwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let span = rng.gen_range(20..300);
            let p = random_layout(&mut rng, span);
            let t = random_layout(&mut rng, span);
            assert_eq!(overlap_confusion(&p, &t).unwrap(), pointwise_oracle(&p, &t, span));
        }
    }

    #[test]
    fn prf_examples() {
        assert_eq!(prf(1, 0, 0), (1.0, 1.0, 1.0, 1.0));
        let (p, r, f1, g) = prf(1, 0, 1);
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((g - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(prf(0, 0, 0), (0.0, 0.0, 0.0, 0.0));
        let (p, r, f1, g) = prf(3, 2, 2);
        assert_eq!(p, r);
        assert!((f1 - g).abs() < 1e-15);
    }

    #[test]
    fn metrics_ignore_interval_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let p = random_layout(&mut rng, 200);
            let t = random_layout(&mut rng, 200);
            let base = overlap_confusion(&p, &t).unwrap();
            // permute then restore the sorted order the contract requires
            let mut q = p.clone();
            q.reverse();
            q.sort();
            assert_eq!(overlap_confusion(&q, &t).unwrap(), base);
        }
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        // ties get average ranks: x ranks [1.5, 1.5, 3], y ranks [1, 2, 3]
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.8660254037844386).abs() < 1e-12);
    }

    #[test]
    fn table_and_svg_render() {
        let rows = vec![("hyperbolic".to_string(), EvalReport::from_counts(2, 1, 1))];
        let t = format_table(&rows);
        assert!(t.lines().count() == 2 && t.contains("0.6667"));
        let p = UncertaintyProfile {
            bins: vec![
                ProfileBin {
                    lo: 0.0,
                    hi: 0.5,
                    count: 3,
                    mean_cosine: Some(0.2),
                },
                ProfileBin {
                    lo: 0.5,
                    hi: 1.0,
                    count: 0,
                    mean_cosine: None,
                },
            ],
            skipped: 0,
        };
        assert_eq!(profile_trend(&p), None);
        let svg = profile_svg(&p, Some("abc"));
        assert!(svg.starts_with("<svg") && svg.contains("config_digest: abc"));
        assert_eq!(svg.matches("<rect").count(), 2);
    }
}
