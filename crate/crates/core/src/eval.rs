//! Verification and identification metrics over probe-versus-gallery
//! distances, and report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::embedder::Embedding;
use crate::error::{Error, Result};
use crate::par;
use crate::triplet::squared_distance;

/// Euclidean distance between embeddings.
pub fn match_score(a: &Embedding, b: &Embedding) -> Result<f64> {
    Ok(squared_distance(a, b)?.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub subject: u32,
    pub embedding: Embedding,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::contract("score set needs both genuine and impostor scores"));
        }
        if let Some(s) = self.genuine.iter().chain(&self.impostor).find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::contract(format!("score {s} is not a finite non-negative distance")));
        }
        Ok(())
    }
}

fn check_protocol(gallery: &[Labeled], probe: &[Labeled]) -> Result<()> {
    if gallery.is_empty() || probe.is_empty() {
        return Err(Error::contract("evaluation needs non-empty gallery and probe sets"));
    }
    let mut enrolled: Vec<u32> = gallery.iter().map(|g| g.subject).collect();
    enrolled.sort_unstable();
    enrolled.dedup();
    if let Some(p) = probe.iter().find(|p| enrolled.binary_search(&p.subject).is_err()) {
        return Err(Error::contract(format!("probe subject {} has no gallery sample", p.subject)));
    }
    Ok(())
}

/// `probe x gallery` distance matrix, one row per probe.
pub fn distance_matrix(gallery: &[Labeled], probe: &[Labeled]) -> Result<Vec<Vec<f64>>> {
    par::map(probe, |p| gallery.iter().map(|g| match_score(&p.embedding, &g.embedding)).collect::<Result<Vec<f64>>>())
        .into_iter()
        .collect()
}

/// Scores every probe against every gallery sample.
pub fn score_all(gallery: &[Labeled], probe: &[Labeled]) -> Result<ScoreSet> {
    check_protocol(gallery, probe)?;
    scores_from_matrix(&distance_matrix(gallery, probe)?, gallery, probe)
}

fn scores_from_matrix(d: &[Vec<f64>], gallery: &[Labeled], probe: &[Labeled]) -> Result<ScoreSet> {
    let mut s = ScoreSet::default();
    for (row, p) in d.iter().zip(probe) {
        for (&v, g) in row.iter().zip(gallery) {
            if g.subject == p.subject { s.genuine.push(v) } else { s.impostor.push(v) }
        }
    }
    Ok(s)
}

/// Genuine and impostor counts of the exhaustive protocol with `g` gallery
/// and `p` probe samples for each of `subjects` subjects.
pub fn protocol_counts(subjects: usize, g: usize, p: usize) -> (usize, usize) {
    let genuine = subjects * g * p;
    (genuine, subjects * p * subjects * g - genuine)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Accept iff distance < threshold; thresholds strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&v| v < t)
}

/// Sweeps every distinct observed score plus one threshold below and one
/// above the observed range.
pub fn roc(scores: &ScoreSet) -> Result<RocCurve> {
    scores.validate()?;
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (gen, imp) = (sort(&scores.genuine), sort(&scores.impostor));
    let mut ts: Vec<f64> = gen.iter().chain(&imp).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let (lo, hi) = (ts[0], *ts.last().expect("non-empty"));
    let eps = 1e-9 * (hi - lo).max(1.0);
    ts.insert(0, lo - eps);
    ts.push(hi + eps);
    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let points = ts
        .into_iter()
        .map(|t| RocPoint { threshold: t, far: count_below(&imp, t) as f64 / ni, frr: (gen.len() - count_below(&gen, t)) as f64 / ng })
        .collect();
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Equal error rate: first sweep point where FAR − FRR ≥ 0, linearly
    /// interpolated against its predecessor unless it crosses exactly.
    pub fn eer(&self) -> f64 {
        let d = |p: &RocPoint| p.far - p.frr;
        let i = self.points.iter().position(|p| d(p) >= 0.0).expect("the top endpoint has FAR 1, FRR 0");
        let cur = self.points[i];
        if d(&cur) == 0.0 || i == 0 {
            return cur.far;
        }
        let prev = self.points[i - 1];
        let lambda = -d(&prev) / (d(&cur) - d(&prev));
        prev.far + lambda * (cur.far - prev.far)
    }
}

pub fn eer(scores: &ScoreSet) -> Result<f64> {
    Ok(roc(scores)?.eer())
}

/// Rank-1 rate over a probe x gallery matrix; ties go to the lowest
/// gallery index.
pub fn crr_from_distances(d: &[Vec<f64>], gallery_subjects: &[u32], probe_subjects: &[u32]) -> Result<f64> {
    if d.is_empty() || gallery_subjects.is_empty() {
        return Err(Error::contract("crr needs non-empty gallery and probe sets"));
    }
    if d.len() != probe_subjects.len() || d.iter().any(|r| r.len() != gallery_subjects.len()) {
        return Err(Error::contract("crr: distance matrix does not match the subject lists"));
    }
    let mut correct = 0usize;
    for (row, &ps) in d.iter().zip(probe_subjects) {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v < row[best] {
                best = j;
            }
        }
        correct += (gallery_subjects[best] == ps) as usize;
    }
    Ok(correct as f64 / d.len() as f64)
}

pub fn crr(gallery: &[Labeled], probe: &[Labeled]) -> Result<f64> {
    check_protocol(gallery, probe)?;
    let gs: Vec<u32> = gallery.iter().map(|g| g.subject).collect();
    let ps: Vec<u32> = probe.iter().map(|p| p.subject).collect();
    crr_from_distances(&distance_matrix(gallery, probe)?, &gs, &ps)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

/// Decidability index with population variances.
pub fn di(scores: &ScoreSet) -> Result<f64> {
    if scores.genuine.len() < 2 || scores.impostor.len() < 2 {
        return Err(Error::contract("decidability index needs at least 2 genuine and 2 impostor scores"));
    }
    let (mg, vg) = mean_var(&scores.genuine);
    let (mi, vi) = mean_var(&scores.impostor);
    let gap = (mi - mg).abs();
    let spread = ((vg + vi) / 2.0).sqrt();
    Ok(if gap == 0.0 { 0.0 } else if spread == 0.0 { f64::INFINITY } else { gap / spread })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub crr: f64,
    pub di: f64,
    pub roc: RocCurve,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub scores: ScoreSet,
}

pub fn evaluate(gallery: &[Labeled], probe: &[Labeled]) -> Result<EvalReport> {
    check_protocol(gallery, probe)?;
    let d = distance_matrix(gallery, probe)?;
    let scores = scores_from_matrix(&d, gallery, probe)?;
    let curve = roc(&scores)?;
    let gs: Vec<u32> = gallery.iter().map(|g| g.subject).collect();
    let ps: Vec<u32> = probe.iter().map(|p| p.subject).collect();
    Ok(EvalReport {
        eer: curve.eer(),
        crr: crr_from_distances(&d, &gs, &ps)?,
        di: di(&scores)?,
        n_genuine: scores.genuine.len(),
        n_impostor: scores.impostor.len(),
        roc: curve,
        scores,
    })
}

pub const HISTOGRAM_BINS: usize = 50;

/// `(bin_start, bin_end, genuine, impostor)` over the joint score range.
pub fn histogram(scores: &ScoreSet, bins: usize) -> Vec<(f64, f64, usize, usize)> {
    let all = scores.genuine.iter().chain(&scores.impostor);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 / bins as f64 };
    let bin = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut out: Vec<(f64, f64, usize, usize)> = (0..bins).map(|i| (lo + i as f64 * width, lo + (i + 1) as f64 * width, 0, 0)).collect();
    for &g in &scores.genuine {
        out[bin(g)].2 += 1;
    }
    for &i in &scores.impostor {
        out[bin(i)].3 += 1;
    }
    out
}

pub fn metrics_csv(r: &EvalReport) -> String {
    format!("eer,crr,di,n_genuine,n_impostor\n{},{},{},{},{}\n", r.eer, r.crr, r.di, r.n_genuine, r.n_impostor)
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,far,frr\n");
    for p in &curve.points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.far, p.frr);
    }
    s
}

/// FAR (x) against GAR = 1 − FRR (y) as a static SVG polyline.
pub fn roc_svg(curve: &RocCurve) -> String {
    let (size, pad) = (400.0, 40.0);
    let span = size - 2.0 * pad;
    let mut pts = String::new();
    for p in &curve.points {
        let _ = write!(pts, "{:.2},{:.2} ", pad + p.far * span, size - pad - (1.0 - p.frr) * span);
    }
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n",
            "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            "<line x1=\"{p}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<line x1=\"{p}\" y1=\"{b}\" x2=\"{p}\" y2=\"{p}\" stroke=\"black\"/>\n",
            "<text x=\"{mid}\" y=\"{lx}\" text-anchor=\"middle\" font-size=\"12\">FAR</text>\n",
            "<text x=\"12\" y=\"{mid}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 12 {mid})\">GAR</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        s = size,
        p = pad,
        b = size - pad,
        r = size - pad,
        mid = size / 2.0,
        lx = size - 10.0,
        pts = pts.trim_end()
    )
}

pub fn histogram_csv(scores: &ScoreSet) -> String {
    let mut s = String::from("bin_start,bin_end,genuine,impostor\n");
    for (a, b, g, i) in histogram(scores, HISTOGRAM_BINS) {
        let _ = writeln!(s, "{a},{b},{g},{i}");
    }
    s
}

pub const REPORT_FILES: [&str; 4] = ["metrics.csv", "roc.csv", "roc.svg", "histogram.csv"];

pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let bodies = [metrics_csv(report), roc_csv(&report.roc), roc_svg(&report.roc), histogram_csv(&report.scores)];
    for (name, body) in REPORT_FILES.iter().zip(bodies) {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub eer: f64,
    pub crr: f64,
    pub di: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::Format { path: path.to_path_buf(), reason: why.to_string() };
    let row = text.lines().nth(1).ok_or_else(|| bad("missing data row"))?;
    let f: Vec<&str> = row.split(',').collect();
    if f.len() != 5 {
        return Err(bad("expected 5 columns"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad count"));
    Ok(Metrics { eer: num(f[0])?, crr: num(f[1])?, di: num(f[2])?, n_genuine: int(f[3])?, n_impostor: int(f[4])? })
}
