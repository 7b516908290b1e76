//! Slow, obviously-correct reference implementations shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::Rng;

/// FAR/FRR by direct counting at threshold `t` (accept iff distance < t).
pub fn rates(genuine: &[f64], impostor: &[f64], t: f64) -> (f64, f64) {
    let fa = impostor.iter().filter(|&&s| s < t).count() as f64 / impostor.len() as f64;
    let fr = genuine.iter().filter(|&&s| s >= t).count() as f64 / genuine.len() as f64;
    (fa, fr)
}

/// Candidate thresholds: every distinct score, plus one below and one above.
pub fn thresholds(genuine: &[f64], impostor: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let lo = ts[0];
    let hi = ts[ts.len() - 1];
    let pad = 1e-9 * (hi - lo).max(1.0);
    let mut out = vec![lo - pad];
    out.extend(ts);
    out.push(hi + pad);
    out
}

/// EER from the counted sweep: walk consecutive threshold pairs and return
/// the linear crossing of FAR and FRR on the first segment where FAR - FRR
/// turns non-negative.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let ts = thresholds(genuine, impostor);
    let pts: Vec<(f64, f64)> = ts.iter().map(|&t| rates(genuine, impostor, t)).collect();
    if pts[0].0 - pts[0].1 >= 0.0 {
        return pts[0].0;
    }
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (a.0 - a.1, b.0 - b.1);
        if db >= 0.0 {
            if db == 0.0 {
                return b.0;
            }
            let t = -da / (db - da);
            return a.0 + t * (b.0 - a.0);
        }
    }
    unreachable!("FAR reaches 1 and FRR 0 above every score")
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
pub fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

pub fn di(genuine: &[f64], impostor: &[f64]) -> f64 {
    let gap = (mean(impostor) - mean(genuine)).abs();
    let spread = ((var(genuine) + var(impostor)) / 2.0).sqrt();
    if gap == 0.0 {
        0.0
    } else {
        gap / spread
    }
}

/// Rank-1 rate: for each probe row, the gallery column that is smallest
/// under (distance, index) ordering.
pub fn crr(d: &[Vec<f64>], gallery: &[u32], probe: &[u32]) -> f64 {
    let mut hits = 0;
    for (row, &p) in d.iter().zip(probe) {
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
        if gallery[order[0]] == p {
            hits += 1;
        }
    }
    hits as f64 / d.len() as f64
}

pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Exhaustive hard-negative choice over `candidates`: every violator of
/// `J < jp + m`, closest first (ties by id), at most `k`; if none, the
/// closest candidate with the fallback flag.
pub fn mine(anchor: &[f32], candidates: &[(usize, Vec<f32>)], jp: f64, m: f64, k: usize) -> (Vec<usize>, bool) {
    let mut scored: Vec<(usize, f64)> = candidates.iter().map(|(id, e)| (*id, sq_dist(anchor, e))).collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let viol: Vec<usize> = scored.iter().filter(|s| s.1 < jp + m).map(|s| s.0).take(k).collect();
    if viol.is_empty() {
        (vec![scored[0].0], true)
    } else {
        (viol, false)
    }
}

/// Score set with optional heavy ties (values snapped to a coarse grid).
pub fn random_scores(rng: &mut impl Rng, n_gen: usize, n_imp: usize) -> (Vec<f64>, Vec<f64>) {
    let snap = rng.random_bool(0.3);
    let gap = rng.random_range(0.0..1.5);
    let mut draw = |mu: f64| {
        let v: f64 = (mu + rng.random_range(-1.0..1.0f64) * rng.random_range(0.1..1.0)).abs();
        if snap {
            (v * 8.0).round() / 8.0
        } else {
            v
        }
    };
    let g: Vec<f64> = (0..n_gen).map(|_| draw(0.5)).collect();
    let i: Vec<f64> = (0..n_imp).map(|_| draw(0.5 + gap)).collect();
    (g, i)
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize, coarse: bool) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| {
                let x: f32 = rng.random_range(-1.0..1.0);
                if coarse {
                    (x * 2.0).round() / 2.0
                } else {
                    x
                }
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}
