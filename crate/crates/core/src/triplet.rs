//! Triplet objective with an adaptive margin, online hard-negative mining,
//! batch construction and the staged training schedule.

use std::collections::BTreeMap;
use std::fmt;

use log::{debug, warn};
use rand::seq::index::sample;
use rand::Rng;
use tensorcore::{adam_step, AdamConfig, AdamState, Bindings, Graph, ParamSet, Scalar, Var};

use crate::embedder::{fe_graph, Embedding, FeModel};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, Domain};
use crate::train;
use crate::transforms::MultiChannelImage;

// ---- loss ------------------------------------------------------------------

/// Sum of squared differences, accumulated in f64.
pub fn squared_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    let (av, bv) = (widen(a), widen(b));
    squared_distance_slice(&av, &bv)
}

fn widen(e: &Embedding) -> Vec<f64> {
    e.values().iter().map(|&v| v as f64).collect()
}

pub fn squared_distance_slice<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(tensorcore::TensorError::Dimension { op: "squared_distance", axis: "embedding", expected: a.len(), found: b.len() }.into());
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).fold(T::zero(), |s, v| s + v))
}

/// Hinge on precomputed squared distances: `0.5 * max(0, (m + jp) - jn)`.
pub fn hinge<T: Scalar>(jp: T, jn: T, m: T) -> Result<T> {
    if !(m >= T::zero()) {
        return Err(Error::contract(format!("triplet margin must be non-negative, got {m}")));
    }
    let d = (m + jp) - jn;
    Ok(T::from_f64(0.5) * if d > T::zero() { d } else { T::zero() })
}

pub fn triplet_loss(a: &Embedding, p: &Embedding, hn: &Embedding, m: f64) -> Result<f64> {
    hinge(squared_distance(a, p)?, squared_distance(a, hn)?, m)
}

pub fn squared_distance_graph<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let s = g.square(d);
    Ok(g.sum(s))
}

/// Graph form of [`hinge`] on embedding nodes.
pub fn triplet_loss_graph<T: Scalar>(g: &mut Graph<T>, a: Var, p: Var, hn: Var, m: f64) -> Result<Var> {
    if !(m >= 0.0) {
        return Err(Error::contract(format!("triplet margin must be non-negative, got {m}")));
    }
    let jp = squared_distance_graph(g, a, p)?;
    let jn = squared_distance_graph(g, a, hn)?;
    let shifted = g.add_scalar(jp, T::from_f64(m));
    let d = g.sub(shifted, jn)?;
    let h = g.relu(d);
    Ok(g.scale(h, T::from_f64(0.5)))
}

// ---- margin schedule -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginSchedule {
    pub m_start: f64,
    pub m_end: f64,
    pub total_steps: usize,
}

impl MarginSchedule {
    pub const DEFAULT_START: f64 = 0.2;
    pub const DEFAULT_END: f64 = 0.5;

    pub fn new(m_start: f64, m_end: f64, total_steps: usize) -> Result<Self> {
        let s = MarginSchedule { m_start, m_end, total_steps };
        s.validate()?;
        Ok(s)
    }

    pub fn linear(total_steps: usize) -> Result<Self> {
        MarginSchedule::new(Self::DEFAULT_START, Self::DEFAULT_END, total_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::config("margin schedule needs total_steps >= 1"));
        }
        if !(self.m_start.is_finite() && self.m_end.is_finite() && 0.0 <= self.m_start && self.m_start <= self.m_end) {
            return Err(Error::config(format!("margin schedule needs 0 <= m_start <= m_end, got {} and {}", self.m_start, self.m_end)));
        }
        Ok(())
    }

    /// Linear ramp; steps past the end are clamped (with a warning).
    pub fn margin_at(&self, step: usize) -> f64 {
        if step == 0 {
            return self.m_start;
        }
        if step >= self.total_steps {
            if step > self.total_steps {
                warn!("margin_at: step {step} beyond total {}; clamped", self.total_steps);
            }
            return self.m_end;
        }
        self.m_start + (self.m_end - self.m_start) * (step as f64 / self.total_steps as f64)
    }
}

pub fn margin_at(step: usize, schedule: &MarginSchedule) -> f64 {
    schedule.margin_at(step)
}

// ---- mining ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiningConfig {
    /// Candidates drawn from the pool per anchor.
    pub subset_size: usize,
    /// Negatives returned per anchor.
    pub k: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig { subset_size: 32, k: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiningOutcome {
    /// Selected pool entries with their squared distances, ascending.
    pub negatives: Vec<(usize, f64)>,
    /// True when nothing violated the margin and the closest candidate was
    /// returned instead.
    pub fallback: bool,
    pub candidates: usize,
    pub violators: usize,
}

/// Seeded subset of `pool` (all of it when smaller than `size`), in pool order.
pub fn draw_subset(pool: &[usize], size: usize, rng: &mut impl Rng) -> Vec<usize> {
    if size >= pool.len() {
        return pool.to_vec();
    }
    let mut picks = sample(rng, pool.len(), size).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| pool[i]).collect()
}

/// Selection over already-scored candidates `(id, J_hn)`: violators
/// `J_hn < J_p + M`, ascending by `(J_hn, id)`, at most `k`; otherwise the
/// single closest candidate, flagged.
pub fn select_negatives(scored: &[(usize, f64)], jp: f64, m: f64, k: usize) -> Result<MiningOutcome> {
    if scored.is_empty() {
        return Err(Error::contract("hard-negative mining: empty candidate pool"));
    }
    if k == 0 {
        return Err(Error::contract("hard-negative mining: k must be at least 1"));
    }
    let threshold = jp + m;
    let by_distance = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let mut violators: Vec<(usize, f64)> = scored.iter().copied().filter(|&(_, j)| j < threshold).collect();
    violators.sort_by(by_distance);
    let n_viol = violators.len();
    if n_viol == 0 {
        let best = *scored.iter().min_by(|a, b| by_distance(a, b)).expect("non-empty");
        debug!("mining: no violator (closest {:.4}, threshold {threshold:.4})", best.1);
        return Ok(MiningOutcome { negatives: vec![best], fallback: true, candidates: scored.len(), violators: 0 });
    }
    violators.truncate(k);
    Ok(MiningOutcome { negatives: violators, fallback: false, candidates: scored.len(), violators: n_viol })
}

/// Draws a seeded subset of `pool`, embeds it with `embed` (concurrently,
/// merged in subset order) and selects margin violators against `anchor`.
pub fn mine_hard_negatives<F>(
    embed: F,
    anchor: &Embedding,
    pool: &[usize],
    jp: f64,
    m: f64,
    cfg: &MiningConfig,
    seed: u64,
) -> Result<MiningOutcome>
where
    F: Fn(usize) -> Result<Embedding> + Sync + Send,
{
    if pool.is_empty() {
        return Err(Error::contract("hard-negative mining: empty candidate pool"));
    }
    let subset = draw_subset(pool, cfg.subset_size, &mut seed::stream(seed, Domain::Mining, 0));
    let scored: Vec<Result<(usize, f64)>> = par::map(&subset, |&id| Ok((id, squared_distance(anchor, &embed(id)?)?)));
    let scored: Vec<(usize, f64)> = scored.into_iter().collect::<Result<_>>()?;
    select_negatives(&scored, jp, m, cfg.k)
}

// ---- batches ---------------------------------------------------------------

/// Training pool: one input per sample, the subject of each, and optional
/// augmented copies per sample.
#[derive(Clone, Debug)]
pub struct TripletData<I> {
    pub inputs: Vec<I>,
    pub subjects: Vec<u32>,
    pub augmented: Vec<Vec<I>>,
}

impl<I> TripletData<I> {
    pub fn new(inputs: Vec<I>, subjects: Vec<u32>, augmented: Vec<Vec<I>>) -> Result<Self> {
        if inputs.len() != subjects.len() || augmented.len() != inputs.len() {
            return Err(Error::contract("triplet data: inputs, subjects and augmented copies must align"));
        }
        Ok(TripletData { inputs, subjects, augmented })
    }

    pub fn without_augmentation(inputs: Vec<I>, subjects: Vec<u32>) -> Result<Self> {
        let n = inputs.len();
        TripletData::new(inputs, subjects, (0..n).map(|_| Vec::new()).collect())
    }

    pub fn get(&self, r: SampleRef) -> &I {
        match r.aug {
            None => &self.inputs[r.sample],
            Some(j) => &self.augmented[r.sample][j],
        }
    }

    fn by_subject(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &s) in self.subjects.iter().enumerate() {
            m.entry(s).or_default().push(i);
        }
        m
    }
}

/// A sample or one of its augmented copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleRef {
    pub sample: usize,
    pub aug: Option<usize>,
}

impl SampleRef {
    pub fn plain(sample: usize) -> Self {
        SampleRef { sample, aug: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: SampleRef,
    pub negative: usize,
    /// Negative came from the no-violator fallback.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
    pub margin: f64,
    pub candidates: usize,
    pub violators: usize,
}

impl TripletBatch {
    /// Fraction of mined candidates that violated the margin.
    pub fn violator_rate(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.violators as f64 / self.candidates as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchConfig {
    /// Triplets per batch.
    pub batch_size: usize,
    pub mining: MiningConfig,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { batch_size: 90, mining: MiningConfig::default() }
    }
}

/// Anything that maps an input to a unit embedding through a graph.
pub trait TripletModel: Sync {
    type Input: Sync;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn is_trainable(&self, name: &str) -> bool;
    /// Toggles the backbone (everything but the head) and the head.
    fn set_trainable(&mut self, backbone: bool, head: bool);
    fn embed_graph(&self, g: &mut Graph, b: &Bindings, x: &Self::Input, dropout_seed: Option<u64>) -> Result<Var>;

    fn embed_input(&self, x: &Self::Input) -> Result<Embedding> {
        let mut g = Graph::new();
        let b = g.bind(self.params(), |_| false);
        let e = self.embed_graph(&mut g, &b, x, None)?;
        Embedding::new(g.value(e).data().to_vec())
    }
}

impl TripletModel for FeModel {
    type Input = MultiChannelImage;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn is_trainable(&self, name: &str) -> bool {
        FeModel::is_trainable(self, name)
    }

    fn set_trainable(&mut self, backbone: bool, head: bool) {
        FeModel::set_trainable(self, backbone, head)
    }

    fn embed_graph(&self, g: &mut Graph, b: &Bindings, x: &MultiChannelImage, dropout_seed: Option<u64>) -> Result<Var> {
        let xv = g.constant(x.to_tensor());
        fe_graph(g, b, &self.config, xv, dropout_seed)
    }
}

/// Samples `batch_size` (anchor, positive) pairs and mines one hard negative
/// for each under `margin`.
pub fn build_batch<M: TripletModel>(
    data: &TripletData<M::Input>,
    model: &M,
    margin: f64,
    cfg: &BatchConfig,
    seed: u64,
) -> Result<TripletBatch> {
    let groups = data.by_subject();
    let anchors: Vec<usize> = groups.values().filter(|v| v.len() >= 2).flatten().copied().collect();
    if groups.len() < 2 || groups.values().filter(|v| v.len() >= 2).count() < 2 {
        return Err(Error::contract("triplet batches need at least 2 subjects with at least 2 samples each"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("triplet batch_size must be positive"));
    }
    let mut rng = seed::stream(seed, Domain::Batch, 0);
    struct Slot {
        anchor: usize,
        positive: SampleRef,
        subset: Vec<usize>,
    }
    let mut slots = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let anchor = anchors[rng.random_range(0..anchors.len())];
        let subject = data.subjects[anchor];
        let positives: Vec<SampleRef> = groups[&subject]
            .iter()
            .filter(|&&s| s != anchor)
            .flat_map(|&s| std::iter::once(SampleRef::plain(s)).chain((0..data.augmented[s].len()).map(move |j| SampleRef { sample: s, aug: Some(j) })))
            .collect();
        let positive = positives[rng.random_range(0..positives.len())];
        let pool: Vec<usize> = (0..data.inputs.len()).filter(|&i| data.subjects[i] != subject).collect();
        let subset = draw_subset(&pool, cfg.mining.subset_size, &mut rng);
        slots.push(Slot { anchor, positive, subset });
    }
    // embed every referenced input once, in sorted order
    let mut needed: Vec<SampleRef> = slots
        .iter()
        .flat_map(|s| [SampleRef::plain(s.anchor), s.positive].into_iter().chain(s.subset.iter().map(|&i| SampleRef::plain(i))))
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let embedded: Vec<Result<Embedding>> = par::map(&needed, |&r| model.embed_input(data.get(r)));
    let mut cache = BTreeMap::new();
    for (r, e) in needed.into_iter().zip(embedded) {
        cache.insert(r, e?);
    }
    let mut triplets = Vec::with_capacity(slots.len());
    let (mut candidates, mut violators) = (0, 0);
    for s in &slots {
        let a = &cache[&SampleRef::plain(s.anchor)];
        let jp = squared_distance(a, &cache[&s.positive])?;
        let scored: Vec<(usize, f64)> = s
            .subset
            .iter()
            .map(|&i| Ok((i, squared_distance(a, &cache[&SampleRef::plain(i)])?)))
            .collect::<Result<_>>()?;
        let out = select_negatives(&scored, jp, margin, cfg.mining.k)?;
        candidates += out.candidates;
        violators += out.violators;
        triplets.push(Triplet { anchor: s.anchor, positive: s.positive, negative: out.negatives[0].0, fallback: out.fallback });
    }
    Ok(TripletBatch { triplets, margin, candidates, violators })
}

// ---- training --------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Frozen,
    Full,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Frozen => "frozen",
            Phase::Full => "full",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletTrainConfig {
    pub batch: BatchConfig,
    pub adam: AdamConfig,
    /// Steps averaged into one epoch loss for the stabilisation test.
    pub steps_per_epoch: usize,
    /// Run the head-only phase first.
    pub frozen_phase: bool,
    pub frozen_max_epochs: usize,
    pub stabilize_tolerance: f64,
    pub stabilize_epochs: usize,
    pub seed: u64,
}

impl Default for TripletTrainConfig {
    fn default() -> Self {
        TripletTrainConfig {
            batch: BatchConfig::default(),
            adam: AdamConfig::default(),
            steps_per_epoch: 5,
            frozen_phase: true,
            frozen_max_epochs: 20,
            stabilize_tolerance: 0.02,
            stabilize_epochs: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletStep {
    pub step: usize,
    pub loss: f64,
    pub margin: f64,
    pub violator_rate: f64,
    pub phase: Phase,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripletLog {
    pub steps: Vec<TripletStep>,
}

impl TripletLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,margin,violator_rate,phase\n");
        for r in &self.steps {
            s.push_str(&format!("{},{},{},{},{}\n", r.step, r.loss, r.margin, r.violator_rate, r.phase));
        }
        s
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &TripletStep> {
        self.steps.iter().filter(move |r| r.phase == phase)
    }
}

fn batch_loss<M: TripletModel>(model: &M, data: &TripletData<M::Input>, batch: &TripletBatch, step_seed: u64, grads: bool) -> Result<(f64, Option<ParamSet>)> {
    let idx: Vec<usize> = (0..batch.triplets.len()).collect();
    let loss_fn = |g: &mut Graph, b: &Bindings, &i: &usize| -> Result<Var> {
        let t = &batch.triplets[i];
        let ds = |role: u64| Some(seed::derive(step_seed, Domain::Dropout, 3 * i as u64 + role));
        let a = model.embed_graph(g, b, &data.inputs[t.anchor], ds(0))?;
        let p = model.embed_graph(g, b, data.get(t.positive), ds(1))?;
        let n = model.embed_graph(g, b, &data.inputs[t.negative], ds(2))?;
        triplet_loss_graph(g, a, p, n, batch.margin)
    };
    if grads {
        let trainable = |n: &str| model.is_trainable(n);
        let (l, g) = train::mean_gradients(model.params(), &trainable, &idx, loss_fn)?;
        Ok((l, Some(g)))
    } else {
        Ok((train::mean_loss(model.params(), &idx, loss_fn)?, None))
    }
}

/// Mean triplet loss of a batch under the current weights.
pub fn evaluate_batch<M: TripletModel>(model: &M, data: &TripletData<M::Input>, batch: &TripletBatch) -> Result<f64> {
    Ok(batch_loss(model, data, batch, 0, false)?.0)
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev == cur {
        0.0
    } else {
        (cur - prev).abs() / prev.abs().max(1e-12)
    }
}

/// Mines, steps Adam and logs. With `frozen_phase`, first trains only the
/// head at `m_start` until the epoch loss stabilises, then trains
/// everything for `schedule.total_steps` steps along the margin ramp.
/// Trainability is restored to fully trainable afterwards.
pub fn train_triplet<M: TripletModel>(
    model: &mut M,
    data: &TripletData<M::Input>,
    schedule: &MarginSchedule,
    cfg: &TripletTrainConfig,
) -> Result<TripletLog> {
    schedule.validate()?;
    if cfg.steps_per_epoch == 0 {
        return Err(Error::config("steps_per_epoch must be positive"));
    }
    let mut state = AdamState::for_params(model.params());
    let mut log = TripletLog::default();
    let mut global = 0usize;
    let mut step = |model: &mut M, margin: f64, phase: Phase, log: &mut TripletLog| -> Result<f64> {
        let s = seed::derive(cfg.seed, Domain::Batch, global as u64);
        let batch = build_batch(data, &*model, margin, &cfg.batch, s)?;
        let (loss, grads) = batch_loss(&*model, data, &batch, s, true)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: global, loss });
        }
        adam_step(model.params_mut(), &grads.expect("grads"), &mut state, &cfg.adam)?;
        log.steps.push(TripletStep { step: global, loss, margin, violator_rate: batch.violator_rate(), phase });
        debug!("triplet step {global} ({phase}): loss {loss:.5} margin {margin:.3} violators {:.3}", batch.violator_rate());
        global += 1;
        Ok(loss)
    };

    if cfg.frozen_phase {
        model.set_trainable(false, true);
        let mut prev: Option<f64> = None;
        let mut calm = 0;
        for _ in 0..cfg.frozen_max_epochs {
            let mut total = 0.0;
            for _ in 0..cfg.steps_per_epoch {
                total += step(model, schedule.m_start, Phase::Frozen, &mut log)?;
            }
            let mean = total / cfg.steps_per_epoch as f64;
            if let Some(p) = prev {
                calm = if relative_change(p, mean) < cfg.stabilize_tolerance { calm + 1 } else { 0 };
            }
            prev = Some(mean);
            if calm >= cfg.stabilize_epochs {
                break;
            }
        }
    }
    model.set_trainable(true, true);
    for k in 0..schedule.total_steps {
        step(model, schedule.margin_at(k), Phase::Full, &mut log)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f32]) -> Embedding {
        Embedding::normalized(v).unwrap()
    }

    #[test]
    fn distance_cases() {
        let (x, y) = (unit(&[1.0, 0.0]), unit(&[0.0, 1.0]));
        assert_eq!(squared_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(squared_distance(&x, &y).unwrap(), 2.0);
        assert_eq!(squared_distance(&x, &unit(&[-1.0, 0.0])).unwrap(), 4.0);
        assert!(squared_distance(&x, &unit(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn hinge_cases() {
        let a = unit(&[0.6, 0.8]);
        assert_eq!(triplet_loss(&a, &a, &a, 0.3).unwrap(), 0.15);
        assert_eq!(hinge(0.0, 2.0, 0.5).unwrap(), 0.0);
        assert!((hinge(1.0f64, 1.2, 0.5).unwrap() - 0.15).abs() < 1e-15);
        assert!(hinge(0.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(tensorcore::Tensor::from_vec(vec![1.0, 0.0]));
        let p = g.param(tensorcore::Tensor::from_vec(vec![0.9, 0.1]));
        let n = g.param(tensorcore::Tensor::from_vec(vec![-1.0, 0.0]));
        let l = triplet_loss_graph(&mut g, a, p, n, 0.5).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
        for v in [a, p, n] {
            assert!(g.grad(v).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn margin_schedule() {
        let s = MarginSchedule::linear(100).unwrap();
        assert_eq!(s.margin_at(0), 0.2);
        assert_eq!(s.margin_at(100), 0.5);
        assert_eq!(s.margin_at(1000), 0.5);
        assert!((s.margin_at(50) - 0.35).abs() < 1e-12);
        assert!((0..=100).map(|k| s.margin_at(k)).collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1]));
        assert!(MarginSchedule::linear(0).is_err());
        assert!(MarginSchedule::new(0.5, 0.2, 10).is_err());
    }

    #[test]
    fn selection_cases() {
        let out = select_negatives(&[(0, 0.4), (1, 0.9), (2, 0.7)], 0.3, 0.5, 5).unwrap();
        assert_eq!(out.negatives, vec![(0, 0.4), (2, 0.7)]);
        assert!(!out.fallback);
        assert_eq!(out.violators, 2);
        let out = select_negatives(&[(0, 3.9), (1, 3.9), (2, 3.9)], 0.1, 0.5, 1).unwrap();
        assert!(out.fallback);
        assert_eq!(out.negatives, vec![(0, 3.9)]);
        assert!(select_negatives(&[], 0.0, 0.1, 1).is_err());
    }
}
