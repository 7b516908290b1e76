//! Finite-difference checks of the composed networks in `f32`.

use rand::seq::index::sample;
use rand::Rng;
use tensorcore::suite::SuiteResult;
use tensorcore::{check_gradients, Bindings, GradCheckConfig, Graph, GraphBuilder, ParamSet, Scalar, Tensor, Var};

use crate::ced::{build_ced, ced_graph, CedConfig};
use crate::embedder::{build_fe, fe_graph, FeConfig};
use crate::error::Result;
use crate::seed::{self, Domain};

pub const NETWORK_TOLERANCE: f64 = 1e-2;

/// Tensors and elements probed per trial. The analytic gradient covers
/// every tensor; only a random sample is replayed numerically.
pub const TENSORS_PER_TRIAL: usize = 3;
pub const ELEMENTS_PER_TENSOR: usize = 2;

struct CedCase {
    cfg: CedConfig,
    x: Tensor<f64>,
    target: Tensor<f64>,
}

impl GraphBuilder for CedCase {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, b: &Bindings) -> tensorcore::Result<Var> {
        let x = g.constant(self.x.cast());
        let y = ced_graph(g, b, &self.cfg, x).map_err(|e| tensorcore::TensorError::contract(e.to_string()))?;
        let t = g.constant(self.target.cast());
        g.mse_loss(y, t)
    }
}

struct FeCase {
    cfg: FeConfig,
    x: Tensor<f64>,
    target: Tensor<f64>,
}

impl GraphBuilder for FeCase {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, b: &Bindings) -> tensorcore::Result<Var> {
        let x = g.constant(self.x.cast());
        let y = fe_graph(g, b, &self.cfg, x, None).map_err(|e| tensorcore::TensorError::contract(e.to_string()))?;
        let t = g.constant(self.target.cast());
        g.mse_loss(y, t)
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// Thousands of ReLUs sit close to zero, so a tiny step is used and
/// gradients are compared in kink-tolerant mode: a 32-bit forward pass can
/// land on the other side of a kink than its 64-bit replay.
const EPS: f64 = 1e-6;

fn run<B: GraphBuilder>(name: &str, params: &ParamSet, trials: usize, seed: u64, mut case: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> B) -> Result<SuiteResult> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst = 0.0f64;
    let mut missing = 0;
    for t in 0..trials {
        let mut rng = seed::stream(seed, Domain::Init, 100 + t as u64);
        let builder = case(&mut rng);
        let picked: Vec<&String> = sample(&mut rng, names.len(), TENSORS_PER_TRIAL.min(names.len())).into_iter().map(|i| &names[i]).collect();
        let cfg = GradCheckConfig { eps: EPS, samples_per_param: ELEMENTS_PER_TENSOR, seed: rng.random(), kink_tolerant: true };
        let report = check_gradients(&builder, params, |n| picked.iter().any(|p| p.as_str() == n), &cfg)?;
        worst = worst.max(report.max_rel_error());
        missing += report.params.iter().filter(|p| p.max_rel_error.is_none() && picked.iter().any(|q| **q == p.name)).count();
    }
    Ok(SuiteResult { name: name.to_string(), trials, max_rel_error: worst, missing_gradients: missing })
}

/// Random input and target per trial; weights fixed from `seed`.
pub fn check_ced(cfg: CedConfig, trials: usize, seed: u64) -> Result<SuiteResult> {
    let model = build_ced(cfg, seed)?;
    let s = cfg.input_size;
    run("ced", &model.params, trials, seed, |rng| CedCase { cfg, x: uniform(rng, &[1, s, s], 0.0, 1.0), target: uniform(rng, &[1, s, s], 0.0, 1.0) })
}

pub fn check_fe(cfg: FeConfig, trials: usize, seed: u64) -> Result<SuiteResult> {
    let model = build_fe(cfg.clone(), seed)?;
    let (c, s, d) = (cfg.input_channels, cfg.input_size, cfg.embedding_dim);
    run("fe", &model.params, trials, seed, |rng| FeCase { cfg: cfg.clone(), x: uniform(rng, &[c, s, s], 0.0, 1.0), target: uniform(rng, &[d], -0.2, 0.2) })
}

/// Desk CED (depth 3, 16 base channels) and desk FE at 64x64.
pub fn network_suite(trials: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![check_ced(CedConfig::default(), trials, seed)?, check_fe(FeConfig::desk(), trials, seed)?])
}
