//! Central finite-difference gradient checking.
//!
//! Analytic gradients come from a graph in the element type under test; the
//! numeric side always replays the graph in `f64` so the finite differences
//! stay meaningful when the production path is `f32`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::params::{Bindings, ParamSet};
use crate::scalar::Scalar;

/// Builds a scalar loss from bound parameters. Must be deterministic and
/// generic over the element type so it can be replayed in `f64`.
pub trait GraphBuilder {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, params: &Bindings) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Perturbation applied to each checked element.
    pub eps: f64,
    /// Elements checked per parameter tensor; 0 checks every element.
    pub samples_per_param: usize,
    pub seed: u64,
    /// For deep ReLU nets in low precision. Near a kink the analytic value
    /// is any one-sided derivative, so the error is measured to the interval
    /// spanned by the forward, backward and central differences, and the
    /// denominator is at least the RMS of the tensor's analytic gradient.
    pub kink_tolerant: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-6, samples_per_param: 0, seed: 0, kink_tolerant: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// `None` when the parameter received no gradient (frozen or unused).
    pub max_rel_error: Option<f64>,
    /// Element with the largest error: `(index, analytic, numeric)`.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    /// Largest relative error over every checked parameter (0 if none).
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().filter_map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn without_gradient(&self) -> impl Iterator<Item = &str> {
        self.params.iter().filter(|p| p.max_rel_error.is_none()).map(|p| p.name.as_str())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Distance from `analytic` to `[lo, hi]`, relative to the larger of the
/// magnitudes and `floor`.
pub fn interval_error(analytic: f64, lo: f64, hi: f64, central: f64, floor: f64) -> f64 {
    let d = if analytic < lo { lo - analytic } else if analytic > hi { analytic - hi } else { 0.0 };
    d / analytic.abs().max(central.abs()).max(floor).max(1e-6)
}

fn eval_loss<B: GraphBuilder>(builder: &B, params: &ParamSet<f64>) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let b = g.bind(params, |_| false);
    let loss = builder.build(&mut g, &b)?;
    if g.value(loss).len() != 1 {
        return Err(TensorError::contract("gradcheck: builder must return a scalar"));
    }
    Ok(g.value(loss).data()[0])
}

/// Compares analytic gradients of every trainable parameter against central
/// differences. Failures are reported; only builder errors are returned.
pub fn check_gradients<T: Scalar, B: GraphBuilder>(
    builder: &B,
    params: &ParamSet<T>,
    trainable: impl Fn(&str) -> bool,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut g = Graph::<T>::new();
    let bindings = g.bind(params, &trainable);
    let loss = builder.build(&mut g, &bindings)?;
    g.backward(loss)?;

    let mut shadow = params.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = Vec::new();
    for (name, &var) in bindings.iter() {
        let grad = match g.grad(var) {
            Some(gr) if trainable(name) => gr.to_vec(),
            _ => {
                report.push(ParamCheck { name: name.clone(), checked: 0, max_rel_error: None, worst: None });
                continue;
            }
        };
        let n = grad.len();
        let picks: Vec<usize> = if cfg.samples_per_param == 0 || cfg.samples_per_param >= n {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.samples_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        let mut worst_at = None;
        let (base, floor) = if cfg.kink_tolerant {
            let rms = (grad.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
            (eval_loss(builder, &shadow)?, rms)
        } else {
            (0.0, 0.0)
        };
        for &i in &picks {
            let orig = shadow.get(name).expect("bound").data()[i];
            shadow.get_mut(name).expect("bound").data_mut()[i] = orig + cfg.eps;
            let up = eval_loss(builder, &shadow)?;
            shadow.get_mut(name).expect("bound").data_mut()[i] = orig - cfg.eps;
            let down = eval_loss(builder, &shadow)?;
            shadow.get_mut(name).expect("bound").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = grad[i].as_f64();
            let err = if cfg.kink_tolerant {
                let (fwd, bwd) = ((up - base) / cfg.eps, (base - down) / cfg.eps);
                interval_error(a, fwd.min(bwd).min(numeric), fwd.max(bwd).max(numeric), numeric, floor)
            } else {
                relative_error(a, numeric)
            };
            if worst_at.is_none() || err > worst {
                worst = err;
                worst_at = Some((i, a, numeric));
            }
        }
        report.push(ParamCheck { name: name.clone(), checked: picks.len(), max_rel_error: Some(worst), worst: worst_at });
    }
    Ok(GradCheckReport { params: report })
}
