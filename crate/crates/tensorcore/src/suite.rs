//! Randomized finite-difference checks of every differentiable primitive,
//! run in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckConfig, GraphBuilder};
use crate::graph::{Graph, Padding, Var};
use crate::params::{Bindings, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    ConvSame,
    ConvValid,
    ConvRect,
    MaxPool2,
    Upsample2,
    Resize,
    AdaptivePool,
    Concat,
    Relu,
    ClampUnit,
    Square,
    Scale,
    AddScalar,
    Add,
    Sub,
    Sum,
    Reshape,
    Linear,
    Mse,
    L2Normalize,
    Dropout,
}

impl Primitive {
    pub const ALL: [Primitive; 21] = [
        Primitive::ConvSame,
        Primitive::ConvValid,
        Primitive::ConvRect,
        Primitive::MaxPool2,
        Primitive::Upsample2,
        Primitive::Resize,
        Primitive::AdaptivePool,
        Primitive::Concat,
        Primitive::Relu,
        Primitive::ClampUnit,
        Primitive::Square,
        Primitive::Scale,
        Primitive::AddScalar,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Sum,
        Primitive::Reshape,
        Primitive::Linear,
        Primitive::Mse,
        Primitive::L2Normalize,
        Primitive::Dropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::ConvSame => "conv2d_same",
            Primitive::ConvValid => "conv2d_valid",
            Primitive::ConvRect => "conv2d_rect",
            Primitive::MaxPool2 => "maxpool2",
            Primitive::Upsample2 => "upsample2_nearest",
            Primitive::Resize => "resize_nearest",
            Primitive::AdaptivePool => "adaptive_avg_pool",
            Primitive::Concat => "concat_channels",
            Primitive::Relu => "relu",
            Primitive::ClampUnit => "clamp_unit",
            Primitive::Square => "square",
            Primitive::Scale => "scale",
            Primitive::AddScalar => "add_scalar",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Sum => "sum",
            Primitive::Reshape => "reshape",
            Primitive::Linear => "linear",
            Primitive::Mse => "mse_loss",
            Primitive::L2Normalize => "l2_normalize",
            Primitive::Dropout => "dropout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    /// Trainable inputs that received no gradient, summed over trials.
    pub missing_gradients: usize,
}

impl SuiteResult {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.missing_gradients == 0 && self.max_rel_error < tolerance
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape matches")
}

struct Case {
    prim: Primitive,
    dims: Vec<usize>,
    /// MSE against this target, so each output element gets its own
    /// upstream gradient.
    target: Tensor<f64>,
}

impl GraphBuilder for Case {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, p: &Bindings) -> Result<Var> {
        let x = p.get("x")?;
        let d = &self.dims;
        let out = match self.prim {
            Primitive::ConvSame | Primitive::ConvRect => g.conv2d(x, p.get("k")?, p.get("b")?, Padding::Same)?,
            Primitive::ConvValid => g.conv2d(x, p.get("k")?, p.get("b")?, Padding::Valid)?,
            Primitive::MaxPool2 => g.maxpool2(x)?,
            Primitive::Upsample2 => g.upsample2_nearest(x)?,
            Primitive::Resize => g.resize_nearest(x, d[0], d[1])?,
            Primitive::AdaptivePool => g.adaptive_avg_pool(x, d[0], d[1])?,
            Primitive::Concat => g.concat_channels(x, p.get("y")?)?,
            Primitive::Relu => g.relu(x),
            Primitive::ClampUnit => g.clamp_unit(x),
            Primitive::Square => g.square(x),
            Primitive::Scale => g.scale(x, T::from_f64(-1.7)),
            Primitive::AddScalar => g.add_scalar(x, T::from_f64(0.3)),
            Primitive::Add => g.add(x, p.get("y")?)?,
            Primitive::Sub => g.sub(x, p.get("y")?)?,
            Primitive::Sum => {
                let s = g.sum(x);
                g.square(s)
            }
            Primitive::Reshape => g.reshape(x, d)?,
            Primitive::Linear => g.linear(x, p.get("w")?, p.get("b")?)?,
            Primitive::Mse => g.mse_loss(x, p.get("y")?)?,
            Primitive::L2Normalize => g.l2_normalize(x)?,
            Primitive::Dropout => g.dropout(x, 0.4, d[0] as u64)?,
        };
        let t = g.constant(self.target.cast());
        let out = if g.value(out).shape() == self.target.shape() { out } else { g.reshape(out, self.target.shape())? };
        g.mse_loss(out, t)
    }
}

/// Random shapes and values for one trial: parameters plus the case.
fn setup(prim: Primitive, rng: &mut ChaCha8Rng) -> (ParamSet<f64>, Case) {
    let mut p = ParamSet::new();
    let r = |rng: &mut ChaCha8Rng, p: &mut ParamSet<f64>, name: &str, shape: &[usize], scale: f64| {
        p.insert(name, rand_tensor(rng, shape, scale));
    };
    let mut dims = Vec::new();
    let out: Vec<usize> = match prim {
        Primitive::ConvSame => {
            let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
            let (kh, kw) = (rng.random_range(1..4) * 2 - 1, rng.random_range(1..4) * 2 - 1);
            let (h, w) = (rng.random_range(3..9), rng.random_range(3..9));
            r(rng, &mut p, "x", &[ci, h, w], 1.0);
            r(rng, &mut p, "k", &[co, ci, kh, kw], 1.0);
            r(rng, &mut p, "b", &[co], 1.0);
            vec![co, h, w]
        }
        Primitive::ConvValid => {
            let (h, w) = (rng.random_range(3..8), rng.random_range(3..8));
            r(rng, &mut p, "x", &[2, h, w], 1.0);
            r(rng, &mut p, "k", &[2, 2, 3, 3], 1.0);
            r(rng, &mut p, "b", &[2], 1.0);
            vec![2, h - 2, w - 2]
        }
        Primitive::ConvRect => {
            let (kh, kw) = if rng.random_bool(0.5) { (9, 3) } else { (3, 7) };
            r(rng, &mut p, "x", &[2, 10, 9], 1.0);
            r(rng, &mut p, "k", &[2, 2, kh, kw], 1.0);
            r(rng, &mut p, "b", &[2], 1.0);
            vec![2, 10, 9]
        }
        Primitive::MaxPool2 => {
            let (c, h, w) = (rng.random_range(1..3), rng.random_range(2..8), rng.random_range(2..8));
            r(rng, &mut p, "x", &[c, h, w], 1.0);
            vec![c, h / 2, w / 2]
        }
        Primitive::Upsample2 => {
            let (c, h, w) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5));
            r(rng, &mut p, "x", &[c, h, w], 1.0);
            vec![c, 2 * h, 2 * w]
        }
        Primitive::Resize | Primitive::AdaptivePool => {
            let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
            dims = vec![rng.random_range(1..6), rng.random_range(1..6)];
            r(rng, &mut p, "x", &[2, h, w], 1.0);
            vec![2, dims[0], dims[1]]
        }
        Primitive::Concat => {
            let (a, b, h, w) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5));
            r(rng, &mut p, "x", &[a, h, w], 1.0);
            r(rng, &mut p, "y", &[b, h, w], 1.0);
            vec![a + b, h, w]
        }
        Primitive::Relu | Primitive::ClampUnit | Primitive::Square | Primitive::Scale | Primitive::AddScalar | Primitive::L2Normalize => {
            let n = rng.random_range(2..30);
            r(rng, &mut p, "x", &[n], 2.0);
            vec![n]
        }
        Primitive::Add | Primitive::Sub => {
            let (c, h) = (rng.random_range(1..3), rng.random_range(1..6));
            r(rng, &mut p, "x", &[c, h, 3], 1.0);
            r(rng, &mut p, "y", &[c, h, 3], 1.0);
            vec![c, h, 3]
        }
        Primitive::Sum | Primitive::Mse => {
            let n = rng.random_range(1..20);
            r(rng, &mut p, "x", &[n], 1.0);
            if prim == Primitive::Mse {
                r(rng, &mut p, "y", &[n], 1.0);
            }
            vec![1]
        }
        Primitive::Reshape => {
            let (a, b) = (rng.random_range(1..5), rng.random_range(1..5));
            r(rng, &mut p, "x", &[a, b, 2], 1.0);
            dims = vec![b, 2 * a];
            dims.clone()
        }
        Primitive::Linear => {
            let (n, m) = (rng.random_range(1..12), rng.random_range(1..8));
            r(rng, &mut p, "x", &[n], 1.0);
            r(rng, &mut p, "w", &[m, n], 1.0);
            r(rng, &mut p, "b", &[m], 1.0);
            vec![m]
        }
        Primitive::Dropout => {
            let n = rng.random_range(4..30);
            dims = vec![rng.random_range(0..1000)];
            r(rng, &mut p, "x", &[n], 1.0);
            vec![n]
        }
    };
    let target = rand_tensor(rng, &out, 1.0);
    (p, Case { prim, dims, target })
}

pub fn check_primitive(prim: Primitive, trials: usize, seed: u64) -> Result<SuiteResult> {
    let mut worst = 0.0f64;
    let mut missing = 0;
    // Kinked ops (max, relu, clamp, nearest sampling) favour a tiny step so
    // the perturbation never crosses a kink.
    let eps = match prim {
        Primitive::ConvSame | Primitive::ConvValid | Primitive::ConvRect => 1e-5,
        _ => 1e-7,
    };
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(t as u64));
        let (params, case) = setup(prim, &mut rng);
        let cfg = GradCheckConfig { eps, samples_per_param: 0, seed: t as u64, kink_tolerant: false };
        let report = check_gradients(&case, &params, |_| true, &cfg)?;
        worst = worst.max(report.max_rel_error());
        missing += report.without_gradient().count();
    }
    Ok(SuiteResult { name: prim.name().to_string(), trials, max_rel_error: worst, missing_gradients: missing })
}

/// Checks every primitive over `trials` random shapes and values.
pub fn primitive_suite(trials: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    Primitive::ALL.iter().map(|&p| check_primitive(p, trials, seed)).collect()
}
