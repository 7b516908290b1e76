//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node whose inputs have smaller indices, so the tape is
//! already in topological order and `backward` is a single reverse sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::params::{Bindings, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor below which `l2_normalize` refuses to divide.
pub const NORM_EPS: f64 = 1e-8;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial dims equal input dims; for even kernels the extra row
    /// and column of zero padding go to the bottom/right.
    Same,
    Valid,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    ResizeNearest { x: Var },
    AdaptiveAvgPool { x: Var },
    Concat { a: Var, b: Var },
    Relu { x: Var },
    ClampUnit { x: Var },
    Linear { x: Var, w: Var, b: Var },
    Mse { pred: Var, target: Var },
    L2Normalize { x: Var, norm: T },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, factor: T },
    AddScalar { x: Var },
    Square { x: Var },
    Sum { x: Var },
    Reshape { x: Var },
    Dropout { x: Var, mask: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A computation graph in element type `T`.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::Rank { op, expected: a.len(), found: b.len() });
    }
    const AXES: [&str; 4] = ["axis 0", "axis 1", "axis 2", "axis 3"];
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(TensorError::Dimension { op, axis: AXES.get(i).copied().unwrap_or("axis"), expected: *x, found: *y });
        }
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Adds every tensor of `params` as a leaf. Names for which `trainable`
    /// returns false become constants and are reported as having no gradient.
    pub fn bind(&mut self, params: &ParamSet<T>, trainable: impl Fn(&str) -> bool) -> Bindings {
        let mut b = Bindings::default();
        for (name, t) in params.iter() {
            let v = if trainable(name) { self.param(t.clone()) } else { self.constant(t.clone()) };
            b.insert(name.to_string(), v);
        }
        b
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient populated by the last `backward`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of all differentiable bound parameters; unreached ones are zero.
    pub fn param_grads(&self, bindings: &Bindings) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, &v) in bindings.iter() {
            if !self.requires_grad(v) {
                continue;
            }
            let shape = self.value(v).shape().to_vec();
            let data = match self.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); self.value(v).len()],
            };
            out.insert(name.clone(), Tensor::new(shape, data).expect("grad shape"));
        }
        out
    }

    // ---- ops ---------------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, padding: Padding) -> Result<Var> {
        let (c_in, h, w) = self.value(x).chw("conv2d")?;
        let ks = self.value(k).shape().to_vec();
        let [c_out, kc, kh, kw] = ks[..] else {
            return Err(TensorError::Rank { op: "conv2d", expected: 4, found: ks.len() });
        };
        if kc != c_in {
            return Err(TensorError::Dimension { op: "conv2d", axis: "input channels", expected: kc, found: c_in });
        }
        if self.value(b).shape() != [c_out] {
            return Err(TensorError::Dimension { op: "conv2d", axis: "bias length", expected: c_out, found: self.value(b).len() });
        }
        let (pad_top, pad_left, out_h, out_w) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
            Padding::Valid => {
                if kh > h {
                    return Err(TensorError::Dimension { op: "conv2d", axis: "kernel height", expected: h, found: kh });
                }
                if kw > w {
                    return Err(TensorError::Dimension { op: "conv2d", axis: "kernel width", expected: w, found: kw });
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        let geom = ConvGeom { c_in, h, w, c_out, kh, kw, pad_top, pad_left, out_h, out_w };
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), self.value(b).data(), &geom);
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(Tensor::new([c_out, out_h, out_w], out)?, Op::Conv2d { x, k, b, geom }, rg))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("maxpool2")?;
        if h < 2 {
            return Err(TensorError::Dimension { op: "maxpool2", axis: "height", expected: 2, found: h });
        }
        if w < 2 {
            return Err(TensorError::Dimension { op: "maxpool2", axis: "width", expected: 2, found: w });
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), c, h, w);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([c, h / 2, w / 2], out)?, Op::MaxPool2 { x, argmax }, rg))
    }

    pub fn upsample2_nearest(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("upsample2_nearest")?;
        let out = kernels::upsample2_forward(self.value(x).data(), c, h, w);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([c, 2 * h, 2 * w], out)?, Op::Upsample2 { x }, rg))
    }

    /// Nearest-neighbour resize to an arbitrary spatial size.
    pub fn resize_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("resize_nearest")?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::contract("resize_nearest: target size must be positive"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for oy in 0..out_h {
                let iy = kernels::nearest_src(oy, h, out_h);
                for ox in 0..out_w {
                    out.push(src[(ch * h + iy) * w + kernels::nearest_src(ox, w, out_w)]);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([c, out_h, out_w], out)?, Op::ResizeNearest { x }, rg))
    }

    /// Averages over adaptive bins so the output is `[C, out_h, out_w]` for
    /// any input size.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("adaptive_avg_pool")?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::contract("adaptive_avg_pool: target size must be positive"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for oy in 0..out_h {
                let (y0, y1) = kernels::adaptive_bin(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = kernels::adaptive_bin(ox, w, out_w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            acc += src[(ch * h + y) * w + xx];
                        }
                    }
                    out.push(acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([c, out_h, out_w], out)?, Op::AdaptiveAvgPool { x }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw("concat_channels")?;
        let (cb, hb, wb) = self.value(b).chw("concat_channels")?;
        if ha != hb {
            return Err(TensorError::Dimension { op: "concat_channels", axis: "height", expected: ha, found: hb });
        }
        if wa != wb {
            return Err(TensorError::Dimension { op: "concat_channels", axis: "width", expected: wa, found: wb });
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([ca + cb, ha, wa], out)?, Op::Concat { a, b }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("unary shape");
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu { x })
    }

    /// Hard clamp to [0,1]; gradient passes unchanged wherever the input lies
    /// inside the closed interval.
    pub fn clamp_unit(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()).min(T::one()), Op::ClampUnit { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, |v| v * factor, Op::Scale { x, factor })
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar { x })
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(op_name, self.value(a).shape(), self.value(b).shape())?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }

    /// `weight * input + bias` for a rank-1 input.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.value(x).len();
        if self.value(x).rank() != 1 {
            return Err(TensorError::Rank { op: "linear", expected: 1, found: self.value(x).rank() });
        }
        let ws = self.value(w).shape().to_vec();
        let [m, wn] = ws[..] else {
            return Err(TensorError::Rank { op: "linear", expected: 2, found: ws.len() });
        };
        if wn != n {
            return Err(TensorError::Dimension { op: "linear", axis: "input features", expected: wn, found: n });
        }
        if self.value(b).shape() != [m] {
            return Err(TensorError::Dimension { op: "linear", axis: "bias length", expected: m, found: self.value(b).len() });
        }
        let mut out = self.value(b).data().to_vec();
        T::gemm(m, n, 1, self.value(w).data(), false, self.value(x).data(), false, T::one(), &mut out);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::from_vec(out), Op::Linear { x, w, b }, rg))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("mse_loss", self.value(pred).shape(), self.value(target).shape())?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = T::from_f64(p.len() as f64);
        let s = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::Mse { pred, target }, rg))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let norm = t.data().iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm.as_f64() <= NORM_EPS || !norm.is_finite() {
            return Err(TensorError::DegenerateVector { op: "l2_normalize", norm: norm.as_f64(), floor: NORM_EPS });
        }
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| v / norm).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::L2Normalize { x, norm }, rg))
    }

    /// Inverted dropout with a seeded mask. `p == 0` returns an exact copy.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::contract(format!("dropout: rate {p} outside [0,1)")));
        }
        let n = self.value(x).len();
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<T> = (0..n)
            .map(|_| if p > 0.0 && rng.random::<f64>() < p { T::zero() } else if p > 0.0 { keep } else { T::one() })
            .collect();
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    // ---- backward ----------------------------------------------------------

    fn acc(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    /// Reverse sweep from a scalar `loss`. Clears gradients from any earlier
    /// sweep first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else { continue };
            self.propagate(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, gout: &[T]) {
        // Split the node list so op metadata and input values can be read
        // while input gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, geom } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let kv = self.nodes[k.0].value.data().to_vec();
                let mut dx = self.take_grad(*x);
                let mut dk = self.take_grad(*k);
                let mut db = self.take_grad(*b);
                kernels::conv2d_backward(&xv, &kv, gout, geom, dx.as_deref_mut(), dk.as_deref_mut(), db.as_deref_mut());
                self.put_grad(*x, dx);
                self.put_grad(*k, dk);
                self.put_grad(*b, db);
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(dx) = self.acc(*x) {
                    for (&a, &g) in argmax.iter().zip(gout) {
                        dx[a as usize] += g;
                    }
                }
            }
            Op::Upsample2 { x } => {
                let (c, h, w) = self.nodes[x.0].value.chw("upsample2").expect("rank");
                if let Some(dx) = self.acc(*x) {
                    kernels::upsample2_backward(gout, c, h, w, dx);
                }
            }
            Op::ResizeNearest { x } => {
                let (c, h, w) = self.nodes[x.0].value.chw("resize").expect("rank");
                let (_, oh, ow) = self.nodes[i].value.chw("resize").expect("rank");
                if let Some(dx) = self.acc(*x) {
                    for ch in 0..c {
                        for oy in 0..oh {
                            let iy = kernels::nearest_src(oy, h, oh);
                            for ox in 0..ow {
                                let ix = kernels::nearest_src(ox, w, ow);
                                dx[(ch * h + iy) * w + ix] += gout[(ch * oh + oy) * ow + ox];
                            }
                        }
                    }
                }
            }
            Op::AdaptiveAvgPool { x } => {
                let (c, h, w) = self.nodes[x.0].value.chw("pool").expect("rank");
                let (_, oh, ow) = self.nodes[i].value.chw("pool").expect("rank");
                if let Some(dx) = self.acc(*x) {
                    for ch in 0..c {
                        for oy in 0..oh {
                            let (y0, y1) = kernels::adaptive_bin(oy, h, oh);
                            for ox in 0..ow {
                                let (x0, x1) = kernels::adaptive_bin(ox, w, ow);
                                let g = gout[(ch * oh + oy) * ow + ox] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        dx[(ch * h + y) * w + xx] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let na = self.nodes[a.0].value.len();
                if let Some(da) = self.acc(*a) {
                    da.iter_mut().zip(&gout[..na]).for_each(|(d, g)| *d += *g);
                }
                if let Some(db) = self.acc(*b) {
                    db.iter_mut().zip(&gout[na..]).for_each(|(d, g)| *d += *g);
                }
            }
            Op::Relu { x } => self.masked(*x, gout, |v| v > T::zero()),
            Op::ClampUnit { x } => self.masked(*x, gout, |v| v >= T::zero() && v <= T::one()),
            Op::Square { x } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                if let Some(dx) = self.acc(*x) {
                    for ((d, g), v) in dx.iter_mut().zip(gout).zip(xv) {
                        *d += *g * (v + v);
                    }
                }
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().zip(gout).for_each(|(d, g)| *d += *g * f);
                }
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().zip(gout).for_each(|(d, g)| *d += *g);
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let neg = matches!(op, Op::Sub { .. });
                if let Some(da) = self.acc(*a) {
                    da.iter_mut().zip(gout).for_each(|(d, g)| *d += *g);
                }
                if let Some(db) = self.acc(*b) {
                    if neg {
                        db.iter_mut().zip(gout).for_each(|(d, g)| *d -= *g);
                    } else {
                        db.iter_mut().zip(gout).for_each(|(d, g)| *d += *g);
                    }
                }
            }
            Op::Sum { x } => {
                let g = gout[0];
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().for_each(|d| *d += g);
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let wv = self.nodes[w.0].value.data().to_vec();
                let (m, n) = (gout.len(), xv.len());
                if let Some(db) = self.acc(*b) {
                    db.iter_mut().zip(gout).for_each(|(d, g)| *d += *g);
                }
                if let Some(dw) = self.acc(*w) {
                    T::gemm(m, 1, n, gout, false, &xv, false, T::one(), dw);
                }
                if let Some(dx) = self.acc(*x) {
                    T::gemm(n, m, 1, &wv, true, gout, false, T::one(), dx);
                }
            }
            Op::Mse { pred, target } => {
                let p = self.nodes[pred.0].value.data().to_vec();
                let t = self.nodes[target.0].value.data().to_vec();
                let scale = gout[0] * T::from_f64(2.0 / p.len() as f64);
                if let Some(dp) = self.acc(*pred) {
                    for ((d, a), b) in dp.iter_mut().zip(&p).zip(&t) {
                        *d += scale * (*a - *b);
                    }
                }
                if let Some(dt) = self.acc(*target) {
                    for ((d, a), b) in dt.iter_mut().zip(&p).zip(&t) {
                        *d -= scale * (*a - *b);
                    }
                }
            }
            Op::L2Normalize { x, norm } => {
                let y = self.nodes[i].value.data().to_vec();
                let dot = y.iter().zip(gout).map(|(&a, &b)| a * b).sum::<T>();
                let n = *norm;
                if let Some(dx) = self.acc(*x) {
                    for ((d, g), yv) in dx.iter_mut().zip(gout).zip(&y) {
                        *d += (*g - *yv * dot) / n;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = self.acc(*x) {
                    for ((d, g), m) in dx.iter_mut().zip(gout).zip(mask) {
                        *d += *g * *m;
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn masked(&mut self, x: Var, gout: &[T], pass: impl Fn(T) -> bool) {
        let xv = self.nodes[x.0].value.data().to_vec();
        if let Some(dx) = self.acc(x) {
            for ((d, g), v) in dx.iter_mut().zip(gout).zip(xv) {
                if pass(v) {
                    *d += *g;
                }
            }
        }
    }

    fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.acc(v)?;
        self.grads[v.0].take()
    }

    fn put_grad(&mut self, v: Var, g: Option<Vec<T>>) {
        if g.is_some() {
            self.grads[v.0] = g;
        }
    }
}
