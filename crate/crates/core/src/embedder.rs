//! Siamese feature extractor: rectangular-filter conv trunk, adaptive pool
//! to a fixed grid, one fully connected layer, unit-sphere projection.

use tensorcore::init::{conv_params, linear_params};
use tensorcore::{Bindings, Graph, Padding, ParamSet, Scalar, Var};

use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, Domain};
use crate::train::{self, FitConfig, TrainLog};
use crate::transforms::MultiChannelImage;

pub const TRUNK: &str = "trunk.";
pub const HEAD: &str = "head.";
pub const DECODER: &str = "dec.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    /// Parallel `(long, short)` and `(short, long)` convs, concatenated.
    Paired { long: usize, short: usize },
    Single { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub kind: StageKind,
    /// Total output channels; paired stages split them evenly.
    pub out_channels: usize,
    pub pool_after: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub stages: Vec<StageSpec>,
    pub pool_grid: usize,
    pub embedding_dim: usize,
    /// Dropout before the head during training; 0 disables it.
    pub dropout: f64,
}

/// The rectangular-filter stage list with the given channel schedule.
pub fn stage_list(channels: [usize; 6]) -> Vec<StageSpec> {
    use StageKind::*;
    let kinds = [
        (Paired { long: 9, short: 3 }, true),
        (Paired { long: 7, short: 3 }, true),
        (Paired { long: 5, short: 3 }, true),
        (Single { k: 3 }, true),
        (Single { k: 3 }, false),
        (Single { k: 3 }, false),
    ];
    kinds.iter().zip(channels).map(|(&(kind, pool_after), out_channels)| StageSpec { kind, out_channels, pool_after }).collect()
}

impl FeConfig {
    /// Full-size interface: 3x150x150 in, 512x7x7 trunk, 128-d out.
    pub fn full() -> Self {
        FeConfig { input_size: 150, input_channels: 3, stages: stage_list([64, 128, 256, 512, 512, 512]), pool_grid: 7, embedding_dim: 128, dropout: 0.0 }
    }

    /// Desk scale: 3x64x64 in, 64x4x4 trunk, 128-d out.
    pub fn desk() -> Self {
        FeConfig { input_size: 64, input_channels: 3, stages: stage_list([8, 16, 32, 64, 64, 64]), pool_grid: 4, embedding_dim: 128, dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("fe needs at least one stage"));
        }
        if self.input_channels == 0 || self.pool_grid == 0 || self.embedding_dim == 0 {
            return Err(Error::config("fe input_channels, pool_grid and embedding_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("fe dropout must lie in [0,1), got {}", self.dropout)));
        }
        let mut size = self.input_size;
        for (i, s) in self.stages.iter().enumerate() {
            let ok = match s.kind {
                StageKind::Paired { long, short } => long > 0 && short > 0 && s.out_channels % 2 == 0,
                StageKind::Single { k } => k > 0,
            };
            if !ok || s.out_channels == 0 {
                return Err(Error::config(format!("fe stage {i}: invalid spec {s:?}")));
            }
            if s.pool_after {
                size /= 2;
            }
            if size == 0 {
                return Err(Error::config(format!("fe input_size {} too small for the pooling schedule", self.input_size)));
            }
        }
        Ok(())
    }

    pub fn trunk_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.out_channels)
    }

    /// Length of the flattened trunk output fed to the head.
    pub fn flat_len(&self) -> usize {
        self.trunk_channels() * self.pool_grid * self.pool_grid
    }

    /// Spatial size of the final conv map, before the adaptive pool.
    pub fn trunk_map_size(&self) -> usize {
        self.stages.iter().fold(self.input_size, |s, st| if st.pool_after { s / 2 } else { s })
    }
}

/// A unit-norm embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f32>);

pub const NORM_TOLERANCE: f64 = 1e-5;

impl Embedding {
    /// Errors unless `values` has norm 1 within [`NORM_TOLERANCE`].
    pub fn new(values: Vec<f32>) -> Result<Self> {
        let e = Embedding(values);
        let n = e.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::contract(format!("embedding norm {n} is not 1")));
        }
        Ok(e)
    }

    /// Normalises `values`; degenerate vectors are rejected.
    pub fn normalized(values: &[f32]) -> Result<Self> {
        let n = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if n <= tensorcore::NORM_EPS {
            return Err(tensorcore::TensorError::DegenerateVector { op: "embedding", norm: n, floor: tensorcore::NORM_EPS }.into());
        }
        Embedding::new(values.iter().map(|&v| (v as f64 / n) as f32).collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeModel {
    pub config: FeConfig,
    /// `trunk.*` conv stages and `head.*` fully connected layer.
    pub params: ParamSet,
    pub train_trunk: bool,
    pub train_head: bool,
}

fn stage_layers(cfg: &FeConfig, prefix: &str, mirror: bool) -> Vec<(String, [usize; 4])> {
    let mut out = Vec::new();
    let mut c_in = cfg.input_channels;
    for (i, s) in cfg.stages.iter().enumerate() {
        let (o, inp) = if mirror { (c_in, s.out_channels) } else { (s.out_channels, c_in) };
        match s.kind {
            StageKind::Paired { long, short } => {
                let (ob, ib) = if mirror { (o, inp / 2) } else { (o / 2, inp) };
                out.push((format!("{prefix}s{i}.a"), [ob, ib, long, short]));
                out.push((format!("{prefix}s{i}.b"), [ob, ib, short, long]));
            }
            StageKind::Single { k } => out.push((format!("{prefix}s{i}.conv"), [o, inp, k, k])),
        }
        c_in = s.out_channels;
    }
    out
}

fn init_convs(layers: &[(String, [usize; 4])], params: &mut ParamSet, rng: &mut rand_chacha::ChaCha8Rng) {
    for (name, [o, i, kh, kw]) in layers {
        let (w, b) = conv_params::<f32, _>(*o, *i, *kh, *kw, rng);
        params.insert(format!("{name}.w"), w);
        params.insert(format!("{name}.b"), b);
    }
}

pub fn build_fe(config: FeConfig, seed: u64) -> Result<FeModel> {
    config.validate()?;
    let mut rng = seed::stream(seed, Domain::Init, 1);
    let mut params = ParamSet::new();
    init_convs(&stage_layers(&config, TRUNK, false), &mut params, &mut rng);
    let (w, b) = linear_params::<f32, _>(config.embedding_dim, config.flat_len(), &mut rng);
    params.insert(format!("{HEAD}fc.w"), w);
    params.insert(format!("{HEAD}fc.b"), b);
    Ok(FeModel { config, params, train_trunk: true, train_head: true })
}

fn conv<T: Scalar>(g: &mut Graph<T>, b: &Bindings, name: &str, x: Var) -> Result<Var> {
    Ok(g.conv2d(x, b.get(&format!("{name}.w"))?, b.get(&format!("{name}.b"))?, Padding::Same)?)
}

/// Trunk convs on `x`; returns the final map and the spatial size entering
/// each pooling layer (consumed by the mirror decoder).
pub fn trunk_graph<T: Scalar>(g: &mut Graph<T>, b: &Bindings, cfg: &FeConfig, x: Var) -> Result<(Var, Vec<(usize, usize)>)> {
    let (c, h, w) = g.value(x).chw("fe")?;
    if (h, w) != (cfg.input_size, cfg.input_size) {
        return Err(Error::Dimension { what: "fe input".into(), expected: (cfg.input_size, cfg.input_size), found: (h, w) });
    }
    if c != cfg.input_channels {
        return Err(Error::contract(format!("fe expects {} input channels, got {c}", cfg.input_channels)));
    }
    let mut pre_pool = Vec::new();
    let mut cur = x;
    for (i, s) in cfg.stages.iter().enumerate() {
        cur = match s.kind {
            StageKind::Paired { .. } => {
                let a = conv(g, b, &format!("{TRUNK}s{i}.a"), cur)?;
                let bb = conv(g, b, &format!("{TRUNK}s{i}.b"), cur)?;
                let (a, bb) = (g.relu(a), g.relu(bb));
                g.concat_channels(a, bb)?
            }
            StageKind::Single { .. } => {
                let y = conv(g, b, &format!("{TRUNK}s{i}.conv"), cur)?;
                g.relu(y)
            }
        };
        if s.pool_after {
            let (_, h, w) = g.value(cur).chw("fe")?;
            pre_pool.push((h, w));
            cur = g.maxpool2(cur)?;
        }
    }
    Ok((cur, pre_pool))
}

/// Full FE on `x`, returning the unit-norm embedding node. `dropout_seed`
/// enables dropout (training only).
pub fn fe_graph<T: Scalar>(g: &mut Graph<T>, b: &Bindings, cfg: &FeConfig, x: Var, dropout_seed: Option<u64>) -> Result<Var> {
    let (map, _) = trunk_graph(g, b, cfg, x)?;
    let pooled = g.adaptive_avg_pool(map, cfg.pool_grid, cfg.pool_grid)?;
    let mut flat = g.flatten(pooled)?;
    if let (Some(s), true) = (dropout_seed, cfg.dropout > 0.0) {
        flat = g.dropout(flat, cfg.dropout, s)?;
    }
    let z = g.linear(flat, b.get(&format!("{HEAD}fc.w"))?, b.get(&format!("{HEAD}fc.b"))?)?;
    Ok(g.l2_normalize(z)?)
}

impl FeModel {
    pub fn set_trainable(&mut self, trunk: bool, head: bool) {
        self.train_trunk = trunk;
        self.train_head = head;
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        (self.train_trunk && name.starts_with(TRUNK)) || (self.train_head && name.starts_with(HEAD))
    }

    pub fn trunk(&self) -> ParamSet {
        self.params.iter().filter(|(k, _)| k.starts_with(TRUNK)).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Replaces the trunk tensors; names and shapes must match.
    pub fn load_trunk(&mut self, trunk: &ParamSet) -> Result<()> {
        let own = self.trunk();
        if own.len() != trunk.len() {
            return Err(Error::contract(format!("trunk has {} tensors, got {}", own.len(), trunk.len())));
        }
        for (name, t) in trunk.iter() {
            match own.get(name) {
                Some(o) if o.shape() == t.shape() => {}
                _ => return Err(Error::contract(format!("trunk tensor {name} missing or mis-shaped"))),
            }
        }
        for (name, t) in trunk.iter() {
            self.params.insert(name.clone(), t.clone());
        }
        Ok(())
    }

    pub fn embed(&self, mci: &MultiChannelImage) -> Result<Embedding> {
        let mut g = Graph::new();
        let b = g.bind(&self.params, |_| false);
        let x = g.constant(mci.to_tensor());
        let e = fe_graph(&mut g, &b, &self.config, x, None)?;
        Embedding::new(g.value(e).data().to_vec())
    }

    pub fn embed_all(&self, items: &[MultiChannelImage]) -> Result<Vec<Embedding>> {
        par::map(items, |m| self.embed(m)).into_iter().collect()
    }
}

pub fn embed(fe: &FeModel, mci: &MultiChannelImage) -> Result<Embedding> {
    fe.embed(mci)
}

pub fn set_trainable(fe: &mut FeModel, trunk: bool, head: bool) {
    fe.set_trainable(trunk, head)
}

// ---- autoencoder pretraining ----------------------------------------------

/// Mirror decoder: stages in reverse, each undoing its pool with a nearest
/// resize to the recorded size, then a conv back to the stage's input width.
/// Paired stages mirror both branches and sum them. ReLU everywhere except
/// the final layer.
fn decoder_graph<T: Scalar>(g: &mut Graph<T>, b: &Bindings, cfg: &FeConfig, code: Var, pre_pool: &[(usize, usize)]) -> Result<Var> {
    let mut cur = code;
    let mut pools = pre_pool.iter().rev();
    for (i, s) in cfg.stages.iter().enumerate().rev() {
        if s.pool_after {
            let &(h, w) = pools.next().expect("one size per pool");
            cur = g.resize_nearest(cur, h, w)?;
        }
        cur = match s.kind {
            StageKind::Paired { .. } => {
                let half = s.out_channels / 2;
                let (ca, cb) = split_channels(g, cur, half)?;
                let a = conv(g, b, &format!("{DECODER}s{i}.a"), ca)?;
                let bb = conv(g, b, &format!("{DECODER}s{i}.b"), cb)?;
                g.add(a, bb)?
            }
            StageKind::Single { .. } => conv(g, b, &format!("{DECODER}s{i}.conv"), cur)?,
        };
        if i > 0 {
            cur = g.relu(cur);
        }
    }
    Ok(cur)
}

// Channel halves via fixed 1x1 selection convs (constants, so no gradient
// reaches them).
fn split_channels<T: Scalar>(g: &mut Graph<T>, x: Var, half: usize) -> Result<(Var, Var)> {
    let (c, _, _) = g.value(x).chw("split")?;
    let select = |g: &mut Graph<T>, offset: usize| {
        let mut k = vec![T::zero(); half * c];
        for o in 0..half {
            k[o * c + offset + o] = T::one();
        }
        let kv = g.constant(tensorcore::Tensor::new([half, c, 1, 1], k).expect("select"));
        let bv = g.constant(tensorcore::Tensor::zeros([half]));
        g.conv2d(x, kv, bv, Padding::Same)
    };
    Ok((select(g, 0)?, select(g, half)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AePretrainResult {
    /// Trained trunk tensors only; the decoder is discarded.
    pub trunk: ParamSet,
    pub log: TrainLog,
    pub initial_mse: f64,
    pub final_mse: f64,
}

fn ae_loss(g: &mut Graph, b: &Bindings, cfg: &FeConfig, mci: &MultiChannelImage) -> Result<Var> {
    let x = g.constant(mci.to_tensor());
    let (code, sizes) = trunk_graph(g, b, cfg, x)?;
    let y = decoder_graph(g, b, cfg, code, &sizes)?;
    Ok(g.mse_loss(y, x)?)
}

/// Trains trunk plus mirror decoder to reconstruct the inputs.
pub fn pretrain_autoencoder(fe: &FeModel, images: &[MultiChannelImage], fit: &FitConfig) -> Result<AePretrainResult> {
    if images.is_empty() {
        return Err(Error::contract("autoencoder pretraining needs at least one image"));
    }
    let cfg = fe.config.clone();
    let mut params = fe.trunk();
    let mut rng = seed::stream(fit.seed, Domain::Init, 2);
    init_convs(&stage_layers(&cfg, DECODER, true), &mut params, &mut rng);
    let loss = |g: &mut Graph, b: &Bindings, m: &MultiChannelImage| ae_loss(g, b, &cfg, m);
    let initial_mse = train::mean_loss(&params, images, loss)?;
    let log = train::fit(&mut params, &|_| true, images.len(), fit, "autoencoder", |g, b, i| loss(g, b, &images[i]))?;
    let final_mse = train::mean_loss(&params, images, loss)?;
    let trunk = params.iter().filter(|(k, _)| k.starts_with(TRUNK)).map(|(k, v)| (k.clone(), v.clone())).collect();
    Ok(AePretrainResult { trunk, log, initial_mse, final_mse })
}

/// Output shape of the untrained autoencoder on `mci`.
pub fn autoencoder_output_shape(fe: &FeModel, mci: &MultiChannelImage) -> Result<Vec<usize>> {
    let mut params = fe.trunk();
    init_convs(&stage_layers(&fe.config, DECODER, true), &mut params, &mut seed::stream(0, Domain::Init, 2));
    let mut g = Graph::new();
    let b = g.bind(&params, |_| false);
    let x = g.constant(mci.to_tensor());
    let (code, sizes) = trunk_graph(&mut g, &b, &fe.config, x)?;
    let y = decoder_graph(&mut g, &b, &fe.config, code, &sizes)?;
    Ok(g.value(y).shape().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::transforms::stack_channels;
    use rand::Rng;
    use tensorcore::{adam_step, AdamConfig, AdamState};

    fn tiny() -> FeConfig {
        FeConfig { input_size: 16, input_channels: 3, stages: stage_list([4, 4, 4, 8, 8, 8]), pool_grid: 2, embedding_dim: 8, dropout: 0.0 }
    }

    fn mci(size: usize, seed: u64) -> MultiChannelImage {
        let mut rng = seed::stream(seed, Domain::GroundTruth, 1);
        let mut im = || Image::new(size, size, (0..size * size).map(|_| rng.random::<f32>()).collect()).unwrap();
        stack_channels(im(), im(), im()).unwrap()
    }

    #[test]
    fn preset_shapes() {
        let p = FeConfig::full();
        p.validate().unwrap();
        assert_eq!(p.trunk_map_size(), 9);
        assert_eq!(p.flat_len(), 25088);
        let d = FeConfig::desk();
        assert_eq!(d.trunk_map_size(), 4);
        assert_eq!(d.flat_len(), 1024);
        let fe = build_fe(d, 0).unwrap();
        assert_eq!(fe.params.get("head.fc.w").unwrap().shape(), &[128, 1024]);
        assert_eq!(fe.params.get("trunk.s0.a.w").unwrap().shape(), &[4, 3, 9, 3]);
        assert_eq!(fe.params.get("trunk.s0.b.w").unwrap().shape(), &[4, 3, 3, 9]);
    }

    #[test]
    fn invalid_stage_rejected() {
        let mut c = tiny();
        c.stages[0].out_channels = 5;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.input_size = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn embedding_is_unit_and_deterministic() {
        let fe = build_fe(tiny(), 3).unwrap();
        let x = mci(16, 0);
        let e = fe.embed(&x).unwrap();
        assert_eq!(e.dim(), 8);
        assert!((e.norm() - 1.0).abs() < NORM_TOLERANCE);
        assert_eq!(e, fe.embed(&x).unwrap());
        assert!(matches!(fe.embed(&mci(8, 0)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_head_is_degenerate() {
        let mut fe = build_fe(tiny(), 3).unwrap();
        fe.params.get_mut("head.fc.w").unwrap().data_mut().fill(0.0);
        assert!(matches!(fe.embed(&mci(16, 0)), Err(Error::Tensor(tensorcore::TensorError::DegenerateVector { .. }))));
    }

    #[test]
    fn frozen_trunk_is_bit_identical_after_steps() {
        let mut fe = build_fe(tiny(), 1).unwrap();
        fe.set_trainable(false, true);
        let before = fe.clone();
        let x = mci(16, 5);
        let target = build_fe(tiny(), 2).unwrap().embed(&x).unwrap();
        let mut state = AdamState::for_params(&fe.params);
        for _ in 0..10 {
            let mut g = Graph::new();
            let b = g.bind(&fe.params, |n| fe.is_trainable(n));
            let xv = g.constant(x.to_tensor());
            let e = fe_graph(&mut g, &b, &fe.config, xv, None).unwrap();
            let t = g.constant(tensorcore::Tensor::from_vec(target.values().to_vec()));
            let loss = g.mse_loss(e, t).unwrap();
            g.backward(loss).unwrap();
            adam_step(&mut fe.params, &g.param_grads(&b), &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(fe.trunk(), before.trunk());
        assert_ne!(fe.params.get("head.fc.w"), before.params.get("head.fc.w"));

        fe.set_trainable(false, false);
        let mut g = Graph::new();
        let b = g.bind(&fe.params, |n| fe.is_trainable(n));
        let xv = g.constant(x.to_tensor());
        let e = fe_graph(&mut g, &b, &fe.config, xv, None).unwrap();
        let s = g.sum(e);
        g.backward(s).unwrap();
        assert!(g.param_grads(&b).is_empty());
    }

    #[test]
    fn autoencoder_mirror_shape_and_trunk_only_output() {
        let fe = build_fe(tiny(), 0).unwrap();
        let imgs: Vec<_> = (0..3).map(|i| mci(16, i)).collect();
        assert_eq!(autoencoder_output_shape(&fe, &imgs[0]).unwrap(), vec![3, 16, 16]);
        let fit = FitConfig { epochs: 8, batch_size: 3, adam: AdamConfig { lr: 3e-3, ..Default::default() }, seed: 0 };
        let r = pretrain_autoencoder(&fe, &imgs, &fit).unwrap();
        assert!(r.trunk.names().all(|n| n.starts_with(TRUNK)));
        assert_eq!(r.trunk.len(), fe.trunk().len());
        assert!(r.final_mse < r.initial_mse);
        let mut fe2 = fe.clone();
        fe2.load_trunk(&r.trunk).unwrap();
        assert!(pretrain_autoencoder(&fe, &[], &fit).is_err());
    }

    #[test]
    fn odd_pool_sizes_round_trip_through_mirror() {
        let mut c = tiny();
        c.input_size = 18;
        let fe = build_fe(c, 0).unwrap();
        assert_eq!(autoencoder_output_shape(&fe, &mci(18, 0)).unwrap(), vec![3, 18, 18]);
    }
}
