//! Convolutional encoder-decoder with merge connections, used to learn the
//! TCM and IRT transforms, and the two-stage stack built from it.

use rand::Rng;
use tensorcore::init::conv_params;
use tensorcore::{Bindings, Graph, Padding, ParamSet, Scalar, Var};

use crate::error::{Error, Result};
use crate::image::{self, Image};
use crate::par;
use crate::seed::{self, Domain};
use crate::train::{self, FitConfig, TrainLog};
use crate::transforms::{stack_channels, MultiChannelImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CedConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub input_size: usize,
}

impl Default for CedConfig {
    fn default() -> Self {
        CedConfig { depth: 3, base_channels: 16, input_size: 64 }
    }
}

impl CedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::config("ced depth must be at least 1"));
        }
        if self.base_channels < 4 {
            return Err(Error::config(format!("ced base_channels must be at least 4, got {}", self.base_channels)));
        }
        let unit = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(unit) {
            return Err(Error::config(format!(
                "ced input_size {} must be a positive multiple of 2^depth = {unit}",
                self.input_size
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.depth
    }

    /// `(name, [c_out, c_in, kh, kw])` of every conv in forward order.
    pub fn layers(&self) -> Vec<(String, [usize; 4])> {
        let mut out = Vec::new();
        let mut c_in = 1;
        for l in 0..self.depth {
            let c = self.channels(l);
            out.push((format!("enc.{l}.conv1"), [c, c_in, 3, 3]));
            out.push((format!("enc.{l}.conv2"), [c, c, 3, 3]));
            c_in = c;
        }
        let mid = self.channels(self.depth);
        out.push(("mid.conv1".into(), [mid, c_in, 3, 3]));
        out.push(("mid.conv2".into(), [mid, mid, 3, 3]));
        let mut below = mid;
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            out.push((format!("dec.{l}.conv1"), [c, below + c, 3, 3]));
            out.push((format!("dec.{l}.conv2"), [c, c, 3, 3]));
            below = c;
        }
        out.push(("head.conv".into(), [1, below, 1, 1]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CedModel {
    pub config: CedConfig,
    pub params: ParamSet,
}

/// Kaiming-initialised CED. The head starts small with bias 0.5 so initial
/// outputs sit inside the clamp range.
pub fn build_ced(config: CedConfig, seed: u64) -> Result<CedModel> {
    config.validate()?;
    let mut rng = seed::stream(seed, Domain::Init, 0);
    let mut params = ParamSet::new();
    for (name, [o, i, kh, kw]) in config.layers() {
        let (mut w, mut b) = conv_params::<f32, _>(o, i, kh, kw, &mut rng);
        if name == "head.conv" {
            w.data_mut().iter_mut().for_each(|v| *v *= 0.1);
            b.data_mut().iter_mut().for_each(|v| *v = 0.5);
        }
        params.insert(format!("{name}.w"), w);
        params.insert(format!("{name}.b"), b);
    }
    // consume one draw so later streams never alias this one
    let _: u32 = rng.random();
    Ok(CedModel { config, params })
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, b: &Bindings, name: &str, x: Var) -> Result<Var> {
    let y = g.conv2d(x, b.get(&format!("{name}.w"))?, b.get(&format!("{name}.b"))?, Padding::Same)?;
    Ok(g.relu(y))
}

/// Builds the CED on `x` (`[1,S,S]`) using parameters from `b`.
pub fn ced_graph<T: Scalar>(g: &mut Graph<T>, b: &Bindings, cfg: &CedConfig, x: Var) -> Result<Var> {
    let (_, h, w) = g.value(x).chw("ced")?;
    if (h, w) != (cfg.input_size, cfg.input_size) {
        return Err(Error::Dimension { what: "ced input".into(), expected: (cfg.input_size, cfg.input_size), found: (h, w) });
    }
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut cur = x;
    for l in 0..cfg.depth {
        cur = conv_relu(g, b, &format!("enc.{l}.conv1"), cur)?;
        cur = conv_relu(g, b, &format!("enc.{l}.conv2"), cur)?;
        skips.push(cur);
        cur = g.maxpool2(cur)?;
    }
    cur = conv_relu(g, b, "mid.conv1", cur)?;
    cur = conv_relu(g, b, "mid.conv2", cur)?;
    for l in (0..cfg.depth).rev() {
        let up = g.upsample2_nearest(cur)?;
        let merged = g.concat_channels(up, skips[l])?;
        cur = conv_relu(g, b, &format!("dec.{l}.conv1"), merged)?;
        cur = conv_relu(g, b, &format!("dec.{l}.conv2"), cur)?;
    }
    let y = g.conv2d(cur, b.get("head.conv.w")?, b.get("head.conv.b")?, Padding::Same)?;
    Ok(g.clamp_unit(y))
}

fn image_dims_ok(cfg: &CedConfig, img: &Image, what: &str) -> Result<()> {
    if img.dims() != (cfg.input_size, cfg.input_size) {
        return Err(Error::Dimension { what: what.into(), expected: (cfg.input_size, cfg.input_size), found: img.dims() });
    }
    Ok(())
}

impl CedModel {
    pub fn forward(&self, image: &Image) -> Result<Image> {
        image_dims_ok(&self.config, image, "ced input")?;
        let mut g = Graph::new();
        let b = g.bind(&self.params, |_| false);
        let x = g.constant(image.to_tensor());
        let y = ced_graph(&mut g, &b, &self.config, x)?;
        Image::from_tensor(g.value(y))
    }
}

pub fn ced_forward(model: &CedModel, image: &Image) -> Result<Image> {
    model.forward(image)
}

fn check_pairs(cfg: &CedConfig, pairs: &[(Image, Image)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::contract("ced training needs at least one pair"));
    }
    for (x, y) in pairs {
        image_dims_ok(cfg, x, "ced training input")?;
        image_dims_ok(cfg, y, "ced training target")?;
    }
    Ok(())
}

fn pair_loss(g: &mut Graph, b: &Bindings, cfg: &CedConfig, (x, y): &(Image, Image)) -> Result<Var> {
    let xv = g.constant(x.to_tensor());
    let t = g.constant(y.to_tensor());
    let out = ced_graph(g, b, cfg, xv)?;
    Ok(g.mse_loss(out, t)?)
}

pub fn train_ced(model: &mut CedModel, pairs: &[(Image, Image)], fit: &FitConfig) -> Result<TrainLog> {
    check_pairs(&model.config, pairs)?;
    let cfg = model.config;
    train::fit(&mut model.params, &|_| true, pairs.len(), fit, "ced", |g, b, i| pair_loss(g, b, &cfg, &pairs[i]))
}

/// Mean MSE of the model's outputs against the targets.
pub fn ced_mse(model: &CedModel, pairs: &[(Image, Image)]) -> Result<f64> {
    check_pairs(&model.config, pairs)?;
    let cfg = model.config;
    train::mean_loss(&model.params, pairs, |g, b, p| pair_loss(g, b, &cfg, p))
}

/// Mean MSE of predicting each target by its input.
pub fn identity_mse(pairs: &[(Image, Image)]) -> f64 {
    pairs.iter().map(|(x, y)| image::mse(x, y)).sum::<f64>() / pairs.len().max(1) as f64
}

pub const STACK_FIRST: &str = "ced1.";
pub const STACK_SECOND: &str = "ced2.";

/// CED-1 (original to TCM) feeding CED-2 (TCM to IRT).
#[derive(Clone, Debug, PartialEq)]
pub struct StackedCed {
    pub first: CedModel,
    pub second: CedModel,
}

pub fn stack_ceds(first: CedModel, second: CedModel) -> Result<StackedCed> {
    let (a, b) = (first.config.input_size, second.config.input_size);
    if a != b {
        return Err(Error::Dimension { what: "stack_ceds".into(), expected: (a, a), found: (b, b) });
    }
    Ok(StackedCed { first, second })
}

/// Graph outputs of a stack: learned TCM and learned IRT.
pub struct StackOutputs {
    pub tcm: Var,
    pub irt: Var,
}

/// Builds both CEDs on `x`; `b` must carry the `ced1.`/`ced2.` names.
pub fn stacked_graph<T: Scalar>(g: &mut Graph<T>, b: &Bindings, first: &CedConfig, second: &CedConfig, x: Var) -> Result<StackOutputs> {
    let tcm = ced_graph(g, &b.scoped(STACK_FIRST), first, x)?;
    let irt = ced_graph(g, &b.scoped(STACK_SECOND), second, tcm)?;
    Ok(StackOutputs { tcm, irt })
}

impl StackedCed {
    /// Both parameter sets under disjoint prefixes.
    pub fn params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        p.extend_prefixed(STACK_FIRST, &self.first.params);
        p.extend_prefixed(STACK_SECOND, &self.second.params);
        p
    }

    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        let (a, b) = (params.strip_prefix(STACK_FIRST), params.strip_prefix(STACK_SECOND));
        for (model, new, prefix) in [(&self.first, &a, STACK_FIRST), (&self.second, &b, STACK_SECOND)] {
            if new.len() != model.params.len() || model.params.names().any(|n| !new.contains(n)) {
                return Err(Error::contract(format!("parameter set does not match the {prefix} model")));
            }
        }
        self.first.params = a;
        self.second.params = b;
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.first.config.input_size
    }

    pub fn forward(&self, image: &Image) -> Result<Image> {
        Ok(self.extract_features(image)?.irt().clone())
    }

    /// `[original, learned TCM, learned IRT]`.
    pub fn extract_features(&self, image: &Image) -> Result<MultiChannelImage> {
        image_dims_ok(&self.first.config, image, "stacked ced input")?;
        let mut g = Graph::new();
        let b = g.bind(&self.params(), |_| false);
        let x = g.constant(image.to_tensor());
        let out = stacked_graph(&mut g, &b, &self.first.config, &self.second.config, x)?;
        stack_channels(image.clone(), Image::from_tensor(g.value(out.tcm))?, Image::from_tensor(g.value(out.irt))?)
    }

    pub fn extract_all(&self, images: &[Image]) -> Result<Vec<MultiChannelImage>> {
        par::map(images, |im| self.extract_features(im)).into_iter().collect()
    }

    fn pair_loss(&self, g: &mut Graph, b: &Bindings, (x, y): &(Image, Image)) -> Result<Var> {
        let xv = g.constant(x.to_tensor());
        let t = g.constant(y.to_tensor());
        let out = stacked_graph(g, b, &self.first.config, &self.second.config, xv)?;
        Ok(g.mse_loss(out.irt, t)?)
    }

    /// Mean original-to-IRT MSE.
    pub fn mse(&self, pairs: &[(Image, Image)]) -> Result<f64> {
        check_pairs(&self.first.config, pairs)?;
        train::mean_loss(&self.params(), pairs, |g, b, p| self.pair_loss(g, b, p))
    }
}

pub fn extract_features(stacked: &StackedCed, image: &Image) -> Result<MultiChannelImage> {
    stacked.extract_features(image)
}

/// Jointly trains both CEDs on `(original, irt_target)` pairs.
pub fn finetune_stacked(stacked: &mut StackedCed, pairs: &[(Image, Image)], fit: &FitConfig) -> Result<TrainLog> {
    check_pairs(&stacked.first.config, pairs)?;
    let mut params = stacked.params();
    let frozen = stacked.clone();
    let log = train::fit(&mut params, &|_| true, pairs.len(), fit, "stack", |g, b, i| frozen.pair_loss(g, b, &pairs[i]))?;
    stacked.set_params(&params)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensorcore::AdamConfig;

    fn small() -> CedConfig {
        CedConfig { depth: 2, base_channels: 4, input_size: 16 }
    }

    fn noise(size: usize, seed: u64) -> Image {
        let mut rng = seed::stream(seed, Domain::GroundTruth, 0);
        Image::new(size, size, (0..size * size).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(CedConfig { input_size: 60, ..Default::default() }.validate().is_err());
        assert!(CedConfig { depth: 0, ..Default::default() }.validate().is_err());
        assert!(CedConfig { base_channels: 3, ..Default::default() }.validate().is_err());
        assert_eq!(CedConfig::default().bottleneck_size(), 8);
    }

    #[test]
    fn default_parameter_count_matches_hand_count() {
        // enc 160+2320+4640+9248+18496+36928, mid 73856+147584,
        // dec 110656+36928+27680+9248+6928+2320, head 17
        assert_eq!(build_ced(CedConfig::default(), 0).unwrap().params.numel(), 487_009);
    }

    #[test]
    fn output_shape_and_range() {
        let m = build_ced(small(), 0).unwrap();
        let out = m.forward(&noise(16, 1)).unwrap();
        assert_eq!(out.dims(), (16, 16));
        assert_eq!(out, m.forward(&noise(16, 1)).unwrap());
        assert!(matches!(m.forward(&noise(8, 1)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_head_gives_constant_bias_output() {
        let mut m = build_ced(small(), 0).unwrap();
        m.params.get_mut("head.conv.w").unwrap().data_mut().fill(0.0);
        m.params.get_mut("head.conv.b").unwrap().data_mut()[0] = 0.3;
        assert!(m.forward(&noise(16, 2)).unwrap().pixels().iter().all(|&v| v == 0.3));
        m.params.get_mut("head.conv.b").unwrap().data_mut()[0] = 1.7;
        assert!(m.forward(&noise(16, 2)).unwrap().pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn decoder_conv1_sees_merged_channels() {
        let cfg = CedConfig::default();
        let layers = cfg.layers();
        let find = |n: &str| layers.iter().find(|(k, _)| k == n).unwrap().1;
        assert_eq!(find("dec.2.conv1")[1], 128 + 64);
        assert_eq!(find("dec.0.conv1")[1], 32 + 16);
        assert_eq!(find("head.conv"), [1, 16, 1, 1]);
    }

    #[test]
    fn stack_is_composition() {
        let s = stack_ceds(build_ced(small(), 1).unwrap(), build_ced(small(), 2).unwrap()).unwrap();
        let x = noise(16, 3);
        let manual = s.second.forward(&s.first.forward(&x).unwrap()).unwrap();
        assert_eq!(s.forward(&x).unwrap(), manual);
        let f = s.extract_features(&x).unwrap();
        assert_eq!(f.original(), &x);
        assert_eq!(f.tcm(), &s.first.forward(&x).unwrap());
        let names: Vec<String> = s.params().names().map(str::to_string).collect();
        assert_eq!(names.len(), s.first.params.len() + s.second.params.len());
        assert!(stack_ceds(build_ced(small(), 1).unwrap(), build_ced(CedConfig { input_size: 32, ..small() }, 2).unwrap()).is_err());
    }

    #[test]
    fn training_rejects_empty_and_reduces_loss() {
        let mut m = build_ced(small(), 0).unwrap();
        let fit = FitConfig { epochs: 15, batch_size: 2, adam: AdamConfig { lr: 3e-3, ..Default::default() }, seed: 0 };
        assert!(train_ced(&mut m, &[], &fit).is_err());
        let pairs: Vec<(Image, Image)> = (0..4).map(|i| {
            let x = noise(16, 10 + i);
            let y = crate::transforms::tcm(&x).unwrap();
            (x, y)
        }).collect();
        let before = ced_mse(&m, &pairs).unwrap();
        let log = train_ced(&mut m, &pairs, &fit).unwrap();
        assert!(log.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(ced_mse(&m, &pairs).unwrap() < before);
    }

    #[test]
    fn zero_step_finetune_is_identity() {
        let mut s = stack_ceds(build_ced(small(), 1).unwrap(), build_ced(small(), 2).unwrap()).unwrap();
        let before = s.clone();
        let x = noise(16, 4);
        let fit = FitConfig { epochs: 0, batch_size: 1, adam: AdamConfig::default(), seed: 0 };
        finetune_stacked(&mut s, &[(x.clone(), x)], &fit).unwrap();
        assert_eq!(s, before);
    }
}
