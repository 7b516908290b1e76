//! Flat `section.key=value` pipeline configuration.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use tensorcore::AdamConfig;

use crate::ced::CedConfig;
use crate::embedder::{stage_list, FeConfig};
use crate::error::{Error, Result};
use crate::seed::{self, Domain};
use crate::synth::{AugmentConfig, DatasetSpec, Distribution};
use crate::train::FitConfig;
use crate::transforms::IrtParams;
use crate::triplet::{BatchConfig, MarginSchedule, MiningConfig, TripletTrainConfig};

/// Six-entry channel schedule written as `a,b,c,d,e,f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channels(pub [usize; 6]);

impl fmt::Display for Channels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Channels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| Error::config(format!("bad channel list {s:?}")))?;
        let arr: [usize; 6] = v.try_into().map_err(|_| Error::config(format!("channel list {s:?} needs exactly 6 entries")))?;
        Ok(Channels(arr))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub subjects: usize,
    pub samples: usize,
    pub size: usize,
    pub distribution: Distribution,
    /// Distribution of the evaluation renders; differs from `distribution`
    /// for cross-domain testing.
    pub eval_distribution: Distribution,
    pub gt_pairs: usize,
    pub gt_heldout: usize,
    pub irt_rays: usize,
    pub irt_n_max: f64,
    pub ced_depth: usize,
    pub ced_base: usize,
    pub ced1: Hyper,
    pub ced2: Hyper,
    pub stack: Hyper,
    pub ae: Hyper,
    pub fe_channels: Channels,
    pub fe_pool_grid: usize,
    pub fe_embedding_dim: usize,
    pub fe_dropout: f64,
    pub margin_start: f64,
    pub margin_end: f64,
    pub triplet_steps: usize,
    pub triplet_batch: usize,
    pub triplet_subset: usize,
    pub triplet_lr: f64,
    pub triplet_steps_per_epoch: usize,
    pub triplet_frozen_max_epochs: usize,
    pub triplet_stabilize_tolerance: f64,
    pub triplet_stabilize_epochs: usize,
    pub augment_copies: usize,
    pub augment: AugmentConfig,
    pub e2e_steps: usize,
    pub e2e_batch: usize,
    pub e2e_lr_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            subjects: 20,
            samples: 10,
            size: 64,
            distribution: Distribution::A,
            eval_distribution: Distribution::A,
            gt_pairs: 120,
            gt_heldout: 20,
            irt_rays: 20_000,
            irt_n_max: 2.0,
            ced_depth: 3,
            ced_base: 16,
            ced1: Hyper { epochs: 20, batch: 4, lr: 2e-3 },
            ced2: Hyper { epochs: 20, batch: 4, lr: 2e-3 },
            stack: Hyper { epochs: 10, batch: 4, lr: 5e-4 },
            ae: Hyper { epochs: 10, batch: 8, lr: 1e-3 },
            fe_channels: Channels([8, 16, 32, 64, 64, 64]),
            fe_pool_grid: 4,
            fe_embedding_dim: 128,
            fe_dropout: 0.0,
            margin_start: MarginSchedule::DEFAULT_START,
            margin_end: MarginSchedule::DEFAULT_END,
            triplet_steps: 300,
            triplet_batch: 90,
            triplet_subset: 32,
            triplet_lr: 1e-3,
            triplet_steps_per_epoch: 5,
            triplet_frozen_max_epochs: 20,
            triplet_stabilize_tolerance: 0.02,
            triplet_stabilize_epochs: 3,
            augment_copies: 2,
            augment: AugmentConfig::default(),
            e2e_steps: 20,
            e2e_batch: 30,
            e2e_lr_factor: 0.1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::config(format!("bad value {value:?} for {key}")))
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        impl PipelineConfig {
            /// Every key accepted by [`PipelineConfig::set`], in file order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            fn set_field(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse_value(key, value)?,)*
                    _ => return Err(Error::config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.to_string()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "seed" => seed;
    "data.subjects" => subjects;
    "data.samples" => samples;
    "data.size" => size;
    "data.distribution" => distribution;
    "data.eval_distribution" => eval_distribution;
    "gt.pairs" => gt_pairs;
    "gt.heldout" => gt_heldout;
    "irt.rays" => irt_rays;
    "irt.n_max" => irt_n_max;
    "ced.depth" => ced_depth;
    "ced.base_channels" => ced_base;
    "ced1.epochs" => ced1.epochs;
    "ced1.batch" => ced1.batch;
    "ced1.lr" => ced1.lr;
    "ced2.epochs" => ced2.epochs;
    "ced2.batch" => ced2.batch;
    "ced2.lr" => ced2.lr;
    "stack.epochs" => stack.epochs;
    "stack.batch" => stack.batch;
    "stack.lr" => stack.lr;
    "ae.epochs" => ae.epochs;
    "ae.batch" => ae.batch;
    "ae.lr" => ae.lr;
    "fe.channels" => fe_channels;
    "fe.pool_grid" => fe_pool_grid;
    "fe.embedding_dim" => fe_embedding_dim;
    "fe.dropout" => fe_dropout;
    "margin.start" => margin_start;
    "margin.end" => margin_end;
    "triplet.steps" => triplet_steps;
    "triplet.batch" => triplet_batch;
    "triplet.subset" => triplet_subset;
    "triplet.lr" => triplet_lr;
    "triplet.steps_per_epoch" => triplet_steps_per_epoch;
    "triplet.frozen_max_epochs" => triplet_frozen_max_epochs;
    "triplet.stabilize_tolerance" => triplet_stabilize_tolerance;
    "triplet.stabilize_epochs" => triplet_stabilize_epochs;
    "augment.copies" => augment_copies;
    "augment.rotation" => augment.rotation_range;
    "augment.translation" => augment.translation_range;
    "augment.elastic" => augment.elastic_jitter;
    "augment.brightness" => augment.brightness_range;
    "augment.noise" => augment.noise_sigma;
    "e2e.steps" => e2e_steps;
    "e2e.batch" => e2e_batch;
    "e2e.lr_factor" => e2e_lr_factor;
}

impl PipelineConfig {
    /// Sets one key. `fe.preset=desk|full` is shorthand for the channel
    /// schedule and pool grid of that preset.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "fe.preset" {
            let p = match value.trim() {
                "desk" => FeConfig::desk(),
                "full" => FeConfig::full(),
                other => return Err(Error::config(format!("unknown fe preset {other:?}"))),
            };
            let ch: Vec<usize> = p.stages.iter().map(|s| s.out_channels).collect();
            self.fe_channels = Channels(ch.try_into().expect("six stages"));
            self.fe_pool_grid = p.pool_grid;
            return Ok(());
        }
        self.set_field(key, value)
    }

    /// Applies `key=value` lines over the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        PipelineConfig::KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("listed key"))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::config("data.subjects must be at least 2"));
        }
        if self.samples < 4 || !self.samples.is_multiple_of(2) {
            return Err(Error::config("data.samples must be even and at least 4 (2 gallery samples per subject for triplets)"));
        }
        if self.gt_pairs == 0 || self.gt_heldout == 0 {
            return Err(Error::config("gt.pairs and gt.heldout must be positive"));
        }
        if self.irt_rays == 0 || !(self.irt_n_max > 1.0) {
            return Err(Error::config("irt.rays must be positive and irt.n_max > 1"));
        }
        for (name, h) in [("ced1", self.ced1), ("ced2", self.ced2), ("stack", self.stack), ("ae", self.ae)] {
            if h.batch == 0 || !(h.lr > 0.0) {
                return Err(Error::config(format!("{name}: batch and lr must be positive")));
            }
        }
        if self.triplet_batch == 0 || self.triplet_subset == 0 || self.triplet_steps == 0 || self.e2e_batch == 0 {
            return Err(Error::config("triplet.batch, triplet.subset, triplet.steps and e2e.batch must be positive"));
        }
        if !(self.e2e_lr_factor > 0.0) {
            return Err(Error::config("e2e.lr_factor must be positive"));
        }
        self.ced_config().validate()?;
        self.fe_config().validate()?;
        self.schedule()?;
        self.augment.validate()?;
        Ok(())
    }

    /// Seed of pipeline stage `n`.
    pub fn stage_seed(&self, n: usize) -> u64 {
        seed::derive(self.seed, Domain::Stage, n as u64)
    }

    pub fn dataset_spec(&self, distribution: Distribution) -> DatasetSpec {
        DatasetSpec::new(self.subjects, self.samples, self.size, self.seed, distribution)
    }

    /// Ground-truth originals come from their own subjects: two renders per
    /// subject, of which the first is used.
    pub fn ground_truth_spec(&self) -> DatasetSpec {
        DatasetSpec::new(self.gt_pairs + self.gt_heldout, 2, self.size, seed::derive(self.seed, Domain::GroundTruth, 0), self.distribution)
    }

    pub fn irt_params(&self, seed: u64) -> IrtParams {
        IrtParams { ray_count: self.irt_rays, n_max: self.irt_n_max, max_steps: None, seed }
    }

    pub fn ced_config(&self) -> CedConfig {
        CedConfig { depth: self.ced_depth, base_channels: self.ced_base, input_size: self.size }
    }

    pub fn fe_config(&self) -> FeConfig {
        FeConfig {
            input_size: self.size,
            input_channels: 3,
            stages: stage_list(self.fe_channels.0),
            pool_grid: self.fe_pool_grid,
            embedding_dim: self.fe_embedding_dim,
            dropout: self.fe_dropout,
        }
    }

    pub fn fit(&self, h: Hyper, seed: u64) -> FitConfig {
        FitConfig { epochs: h.epochs, batch_size: h.batch, adam: AdamConfig { lr: h.lr, ..AdamConfig::default() }, seed }
    }

    pub fn schedule(&self) -> Result<MarginSchedule> {
        MarginSchedule::new(self.margin_start, self.margin_end, self.triplet_steps)
    }

    pub fn triplet_config(&self, seed: u64) -> TripletTrainConfig {
        TripletTrainConfig {
            batch: BatchConfig { batch_size: self.triplet_batch, mining: MiningConfig { subset_size: self.triplet_subset, k: 1 } },
            adam: AdamConfig { lr: self.triplet_lr, ..AdamConfig::default() },
            steps_per_epoch: self.triplet_steps_per_epoch.max(1),
            frozen_phase: true,
            frozen_max_epochs: self.triplet_frozen_max_epochs,
            stabilize_tolerance: self.triplet_stabilize_tolerance,
            stabilize_epochs: self.triplet_stabilize_epochs,
            seed,
        }
    }

    /// Joint phase: full training only, reduced learning rate, margin held
    /// at its final value.
    pub fn e2e_config(&self, seed: u64) -> (TripletTrainConfig, Result<MarginSchedule>) {
        let mut t = self.triplet_config(seed);
        t.frozen_phase = false;
        t.batch.batch_size = self.e2e_batch;
        t.adam.lr = self.triplet_lr * self.e2e_lr_factor;
        (t, MarginSchedule::new(self.margin_end, self.margin_end, self.e2e_steps.max(1)))
    }
}
