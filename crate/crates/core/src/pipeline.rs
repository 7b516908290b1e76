//! The ten-stage training and evaluation run with per-stage checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use tensorcore::ParamSet;

use crate::ced::{build_ced, ced_mse, finetune_stacked, identity_mse, stack_ceds, train_ced, CedModel, StackedCed, STACK_FIRST, STACK_SECOND};
use crate::config::PipelineConfig;
use crate::e2e::EndToEnd;
use crate::embedder::{build_fe, pretrain_autoencoder, Embedding, FeModel, HEAD, NORM_TOLERANCE, TRUNK};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, EvalReport, Labeled};
use crate::image::Image;
use crate::par;
use crate::seed::{self, Domain};
use crate::synth::{augment, build_dataset, Dataset, Role};
use crate::train::TrainLog;
use crate::transforms::{reference_targets, MultiChannelImage};
use crate::triplet::{train_triplet, TripletData, TripletModel};
use crate::weights::{load_weights, save_weights};

pub const STAGE_NAMES: [&str; 10] = [
    "generate",
    "targets",
    "train_ced1",
    "train_ced2",
    "finetune_stack",
    "features",
    "pretrain_ae",
    "train_triplet",
    "finetune_e2e",
    "evaluate",
];

pub const STAGE_LOG: &str = "stages.log";

pub fn checkpoint_path(out: &Path, stage: usize) -> PathBuf {
    out.join("checkpoints").join(format!("stage{stage}_{}.vfw", STAGE_NAMES[stage - 1]))
}

/// Inclusive stage range. Starting past stage 1 loads the previous stage's
/// checkpoint; data and features are recomputed from the config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub from_stage: usize,
    pub until_stage: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { from_stage: 1, until_stage: 10 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CedMetrics {
    pub ced1_heldout: Option<f64>,
    pub ced1_identity: Option<f64>,
    pub ced2_heldout: Option<f64>,
    pub stack_before: Option<f64>,
    pub stack_after: Option<f64>,
}

impl CedMetrics {
    fn to_csv(self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "ced1_heldout,ced1_identity,ced2_heldout,stack_before,stack_after\n{},{},{},{},{}\n",
            f(self.ced1_heldout),
            f(self.ced1_identity),
            f(self.ced2_heldout),
            f(self.stack_before),
            f(self.stack_after)
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOutcome {
    pub stages_run: Vec<usize>,
    pub ced: CedMetrics,
    /// FE alone after stage 8, on stage-5 features.
    pub triplet_report: Option<EvalReport>,
    /// Final end-to-end model.
    pub report: Option<EvalReport>,
    /// Untrained FE on the same split.
    pub baseline: Option<EvalReport>,
    pub embeddings_checked: usize,
    pub max_norm_error: f64,
}

impl PipelineOutcome {
    fn check_norms(&mut self, embeddings: &[Labeled]) -> Result<()> {
        for e in embeddings {
            let err = (e.embedding.norm() - 1.0).abs();
            self.max_norm_error = self.max_norm_error.max(err);
            if err > NORM_TOLERANCE {
                return Err(Error::contract(format!("embedding norm off by {err}")));
            }
        }
        self.embeddings_checked += embeddings.len();
        Ok(())
    }
}

#[derive(Default)]
struct State {
    data: Option<Dataset>,
    eval_data: Option<Dataset>,
    gt: Vec<Image>,
    targets: Vec<(Image, Image)>,
    weights: ParamSet,
    ced1: Option<CedModel>,
    ced2: Option<CedModel>,
    stacked: Option<StackedCed>,
    /// Augmented copies of each gallery image, gallery order.
    augmented: Vec<Vec<Image>>,
    features: Option<(Vec<MultiChannelImage>, Vec<Vec<MultiChannelImage>>)>,
    fe: Option<FeModel>,
}

impl State {
    fn data(&self) -> &Dataset {
        self.data.as_ref().expect("data stage ran")
    }

    fn stacked(&self) -> Result<&StackedCed> {
        self.stacked.as_ref().ok_or_else(|| Error::contract("no stacked CED available; run stages 3-5 first"))
    }

    fn fe(&self) -> Result<&FeModel> {
        self.fe.as_ref().ok_or_else(|| Error::contract("no feature extractor available; run stage 7 first"))
    }

    fn gallery(&self) -> (Vec<Image>, Vec<u32>) {
        let d = self.data();
        let idx = d.indices(Role::Gallery);
        (idx.iter().map(|&i| d.images[i].clone()).collect(), idx.iter().map(|&i| d.records[i].subject_id).collect())
    }

    fn gt_pairs(&self, cfg: &PipelineConfig, pick: impl Fn(&Image, &(Image, Image)) -> (Image, Image)) -> (Vec<(Image, Image)>, Vec<(Image, Image)>) {
        let all: Vec<(Image, Image)> = self.gt.iter().zip(&self.targets).map(|(o, t)| pick(o, t)).collect();
        let held = all[cfg.gt_pairs..].to_vec();
        let mut train = all;
        train.truncate(cfg.gt_pairs);
        (train, held)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_log_csv(log: &TrainLog) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in log.epoch_losses.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

/// Builds the full model from a checkpoint holding `ced1.`, `ced2.`,
/// `trunk.` and `head.` tensors.
pub fn load_end_to_end(cfg: &PipelineConfig, weights: &ParamSet) -> Result<EndToEnd> {
    let stacked = stacked_from(cfg, weights)?;
    let fe = fe_from(cfg, weights, true)?;
    EndToEnd::new(stacked, fe)
}

fn ced_from(cfg: &PipelineConfig, weights: &ParamSet, prefix: &str) -> Result<CedModel> {
    let params = weights.strip_prefix(prefix);
    let fresh = build_ced(cfg.ced_config(), 0)?;
    for (name, t) in fresh.params.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            _ => return Err(Error::contract(format!("checkpoint lacks {prefix}{name} for the configured CED"))),
        }
    }
    Ok(CedModel { config: cfg.ced_config(), params })
}

fn stacked_from(cfg: &PipelineConfig, weights: &ParamSet) -> Result<StackedCed> {
    stack_ceds(ced_from(cfg, weights, STACK_FIRST)?, ced_from(cfg, weights, STACK_SECOND)?)
}

fn fe_from(cfg: &PipelineConfig, weights: &ParamSet, need_head: bool) -> Result<FeModel> {
    let mut fe = build_fe(cfg.fe_config(), cfg.stage_seed(7))?;
    let names: Vec<String> = fe.params.names().filter(|n| n.starts_with(TRUNK) || (need_head && n.starts_with(HEAD))).map(str::to_string).collect();
    for name in names {
        let t = weights.get(&name).ok_or_else(|| Error::contract(format!("checkpoint lacks {name}")))?;
        if t.shape() != fe.params.require(&name)?.shape() {
            return Err(Error::contract(format!("checkpoint tensor {name} has the wrong shape")));
        }
        fe.params.insert(name, t.clone());
    }
    Ok(fe)
}

fn labeled(embeddings: Vec<Embedding>, subjects: &[u32]) -> Vec<Labeled> {
    embeddings.into_iter().zip(subjects).map(|(embedding, &subject)| Labeled { subject, embedding }).collect()
}

fn split(d: &Dataset, role: Role) -> (Vec<Image>, Vec<u32>) {
    let idx = d.indices(role);
    (idx.iter().map(|&i| d.images[i].clone()).collect(), idx.iter().map(|&i| d.records[i].subject_id).collect())
}

/// Scores the evaluation split with `embed_fn` applied to gallery and probe.
fn score<F>(eval: &Dataset, outcome: &mut PipelineOutcome, embed_fn: F) -> Result<EvalReport>
where
    F: Fn(&[Image]) -> Result<Vec<Embedding>>,
{
    let (gi, gs) = split(eval, Role::Gallery);
    let (pi, ps) = split(eval, Role::Probe);
    let gallery = labeled(embed_fn(&gi)?, &gs);
    let probe = labeled(embed_fn(&pi)?, &ps);
    outcome.check_norms(&gallery)?;
    outcome.check_norms(&probe)?;
    evaluate(&gallery, &probe)
}

fn run_stage(n: usize, cfg: &PipelineConfig, out: &Path, st: &mut State, outcome: &mut PipelineOutcome, write: bool) -> Result<()> {
    let seed_n = cfg.stage_seed(n);
    match n {
        1 => {
            let data = build_dataset(&cfg.dataset_spec(cfg.distribution))?;
            let eval_data = if cfg.eval_distribution == cfg.distribution { None } else { Some(build_dataset(&cfg.dataset_spec(cfg.eval_distribution))?) };
            let gt_set = build_dataset(&cfg.ground_truth_spec())?;
            st.gt = gt_set.indices(Role::Gallery).into_iter().map(|i| gt_set.images[i].clone()).collect();
            if write {
                data.write(&out.join("data"))?;
                if let Some(e) = &eval_data {
                    e.write(&out.join("data"))?;
                }
                for (i, img) in st.gt.iter().enumerate() {
                    img.write_pgm(&out.join("gt").join(format!("gt_{i:04}.pgm")))?;
                }
            }
            st.data = Some(data);
            st.eval_data = eval_data;
        }
        2 => {
            let targets = par::try_map_range(st.gt.len(), |i| reference_targets(&st.gt[i], &cfg.irt_params(seed::derive(seed_n, Domain::Rays, i as u64))))?;
            if write {
                for (i, (t, r)) in targets.iter().enumerate() {
                    t.write_pgm(&out.join("targets").join(format!("tcm_{i:04}.pgm")))?;
                    r.write_pgm(&out.join("targets").join(format!("irt_{i:04}.pgm")))?;
                }
            }
            st.targets = targets;
        }
        3 => {
            let (train, held) = st.gt_pairs(cfg, |o, (t, _)| (o.clone(), t.clone()));
            let mut m = build_ced(cfg.ced_config(), seed_n)?;
            let log = train_ced(&mut m, &train, &cfg.fit(cfg.ced1, seed_n))?;
            outcome.ced.ced1_heldout = Some(ced_mse(&m, &held)?);
            outcome.ced.ced1_identity = Some(identity_mse(&held));
            write_file(&out.join("logs").join("ced1.csv"), &train_log_csv(&log))?;
            st.weights.extend_prefixed(STACK_FIRST, &m.params);
            st.ced1 = Some(m);
        }
        4 => {
            let (train, held) = st.gt_pairs(cfg, |_, (t, r)| (t.clone(), r.clone()));
            let mut m = build_ced(cfg.ced_config(), seed_n)?;
            let log = train_ced(&mut m, &train, &cfg.fit(cfg.ced2, seed_n))?;
            outcome.ced.ced2_heldout = Some(ced_mse(&m, &held)?);
            write_file(&out.join("logs").join("ced2.csv"), &train_log_csv(&log))?;
            st.weights.extend_prefixed(STACK_SECOND, &m.params);
            st.ced2 = Some(m);
        }
        5 => {
            let first = match st.ced1.take() {
                Some(m) => m,
                None => ced_from(cfg, &st.weights, STACK_FIRST)?,
            };
            let second = match st.ced2.take() {
                Some(m) => m,
                None => ced_from(cfg, &st.weights, STACK_SECOND)?,
            };
            let (train, held) = st.gt_pairs(cfg, |o, (_, r)| (o.clone(), r.clone()));
            let mut stacked = stack_ceds(first, second)?;
            outcome.ced.stack_before = Some(stacked.mse(&held)?);
            let log = finetune_stacked(&mut stacked, &train, &cfg.fit(cfg.stack, seed_n))?;
            outcome.ced.stack_after = Some(stacked.mse(&held)?);
            write_file(&out.join("logs").join("stack.csv"), &train_log_csv(&log))?;
            for (k, v) in stacked.params().iter() {
                st.weights.insert(k.clone(), v.clone());
            }
            st.stacked = Some(stacked);
        }
        6 => {
            let (gallery, _) = st.gallery();
            st.augmented = par::try_map_range(gallery.len(), |i| {
                (0..cfg.augment_copies)
                    .map(|j| augment(&gallery[i], &cfg.augment, seed::derive(seed_n, Domain::Augment, (i * cfg.augment_copies + j) as u64)))
                    .collect::<Result<Vec<_>>>()
            })?;
            let stacked = st.stacked()?;
            let feats = stacked.extract_all(&gallery)?;
            let aug = st.augmented.iter().map(|copies| stacked.extract_all(copies)).collect::<Result<Vec<_>>>()?;
            st.features = Some((feats, aug));
        }
        7 => {
            let fe = build_fe(cfg.fe_config(), seed_n)?;
            let (feats, _) = st.features.as_ref().expect("features stage ran");
            let res = pretrain_autoencoder(&fe, feats, &cfg.fit(cfg.ae, seed_n))?;
            write_file(&out.join("logs").join("autoencoder.csv"), &train_log_csv(&res.log))?;
            let mut fe = fe;
            fe.load_trunk(&res.trunk)?;
            for (k, v) in fe.params.iter() {
                st.weights.insert(k.clone(), v.clone());
            }
            st.fe = Some(fe);
        }
        8 => {
            let mut fe = st.fe.take().ok_or_else(|| Error::contract("no feature extractor available; run stage 7 first"))?;
            let (_, subjects) = st.gallery();
            let (feats, aug) = st.features.clone().expect("features stage ran");
            let data = TripletData::new(feats, subjects, aug)?;
            let log = train_triplet(&mut fe, &data, &cfg.schedule()?, &cfg.triplet_config(seed_n))?;
            write_file(&out.join("logs").join("triplet.csv"), &log.to_csv())?;
            for (k, v) in fe.params.iter() {
                st.weights.insert(k.clone(), v.clone());
            }
            let eval = st.eval_data.as_ref().unwrap_or_else(|| st.data());
            let stacked = st.stacked()?;
            let report = score(eval, outcome, |imgs| fe.embed_all(&stacked.extract_all(imgs)?))?;
            emit_report(&report, &out.join("report_triplet"))?;
            outcome.triplet_report = Some(report);
            st.fe = Some(fe);
        }
        9 => {
            let fe = st.fe.take().ok_or_else(|| Error::contract("no feature extractor available; run stage 8 first"))?;
            let stacked = st.stacked.take().ok_or_else(|| Error::contract("no stacked CED available"))?;
            let mut model = EndToEnd::new(stacked, fe)?;
            let (gallery, subjects) = st.gallery();
            let data = TripletData::new(gallery, subjects, st.augmented.clone())?;
            let (tcfg, schedule) = cfg.e2e_config(seed_n);
            let log = train_triplet(&mut model, &data, &schedule?, &tcfg)?;
            write_file(&out.join("logs").join("e2e.csv"), &log.to_csv())?;
            for (k, v) in model.params().iter() {
                st.weights.insert(k.clone(), v.clone());
            }
            let (stacked, fe) = model.parts()?;
            st.stacked = Some(stacked);
            st.fe = Some(fe);
        }
        10 => {
            let model = EndToEnd::new(st.stacked()?.clone(), st.fe()?.clone())?;
            let eval = st.eval_data.as_ref().unwrap_or_else(|| st.data());
            let report = score(eval, outcome, |imgs| par::map(imgs, |im| model.embed_input(im)).into_iter().collect())?;
            emit_report(&report, &out.join("report"))?;
            let untrained = build_fe(cfg.fe_config(), cfg.stage_seed(7))?;
            let stacked = st.stacked()?;
            let base = score(eval, outcome, |imgs| untrained.embed_all(&stacked.extract_all(imgs)?))?;
            emit_report(&base, &out.join("baseline"))?;
            outcome.report = Some(report);
            outcome.baseline = Some(base);
        }
        _ => unreachable!("stage index checked by caller"),
    }
    Ok(())
}

fn append_log(out: &Path, line: &str) -> Result<()> {
    let path = out.join(STAGE_LOG);
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

/// Runs `opts.from_stage..=opts.until_stage`, writing artifacts under `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, opts: RunOptions) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if opts.from_stage < 1 || opts.until_stage > STAGE_NAMES.len() || opts.from_stage > opts.until_stage {
        return Err(Error::config(format!("bad stage range {}..={}", opts.from_stage, opts.until_stage)));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;

    let mut st = State::default();
    let mut outcome = PipelineOutcome::default();
    let wrap = |n: usize, e: Error| Error::Stage { stage: n, name: STAGE_NAMES[n - 1], source: Box::new(e) };

    // Rebuild the in-memory state a resumed run needs.
    if opts.from_stage > 1 {
        st.weights = load_weights(&checkpoint_path(out, opts.from_stage - 1))?;
        run_stage(1, cfg, out, &mut st, &mut outcome, false).map_err(|e| wrap(1, e))?;
        if opts.from_stage > 2 && opts.from_stage <= 5 {
            run_stage(2, cfg, out, &mut st, &mut outcome, false).map_err(|e| wrap(2, e))?;
        }
        if opts.from_stage > 5 {
            st.stacked = Some(stacked_from(cfg, &st.weights).map_err(|e| wrap(5, e))?);
        }
        if opts.from_stage > 6 {
            run_stage(6, cfg, out, &mut st, &mut outcome, false).map_err(|e| wrap(6, e))?;
        }
        if opts.from_stage > 7 {
            st.fe = Some(fe_from(cfg, &st.weights, opts.from_stage > 8).map_err(|e| wrap(7, e))?);
        }
    }

    for n in opts.from_stage..=opts.until_stage {
        let name = STAGE_NAMES[n - 1];
        info!("stage {n} {name}");
        let t0 = Instant::now();
        if let Err(e) = run_stage(n, cfg, out, &mut st, &mut outcome, true) {
            append_log(out, &format!("stage {n} {name} failed: {e}"))?;
            return Err(wrap(n, e));
        }
        save_weights(&st.weights, &checkpoint_path(out, n)).map_err(|e| wrap(n, e))?;
        append_log(out, &format!("stage {n} {name} ok {:.2}s", t0.elapsed().as_secs_f64()))?;
        outcome.stages_run.push(n);
    }
    if outcome.ced != CedMetrics::default() {
        write_file(&out.join("ced_metrics.csv"), &outcome.ced.to_csv())?;
    }
    Ok(outcome)
}

// ---- enrollment ------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Enrolled {
    pub subject: u32,
    pub label: String,
    pub embedding: Embedding,
}

/// One line per entry: `subject<TAB>label<TAB>v0,v1,...`.
pub fn write_enrollment(entries: &[Enrolled], path: &Path) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        let v: Vec<String> = e.embedding.values().iter().map(f32::to_string).collect();
        s.push_str(&format!("{}\t{}\t{}\n", e.subject, e.label, v.join(",")));
    }
    write_file(path, &s)
}

pub fn read_enrollment(path: &Path) -> Result<Vec<Enrolled>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |ln: usize, why: &str| Error::Format { path: path.to_path_buf(), reason: format!("line {}: {why}", ln + 1) };
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(ln, "expected 3 tab-separated fields"));
        }
        let subject = f[0].parse().map_err(|_| bad(ln, "bad subject id"))?;
        let values = f[2].split(',').map(|v| v.parse::<f32>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad(ln, "bad embedding value"))?;
        let embedding = Embedding::new(values).map_err(|e| bad(ln, &e.to_string()))?;
        out.push(Enrolled { subject, label: f[1].to_string(), embedding });
    }
    Ok(out)
}
