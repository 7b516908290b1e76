//! Procedural palm-vein ROIs.
//!
//! A subject is a fixed set of cubic Bézier vein curves; each capture renders
//! those curves under a random pose (rotation, translation, stroke intensity)
//! over a fresh background texture. Everything is a pure function of its
//! seeds, so datasets regenerate bit-identically.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::seed::{self, Domain};

/// Bumped whenever rendering changes in a way that alters pixels.
pub const GENERATOR_VERSION: u32 = 1;

pub const POSE_ROTATION_DEG: f64 = 8.0;
pub const POSE_TRANSLATION: f64 = 0.04;
const POSE_INTENSITY: f64 = 0.2;
const BEZIER_SEGMENTS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Distribution {
    A,
    B,
}

impl Distribution {
    fn style(self) -> Style {
        match self {
            Distribution::A => Style { background: 0.66, texture_amp: 0.05, texture_freq: 2.0, contrast: 0.34, width_scale: 1.0, grain: 0.025 },
            Distribution::B => Style { background: 0.54, texture_amp: 0.09, texture_freq: 3.5, contrast: 0.24, width_scale: 1.6, grain: 0.04 },
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::A => "A",
            Distribution::B => "B",
        })
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Distribution::A),
            "B" | "b" => Ok(Distribution::B),
            _ => Err(Error::config(format!("unknown distribution {s:?} (expected A or B)"))),
        }
    }
}

// per-distribution rendering statistics
struct Style {
    background: f64,
    texture_amp: f64,
    texture_freq: f64,
    contrast: f64,
    width_scale: f64,
    grain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub min_curves: usize,
    pub max_curves: usize,
    /// Resolution at which curve widths are specified.
    pub reference_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { min_curves: 3, max_curves: 12, reference_size: 64 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_curves < 3 || self.max_curves > 12 || self.min_curves > self.max_curves {
            return Err(Error::config(format!(
                "curve count range [{}, {}] must lie within [3, 12]",
                self.min_curves, self.max_curves
            )));
        }
        if self.reference_size == 0 {
            return Err(Error::config("reference_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VeinCurve {
    /// Cubic Bézier control points in normalized [0,1]² coordinates.
    pub control: [[f64; 2]; 4],
    /// Stroke width in pixels at the reference resolution.
    pub width: f64,
}

impl VeinCurve {
    fn point(&self, t: f64) -> [f64; 2] {
        let u = 1.0 - t;
        let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
        let mut p = [0.0; 2];
        for (c, wi) in self.control.iter().zip(w) {
            p[0] += wi * c[0];
            p[1] += wi * c[1];
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTemplate {
    pub subject_id: u32,
    pub seed: u64,
    pub curves: Vec<VeinCurve>,
}

pub fn generate_subject(subject_id: u32, master_seed: u64, cfg: &GeneratorConfig) -> SubjectTemplate {
    let mut rng = seed::stream(master_seed, Domain::Subject, subject_id as u64);
    let n = rng.random_range(cfg.min_curves..=cfg.max_curves);
    let clamp = |v: f64| v.clamp(0.02, 0.98);
    let jitter = Normal::new(0.0, 0.12).expect("normal");
    let curves = (0..n)
        .map(|_| {
            let p0 = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let len = rng.random_range(0.35..0.9);
            let p3 = [clamp(p0[0] + len * angle.cos()), clamp(p0[1] + len * angle.sin())];
            let (nx, ny) = (-(p3[1] - p0[1]), p3[0] - p0[0]);
            let mut mid = |f: f64| {
                let o = jitter.sample(&mut rng);
                [clamp(p0[0] + f * (p3[0] - p0[0]) + o * nx), clamp(p0[1] + f * (p3[1] - p0[1]) + o * ny)]
            };
            let (p1, p2) = (mid(1.0 / 3.0), mid(2.0 / 3.0));
            VeinCurve { control: [p0, p1, p2, p3], width: rng.random_range(1.0..2.6) }
        })
        .collect();
    SubjectTemplate { subject_id, seed: master_seed, curves }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pose {
    angle: f64,
    tx: f64,
    ty: f64,
    intensity: f64,
}

/// Renders one capture of `template`. `size` must be at least 32.
pub fn render_sample(template: &SubjectTemplate, pose_seed: u64, size: usize, distribution: Distribution) -> Result<Image> {
    if size < 32 {
        return Err(Error::contract(format!("render size {size} below minimum 32")));
    }
    let style = distribution.style();
    let mut rng = seed::stream(pose_seed, Domain::Pose, 0);
    let pose = Pose {
        angle: rng.random_range(-POSE_ROTATION_DEG..=POSE_ROTATION_DEG).to_radians(),
        tx: rng.random_range(-POSE_TRANSLATION..=POSE_TRANSLATION),
        ty: rng.random_range(-POSE_TRANSLATION..=POSE_TRANSLATION),
        intensity: 1.0 + rng.random_range(-POSE_INTENSITY..=POSE_INTENSITY),
    };
    let mut px = background(&style, size, &mut rng);
    let dark = vein_darkness(template, &pose, &style, size);
    for (p, d) in px.iter_mut().zip(&dark) {
        *p -= d;
    }
    Image::from_clamped(size, size, px.into_iter().map(|v| v as f32).collect())
}

fn background(style: &Style, size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let th = rng.random_range(0.0..std::f64::consts::PI);
            let f = style.texture_freq * rng.random_range(0.6..1.4);
            (th.cos() * f, th.sin() * f, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
        })
        .collect();
    let tilt = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
    let grain = Normal::new(0.0, style.grain).expect("normal");
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let v = y as f64 / size as f64;
        for x in 0..size {
            let u = x as f64 / size as f64;
            let tex: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin()).sum();
            let illum = tilt[0] * (u - 0.5) + tilt[1] * (v - 0.5);
            out.push(style.background + style.texture_amp * tex / 3.0 + illum + grain.sample(rng));
        }
    }
    out
}

fn vein_darkness(template: &SubjectTemplate, pose: &Pose, style: &Style, size: usize) -> Vec<f64> {
    let s = size as f64;
    let (sin, cos) = pose.angle.sin_cos();
    let place = |p: [f64; 2]| {
        let (x, y) = (p[0] - 0.5, p[1] - 0.5);
        [(cos * x - sin * y + 0.5 + pose.tx) * s, (sin * x + cos * y + 0.5 + pose.ty) * s]
    };
    let depth = style.contrast * pose.intensity;
    let mut dark = vec![0.0f64; size * size];
    for curve in &template.curves {
        let sigma = 0.5 * curve.width * style.width_scale * s / 64.0;
        let reach = 3.0 * sigma + 1.0;
        let pts: Vec<[f64; 2]> = (0..=BEZIER_SEGMENTS).map(|i| place(curve.point(i as f64 / BEZIER_SEGMENTS as f64))).collect();
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
            let x1 = ((a[0].max(b[0]) + reach).ceil().max(0.0) as usize).min(size);
            let y0 = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
            let y1 = ((a[1].max(b[1]) + reach).ceil().max(0.0) as usize).min(size);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d2 = segment_dist2([x as f64 + 0.5, y as f64 + 0.5], a, b);
                    let v = depth * (-d2 / (2.0 * sigma * sigma)).exp();
                    let cell = &mut dark[y * size + x];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    dark
}

fn segment_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    ex * ex + ey * ey
}

// ---- augmentation ----------------------------------------------------------

/// Ranges for the positive-sample augmentation. All zero is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Maximum absolute rotation, degrees.
    pub rotation_range: f64,
    /// Maximum absolute shift per axis, as a fraction of the width.
    pub translation_range: f64,
    /// Amplitude of the smooth displacement field, pixels.
    pub elastic_jitter: f64,
    /// Maximum absolute additive brightness offset.
    pub brightness_range: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
}

impl AugmentConfig {
    pub const IDENTITY: AugmentConfig =
        AugmentConfig { rotation_range: 0.0, translation_range: 0.0, elastic_jitter: 0.0, brightness_range: 0.0, noise_sigma: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let all = [self.rotation_range, self.translation_range, self.elastic_jitter, self.brightness_range, self.noise_sigma];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("augmentation ranges must be finite and non-negative"));
        }
        Ok(())
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { rotation_range: 5.0, translation_range: 0.03, elastic_jitter: 1.0, brightness_range: 0.05, noise_sigma: 0.01 }
    }
}

fn sample_bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let (h, w) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let g = |yy, xx| img.get(yy, xx) as f64;
    (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1.0 - fx) * g(y1, x0) + fx * g(y1, x1))
}

/// Resamples `img` through `src_of`, which maps an output pixel centre to
/// the source position it reads from.
fn warp(img: &Image, src_of: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
    let (h, w) = img.dims();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src_of(x as f64, y as f64);
            out.push(sample_bilinear(img, sx, sy));
        }
    }
    out
}

fn rotation_map(img: &Image, degrees: f64) -> impl Fn(f64, f64) -> (f64, f64) {
    let (h, w) = img.dims();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    // inverse rotation
    move |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
    }
}

/// Rotates about the image centre with bilinear resampling and edge
/// replication.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let px = warp(img, rotation_map(img, degrees));
    Image::from_clamped(img.height(), img.width(), px.into_iter().map(|v| v as f32).collect()).expect("same dims")
}

/// Applies rotation, translation, elastic jitter, brightness shift and
/// noise, in that order. Stages whose range is zero are skipped entirely.
pub fn augment(img: &Image, cfg: &AugmentConfig, seed: u64) -> Result<Image> {
    cfg.validate()?;
    let mut rng = seed::stream(seed, Domain::Augment, 0);
    let (h, w) = img.dims();
    let angle = if cfg.rotation_range > 0.0 { rng.random_range(-cfg.rotation_range..=cfg.rotation_range) } else { 0.0 };
    let shift = if cfg.translation_range > 0.0 {
        let t = cfg.translation_range * w as f64;
        (rng.random_range(-t..=t), rng.random_range(-t..=t))
    } else {
        (0.0, 0.0)
    };
    // coarse 4x4 displacement lattice, bilinearly interpolated
    let lattice: Option<Vec<(f64, f64)>> = (cfg.elastic_jitter > 0.0).then(|| {
        let a = cfg.elastic_jitter;
        (0..16).map(|_| (rng.random_range(-a..=a), rng.random_range(-a..=a))).collect()
    });
    let mut px: Vec<f64> = if angle != 0.0 || shift != (0.0, 0.0) || lattice.is_some() {
        let rot = rotation_map(img, angle);
        warp(img, |x, y| {
            let (mut x, mut y) = (x, y);
            if let Some(l) = &lattice {
                let (dx, dy) = lattice_at(l, x / (w - 1).max(1) as f64, y / (h - 1).max(1) as f64);
                x -= dx;
                y -= dy;
            }
            rot(x - shift.0, y - shift.1)
        })
    } else {
        img.pixels().iter().map(|&v| v as f64).collect()
    };
    if cfg.brightness_range > 0.0 {
        let b = rng.random_range(-cfg.brightness_range..=cfg.brightness_range);
        px.iter_mut().for_each(|v| *v += b);
    }
    if cfg.noise_sigma > 0.0 {
        let n = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
        px.iter_mut().for_each(|v| *v += n.sample(&mut rng));
    }
    let identity = angle == 0.0 && shift == (0.0, 0.0) && lattice.is_none() && cfg.brightness_range == 0.0 && cfg.noise_sigma == 0.0;
    if identity {
        return Ok(img.clone());
    }
    Image::from_clamped(h, w, px.into_iter().map(|v| v as f32).collect())
}

fn lattice_at(l: &[(f64, f64)], u: f64, v: f64) -> (f64, f64) {
    let (gx, gy) = (u.clamp(0.0, 1.0) * 3.0, v.clamp(0.0, 1.0) * 3.0);
    let (x0, y0) = ((gx.floor() as usize).min(2), (gy.floor() as usize).min(2));
    let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
    let at = |yy: usize, xx: usize| l[yy * 4 + xx];
    let mix = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
    mix(mix(at(y0, x0), at(y0, x0 + 1), fx), mix(at(y0 + 1, x0), at(y0 + 1, x0 + 1), fx), fy)
}

// ---- datasets --------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Gallery,
    Probe,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Gallery => "gallery",
            Role::Probe => "probe",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gallery" => Ok(Role::Gallery),
            "probe" => Ok(Role::Probe),
            _ => Err(Error::config(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub subject_id: u32,
    pub sample_index: u32,
    pub role: Role,
    pub distribution: Distribution,
    pub relative_path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub size: usize,
    pub master_seed: u64,
    pub distribution: Distribution,
    pub generator: GeneratorConfig,
}

impl DatasetSpec {
    pub fn new(n_subjects: usize, samples_per_subject: usize, size: usize, master_seed: u64, distribution: Distribution) -> Self {
        DatasetSpec { n_subjects, samples_per_subject, size, master_seed, distribution, generator: GeneratorConfig::default() }
    }
}

/// Records and their images, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub images: Vec<Image>,
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Pose seed of sample `sample` of subject `subject` under `master_seed`.
pub fn pose_seed(master_seed: u64, subject: u32, sample: u32) -> u64 {
    seed::derive(master_seed, Domain::Pose, ((subject as u64) << 32) | sample as u64)
}

/// Generates `n_subjects * samples_per_subject` quantized images. The first
/// half of each subject's samples are gallery, the rest probe.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.generator.validate()?;
    if spec.samples_per_subject == 0 || !spec.samples_per_subject.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "samples_per_subject must be even and positive for the gallery/probe split, got {}",
            spec.samples_per_subject
        )));
    }
    if spec.n_subjects == 0 {
        return Err(Error::contract("dataset needs at least one subject"));
    }
    if spec.size < 32 {
        return Err(Error::contract(format!("image size {} below minimum 32", spec.size)));
    }
    let templates = par::map_range(spec.n_subjects, |s| generate_subject(s as u32, spec.master_seed, &spec.generator));
    let per = spec.samples_per_subject;
    let images = par::try_map_range(spec.n_subjects * per, |i| {
        let (s, k) = (i / per, (i % per) as u32);
        render_sample(&templates[s], pose_seed(spec.master_seed, s as u32, k), spec.size, spec.distribution).map(|im| im.quantized())
    })?;
    let records = (0..spec.n_subjects * per)
        .map(|i| {
            let (s, k) = ((i / per) as u32, (i % per) as u32);
            SampleRecord {
                subject_id: s,
                sample_index: k,
                role: if (k as usize) < per / 2 { Role::Gallery } else { Role::Probe },
                distribution: spec.distribution,
                relative_path: format!("{}/s{s:04}_{k:03}.pgm", spec.distribution),
            }
        })
        .collect();
    Ok(Dataset { records, images })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| r.role == role).map(|(i, _)| i).collect()
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.records.iter().map(|r| r.subject_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Writes every image as PGM plus the tab-separated manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (r, img) in self.records.iter().zip(&self.images) {
            img.write_pgm(&dir.join(&r.relative_path))?;
            manifest.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.subject_id, r.sample_index, r.role, r.distribution, r.relative_path));
        }
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |line: usize, why: &str| Error::Format { path: path.clone(), reason: format!("line {}: {why}", line + 1) };
        let mut records = Vec::new();
        let mut images = Vec::new();
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(ln, "expected 5 tab-separated fields"));
            }
            let rec = SampleRecord {
                subject_id: f[0].parse().map_err(|_| bad(ln, "bad subject_id"))?,
                sample_index: f[1].parse().map_err(|_| bad(ln, "bad sample_index"))?,
                role: f[2].parse().map_err(|_| bad(ln, "bad role"))?,
                distribution: f[3].parse().map_err(|_| bad(ln, "bad distribution"))?,
                relative_path: f[4].to_string(),
            };
            images.push(Image::read_pgm(&dir.join(&rec.relative_path))?);
            records.push(rec);
        }
        if records.is_empty() {
            return Err(bad(0, "manifest is empty"));
        }
        Ok(Dataset { records, images })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{correlation, mae};

    #[test]
    fn subject_generation_is_deterministic_and_bounded() {
        let cfg = GeneratorConfig::default();
        let a = generate_subject(0, 42, &cfg);
        assert_eq!(a, generate_subject(0, 42, &cfg));
        let b = generate_subject(1, 42, &cfg);
        assert_ne!(a.curves, b.curves);
        for id in 0..50 {
            let t = generate_subject(id, 7, &cfg);
            assert!((3..=12).contains(&t.curves.len()));
            for c in &t.curves {
                assert!(c.control.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn render_rejects_small_sizes_and_stays_in_range() {
        let t = generate_subject(3, 1, &GeneratorConfig::default());
        assert!(render_sample(&t, 9, 31, Distribution::A).is_err());
        let img = render_sample(&t, 9, 64, Distribution::A).unwrap();
        assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img, render_sample(&t, 9, 64, Distribution::A).unwrap());
    }

    #[test]
    fn same_subject_renders_correlate_more_than_different_subjects() {
        let cfg = GeneratorConfig::default();
        let (mut intra, mut inter) = (0.0, 0.0);
        for s in 0..10u32 {
            let t = generate_subject(s, 5, &cfg);
            let other = generate_subject(s + 100, 5, &cfg);
            let a = render_sample(&t, pose_seed(5, s, 0), 64, Distribution::A).unwrap();
            let b = render_sample(&t, pose_seed(5, s, 1), 64, Distribution::A).unwrap();
            let c = render_sample(&other, pose_seed(5, s + 100, 0), 64, Distribution::A).unwrap();
            assert!(mae(&a, &b) > 0.0);
            intra += correlation(&a, &b);
            inter += correlation(&a, &c);
        }
        assert!(intra > inter, "intra {intra} inter {inter}");
    }

    #[test]
    fn zero_augmentation_is_bitwise_identity() {
        let t = generate_subject(2, 3, &GeneratorConfig::default());
        let img = render_sample(&t, 11, 48, Distribution::B).unwrap();
        assert_eq!(augment(&img, &AugmentConfig::IDENTITY, 99).unwrap(), img);
    }

    #[test]
    fn full_turn_rotation_only_leaves_interpolation_residue() {
        let cfg = GeneratorConfig::default();
        for s in 0..5 {
            let img = render_sample(&generate_subject(s, 8, &cfg), pose_seed(8, s, 0), 64, Distribution::A).unwrap();
            assert!(mae(&rotate(&img, 360.0), &img) < 0.02);
        }
    }

    #[test]
    fn augmentation_is_seed_deterministic() {
        let img = render_sample(&generate_subject(0, 0, &GeneratorConfig::default()), 1, 40, Distribution::A).unwrap();
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, 5).unwrap();
        assert_eq!(a, augment(&img, &cfg, 5).unwrap());
        assert_ne!(a, augment(&img, &cfg, 6).unwrap());
        assert!(augment(&img, &AugmentConfig { noise_sigma: -1.0, ..AugmentConfig::IDENTITY }, 0).is_err());
    }

    #[test]
    fn dataset_split_and_counts() {
        let ds = build_dataset(&DatasetSpec::new(10, 4, 32, 0, Distribution::A)).unwrap();
        assert_eq!(ds.indices(Role::Gallery).len(), 20);
        assert_eq!(ds.indices(Role::Probe).len(), 20);
        for r in &ds.records {
            assert_eq!(r.role == Role::Gallery, r.sample_index < 2);
        }
        assert!(build_dataset(&DatasetSpec::new(10, 3, 32, 0, Distribution::A)).is_err());
    }

    #[test]
    fn distributions_differ_in_mean_intensity() {
        let a = build_dataset(&DatasetSpec::new(10, 2, 64, 0, Distribution::A)).unwrap();
        let b = build_dataset(&DatasetSpec::new(10, 2, 64, 0, Distribution::B)).unwrap();
        let mean = |d: &Dataset| d.images.iter().map(Image::mean).sum::<f64>() / d.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        assert!((ma - mb).abs() >= 0.05, "A {ma} B {mb}");
    }

    #[test]
    fn dataset_write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&DatasetSpec::new(3, 2, 32, 4, Distribution::B)).unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn parallel_and_serial_generation_agree() {
        let spec = DatasetSpec::new(4, 4, 32, 13, Distribution::A);
        let prev = par::set_parallel(false);
        let serial = build_dataset(&spec).unwrap();
        par::set_parallel(true);
        let parallel = build_dataset(&spec).unwrap();
        par::set_parallel(prev);
        assert_eq!(serial, parallel);
    }
}
