//! Reference texture-code and ray-transform targets, and the three-channel
//! stack fed to the feature extractor.

use rand::Rng;
use tensorcore::Tensor;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::seed::{self, Domain};

/// Neighbour offsets `(dy, dx)`, clockwise from the top-left.
pub const TCM_NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

/// 8-neighbour census code. Bit `k` (LSB first) is set iff neighbour `k` is
/// at least the centre; codes are scaled by 1/255. Border pixels copy the
/// code of the nearest interior pixel.
pub fn tcm(image: &Image) -> Result<Image> {
    let (h, w) = image.dims();
    if h < 3 || w < 3 {
        return Err(Error::Dimension { what: "tcm needs at least 3x3".into(), expected: (3, 3), found: (h, w) });
    }
    let px = image.pixels();
    let rows = par::map_range(h, |y| {
        let cy = y.clamp(1, h - 2);
        (0..w)
            .map(|x| {
                let cx = x.clamp(1, w - 2);
                let c = px[cy * w + cx];
                let code = TCM_NEIGHBOURS.iter().enumerate().fold(0u32, |acc, (k, &(dy, dx))| {
                    let n = px[(cy as isize + dy) as usize * w + (cx as isize + dx) as usize];
                    acc | (((n >= c) as u32) << k)
                });
                code as f32 / 255.0
            })
            .collect::<Vec<f32>>()
    });
    Image::new(h, w, rows.concat())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrtParams {
    pub ray_count: usize,
    /// Refractive index of a black pixel; white pixels have index 1.
    pub n_max: f64,
    /// Per-ray traversal cap; `None` means `4 * (H + W)`.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for IrtParams {
    fn default() -> Self {
        IrtParams { ray_count: 20_000, n_max: 2.0, max_steps: None, seed: 0 }
    }
}

const RAY_CHUNK: usize = 256;

/// Image ray transform: traces rays from random border points through the
/// index field `n = 1 + (1 - I)(n_max - 1)`, refracting at every pixel edge
/// (or reflecting when Snell's law has no solution), and returns per-pixel
/// traversal counts divided by the maximum count.
pub fn irt(image: &Image, params: &IrtParams) -> Result<Image> {
    if params.ray_count == 0 {
        return Err(Error::contract("irt: ray_count must be at least 1"));
    }
    if !(params.n_max.is_finite() && params.n_max > 1.0) {
        return Err(Error::contract(format!("irt: n_max must be finite and > 1, got {}", params.n_max)));
    }
    if params.max_steps == Some(0) {
        return Err(Error::contract("irt: max_steps must be at least 1"));
    }
    let (h, w) = image.dims();
    let max_steps = params.max_steps.unwrap_or(4 * (h + w));
    let index: Vec<f64> = image.pixels().iter().map(|&v| 1.0 + (1.0 - v as f64) * (params.n_max - 1.0)).collect();
    let field = Field { h, w, index: &index };
    // integer partial counts summed afterwards, so chunk order is irrelevant
    let chunks = params.ray_count.div_ceil(RAY_CHUNK);
    let partial = par::map_range(chunks, |c| {
        let mut counts = vec![0u32; h * w];
        for r in c * RAY_CHUNK..((c + 1) * RAY_CHUNK).min(params.ray_count) {
            field.trace(params.seed, r as u64, max_steps, &mut counts);
        }
        counts
    });
    let mut total = vec![0u64; h * w];
    for counts in &partial {
        for (t, &c) in total.iter_mut().zip(counts) {
            *t += c as u64;
        }
    }
    let max = *total.iter().max().expect("non-empty image") as f64;
    Image::new(h, w, total.iter().map(|&c| (c as f64 / max) as f32).collect())
}

struct Field<'a> {
    h: usize,
    w: usize,
    index: &'a [f64],
}

impl Field<'_> {
    fn n(&self, cx: usize, cy: usize) -> f64 {
        self.index[cy * self.w + cx]
    }

    fn trace(&self, seed: u64, ray: u64, max_steps: usize, counts: &mut [u32]) {
        let (w, h) = (self.w as f64, self.h as f64);
        let mut rng = seed::stream(seed, Domain::Rays, ray);
        // uniform point on the perimeter, cosine-weighted inward direction
        let t = rng.random_range(0.0..2.0 * (w + h));
        let ((mut x, mut y), normal) = if t < w {
            ((t, 0.0), (0.0, 1.0))
        } else if t < w + h {
            ((w, t - w), (-1.0, 0.0))
        } else if t < 2.0 * w + h {
            ((2.0 * w + h - t, h), (0.0, -1.0))
        } else {
            ((0.0, 2.0 * (w + h) - t), (1.0, 0.0))
        };
        let s: f64 = rng.random_range(-1.0..1.0);
        let c = (1.0 - s * s).sqrt();
        let (mut dx, mut dy) = (c * normal.0 - s * normal.1, c * normal.1 + s * normal.0);
        let mut cx = (x.floor() as usize).min(self.w - 1);
        let mut cy = (y.floor() as usize).min(self.h - 1);
        x = x.clamp(0.0, w);
        y = y.clamp(0.0, h);
        for _ in 0..max_steps {
            counts[cy * self.w + cx] += 1;
            let tx = if dx > 0.0 { (cx as f64 + 1.0 - x) / dx } else if dx < 0.0 { (cx as f64 - x) / dx } else { f64::INFINITY };
            let ty = if dy > 0.0 { (cy as f64 + 1.0 - y) / dy } else if dy < 0.0 { (cy as f64 - y) / dy } else { f64::INFINITY };
            let n1 = self.n(cx, cy);
            if tx <= ty {
                let step = tx.max(0.0);
                y += dy * step;
                x = if dx > 0.0 { cx as f64 + 1.0 } else { cx as f64 };
                let nx = cx as isize + if dx > 0.0 { 1 } else { -1 };
                if nx < 0 || nx >= self.w as isize {
                    return;
                }
                let tangential = dy * n1 / self.n(nx as usize, cy);
                if tangential.abs() >= 1.0 {
                    dx = -dx;
                } else {
                    dx = dx.signum() * (1.0 - tangential * tangential).sqrt();
                    dy = tangential;
                    cx = nx as usize;
                }
            } else {
                let step = ty.max(0.0);
                x += dx * step;
                y = if dy > 0.0 { cy as f64 + 1.0 } else { cy as f64 };
                let ny = cy as isize + if dy > 0.0 { 1 } else { -1 };
                if ny < 0 || ny >= self.h as isize {
                    return;
                }
                let tangential = dx * n1 / self.n(cx, ny as usize);
                if tangential.abs() >= 1.0 {
                    dy = -dy;
                } else {
                    dy = dy.signum() * (1.0 - tangential * tangential).sqrt();
                    dx = tangential;
                    cy = ny as usize;
                }
            }
        }
    }
}

/// Three same-sized channels in the fixed order original, TCM, IRT.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelImage {
    channels: [Image; 3],
}

impl MultiChannelImage {
    pub fn channels(&self) -> &[Image; 3] {
        &self.channels
    }

    pub fn original(&self) -> &Image {
        &self.channels[0]
    }

    pub fn tcm(&self) -> &Image {
        &self.channels[1]
    }

    pub fn irt(&self) -> &Image {
        &self.channels[2]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    /// `[3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w) = self.dims();
        let data: Vec<f32> = self.channels.iter().flat_map(|c| c.pixels().iter().copied()).collect();
        Tensor::new([3, h, w], data).expect("stack tensor")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let &[3, h, w] = t.shape() else {
            return Err(Error::contract(format!("expected a [3,H,W] tensor, got {:?}", t.shape())));
        };
        let plane = |i: usize| Image::from_clamped(h, w, t.data()[i * h * w..(i + 1) * h * w].to_vec());
        stack_channels(plane(0)?, plane(1)?, plane(2)?)
    }
}

pub fn stack_channels(original: Image, tcm_img: Image, irt_img: Image) -> Result<MultiChannelImage> {
    original.check_dims(&tcm_img, "stack_channels tcm")?;
    original.check_dims(&irt_img, "stack_channels irt")?;
    Ok(MultiChannelImage { channels: [original, tcm_img, irt_img] })
}

/// Reference targets for one original: its TCM and the IRT of that TCM.
pub fn reference_targets(original: &Image, params: &IrtParams) -> Result<(Image, Image)> {
    let t = tcm(original)?;
    let r = irt(&t, params)?;
    Ok((t, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_image(size: usize, row: usize) -> Image {
        let mut px = vec![1.0f32; size * size];
        for x in 0..size {
            px[row * size + x] = 0.0;
        }
        Image::new(size, size, px).unwrap()
    }

    #[test]
    fn tcm_constant_and_peak() {
        let flat = Image::filled(5, 7, 0.4);
        assert!(tcm(&flat).unwrap().pixels().iter().all(|&v| v == 1.0));
        let mut px = vec![0.0f32; 9];
        px[4] = 1.0;
        let peak = tcm(&Image::new(3, 3, px).unwrap()).unwrap();
        assert_eq!(peak.get(1, 1), 0.0);
        assert!(matches!(tcm(&Image::filled(2, 5, 0.0)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tcm_border_replicates_interior() {
        let img = Image::new(4, 4, (0..16).map(|i| ((i * 7) % 16) as f32 / 15.0).collect()).unwrap();
        let t = tcm(&img).unwrap();
        assert_eq!(t.get(0, 0), t.get(1, 1));
        assert_eq!(t.get(3, 0), t.get(2, 1));
        assert_eq!(t.get(0, 2), t.get(1, 2));
    }

    #[test]
    fn irt_errors_on_degenerate_parameters() {
        let img = Image::filled(8, 8, 0.5);
        assert!(irt(&img, &IrtParams { ray_count: 0, ..Default::default() }).is_err());
        assert!(irt(&img, &IrtParams { n_max: 1.0, ..Default::default() }).is_err());
        assert!(irt(&img, &IrtParams { max_steps: Some(0), ..Default::default() }).is_err());
    }

    #[test]
    fn irt_max_is_one_and_deterministic() {
        let img = line_image(24, 10);
        let p = IrtParams { ray_count: 3000, seed: 3, ..Default::default() };
        let a = irt(&img, &p).unwrap();
        assert_eq!(a, irt(&img, &p).unwrap());
        assert_eq!(a.pixels().iter().cloned().fold(0.0f32, f32::max), 1.0);
        assert_ne!(a, irt(&img, &IrtParams { seed: 4, ..p }).unwrap());
    }

    #[test]
    fn irt_constant_image_is_roughly_uniform() {
        let n = 32;
        let out = irt(&Image::filled(n, n, 0.7), &IrtParams { ray_count: 20_000, seed: 1, ..Default::default() }).unwrap();
        let row = |y: usize| (0..n).map(|x| out.get(y, x) as f64).sum::<f64>();
        let col = |x: usize| (0..n).map(|y| out.get(y, x) as f64).sum::<f64>();
        for sums in [(2..n - 2).map(row).collect::<Vec<_>>(), (2..n - 2).map(col).collect()] {
            let mean = sums.iter().sum::<f64>() / sums.len() as f64;
            for s in sums {
                assert!((s - mean).abs() / mean < 0.10, "sum {s} vs mean {mean}");
            }
        }
    }

    #[test]
    fn irt_dark_line_captures_rays() {
        let n = 32;
        let img = line_image(n, 16);
        let out = irt(&img, &IrtParams { ray_count: 20_000, n_max: 2.0, max_steps: None, seed: 7 }).unwrap();
        let (mut line, mut bg) = (0.0, 0.0);
        for y in 0..n {
            for x in 0..n {
                if y == 16 {
                    line += out.get(y, x) as f64 / n as f64;
                } else {
                    bg += out.get(y, x) as f64 / ((n - 1) * n) as f64;
                }
            }
        }
        assert!(line > bg, "line {line} bg {bg}");
    }

    #[test]
    fn serial_and_parallel_irt_agree() {
        let img = line_image(20, 5);
        let p = IrtParams { ray_count: 2000, seed: 9, ..Default::default() };
        let prev = par::set_parallel(false);
        let a = irt(&img, &p).unwrap();
        par::set_parallel(true);
        let b = irt(&img, &p).unwrap();
        par::set_parallel(prev);
        assert_eq!(a, b);
    }

    #[test]
    fn stack_order_and_mismatch() {
        let a = Image::filled(6, 6, 0.1);
        let b = Image::filled(6, 6, 0.2);
        let c = Image::filled(6, 6, 0.3);
        let m = stack_channels(a.clone(), b.clone(), c.clone()).unwrap();
        assert_eq!(m.original(), &a);
        assert_eq!(m.to_tensor().shape(), &[3, 6, 6]);
        assert_eq!(MultiChannelImage::from_tensor(&m.to_tensor()).unwrap(), m);
        assert!(matches!(stack_channels(a, b, Image::filled(5, 6, 0.0)), Err(Error::Dimension { .. })));
    }
}
