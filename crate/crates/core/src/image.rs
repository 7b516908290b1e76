//! Single-channel [0,1] images and binary PGM (P5) I/O.

use std::fs;
use std::path::Path;

use tensorcore::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// Errors unless `pixels` has `height * width` entries, all in [0,1].
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::contract(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Image { height, width, pixels })
    }

    /// Builds an image, clamping every value into [0,1] (NaN maps to 0).
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Image::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Image::new(height, width, vec![value.clamp(0.0, 1.0); height * width]).expect("filled: zero size")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Rounds every pixel to the nearest multiple of 1/255, the values an
    /// 8-bit PGM can represent exactly.
    pub fn quantized(&self) -> Image {
        Image { height: self.height, width: self.width, pixels: self.pixels.iter().map(|&v| from_byte(to_byte(v))).collect() }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([1, self.height, self.width], self.pixels.clone()).expect("image tensor")
    }

    /// Reads a `[1,H,W]` tensor, clamping into [0,1].
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Image> {
        match t.shape() {
            &[1, h, w] => Image::from_clamped(h, w, t.data().to_vec()),
            s => Err(Error::contract(format!("expected a [1,H,W] tensor, got {s:?}"))),
        }
    }

    pub fn check_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension { what: what.to_string(), expected: self.dims(), found: other.dims() });
        }
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_pgm(&bytes).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| to_byte(v)));
        out
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if header[0] != "P5" {
        return Err(format!("unsupported magic {:?} (only binary P5)", header[0]));
    }
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
    let width = parse(&header[1], "width")?;
    let height = parse(&header[2], "height")?;
    let maxval = parse(&header[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| format!("raster truncated: need {n} bytes"))?;
    let scale = maxval as f32;
    let pixels = raster.iter().map(|&b| if maxval == 255 { from_byte(b) } else { (b as f32 / scale).min(1.0) }).collect();
    Image::new(height, width, pixels).map_err(|e| e.to_string())
}

/// Mean absolute difference. Panics on size mismatch.
pub fn mae(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.dims(), b.dims(), "mae: size mismatch");
    a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.pixels.len() as f64
}

/// Mean squared difference. Panics on size mismatch.
pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.dims(), b.dims(), "mse: size mismatch");
    a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.pixels.len() as f64
}

/// Pearson correlation of raw pixels; 0 when either image is constant.
pub fn correlation(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.dims(), b.dims(), "correlation: size mismatch");
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
