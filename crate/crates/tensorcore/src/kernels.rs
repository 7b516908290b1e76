//! Raw forward/backward kernels over flat buffers. Shape validation happens
//! in the graph layer; these assume consistent geometry.

use std::borrow::Cow;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    // output columns [lo, hi) whose input column ox + kx - pad_left is in bounds
    fn col_range(&self, kx: usize) -> (usize, usize, isize) {
        let off = kx as isize - self.pad_left as isize;
        let lo = (-off).max(0) as usize;
        let hi = (self.w as isize - off).clamp(0, self.out_w as isize) as usize;
        (lo.min(hi), hi, off)
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy as isize + ky as isize - self.pad_top as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

fn im2col<'a, T: Scalar>(x: &'a [T], g: &ConvGeom) -> Cow<'a, [T]> {
    if g.is_pointwise() {
        return Cow::Borrowed(x);
    }
    let hw = g.out_hw();
    let mut col = vec![T::zero(); g.col_rows() * hw];
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * hw;
                let (lo, hi, off) = g.col_range(kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let src = (ci * g.h + iy) * g.w;
                    let dst = row + oy * g.out_w;
                    let s = (src as isize + lo as isize + off) as usize;
                    col[dst + lo..dst + hi].copy_from_slice(&x[s..s + (hi - lo)]);
                }
            }
        }
    }
    Cow::Owned(col)
}

fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw = g.out_hw();
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * hw;
                let (lo, hi, off) = g.col_range(kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    let dst = ((ci * g.h + iy) * g.w) as isize + lo as isize + off;
                    let dst = dst as usize;
                    let src = row + oy * g.out_w;
                    for (d, s) in dx[dst..dst + (hi - lo)].iter_mut().zip(&col[src + lo..src + hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let hw = g.out_hw();
    let col = im2col(x, g);
    let mut out = vec![T::zero(); g.c_out * hw];
    T::gemm(g.c_out, g.col_rows(), hw, k, false, &col, false, T::zero(), &mut out);
    for (row, &b) in out.chunks_exact_mut(hw).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
    out
}

/// Accumulates gradients into whichever of `dx`, `dk`, `db` are present.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    gout: &[T],
    g: &ConvGeom,
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let hw = g.out_hw();
    let rows = g.col_rows();
    if let Some(db) = db {
        for (d, row) in db.iter_mut().zip(gout.chunks_exact(hw)) {
            *d += row.iter().copied().sum::<T>();
        }
    }
    if let Some(dk) = dk {
        let col = im2col(x, g);
        T::gemm(g.c_out, hw, rows, gout, false, &col, true, T::one(), dk);
    }
    if let Some(dx) = dx {
        if g.is_pointwise() {
            T::gemm(rows, g.c_out, hw, k, true, gout, false, T::one(), dx);
        } else {
            let mut dcol = vec![T::zero(); rows * hw];
            T::gemm(rows, g.c_out, hw, k, true, gout, false, T::zero(), &mut dcol);
            col2im_add(&dcol, g, dx);
        }
    }
}

/// 2x2 max pool; returns values and the flat input index chosen per output.
/// Ties resolve to the first position in row-major block order.
pub(crate) fn maxpool2_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let ow = 2 * w;
    let mut out = vec![T::zero(); c * 4 * h * w];
    for ch in 0..c {
        for y in 0..h {
            let src = &x[(ch * h + y) * w..(ch * h + y + 1) * w];
            let r0 = (ch * 2 * h + 2 * y) * ow;
            for (x_, &v) in src.iter().enumerate() {
                out[r0 + 2 * x_] = v;
                out[r0 + 2 * x_ + 1] = v;
            }
            out.copy_within(r0..r0 + ow, r0 + ow);
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(gout: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let ow = 2 * w;
    for ch in 0..c {
        for y in 0..h {
            let r0 = (ch * 2 * h + 2 * y) * ow;
            for x_ in 0..w {
                let i = r0 + 2 * x_;
                dx[(ch * h + y) * w + x_] += gout[i] + gout[i + 1] + gout[i + ow] + gout[i + ow + 1];
            }
        }
    }
}

/// Source index along one axis for nearest-neighbour resizing.
pub(crate) fn nearest_src(o: usize, in_len: usize, out_len: usize) -> usize {
    (o * in_len) / out_len
}

/// Half-open input range pooled into adaptive bin `o`.
pub(crate) fn adaptive_bin(o: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let start = (o * in_len) / out_len;
    let end = ((o + 1) * in_len).div_ceil(out_len);
    (start, end)
}
