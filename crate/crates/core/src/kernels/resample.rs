//! Spatial resampling: pixel shuffle, bilinear resize and 2×2 max pooling.

use crate::error::{contract, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShuffleDirection {
    /// Space to depth: `C×H×W → C·r²×H/r×W/r`.
    Down,
    /// Depth to space, the exact inverse of `Down`.
    Up,
}

impl ShuffleDirection {
    pub fn inverse(self) -> Self {
        match self {
            Self::Down => Self::Up,
            Self::Up => Self::Down,
        }
    }
}

/// Output shape of a pixel shuffle, validating divisibility.
pub fn pixel_shuffle_shape(shape: &[usize], r: usize, dir: ShuffleDirection) -> Result<[usize; 4]> {
    let [n, c, h, w] = shape else { contract!("pixel_shuffle expects rank 4, got {shape:?}") };
    let (n, c, h, w) = (*n, *c, *h, *w);
    if r == 0 {
        contract!("pixel_shuffle factor must be >= 1");
    }
    match dir {
        ShuffleDirection::Down => {
            if h % r != 0 || w % r != 0 {
                contract!("pixel_shuffle down by {r} needs H, W divisible by {r}, got {h}×{w}");
            }
            Ok([n, c * r * r, h / r, w / r])
        }
        ShuffleDirection::Up => {
            if c % (r * r) != 0 {
                contract!("pixel_shuffle up by {r} needs C divisible by {}, got {c}", r * r);
            }
            Ok([n, c / (r * r), h * r, w * r])
        }
    }
}

/// `down: out[n, c·r² + dy·r + dx, y, x] = in[n, c, y·r+dy, x·r+dx]`; `up` inverts it.
pub fn pixel_shuffle<T: Real>(input: &Tensor<T>, r: usize, dir: ShuffleDirection) -> Result<Tensor<T>> {
    let out_shape = pixel_shuffle_shape(input.shape(), r, dir)?;
    // Index math is written in terms of the low-resolution (depth) side.
    let (n, c, hs, ws) = match dir {
        ShuffleDirection::Down => input.dims4()?,
        ShuffleDirection::Up => (out_shape[0], out_shape[1], out_shape[2], out_shape[3]),
    };
    let (hd, wd) = (hs / r, ws / r);
    let mut out = vec![T::zero(); input.numel()];
    let src = input.data();
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let depth_c = ch * r * r + dy * r + dx;
                    for y in 0..hd {
                        for x in 0..wd {
                            let space = ((b * c + ch) * hs + y * r + dy) * ws + x * r + dx;
                            let depth = ((b * c * r * r + depth_c) * hd + y) * wd + x;
                            match dir {
                                ShuffleDirection::Down => out[depth] = src[space],
                                ShuffleDirection::Up => out[space] = src[depth],
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&out_shape, out)
}

/// Per-axis interpolation table: `(lower, upper, upper weight)` for each output index.
fn axis_table(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp<T: Real>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

/// Bilinear resize with half-pixel centers and border clamping.
///
/// Interpolation uses `a + t·(b − a)`, so equal-size resizes and constant
/// inputs reproduce their values exactly.
pub fn resize_bilinear<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        contract!("resize target must be at least 1×1, got {out_h}×{out_w}");
    }
    let ty = axis_table(h, out_h);
    let tx = axis_table(w, out_w);
    let tx_w: Vec<T> = tx.iter().map(|&(_, _, t)| T::lit(t)).collect();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1, wy) in &ty {
            let wy = T::lit(wy);
            let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
            for (&(x0, x1, _), &wx) in tx.iter().zip(&tx_w) {
                let top = lerp(r0[x0], r0[x1], wx);
                let bottom = lerp(r1[x0], r1[x1], wx);
                out.push(lerp(top, bottom, wy));
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

pub fn resize_bilinear_backward<T: Real>(grad_out: &Tensor<T>, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = grad_out.dims4()?;
    let ty = axis_table(in_h, oh);
    let tx = axis_table(in_w, ow);
    let mut out = vec![T::zero(); n * c * in_h * in_w];
    for (plane, g) in out.chunks_mut(in_h * in_w).zip(grad_out.data().chunks(oh * ow)) {
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::lit(wx);
                let gv = g[oy * ow + ox];
                let (gt, gb) = (gv - wy * gv, wy * gv);
                plane[y0 * in_w + x0] += gt - wx * gt;
                plane[y0 * in_w + x1] += wx * gt;
                plane[y1 * in_w + x0] += gb - wx * gb;
                plane[y1 * in_w + x1] += wx * gb;
            }
        }
    }
    Tensor::new(&[n, c, in_h, in_w], out)
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the pooled tensor and the flat argmax index of each output.
pub fn max_pool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        contract!("max_pool2 needs at least 2×2 input, got {h}×{w}");
    }
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for idx in [best + 1, best + w, best + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, arg))
}

pub fn max_pool2_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(input_shape);
    let dst = out.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        dst[i] += g;
    }
    Ok(out)
}
