//! Bounded-memory inference on arbitrarily large images.

use crate::error::{contract, Result};
use crate::tensor::Tensor;

use super::network::INPUT_MULTIPLE;
use super::params::ModelParams;

/// Reflect index `i` into `[0, n)`, mirroring as often as needed.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Reflect-pads a `1×C×H×W` tensor on the bottom and right to `ph×pw`.
pub fn reflect_pad(image: &Tensor<f32>, ph: usize, pw: usize) -> Result<Tensor<f32>> {
    let (n, c, h, w) = image.dims4()?;
    if ph < h || pw < w {
        contract!("padded size {ph}×{pw} is smaller than {h}×{w}");
    }
    if (ph, pw) == (h, w) {
        return Ok(image.clone());
    }
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for plane in image.data().chunks(h * w) {
        for y in 0..ph {
            let row = &plane[reflect(y, h) * w..(reflect(y, h) + 1) * w];
            out.extend((0..pw).map(|x| row[reflect(x, w)]));
        }
    }
    Tensor::new(&[n, c, ph, pw], out)
}

fn crop(image: &Tensor<f32>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (n, c, ih, iw) = image.dims4()?;
    if y0 + h > ih || x0 + w > iw {
        contract!("crop {h}×{w} at ({y0},{x0}) exceeds {ih}×{iw}");
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in image.data().chunks(ih * iw) {
        for y in y0..y0 + h {
            out.extend_from_slice(&plane[y * iw + x0..y * iw + x0 + w]);
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Tile start offsets along one axis of length `len`; the last tile is
/// flush with the end.
fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Blend weight of local position `p` in a tile of size `size`.
///
/// On every side that borders another tile the weight is zero for the
/// outer quarter of the overlap band, rises linearly across its central
/// half and is one beyond it. Predictions degrade fastest next to a tile
/// edge, so those pixels are taken from the neighbouring tile. Ramps of
/// two tiles sharing a band sum to one.
fn ramp(p: usize, size: usize, overlap: usize, open_start: bool, open_end: bool) -> f32 {
    let margin = overlap / 4;
    let band = (overlap - 2 * margin) as f32;
    let rise = |d: usize| {
        if d < margin {
            0.0
        } else {
            ((d - margin) as f32 + 0.5).min(band) / band
        }
    };
    let mut w = 1.0f32;
    if open_start {
        w = w.min(rise(p));
    }
    if open_end {
        w = w.min(rise(size - 1 - p));
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileConfig {
    pub tile: usize,
    pub overlap: usize,
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.tile % INPUT_MULTIPLE != 0 {
            contract!("tile {} must be a positive multiple of {INPUT_MULTIPLE}", self.tile);
        }
        if self.overlap < 32 || 2 * self.overlap > self.tile {
            contract!("overlap {} must be at least 32 and at most half the tile ({})", self.overlap, self.tile);
        }
        Ok(())
    }
}

/// Restores a `1×3×H×W` image of any size tile by tile, feathering overlaps.
///
/// The image is reflect-padded up to a multiple of 16, split into tiles of
/// `tile` pixels overlapping by `overlap`, and the padding is cropped from
/// the blended result. When the padded image fits in one tile the result is
/// exactly the untiled prediction.
pub fn tiled_infer(model: &ModelParams<f32>, image: &Tensor<f32>, tiles: TileConfig) -> Result<Tensor<f32>> {
    tiles.validate()?;
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || c != 3 {
        contract!("tiled inference expects a 1×3×H×W image, got {:?}", image.shape());
    }
    let (ph, pw) = (round_up(h, INPUT_MULTIPLE), round_up(w, INPUT_MULTIPLE));
    let padded = reflect_pad(image, ph, pw)?;
    let ys = tile_starts(ph, tiles.tile, tiles.overlap);
    let xs = tile_starts(pw, tiles.tile, tiles.overlap);
    if ys.len() == 1 && xs.len() == 1 {
        let out = model.restore(&padded)?;
        return crop(&out, 0, 0, h, w);
    }

    let mut acc = vec![0.0f32; 3 * ph * pw];
    let mut weight = vec![0.0f32; ph * pw];
    for (iy, &y0) in ys.iter().enumerate() {
        let th = tiles.tile.min(ph);
        let wy: Vec<f32> = (0..th).map(|p| ramp(p, th, tiles.overlap, iy > 0, iy + 1 < ys.len())).collect();
        for (ix, &x0) in xs.iter().enumerate() {
            let tw = tiles.tile.min(pw);
            let wx: Vec<f32> = (0..tw).map(|p| ramp(p, tw, tiles.overlap, ix > 0, ix + 1 < xs.len())).collect();
            let out = model.restore(&crop(&padded, y0, x0, th, tw)?)?;
            for ch in 0..3 {
                let plane = &out.data()[ch * th * tw..(ch + 1) * th * tw];
                for y in 0..th {
                    let dst = &mut acc[(ch * ph + y0 + y) * pw + x0..(ch * ph + y0 + y) * pw + x0 + tw];
                    for ((d, &v), &wxv) in dst.iter_mut().zip(&plane[y * tw..(y + 1) * tw]).zip(&wx) {
                        *d += v * wy[y] * wxv;
                    }
                }
            }
            for y in 0..th {
                let dst = &mut weight[(y0 + y) * pw + x0..(y0 + y) * pw + x0 + tw];
                for (d, &wxv) in dst.iter_mut().zip(&wx) {
                    *d += wy[y] * wxv;
                }
            }
        }
    }
    for ch in 0..3 {
        for (a, &wt) in acc[ch * ph * pw..(ch + 1) * ph * pw].iter_mut().zip(&weight) {
            *a /= wt;
        }
    }
    crop(&Tensor::new(&[1, 3, ph, pw], acc)?, 0, 0, h, w)
}
