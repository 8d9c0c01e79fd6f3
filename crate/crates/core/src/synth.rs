//! Procedural clean/moiré pairs: `M = F(R ⊙ S)` with a per-channel
//! sinusoidal scaling field `S` and a global nonlinearity `F`.
//!
//! Images are `1×3×H×W` tensors with values in [0, 1].

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MoireParams {
    /// Per-channel scaling amplitudes, each in [0, 1).
    pub amplitude: [f64; 3],
    /// Spatial frequency `(f_x, f_y)` in cycles per pixel.
    pub freq: [f64; 2],
    /// Per-channel phase offsets in radians.
    pub phase: [f64; 3],
    pub gamma: f64,
    /// Per-channel white-balance gains.
    pub gains: [f64; 3],
    /// Tone-curve strength in [0, 1].
    pub tone: f64,
    pub seed: u64,
}

impl MoireParams {
    /// Parameters under which degradation is the identity map.
    pub fn identity() -> Self {
        Self { amplitude: [0.0; 3], freq: [0.0; 2], phase: [0.0; 3], gamma: 1.0, gains: [1.0; 3], tone: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (c, &a) in self.amplitude.iter().enumerate() {
            if !(0.0..1.0).contains(&a) {
                contract!("amplitude of channel {c} must be in [0, 1), got {a}");
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            contract!("gamma must be positive and finite, got {}", self.gamma);
        }
        if self.gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            contract!("white-balance gains must be positive and finite, got {:?}", self.gains);
        }
        if !(0.0..=1.0).contains(&self.tone) {
            contract!("tone strength must be in [0, 1], got {}", self.tone);
        }
        if self.freq.iter().chain(&self.phase).any(|v| !v.is_finite()) {
            contract!("frequency and phase must be finite");
        }
        Ok(())
    }
}

/// `S_c(i, j) = 1 + a_c·cos(2π(f_x·j + f_y·i) + φ_c)` as a `1×3×h×w` tensor.
pub fn gen_scaling_field(p: &MoireParams, h: usize, w: usize) -> Result<Tensor<f32>> {
    p.validate()?;
    if h == 0 || w == 0 {
        contract!("scaling field needs h, w >= 1, got {h}×{w}");
    }
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let arg = 2.0 * PI * (p.freq[0] * j as f64 + p.freq[1] * i as f64) + p.phase[c];
                data.push((1.0 + p.amplitude[c] * arg.cos()) as f32);
            }
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

/// Smooth monotone curve on [0, 1] with fixed endpoints.
pub fn tone_curve(x: f64, strength: f64) -> f64 {
    x + strength * x * (1.0 - x) * (0.5 - x) * 4.0
}

/// `clamp(tone(gains ⊙ (clean ⊙ S)^γ))`.
pub fn apply_degradation(clean: &Tensor<f32>, p: &MoireParams) -> Result<Tensor<f32>> {
    let (n, c, h, w) = clean.dims4()?;
    if n != 1 || c != 3 {
        contract!("degradation expects a 1×3×H×W image, got {:?}", clean.shape());
    }
    let field = gen_scaling_field(p, h, w)?;
    let plane = h * w;
    let data = clean
        .data()
        .iter()
        .zip(field.data())
        .enumerate()
        .map(|(i, (&r, &s))| {
            let v = p.gains[i / plane] * (r as f64 * s as f64).powf(p.gamma);
            tone_curve(v.clamp(0.0, 1.0), p.tone).clamp(0.0, 1.0) as f32
        })
        .collect();
    Tensor::new(clean.shape(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CleanKind {
    Gradient,
    Checker,
    /// Dark glyph-like rectangles on white, a stand-in for documents.
    Textlike,
    Mixed,
}

impl CleanKind {
    pub const ALL: [CleanKind; 4] = [Self::Gradient, Self::Checker, Self::Textlike, Self::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gradient => "gradient",
            Self::Checker => "checker",
            Self::Textlike => "textlike",
            Self::Mixed => "mixed",
        }
    }
}

impl FromStr for CleanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown clean image kind {s:?}")))
    }
}

fn ramp_coord(i: usize, n: usize) -> f64 {
    if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.0
    }
}

fn gradient(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        let alpha: f64 = rng.gen_range(0.2..0.8);
        for i in 0..h {
            for j in 0..w {
                out.push(alpha * ramp_coord(i, h) + (1.0 - alpha) * ramp_coord(j, w));
            }
        }
    }
    out
}

fn checker(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cell = rng.gen_range(4..=16usize);
    let lo = rng.gen_range(0.0..0.4);
    let hi = rng.gen_range(0.6..1.0);
    let plane: Vec<f64> = (0..h * w).map(|k| if (k / w / cell + k % w / cell) % 2 == 0 { lo } else { hi }).collect();
    plane.repeat(3)
}

/// Glyph rows inside the region `(y0, x0, rh, rw)` of an `h×w` image.
fn draw_glyphs(img: &mut [f64], (h, w): (usize, usize), (y0, x0, rh, rw): (usize, usize, usize, usize), rng: &mut ChaCha8Rng) {
    let line = rng.gen_range(6..=12usize);
    let ink: f64 = rng.gen_range(0.0..0.15);
    let mut y = y0 + 1;
    while y + line <= y0 + rh {
        let glyph_h = line * 2 / 3;
        let mut x = x0 + rng.gen_range(0..3usize);
        while x < x0 + rw {
            let gw = rng.gen_range(1..=4usize);
            if rng.gen_bool(0.8) {
                let top = y + rng.gen_range(0..=line - glyph_h);
                for yy in top..(top + glyph_h).min(h) {
                    for xx in x..(x + gw).min(x0 + rw).min(w) {
                        for c in 0..3 {
                            img[(c * h + yy) * w + xx] = ink;
                        }
                    }
                }
            }
            x += gw + rng.gen_range(1..=3usize);
        }
        y += line;
    }
}

fn textlike(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![1.0; 3 * h * w];
    draw_glyphs(&mut img, (h, w), (0, 0, h, w), rng);
    img
}

fn mixed(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = gradient(h, w, rng);
    let check = checker(h, w, rng);
    let (ch, cw) = (h / 2, w / 2);
    for c in 0..3 {
        for i in 0..ch {
            for j in 0..cw {
                img[(c * h + i) * w + j] = check[(c * h + i) * w + j];
            }
        }
    }
    let (ty, tx) = (h / 2, w / 2);
    for c in 0..3 {
        for i in ty..h {
            for j in tx..w {
                img[(c * h + i) * w + j] = 1.0;
            }
        }
    }
    draw_glyphs(&mut img, (h, w), (ty, tx, h - ty, w - tx), rng);
    img
}

/// Deterministic procedural clean image, `1×3×h×w`.
pub fn gen_clean(kind: CleanKind, h: usize, w: usize, seed: u64) -> Result<Tensor<f32>> {
    if h == 0 || w == 0 {
        contract!("clean image needs h, w >= 1, got {h}×{w}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match kind {
        CleanKind::Gradient => gradient(h, w, &mut rng),
        CleanKind::Checker => checker(h, w, &mut rng),
        CleanKind::Textlike => textlike(h, w, &mut rng),
        CleanKind::Mixed => mixed(h, w, &mut rng),
    };
    Tensor::new(&[1, 3, h, w], data.into_iter().map(|v| v as f32).collect())
}

/// Sampling ranges for [`gen_dataset`].
pub mod ranges {
    pub const AMPLITUDE: (f64, f64) = (0.1, 0.6);
    /// Magnitude of the frequency vector, cycles per pixel.
    pub const FREQ: (f64, f64) = (0.02, 0.45);
    pub const GAMMA: (f64, f64) = (0.8, 1.4);
    pub const GAINS: (f64, f64) = (0.85, 1.15);
    pub const TONE: (f64, f64) = (0.0, 0.8);
}

/// Draws one parameter set; the stripe orientation and frequency are new
/// for every call.
pub fn sample_params(seed: u64) -> MoireParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
    let amplitude = [draw(ranges::AMPLITUDE), draw(ranges::AMPLITUDE), draw(ranges::AMPLITUDE)];
    let radius = draw(ranges::FREQ);
    let angle = draw((0.0, PI));
    let phase = [draw((0.0, 2.0 * PI)), draw((0.0, 2.0 * PI)), draw((0.0, 2.0 * PI))];
    let gamma = draw(ranges::GAMMA);
    let gains = [draw(ranges::GAINS), draw(ranges::GAINS), draw(ranges::GAINS)];
    let tone = draw(ranges::TONE);
    MoireParams { amplitude, freq: [radius * angle.cos(), radius * angle.sin()], phase, gamma, gains, tone, seed }
}

#[derive(Clone, Debug)]
pub struct MoirePair {
    pub clean: Tensor<f32>,
    pub moire: Tensor<f32>,
    pub params: MoireParams,
    pub kind: CleanKind,
}

/// `n` pairs, each drawn from its own sub-seed of `seed`.
pub fn gen_dataset(n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<MoirePair>> {
    if n == 0 {
        contract!("dataset size must be at least 1");
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sub: u64 = master.gen();
            let mut rng = ChaCha8Rng::seed_from_u64(sub);
            let kind = CleanKind::ALL[rng.gen_range(0..4)];
            let clean = gen_clean(kind, h, w, rng.gen())?;
            let params = sample_params(rng.gen());
            let moire = apply_degradation(&clean, &params)?;
            Ok(MoirePair { clean, moire, params, kind })
        })
        .collect()
}
