//! Forward evaluation of the encoder–decoder network.

use std::cell::RefCell;

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::kernels::{ConvGeom, ShuffleDirection};
use crate::tensor::{Real, Tensor};

use super::config::{DenseBlockConfig, ModelConfig};
use super::params::{branch_prefix, sam_prefix, Bound, ModelParams, DECODER_LEVELS, ENCODER_LEVELS};

/// Spatial factor the input extents must be divisible by.
pub const INPUT_MULTIPLE: usize = 16;

/// Multi-scale predictions, one per decoder level.
#[derive(Clone, Debug)]
pub struct Predictions<T: Real = f32> {
    /// Full resolution (the restored image).
    pub full: Var<T>,
    /// Half resolution.
    pub half: Var<T>,
    /// Quarter resolution.
    pub quarter: Var<T>,
}

impl<T: Real> Predictions<T> {
    pub fn levels(&self) -> [&Var<T>; 3] {
        [&self.full, &self.half, &self.quarter]
    }
}

/// Intermediate pieces of one SAM evaluation.
pub struct SamParts<T: Real> {
    pub output: Var<T>,
    /// Pyramid outputs `Y0, Y1, Y2`, all at the input resolution.
    pub branches: [Var<T>; 3],
    /// Per-image fusion weights, each `N×C`.
    pub weights: [Var<T>; 3],
}

/// `(label, shape)` of an intermediate tensor, in evaluation order.
pub type TraceEntry = (String, Vec<usize>);

struct Net<'a, T: Real> {
    tape: &'a Tape<T>,
    params: &'a Bound<T>,
    config: &'a ModelConfig,
    trace: RefCell<Vec<TraceEntry>>,
}

impl<'a, T: Real> Net<'a, T> {
    fn new(tape: &'a Tape<T>, params: &'a Bound<T>, config: &'a ModelConfig) -> Self {
        Self { tape, params, config, trace: RefCell::default() }
    }

    fn note(&self, label: impl Into<String>, v: &Var<T>) {
        self.trace.borrow_mut().push((label.into(), v.shape().to_vec()));
    }

    fn conv(&self, prefix: &str, x: &Var<T>, geom: ConvGeom) -> Result<Var<T>> {
        let (w, b) = self.params.layer(prefix)?;
        self.tape.conv2d(x, w, Some(b), geom)
    }

    fn conv_relu(&self, prefix: &str, x: &Var<T>, geom: ConvGeom) -> Result<Var<T>> {
        let y = self.conv(prefix, x, geom)?;
        self.tape.relu(&y)
    }

    /// Dense layers `F^l = ReLU(conv_d(l)([F^0 … F^(l−1)]))` and the 1×1 fusion
    /// of all of them back to the input width (no residual).
    fn dense_block(&self, prefix: &str, block: &DenseBlockConfig, x: &Var<T>) -> Result<Var<T>> {
        if x.shape()[1] != block.in_channels {
            contract!("{prefix} expects {} channels, got {}", block.in_channels, x.shape()[1]);
        }
        let mut features = vec![x.clone()];
        for (l, &d) in block.dilations.iter().enumerate() {
            let input = self.tape.concat(&features.iter().collect::<Vec<_>>())?;
            let f = self.conv_relu(&format!("{prefix}.conv{}", l + 1), &input, ConvGeom::same(3, d))?;
            features.push(f);
        }
        let all = self.tape.concat(&features.iter().collect::<Vec<_>>())?;
        self.conv(&format!("{prefix}.fuse"), &all, ConvGeom::UNIT)
    }

    fn drdb(&self, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        let block = self.config.drdb(x.shape()[1]);
        let refined = self.dense_block(prefix, &block, x)?;
        let out = self.tape.add(x, &refined)?;
        self.note(prefix, &out);
        Ok(out)
    }

    fn sam(&self, prefix: &str, x: &Var<T>) -> Result<SamParts<T>> {
        let (_, c, h, w) = x.value().dims4()?;
        let block = self.config.sam_branch(c);
        let mut branches = Vec::with_capacity(3);
        for (b, factor) in [1usize, 2, 4].into_iter().enumerate() {
            let branch = branch_prefix(self.config, prefix, b);
            let y = if factor == 1 {
                self.dense_block(&branch, &block, x)?
            } else {
                let small = self.tape.resize_bilinear(x, (h / factor).max(1), (w / factor).max(1))?;
                let y = self.dense_block(&branch, &block, &small)?;
                self.tape.resize_bilinear(&y, h, w)?
            };
            self.note(format!("{prefix}.y{b}"), &y);
            branches.push(y);
        }
        let pooled: Vec<Var<T>> = branches.iter().map(|y| self.tape.global_avg_pool(y)).collect::<Result<_>>()?;
        let v = self.tape.concat(&pooled.iter().collect::<Vec<_>>())?;
        self.note(format!("{prefix}.pooled"), &v);
        let mut hidden = v;
        for (i, fc) in ["fc1", "fc2", "fc3"].iter().enumerate() {
            let (weight, bias) = self.params.layer(&format!("{prefix}.mlp.{fc}"))?;
            let z = self.tape.affine(&hidden, weight, bias)?;
            hidden = if i < 2 { self.tape.relu(&z)? } else { self.tape.sigmoid(&z)? };
            self.note(format!("{prefix}.mlp.{fc}"), &hidden);
        }
        let weights = [0, 1, 2].map(|i| self.tape.narrow(&hidden, i * c, c));
        let [w0, w1, w2] = weights;
        let weights = [w0?, w1?, w2?];
        let mut out = x.clone();
        for (y, wi) in branches.iter().zip(&weights) {
            let scaled = self.tape.mul_channel(y, wi)?;
            out = self.tape.add(&out, &scaled)?;
        }
        self.note(prefix, &out);
        let [y0, y1, y2]: [Var<T>; 3] = branches.try_into().expect("three branches");
        Ok(SamParts { output: out, branches: [y0, y1, y2], weights })
    }

    fn level(&self, level: &str, x: &Var<T>) -> Result<Var<T>> {
        let mut y = self.drdb(&format!("{level}.drdb"), x)?;
        for k in 0..self.config.sam_per_level() {
            y = self.sam(&sam_prefix(level, k), &y)?.output;
        }
        Ok(y)
    }

    /// Output layer: 3×3 conv to 12 channels, then pixel-shuffle up to 3 channels.
    fn predict(&self, level: &str, x: &Var<T>) -> Result<Var<T>> {
        let y = self.conv(&format!("{level}.out"), x, ConvGeom::same(3, 1))?;
        self.note(format!("{level}.out"), &y);
        let img = self.tape.pixel_shuffle(&y, 2, ShuffleDirection::Up)?;
        self.note(format!("{level}.pred"), &img);
        Ok(img)
    }

    fn forward(&self, image: &Var<T>) -> Result<Predictions<T>> {
        check_input(image.value())?;
        let x = self.tape.pixel_shuffle(image, 2, ShuffleDirection::Down)?;
        self.note("head.shuffle", &x);
        let mut x = self.conv_relu("head.conv", &x, ConvGeom::same(5, 1))?;
        self.note("head.conv", &x);

        let mut skips = Vec::with_capacity(3);
        for (i, level) in ENCODER_LEVELS.iter().enumerate() {
            if i > 0 {
                x = self.conv(&format!("{level}.down"), &x, ConvGeom::new(2, 1, 1))?;
                self.note(format!("{level}.down"), &x);
            }
            x = self.level(level, &x)?;
            skips.push(x.clone());
        }

        let mut preds = Vec::with_capacity(3);
        let mut carry: Option<Var<T>> = None;
        for (i, level) in DECODER_LEVELS.iter().enumerate() {
            let input = match &carry {
                None => skips[2].clone(),
                Some(up) => {
                    let skip = &skips[2 - i];
                    let cat = self.tape.concat(&[up, skip])?;
                    self.note(format!("{level}.cat"), &cat);
                    cat
                }
            };
            let y = self.conv_relu(&format!("{level}.conv"), &input, ConvGeom::same(3, 1))?;
            self.note(format!("{level}.conv"), &y);
            let y = self.level(level, &y)?;
            preds.push(self.predict(level, &y)?);
            if i + 1 < DECODER_LEVELS.len() {
                let (_, _, h, w) = y.value().dims4()?;
                let up = self.tape.resize_bilinear(&y, 2 * h, 2 * w)?;
                self.note(format!("{level}.up"), &up);
                carry = Some(up);
            }
        }
        let [quarter, half, full]: [Var<T>; 3] = preds.try_into().expect("three decoder levels");
        Ok(Predictions { full, half, quarter })
    }
}

fn check_input<T: Real>(image: &Tensor<T>) -> Result<()> {
    let (_, c, h, w) = image.dims4()?;
    if c != 3 {
        contract!("expected a 3-channel image, got {c} channels");
    }
    if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
        let pad = |v: usize| (INPUT_MULTIPLE - v % INPUT_MULTIPLE) % INPUT_MULTIPLE;
        contract!(
            "input {h}×{w} must be divisible by {INPUT_MULTIPLE}: pad {} rows and {} columns",
            pad(h),
            pad(w)
        );
    }
    Ok(())
}

/// Dilated residual dense block: `F0 + fuse([F0, F1, F2, F3])`.
pub fn drdb_forward<T: Real>(
    tape: &Tape<T>,
    params: &Bound<T>,
    config: &ModelConfig,
    prefix: &str,
    f0: &Var<T>,
) -> Result<Var<T>> {
    Net::new(tape, params, config).drdb(prefix, f0)
}

/// Semantic-aligned scale-aware module at `prefix` (for example `enc1.sam1`).
///
/// Pyramid levels are bilinear resizes to `⌊H/2⌋` and `⌊H/4⌋` (at least 1),
/// so the module accepts any spatial size.
pub fn sam_forward<T: Real>(
    tape: &Tape<T>,
    params: &Bound<T>,
    config: &ModelConfig,
    prefix: &str,
    fr: &Var<T>,
) -> Result<Var<T>> {
    Ok(sam_parts(tape, params, config, prefix, fr)?.output)
}

pub fn sam_parts<T: Real>(
    tape: &Tape<T>,
    params: &Bound<T>,
    config: &ModelConfig,
    prefix: &str,
    fr: &Var<T>,
) -> Result<SamParts<T>> {
    Net::new(tape, params, config).sam(prefix, fr)
}

/// Full network. `image` is `N×3×H×W` with `H`, `W` divisible by 16.
pub fn forward<T: Real>(tape: &Tape<T>, params: &Bound<T>, config: &ModelConfig, image: &Var<T>) -> Result<Predictions<T>> {
    Net::new(tape, params, config).forward(image)
}

/// [`forward`] plus the shape of every notable intermediate tensor.
pub fn forward_traced<T: Real>(
    tape: &Tape<T>,
    params: &Bound<T>,
    config: &ModelConfig,
    image: &Var<T>,
) -> Result<(Predictions<T>, Vec<TraceEntry>)> {
    let net = Net::new(tape, params, config);
    let preds = net.forward(image)?;
    Ok((preds, net.trace.into_inner()))
}

impl<T: Real> ModelParams<T> {
    /// Inference-only evaluation returning `(full, half, quarter)` predictions.
    pub fn predict(&self, image: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
        let tape = Tape::inference();
        let bound = self.bind(&tape);
        let x = tape.constant(image.clone());
        let p = forward(&tape, &bound, self.config(), &x)?;
        Ok([p.full.into_tensor(), p.half.into_tensor(), p.quarter.into_tensor()])
    }

    /// The restored full-resolution image.
    pub fn restore(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let [full, _, _] = self.predict(image)?;
        Ok(full)
    }
}
