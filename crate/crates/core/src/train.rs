//! Adam with cyclic cosine annealing, random patch sampling and evaluation.

use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{contract, Error, Result};
use crate::loss::{downsample_gt, total_loss, FeatureExtractor, LossConfig};
use crate::metrics::{psnr, ssim};
use crate::model::{forward, ModelParams, INPUT_MULTIPLE};
use crate::synth::MoirePair;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub cycle_epochs: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            lr_max: 2e-4,
            lr_min: 1e-6,
            cycle_epochs: 50.0,
            epochs: 4,
            batch: 2,
            patch: 64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings of the original full-scale recipe.
    pub fn paper() -> Self {
        Self { epochs: 150, patch: 768, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch == 0 || self.patch % INPUT_MULTIPLE != 0 {
            return bad(format!("patch {} must be a positive multiple of {INPUT_MULTIPLE}", self.patch));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return bad(format!("need 0 <= lr_min < lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if !(self.cycle_epochs > 0.0 && self.cycle_epochs.is_finite()) {
            return bad(format!("cycle_epochs must be positive, got {}", self.cycle_epochs));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive".into());
        }
        Ok(())
    }
}

/// Learning rate after `progress` epochs; restarts at `lr_max` every cycle.
pub fn cosine_lr(progress: f64, cfg: &TrainConfig) -> f64 {
    let t = progress.rem_euclid(cfg.cycle_epochs);
    let decay = 0.5 * (1.0 - (std::f64::consts::PI * t / cfg.cycle_epochs).cos());
    cfg.lr_max - (cfg.lr_max - cfg.lr_min) * decay
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: IndexMap<String, Tensor<f32>>,
    v: IndexMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<f32>, &Tensor<f32>)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// One update. Nothing is modified unless every gradient is present,
    /// shape-matched and finite.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor<f32>)>,
        grads: &IndexMap<String, Tensor<f32>>,
        lr: f64,
    ) -> Result<()> {
        let params: Vec<_> = params.into_iter().collect();
        if params.len() != grads.len() {
            contract!("{} gradients for {} parameters", grads.len(), params.len());
        }
        for (name, p) in &params {
            let Some(g) = grads.get(*name) else { contract!("no gradient for parameter {name}") };
            if g.shape() != p.shape() {
                contract!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape());
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient((*name).to_string()));
            }
        }
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = (1.0 - self.beta1.powf(self.step as f64)) as f32;
        let bc2 = (1.0 - self.beta2.powf(self.step as f64)) as f32;
        let (lr, eps) = (lr as f32, self.eps as f32);
        for (name, p) in params {
            let g = &grads[name];
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// An aligned clean/degraded pair, each `1×3×H×W`.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub clean: Tensor<f32>,
    pub moire: Tensor<f32>,
}

impl From<MoirePair> for ImagePair {
    fn from(p: MoirePair) -> Self {
        Self { clean: p.clean, moire: p.moire }
    }
}

fn crop(image: &Tensor<f32>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (n, c, ih, iw) = image.dims4()?;
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in image.data().chunks(ih * iw) {
        for y in y0..y0 + h {
            out.extend_from_slice(&plane[y * iw + x0..y * iw + x0 + w]);
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// The same random `size×size` window of both images.
pub fn random_crop(pair: &ImagePair, size: usize, rng: &mut impl Rng) -> Result<ImagePair> {
    let (_, _, h, w) = pair.clean.dims4()?;
    if pair.moire.shape() != pair.clean.shape() {
        contract!("pair images differ in shape: {:?} vs {:?}", pair.clean.shape(), pair.moire.shape());
    }
    if h < size || w < size {
        contract!("image {h}×{w} is smaller than the {size}×{size} crop");
    }
    let y0 = rng.gen_range(0..=h - size);
    let x0 = rng.gen_range(0..=w - size);
    Ok(ImagePair { clean: crop(&pair.clean, y0, x0, size, size)?, moire: crop(&pair.moire, y0, x0, size, size)? })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l1: f64,
    pub perceptual: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,epoch,lr,loss,l1_term,perceptual_term";

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.step, r.epoch, r.lr, r.loss, r.l1, r.perceptual);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub optimizer: Adam,
    pub step: u64,
    pub epoch: usize,
    pub log: Vec<LossRecord>,
}

/// One optimization step on a batch; returns the logged terms.
fn train_step(
    model: &mut ModelParams<f32>,
    batch: &[ImagePair],
    loss_cfg: &LossConfig,
    extractor: &FeatureExtractor<f32>,
    optimizer: &mut Adam,
    lr: f64,
) -> Result<(f64, f64, f64)> {
    let moire = Tensor::stack(&batch.iter().map(|p| p.moire.clone()).collect::<Vec<_>>())?;
    let clean = Tensor::stack(&batch.iter().map(|p| p.clean.clone()).collect::<Vec<_>>())?;
    let targets = downsample_gt(&clean)?;
    let grads = {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let x = tape.constant(moire);
        let preds = forward(&tape, &bound, model.config(), &x)?;
        let terms = total_loss(&tape, &preds, &targets, loss_cfg, extractor)?;
        let loss = terms.total.value().data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { node: terms.total.id().unwrap_or(0), op: "loss" });
        }
        let grads = tape.backward(&terms.total)?;
        let named = grads.into_named(|name| model.get(name).map(|t| t.shape().to_vec()).unwrap_or_default());
        (named, loss, terms.l1 as f64, terms.perceptual as f64)
    };
    let (named, loss, l1, perceptual) = grads;
    optimizer.step(model.iter_mut(), &named, lr)?;
    Ok((loss, l1, perceptual))
}

/// Trains `model` in place. `on_step` sees every logged record as it is produced.
pub fn train(
    model: &mut ModelParams<f32>,
    pairs: &[ImagePair],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    extractor: &FeatureExtractor<f32>,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainState> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if pairs.is_empty() {
        contract!("training needs at least one pair");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state =
        TrainState { optimizer: Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps), step: 0, epoch: 0, log: Vec::new() };
    let per_epoch = pairs.len().div_ceil(cfg.batch);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        order.shuffle(&mut rng);
        for (k, idx) in order.chunks(cfg.batch).enumerate() {
            let batch = idx.iter().map(|&i| random_crop(&pairs[i], cfg.patch, &mut rng)).collect::<Result<Vec<_>>>()?;
            let lr = cosine_lr(epoch as f64 + k as f64 / per_epoch as f64, cfg);
            let step = state.step + 1;
            let (loss, l1, perceptual) =
                train_step(model, &batch, loss_cfg, extractor, &mut state.optimizer, lr).map_err(|e| match e {
                    Error::NonFinite { .. } | Error::NonFiniteGradient(_) => Error::Diverged { step, reason: e.to_string() },
                    other => other,
                })?;
            state.step = step;
            let record = LossRecord { step, epoch, lr, loss, l1, perceptual };
            on_step(&record);
            state.log.push(record);
        }
    }
    Ok(state)
}

/// Centered crop to the largest size divisible by 16.
pub fn center_crop(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, _, h, w) = image.dims4()?;
    let (ch, cw) = (h / INPUT_MULTIPLE * INPUT_MULTIPLE, w / INPUT_MULTIPLE * INPUT_MULTIPLE);
    if ch == 0 || cw == 0 {
        contract!("image {h}×{w} is smaller than {INPUT_MULTIPLE}×{INPUT_MULTIPLE}");
    }
    crop(image, (h - ch) / 2, (w - cw) / 2, ch, cw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Metrics of the degraded input itself.
    pub input_psnr: f64,
    pub input_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_input_psnr: f64,
    pub mean_input_ssim: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,psnr,ssim,input_psnr,input_ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.index, r.psnr, r.ssim, r.input_psnr, r.input_ssim);
        }
        let _ = writeln!(
            out,
            "mean,{},{},{},{}",
            self.mean_psnr, self.mean_ssim, self.mean_input_psnr, self.mean_input_ssim
        );
        out
    }
}

/// Full-resolution metrics of the clamped restored image against the clean one.
pub fn evaluate(model: &ModelParams<f32>, pairs: &[ImagePair]) -> Result<EvalReport> {
    evaluate_with(pairs, |image| model.restore(image))
}

/// [`evaluate`] with an arbitrary restoration function.
pub fn evaluate_with(pairs: &[ImagePair], mut restore: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<EvalReport> {
    if pairs.is_empty() {
        contract!("evaluation needs at least one pair");
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (index, pair) in pairs.iter().enumerate() {
        let clean = center_crop(&pair.clean)?;
        let moire = center_crop(&pair.moire)?;
        let restored = restore(&moire)?.map(|v| v.clamp(0.0, 1.0));
        rows.push(EvalRow {
            index,
            psnr: psnr(&restored, &clean, 1.0)?,
            ssim: ssim(&restored, &clean)?,
            input_psnr: psnr(&moire, &clean, 1.0)?,
            input_ssim: ssim(&moire, &clean)?,
        });
    }
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport {
        mean_psnr: mean(|r| r.psnr),
        mean_ssim: mean(|r| r.ssim),
        mean_input_psnr: mean(|r| r.input_psnr),
        mean_input_ssim: mean(|r| r.input_ssim),
        rows,
    })
}
