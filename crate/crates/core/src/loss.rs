//! Deep-supervised training objective: per-level L1 plus a perceptual term
//! measured in a frozen VGG16-style feature space.

use std::path::PathBuf;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::model::{init_tensors, Bound, Layout, ParamSpec, Predictions};
use crate::tensor::{Real, Tensor};

/// Convolutions per VGG16 block and their output widths.
pub const VGG16_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

/// Where the perceptual extractor's weights come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractorWeights {
    /// Frozen random weights drawn from a seed.
    Seeded(u64),
    /// A weights file holding `vgg.conv{b}_{i}.{weight,bias}` entries.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the perceptual term.
    pub lambda: f64,
    /// Which VGG16 block's last ReLU supplies the features (1..=5).
    pub perceptual_block: usize,
    pub extractor: ExtractorWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0, perceptual_block: 3, extractor: ExtractorWeights::Seeded(0x5eed) }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(1..=5).contains(&self.perceptual_block) {
            return Err(Error::Config(format!("perceptual_block must be in 1..=5, got {}", self.perceptual_block)));
        }
        Ok(())
    }
}

/// VGG16 convolution stack truncated after the last ReLU of `block`.
///
/// The extractor is never registered with a tape as trainable, so its
/// parameters cannot receive gradients or optimizer updates.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T: Real = f32> {
    block: usize,
    tensors: IndexMap<String, Arc<Tensor<T>>>,
}

/// Parameter layout of the truncated extractor.
pub fn extractor_layout(block: usize) -> Vec<ParamSpec> {
    let mut l = Layout::default();
    let mut cin = 3;
    for (b, &(convs, width)) in VGG16_BLOCKS.iter().enumerate().take(block) {
        for i in 0..convs {
            l.conv(&format!("vgg.conv{}_{}", b + 1, i + 1), cin, width, 3);
            cin = width;
        }
    }
    l.into_specs()
}

impl FeatureExtractor<f32> {
    pub fn seeded(block: usize, seed: u64) -> Result<Self> {
        check_block(block)?;
        let tensors = init_tensors(&extractor_layout(block), seed);
        Ok(Self { block, tensors: tensors.into_iter().map(|(k, v)| (k, Arc::new(v))).collect() })
    }

    pub fn from_config(config: &LossConfig) -> Result<Self> {
        config.validate()?;
        match &config.extractor {
            ExtractorWeights::Seeded(seed) => Self::seeded(config.perceptual_block, *seed),
            ExtractorWeights::File(path) => {
                let tensors = crate::io::read_weights(path)?;
                Self::from_tensors(config.perceptual_block, tensors)
            }
        }
    }
}

fn check_block(block: usize) -> Result<()> {
    if !(1..=5).contains(&block) {
        contract!("perceptual block must be in 1..=5, got {block}");
    }
    Ok(())
}

impl<T: Real> FeatureExtractor<T> {
    /// Takes the layers needed for `block` from `tensors`; deeper layers are ignored.
    pub fn from_tensors(block: usize, mut tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        check_block(block)?;
        let mut out = IndexMap::new();
        for spec in extractor_layout(block) {
            let t = tensors
                .shift_remove(&spec.name)
                .ok_or_else(|| Error::Weights(format!("missing extractor parameter {}", spec.name)))?;
            if t.shape() != spec.shape {
                return Err(Error::Weights(format!(
                    "extractor parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            out.insert(spec.name, Arc::new(t));
        }
        Ok(Self { block, tensors: out })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            block: self.block,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Arc::new(v.cast()))).collect(),
        }
    }

    /// Frozen bindings for one tape.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<T> {
        Bound::new(tape, self.tensors.iter().map(|(k, v)| (k.as_str(), v.clone())), false)
    }

    /// Features of `x` (`N×3×H×W`, values in [0, 1]).
    pub fn features(&self, tape: &Tape<T>, params: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut h = x.clone();
        for (b, &(convs, _)) in VGG16_BLOCKS.iter().enumerate().take(self.block) {
            if b > 0 {
                h = tape.max_pool2(&h)?;
            }
            for i in 0..convs {
                let (w, bias) = params.layer(&format!("vgg.conv{}_{}", b + 1, i + 1))?;
                h = tape.conv2d(&h, w, Some(bias), ConvGeom::same(3, 1))?;
                h = tape.relu(&h)?;
            }
        }
        Ok(h)
    }
}

/// Ground-truth pyramid: the image and its bilinear ↓2 and ↓4 versions.
pub fn downsample_gt<T: Real>(gt: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
    let (_, _, h, w) = gt.dims4()?;
    if h % 4 != 0 || w % 4 != 0 {
        contract!("ground truth {h}×{w} must be divisible by 4");
    }
    Ok([gt.clone(), kernels::resize_bilinear(gt, h / 2, w / 2)?, kernels::resize_bilinear(gt, h / 4, w / 4)?])
}

/// The scalar objective plus its two components (for logging).
pub struct LossTerms<T: Real> {
    pub total: Var<T>,
    pub l1: T,
    pub perceptual: T,
}

/// `Σ_levels mean|Î − I| + λ · mean|φ(Î) − φ(I)|`.
///
/// `targets` are constants, so gradients reach the predictions only.
pub fn total_loss<T: Real>(
    tape: &Tape<T>,
    preds: &Predictions<T>,
    targets: &[Tensor<T>; 3],
    config: &LossConfig,
    extractor: &FeatureExtractor<T>,
) -> Result<LossTerms<T>> {
    config.validate()?;
    for (p, t) in preds.levels().iter().zip(targets) {
        if p.shape() != t.shape() {
            contract!("prediction shape {:?} does not match target {:?}", p.shape(), t.shape());
        }
    }
    let frozen = (config.lambda > 0.0).then(|| extractor.bind(tape));
    let lambda = T::lit(config.lambda);
    let mut total: Option<Var<T>> = None;
    let (mut l1_sum, mut perc_sum) = (T::zero(), T::zero());
    let accumulate = |term: Var<T>, total: &mut Option<Var<T>>| -> Result<()> {
        *total = Some(match total.take() {
            None => term,
            Some(acc) => tape.add(&acc, &term)?,
        });
        Ok(())
    };
    for (pred, target) in preds.levels().into_iter().zip(targets) {
        let target = tape.constant(target.clone());
        let l1 = tape.l1_diff(pred, &target)?;
        l1_sum += l1.value().data()[0];
        accumulate(l1, &mut total)?;
        if let Some(params) = &frozen {
            let fp = extractor.features(tape, params, pred)?;
            let ft = extractor.features(tape, params, &target)?;
            let perc = tape.l1_diff(&fp, &ft)?;
            perc_sum += perc.value().data()[0];
            accumulate(tape.scale(&perc, lambda)?, &mut total)?;
        }
    }
    Ok(LossTerms { total: total.expect("three levels"), l1: l1_sum, perceptual: perc_sum })
}
