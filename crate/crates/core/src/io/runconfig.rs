//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Unknown or repeated keys are errors.

use std::path::PathBuf;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::loss::{ExtractorWeights, LossConfig};
use crate::model::{ModelConfig, Variant};
use crate::synth::MoireParams;
use crate::train::TrainConfig;

/// Splits config text into ordered pairs.
pub fn parse_key_values(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)));
        };
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub width_divisor: usize,
    pub model_seed: u64,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Fixed degradation for `synth`; `None` samples per pair.
    pub moire: Option<MoireParams>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Standard,
            width_divisor: 1,
            model_seed: 0,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            moire: None,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn list<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts = value.split(',').map(|p| num::<f64>(key, p.trim())).collect::<Result<Vec<_>>>()?;
    parts.try_into().map_err(|_| Error::Config(format!("{key} needs {N} comma-separated values, got {value:?}")))
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// `key = value` lines describing one parameter set, keys without prefix.
pub(crate) fn moire_entries(p: &MoireParams) -> Vec<(&'static str, String)> {
    vec![
        ("amplitude", join(&p.amplitude)),
        ("freq", join(&p.freq)),
        ("phase", join(&p.phase)),
        ("gamma", p.gamma.to_string()),
        ("gains", join(&p.gains)),
        ("tone", p.tone.to_string()),
        ("seed", p.seed.to_string()),
    ]
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.variant).reduced(self.width_divisor)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one override; the key must be known.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "model.variant" => self.variant = value.parse()?,
            "model.width_divisor" => {
                self.width_divisor = num(key, value)?;
                if self.width_divisor == 0 {
                    return Err(Error::Config("model.width_divisor must be at least 1".into()));
                }
            }
            "model.seed" => self.model_seed = num(key, value)?,
            "loss.lambda" => self.loss.lambda = num(key, value)?,
            "loss.perceptual_block" => self.loss.perceptual_block = num(key, value)?,
            "loss.extractor_seed" => self.loss.extractor = ExtractorWeights::Seeded(num(key, value)?),
            "loss.extractor_weights" => self.loss.extractor = ExtractorWeights::File(PathBuf::from(value)),
            "train.lr_max" => t.lr_max = num(key, value)?,
            "train.lr_min" => t.lr_min = num(key, value)?,
            "train.cycle_epochs" => t.cycle_epochs = num(key, value)?,
            "train.epochs" => t.epochs = num(key, value)?,
            "train.batch" => t.batch = num(key, value)?,
            "train.patch" => t.patch = num(key, value)?,
            "train.beta1" => t.beta1 = num(key, value)?,
            "train.beta2" => t.beta2 = num(key, value)?,
            "train.adam_eps" => t.adam_eps = num(key, value)?,
            "train.seed" => t.seed = num(key, value)?,
            _ => match key.strip_prefix("moire.") {
                Some(field) => {
                    let p = self.moire.get_or_insert_with(MoireParams::identity);
                    match field {
                        "amplitude" => p.amplitude = list(key, value)?,
                        "freq" => p.freq = list(key, value)?,
                        "phase" => p.phase = list(key, value)?,
                        "gamma" => p.gamma = num(key, value)?,
                        "gains" => p.gains = list(key, value)?,
                        "tone" => p.tone = num(key, value)?,
                        "seed" => p.seed = num(key, value)?,
                        _ => return Err(Error::Config(format!("unknown config key {key}"))),
                    }
                }
                None => return Err(Error::Config(format!("unknown config key {key}"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if let Some(p) = &self.moire {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Text that [`RunConfig::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let extractor = match &self.loss.extractor {
            ExtractorWeights::Seeded(s) => format!("loss.extractor_seed = {s}"),
            ExtractorWeights::File(p) => format!("loss.extractor_weights = {}", p.display()),
        };
        let mut lines = vec![
            format!("model.variant = {}", self.variant.as_str()),
            format!("model.width_divisor = {}", self.width_divisor),
            format!("model.seed = {}", self.model_seed),
            format!("loss.lambda = {}", self.loss.lambda),
            format!("loss.perceptual_block = {}", self.loss.perceptual_block),
            extractor,
            format!("train.lr_max = {}", t.lr_max),
            format!("train.lr_min = {}", t.lr_min),
            format!("train.cycle_epochs = {}", t.cycle_epochs),
            format!("train.epochs = {}", t.epochs),
            format!("train.batch = {}", t.batch),
            format!("train.patch = {}", t.patch),
            format!("train.beta1 = {}", t.beta1),
            format!("train.beta2 = {}", t.beta2),
            format!("train.adam_eps = {}", t.adam_eps),
            format!("train.seed = {}", t.seed),
        ];
        if let Some(p) = &self.moire {
            lines.extend(moire_entries(p).into_iter().map(|(k, v)| format!("moire.{k} = {v}")));
        }
        lines.join("\n") + "\n"
    }
}
