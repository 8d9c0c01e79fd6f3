//! Named, ordered parameter sets and their deterministic initialization.
//!
//! Naming convention (stable; used by the weights file):
//!
//! ```text
//! head.conv.{weight,bias}                     5×5 conv after pixel-shuffle downsampling
//! enc{2,3}.down.{weight,bias}                 stride-2 3×3 conv entering the level
//! dec{3,2,1}.conv.{weight,bias}               3×3 conv entering a decoder level
//! dec{3,2,1}.out.{weight,bias}                3×3 conv of the level's output layer
//! <level>.drdb.conv{1..3}.{weight,bias}       dilated dense layers
//! <level>.drdb.fuse.{weight,bias}             1×1 fusion
//! <level>.sam{k}.branch{0..2}.conv{1..5}.*    SAM pyramid branches
//! <level>.sam{k}.branch.conv{1..5}.*          (weight-shared variant: one branch)
//! <level>.sam{k}.branch{0..2}.fuse.*
//! <level>.sam{k}.mlp.fc{1..3}.{weight,bias}   fusion-weight MLP
//! ```
//!
//! `<level>` is one of `enc1 enc2 enc3 dec3 dec2 dec1`; `k` counts from 1.

use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::{Real, Tensor};

use super::config::{DenseBlockConfig, ModelConfig};

pub const ENCODER_LEVELS: [&str; 3] = ["enc1", "enc2", "enc3"];
pub const DECODER_LEVELS: [&str; 3] = ["dec3", "dec2", "dec1"];

/// Shape and initialization fan-in of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `Some(fan_in)` for weights, `None` for zero-initialized biases.
    pub fan_in: Option<usize>,
}

pub fn sam_prefix(level: &str, k: usize) -> String {
    format!("{level}.sam{}", k + 1)
}

/// Parameter prefix of pyramid branch `b` in the SAM at `sam`.
pub fn branch_prefix(config: &ModelConfig, sam: &str, b: usize) -> String {
    if config.shares_branches() {
        format!("{sam}.branch")
    } else {
        format!("{sam}.branch{b}")
    }
}

/// Builder for the ordered parameter layout.
#[derive(Default)]
pub struct Layout {
    specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }

    pub fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.specs.push(ParamSpec { name: format!("{prefix}.weight"), shape: vec![cout, cin, k, k], fan_in: Some(cin * k * k) });
        self.specs.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![cout], fan_in: None });
    }

    pub fn affine(&mut self, prefix: &str, cin: usize, cout: usize) {
        self.specs.push(ParamSpec { name: format!("{prefix}.weight"), shape: vec![cout, cin], fan_in: Some(cin) });
        self.specs.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![cout], fan_in: None });
    }

    pub fn dense(&mut self, prefix: &str, block: &DenseBlockConfig) {
        for l in 0..block.num_layers() {
            self.conv(&format!("{prefix}.conv{}", l + 1), block.layer_in(l), block.growth, 3);
        }
        self.conv(&format!("{prefix}.fuse"), block.fused_in(), block.in_channels, 1);
    }

    pub fn sam(&mut self, prefix: &str, channels: usize, config: &ModelConfig) {
        let branch = config.sam_branch(channels);
        let branches = if config.shares_branches() { 1 } else { 3 };
        for b in 0..branches {
            self.dense(&branch_prefix(config, prefix, b), &branch);
        }
        let hidden = config.mlp_hidden(channels);
        self.affine(&format!("{prefix}.mlp.fc1"), 3 * channels, hidden);
        self.affine(&format!("{prefix}.mlp.fc2"), hidden, hidden);
        self.affine(&format!("{prefix}.mlp.fc3"), hidden, 3 * channels);
    }

    fn level_blocks(&mut self, level: &str, channels: usize, config: &ModelConfig) {
        self.dense(&format!("{level}.drdb"), &config.drdb(channels));
        for k in 0..config.sam_per_level() {
            self.sam(&sam_prefix(level, k), channels, config);
        }
    }
}

/// Every parameter of the network described by `config`, in build order.
pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut l = Layout::default();
    let enc = config.encoder_channels;
    l.conv("head.conv", 12, enc[0], 5);
    for (i, level) in ENCODER_LEVELS.iter().enumerate() {
        if i > 0 {
            l.conv(&format!("{level}.down"), enc[i - 1], enc[i], 3);
        }
        l.level_blocks(level, enc[i], config);
    }
    let dec = config.decoder_channels;
    for (level, cin) in DECODER_LEVELS.iter().zip(config.decoder_inputs()) {
        l.conv(&format!("{level}.conv"), cin, dec, 3);
        l.level_blocks(level, dec, config);
        l.conv(&format!("{level}.out"), dec, 12, 3);
    }
    l.into_specs()
}

/// Kaiming-uniform fan-in weights (negative slope √5, bound `1/√fan_in`) and
/// zero biases, drawn in layout order.
pub fn init_tensors(specs: &[ParamSpec], seed: u64) -> IndexMap<String, Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|spec| {
            let t = match spec.fan_in {
                Some(fan_in) => {
                    let bound = (1.0 / fan_in as f64).sqrt() as f32;
                    Tensor::from_fn(&spec.shape, |_| rng.gen_range(-bound..bound))
                }
                None => Tensor::zeros(&spec.shape),
            };
            (spec.name.clone(), t)
        })
        .collect()
}

/// The learnable weights of a built network plus the config that produced them.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Real = f32> {
    config: ModelConfig,
    tensors: IndexMap<String, Arc<Tensor<T>>>,
}

impl ModelParams<f32> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tensors = init_tensors(&layout(&config), seed);
        Ok(Self { config, tensors: tensors.into_iter().map(|(k, v)| (k, Arc::new(v))).collect() })
    }
}

impl<T: Real> ModelParams<T> {
    /// Assembles parameters from named tensors, which must match `layout(config)` exactly.
    pub fn from_tensors(config: ModelConfig, mut tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        let mut ordered = IndexMap::new();
        for spec in layout(&config) {
            let Some(t) = tensors.shift_remove(&spec.name) else {
                return Err(Error::Weights(format!("missing parameter {}", spec.name)));
            };
            if t.shape() != spec.shape {
                return Err(Error::Weights(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            ordered.insert(spec.name, Arc::new(t));
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Weights(format!("unexpected parameter {extra}")));
        }
        Ok(Self { config, tensors: ordered })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name).map(|t| t.as_ref())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name).map(Arc::make_mut)
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let Some(slot) = self.tensors.get_mut(name) else { contract!("no parameter named {name}") };
        if slot.shape() != value.shape() {
            contract!("parameter {name} has shape {:?}, got {:?}", slot.shape(), value.shape());
        }
        *slot = Arc::new(value);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    /// Mutable access to every parameter (copy-on-write if shared with a tape).
    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), Arc::make_mut(v)))
    }

    /// Total number of scalar parameters; shared tensors are stored (and counted) once.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Arc::new(v.cast()))).collect(),
        }
    }

    /// Registers every parameter as a named leaf of `tape`.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<T> {
        Bound::new(tape, self.tensors.iter().map(|(k, v)| (k.as_str(), v.clone())), true)
    }
}

/// Parameters attached to a tape for one forward pass.
pub struct Bound<T: Real = f32> {
    vars: IndexMap<String, Var<T>>,
}

impl<T: Real> Bound<T> {
    /// Binds tensors as trainable leaves, or as constants when `trainable` is false.
    pub fn new<'a>(tape: &Tape<T>, tensors: impl Iterator<Item = (&'a str, Arc<Tensor<T>>)>, trainable: bool) -> Self {
        let vars = tensors
            .map(|(name, t)| {
                let var = if trainable { tape.param(name, t) } else { tape.constant_shared(t) };
                (name.to_owned(), var)
            })
            .collect();
        Self { vars }
    }

    /// Binds already-created vars, for example leaves of a gradient check.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<T>)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        match self.vars.get(name) {
            Some(v) => Ok(v),
            None => contract!("parameter {name} is not bound"),
        }
    }

    /// `(weight, bias)` of the layer at `prefix`.
    pub fn layer(&self, prefix: &str) -> Result<(&Var<T>, &Var<T>)> {
        Ok((self.get(&format!("{prefix}.weight"))?, self.get(&format!("{prefix}.bias"))?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_names_are_unique_and_ordered() {
        for config in [ModelConfig::standard(), ModelConfig::large(), ModelConfig::weight_shared()] {
            let specs = layout(&config);
            let mut names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
            assert_eq!(names[0], "head.conv.weight");
            assert_eq!(names.last().copied(), Some("dec1.out.bias"));
            let n = names.len();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), n);
        }
    }

    #[test]
    fn weight_shared_has_single_branch_set() {
        let specs = layout(&ModelConfig::weight_shared());
        assert!(specs.iter().any(|s| s.name == "enc1.sam1.branch.conv1.weight"));
        assert!(!specs.iter().any(|s| s.name.contains("branch0")));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let config = ModelConfig::standard().reduced(8);
        let a = ModelParams::build(config.clone(), 3).unwrap();
        let b = ModelParams::build(config.clone(), 3).unwrap();
        let c = ModelParams::build(config, 4).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x == y));
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x != y));
        let w = a.get("head.conv.weight").unwrap();
        let bound = (1.0f32 / (12.0 * 25.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("head.conv.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn from_tensors_names_problems() {
        let config = ModelConfig::standard().reduced(8);
        let mut tensors = init_tensors(&layout(&config), 0);
        tensors.shift_remove("dec1.out.bias");
        let err = ModelParams::from_tensors(config, tensors).unwrap_err();
        assert!(err.to_string().contains("dec1.out.bias"));
    }
}
