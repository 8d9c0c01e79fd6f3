use crate::error::{Error, Result};

/// Which ESDNet family member to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One SAM per level.
    Standard,
    /// Two stacked SAMs per level.
    Large,
    /// One SAM per level whose three pyramid branches share parameters.
    WeightShared,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Large => "large",
            Variant::WeightShared => "weight_shared",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "large" => Ok(Variant::Large),
            "weight_shared" | "ws" => Ok(Variant::WeightShared),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

/// Densely connected dilated convolutions followed by a 1×1 fusion back to `in_channels`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseBlockConfig {
    pub in_channels: usize,
    pub growth: usize,
    pub dilations: Vec<usize>,
}

impl DenseBlockConfig {
    /// Dilation schedule of the residual block at every level.
    pub const DRDB_DILATIONS: [usize; 3] = [1, 2, 1];
    /// Dilation schedule of each SAM pyramid branch.
    pub const SAM_DILATIONS: [usize; 5] = [1, 2, 3, 2, 1];

    pub fn num_layers(&self) -> usize {
        self.dilations.len()
    }

    /// Input channels of dense layer `l` (0-based).
    pub fn layer_in(&self, l: usize) -> usize {
        self.in_channels + l * self.growth
    }

    /// Channels entering the 1×1 fusion.
    pub fn fused_in(&self) -> usize {
        self.layer_in(self.num_layers())
    }
}

/// Architecture hyperparameters.
///
/// The defaults reproduce the published layer tables: encoder widths
/// 48/96/192, decoder width 64, growth 32, MLP squeeze 4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder_channels: [usize; 3],
    pub decoder_channels: usize,
    pub growth: usize,
    pub mlp_squeeze: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self { variant, encoder_channels: [48, 96, 192], decoder_channels: 64, growth: 32, mlp_squeeze: 4 }
    }

    pub fn standard() -> Self {
        Self::new(Variant::Standard)
    }

    pub fn large() -> Self {
        Self::new(Variant::Large)
    }

    pub fn weight_shared() -> Self {
        Self::new(Variant::WeightShared)
    }

    /// Same topology with every channel width divided by `divisor`.
    pub fn reduced(mut self, divisor: usize) -> Self {
        let div = |c: usize| (c / divisor.max(1)).max(1);
        self.encoder_channels = self.encoder_channels.map(div);
        self.decoder_channels = div(self.decoder_channels);
        self.growth = div(self.growth);
        self
    }

    pub fn sam_per_level(&self) -> usize {
        match self.variant {
            Variant::Large => 2,
            Variant::Standard | Variant::WeightShared => 1,
        }
    }

    pub fn shares_branches(&self) -> bool {
        self.variant == Variant::WeightShared
    }

    pub fn drdb(&self, in_channels: usize) -> DenseBlockConfig {
        DenseBlockConfig { in_channels, growth: self.growth, dilations: DenseBlockConfig::DRDB_DILATIONS.to_vec() }
    }

    pub fn sam_branch(&self, in_channels: usize) -> DenseBlockConfig {
        DenseBlockConfig { in_channels, growth: self.growth, dilations: DenseBlockConfig::SAM_DILATIONS.to_vec() }
    }

    /// Hidden width of the fusion MLP for a SAM at width `c`.
    pub fn mlp_hidden(&self, c: usize) -> usize {
        (3 * c / self.mlp_squeeze.max(1)).max(1)
    }

    /// Channels entering each decoder level's first convolution (levels 3, 2, 1).
    pub fn decoder_inputs(&self) -> [usize; 3] {
        let [e1, e2, e3] = self.encoder_channels;
        let d = self.decoder_channels;
        [e3, d + e2, d + e1]
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self.encoder_channels.iter().chain([&self.decoder_channels, &self.growth, &self.mlp_squeeze]);
        if widths.into_iter().any(|&c| c == 0) {
            return Err(Error::Config(format!("channel widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}
