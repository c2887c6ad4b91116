use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Feature routing between the four parallel pathways in the fusion stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Every pathway receives one quarter from each of the four pathways.
    Full,
    /// Halves exchanged between paired pathways on a round-robin schedule.
    PairToPair,
    /// Independent pathways; concatenated only at the end.
    NoShuffle,
}

impl ShuffleMode {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "full" => Ok(Self::Full),
            "pair" | "pair_to_pair" => Ok(Self::PairToPair),
            "none" | "no_shuffle" => Ok(Self::NoShuffle),
            other => Err(ModelError::Config(format!(
                "unknown shuffle mode {other:?} (expected full, pair or none)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::PairToPair => "pair",
            Self::NoShuffle => "none",
        }
    }
}

/// Which object information the forward pass consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Ground-truth boxes and labels.
    PredCls,
    /// Ground-truth boxes; detector labels are judged at evaluation time.
    SgCls,
    /// Detector boxes and labels only.
    SgDet,
}

impl Protocol {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "predcls" => Ok(Self::PredCls),
            "sgcls" => Ok(Self::SgCls),
            "sgdet" => Ok(Self::SgDet),
            other => Err(ModelError::Config(format!(
                "unknown protocol {other:?} (expected predcls, sgcls or sgdet)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PredCls => "predcls",
            Self::SgCls => "sgcls",
            Self::SgDet => "sgdet",
        }
    }
}

/// All architecture hyperparameters. Parameter shapes are a pure function
/// of this struct plus the catalog's category sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_encoder_layers: usize,
    pub n_heads: usize,
    pub n_shuffle_layers: usize,
    pub shuffle_mode: ShuffleMode,
    pub ffn_hidden: usize,
    pub d_v: usize,
    pub d_e: usize,
    pub n_object_classes: usize,
    pub n_predicates: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_encoder_layers: 6,
            n_heads: 4,
            // Best SGCls/SGDet depth; 6 is the documented PredCls preset.
            n_shuffle_layers: 5,
            shuffle_mode: ShuffleMode::Full,
            ffn_hidden: 256,
            d_v: 64,
            d_e: 50,
            n_object_classes: 30,
            n_predicates: 50,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of the per-object input row: normalized box position (8),
    /// visual feature, label embedding.
    pub fn input_width(&self) -> usize {
        8 + self.d_v + self.d_e
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.ffn_hidden == 0 || self.d_v == 0 || self.d_e == 0 {
            return Err(ModelError::Config("zero-sized dimension".into()));
        }
        if self.n_encoder_layers == 0 {
            return Err(ModelError::Config("n_encoder_layers must be >= 1".into()));
        }
        if self.n_shuffle_layers == 0 {
            return Err(ModelError::Config("n_shuffle_layers must be >= 1".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 4 != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must be divisible by 4 for quarter routing",
                self.d_model
            )));
        }
        if self.n_predicates == 0 || self.n_object_classes == 0 {
            return Err(ModelError::Config("empty label space".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn divisibility_enforced() {
        let bad_heads = ModelConfig {
            d_model: 130,
            n_heads: 4,
            ..Default::default()
        };
        assert!(bad_heads.validate().is_err());
        let bad_quarters = ModelConfig {
            d_model: 126,
            n_heads: 3,
            ..Default::default()
        };
        assert!(bad_quarters.validate().is_err());
        let zero_shuffle = ModelConfig {
            n_shuffle_layers: 0,
            ..Default::default()
        };
        assert!(zero_shuffle.validate().is_err());
    }

    #[test]
    fn mode_and_protocol_parsing() {
        assert_eq!(ShuffleMode::parse("full").unwrap(), ShuffleMode::Full);
        assert_eq!(ShuffleMode::parse("pair").unwrap(), ShuffleMode::PairToPair);
        assert_eq!(ShuffleMode::parse("none").unwrap(), ShuffleMode::NoShuffle);
        assert!(ShuffleMode::parse("spiral").is_err());
        assert_eq!(Protocol::parse("sgdet").unwrap(), Protocol::SgDet);
    }
}
