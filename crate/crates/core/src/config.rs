//! Hyperparameter configuration shared by the model, trainer and CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign convention for the topic similarity loss.
///
/// `Corrected` rewards duplicate pairs for high cosine similarity
/// (loss `-S_C`) and penalizes gated non-duplicates for it (`+S_C`).
/// `Literal` flips both signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimSign {
    #[default]
    Corrected,
    Literal,
}

/// How conditional attention scores are computed.
///
/// `PerDim` runs an independent softmax over positions for every
/// attention dimension. `ScalarDot` scores each position with a single
/// dot product and shares one softmax across dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CondAttnMode {
    #[default]
    PerDim,
    ScalarDot,
}

/// All model and training hyperparameters.
///
/// Serialized as a flat JSON object; the short field names (`d`, `g`,
/// `k`, `a`, `lr`, `batch`) are the external config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    /// Word embedding width.
    #[serde(rename = "d")]
    pub embed_dim: usize,
    /// GRU hidden width per direction.
    #[serde(rename = "g")]
    pub hidden_dim: usize,
    /// Leading dimensions per direction reserved for topic information.
    #[serde(rename = "k")]
    pub topic_dims: usize,
    /// Conditional attention width.
    #[serde(rename = "a")]
    pub attn_dim: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    #[serde(rename = "batch")]
    pub batch_size: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub target_dup_fraction: f64,
    /// Words below this frequency map to the unknown token.
    pub min_freq: usize,
    pub sim_sign: SimSign,
    pub cond_attn: CondAttnMode,
    /// Replace the memory vector's raw sum with a mean (ablation knob).
    pub normalize_memory: bool,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            embed_dim: 300,
            hidden_dim: 150,
            topic_dims: 20,
            attn_dim: 300,
            mlp_hidden: 100,
            dropout: 0.2,
            learning_rate: 0.003,
            batch_size: 128,
            lambda: 0.5,
            epochs: 30,
            patience: 5,
            seeds: vec![1, 2, 3, 4, 5],
            target_dup_fraction: 0.14,
            min_freq: 1,
            sim_sign: SimSign::Corrected,
            cond_attn: CondAttnMode::PerDim,
            normalize_memory: false,
            grad_clip: None,
        }
    }
}

impl HyperConfig {
    /// A small configuration for fast tests and gradient checks.
    pub fn tiny() -> Self {
        HyperConfig {
            embed_dim: 8,
            hidden_dim: 6,
            topic_dims: 2,
            attn_dim: 12,
            mlp_hidden: 10,
            dropout: 0.0,
            batch_size: 2,
            epochs: 3,
            patience: 2,
            seeds: vec![1],
            ..HyperConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.hidden_dim == 0
            || self.topic_dims == 0
            || self.attn_dim == 0
            || self.mlp_hidden == 0
            || self.batch_size == 0
        {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if self.topic_dims > self.hidden_dim {
            return Err(Error::Config(format!(
                "topic dims k={} must not exceed hidden dims g={}",
                self.topic_dims, self.hidden_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0 < self.target_dup_fraction && self.target_dup_fraction < 1.0) {
            return Err(Error::Config(format!(
                "target_dup_fraction must be in (0, 1), got {}",
                self.target_dup_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: HyperConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        HyperConfig::default().validate().unwrap();
        HyperConfig::tiny().validate().unwrap();
    }

    #[test]
    fn short_names_round_trip() {
        let json = r#"{"d": 16, "g": 8, "k": 3, "lr": 0.01, "batch": 4}"#;
        let c: HyperConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.embed_dim, 16);
        assert_eq!(c.hidden_dim, 8);
        assert_eq!(c.topic_dims, 3);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.batch_size, 4);
        // untouched fields keep defaults
        assert_eq!(c.mlp_hidden, 100);
    }

    #[test]
    fn lambda_out_of_range_rejected() {
        let c = HyperConfig {
            lambda: 1.5,
            ..HyperConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn k_greater_than_g_rejected() {
        let c = HyperConfig {
            topic_dims: 200,
            hidden_dim: 150,
            ..HyperConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let json = r#"{"d": 16, "unknown_knob": 3}"#;
        assert!(serde_json::from_str::<HyperConfig>(json).is_err());
    }
}
