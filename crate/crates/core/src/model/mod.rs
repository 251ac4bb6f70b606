//! The channel-aware attention recommender.
//!
//! Each user owns three embeddings: one shared across channels and one per
//! channel. For an item `v` in channel `c`, that channel's attention block
//! weighs the shared embedding against the channel's own embedding, and two
//! linear heads turn the weighted embeddings (each multiplied element-wise
//! with the item embedding) into a purchase probability. An auxiliary
//! classifier predicts, from the summed user embedding and the item, which
//! channels the pair occurs in.
//!
//! Training minimizes
//!
//! ```text
//! L = L_on + L_off + lambda_cls * L_cls + lambda_attn * L_attn
//! ```
//!
//! where `L_c` and `L_cls` are binary cross-entropies and `L_attn` pulls the
//! attention towards the specific embedding for channel-exclusive purchases
//! and towards the shared embedding for purchases seen in both channels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod backward;
pub mod checkpoint;
mod forward;
mod params;
mod scorer;

pub use backward::{backward, backward_into};
pub use forward::{
    attention_scores, batch_losses, classify_interaction, predict_preference, preference_logit,
    AttentionScores, ChannelTrace, ClassifierTrace, ExampleTrace, ForwardCache, BCE_EPS,
};
pub use params::{AttentionBlock, Classifier, Gradients, Linear, Parameters};
pub use scorer::ModelScorer;

/// Model variants used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Every component.
    #[default]
    Full,
    /// No interaction classifier.
    NoClassification,
    /// Attention replaced by a constant 0.5 on both embeddings.
    NoAttention,
    /// Trainable attention without the attention loss.
    NoAttentionLoss,
    /// One head per channel applied to the attention-weighted mixture of the
    /// shared and specific embeddings.
    NoSeparation,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoClassification,
        Variant::NoAttention,
        Variant::NoAttentionLoss,
        Variant::NoSeparation,
    ];

    pub fn uses_classifier(self) -> bool {
        self != Variant::NoClassification
    }

    pub fn has_attention(self) -> bool {
        self != Variant::NoAttention
    }

    pub fn uses_attention_loss(self) -> bool {
        matches!(self, Variant::Full | Variant::NoClassification)
    }

    /// Whether the shared and specific paths have their own heads.
    pub fn separated(self) -> bool {
        self != Variant::NoSeparation
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoClassification => "no-classification",
            Variant::NoAttention => "no-attention",
            Variant::NoAttentionLoss => "no-attention-loss",
            Variant::NoSeparation => "no-separation",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Architecture and loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Attention projection dimension.
    pub d_prime: usize,
    /// Classifier hidden width.
    pub clf_hidden: usize,
    pub lambda_cls: f64,
    pub lambda_attn: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            d_prime: 64,
            clf_hidden: 64,
            lambda_cls: 0.1,
            lambda_attn: 0.1,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_prime == 0 || self.clf_hidden == 0 {
            return Err(Error::Config("dimensions must be at least 1".into()));
        }
        for (name, w) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_attn", self.lambda_attn),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-batch loss terms. Terms a variant drops are reported as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_on: f64,
    pub l_off: f64,
    pub l_cls: f64,
    pub l_attn: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, cfg: &ModelConfig) -> f64 {
        self.l_on + self.l_off + cfg.lambda_cls * self.l_cls + cfg.lambda_attn * self.l_attn
    }
}
