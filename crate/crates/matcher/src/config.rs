//! Matcher, loss and training configuration. Defaults are the full-size
//! settings; tests and the toy corpus use smaller widths.

use serde::{Deserialize, Serialize};

use crate::MatcherError;
use scenmine_core::traj::STATE_DIM;

/// Patching and track-encoder shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    /// Patch length in frames.
    pub patch_len: usize,
    /// Patch stride in frames.
    pub patch_stride: usize,
    /// Width of a patch token before the encoder.
    pub token_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_len: 16,
            patch_stride: 8,
            token_dim: 256,
            layers: 3,
            heads: 8,
            d_model: 256,
        }
    }
}

/// How an alignment matrix is reduced to one evidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum EvidencePooling {
    #[default]
    Max,
    LogSumExp {
        temperature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub patch: PatchConfig,
    /// Hidden width of the encoder feed-forward blocks.
    pub ff_dim: usize,
    /// Width of the incoming text token embeddings.
    pub text_dim: usize,
    /// Hidden width of the text MLP.
    pub text_hidden: usize,
    /// Width of the shared pooled embedding space.
    pub embed_dim: usize,
    /// Width of the query/key space of the alignment matrix.
    pub key_dim: usize,
    pub evidence: EvidencePooling,
    /// Weight of pooled cosine against evidence when ranking.
    pub rank_alpha: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            ff_dim: 512,
            text_dim: 768,
            text_hidden: 768,
            embed_dim: 512,
            key_dim: 64,
            evidence: EvidencePooling::Max,
            rank_alpha: 0.5,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        let p = &self.patch;
        let bad = |m: String| Err(MatcherError::InvalidConfig(m));
        if p.patch_len == 0 || p.patch_stride == 0 || p.patch_stride > p.patch_len {
            return bad(format!(
                "patch stride {} must lie in 1..={}",
                p.patch_stride, p.patch_len
            ));
        }
        if p.token_dim == 0 || p.d_model == 0 || p.heads == 0 || !p.d_model.is_multiple_of(p.heads)
        {
            return bad(format!(
                "d_model {} must be a positive multiple of heads {}",
                p.d_model, p.heads
            ));
        }
        for (name, v) in [
            ("ff_dim", self.ff_dim),
            ("text_dim", self.text_dim),
            ("text_hidden", self.text_hidden),
            ("embed_dim", self.embed_dim),
            ("key_dim", self.key_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if let EvidencePooling::LogSumExp { temperature } = self.evidence {
            if !(temperature > 0.0) {
                return bad("log-sum-exp temperature must be positive".into());
            }
        }
        if !(0.0..=1.0).contains(&self.rank_alpha) {
            return bad(format!("rank_alpha {} must lie in [0, 1]", self.rank_alpha));
        }
        Ok(())
    }

    pub fn patch_input_dim(&self) -> usize {
        self.patch.patch_len * STATE_DIM
    }

    /// A small configuration for gradient checks and unit tests.
    pub fn tiny() -> Self {
        Self {
            patch: PatchConfig {
                patch_len: 4,
                patch_stride: 2,
                token_dim: 6,
                layers: 2,
                heads: 2,
                d_model: 8,
            },
            ff_dim: 12,
            text_dim: 5,
            text_hidden: 7,
            embed_dim: 6,
            key_dim: 4,
            evidence: EvidencePooling::Max,
            rank_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_mil: f64,
    pub lambda_global: f64,
    /// Temperature of the multiple-instance loss.
    pub gamma: f64,
    /// Temperature of the global contrastive loss.
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_mil: 1.0,
            lambda_global: 1.0,
            gamma: 0.1,
            tau: 0.07,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        if !(self.gamma > 0.0 && self.tau > 0.0) {
            return Err(MatcherError::InvalidConfig(
                "gamma and tau must be positive".into(),
            ));
        }
        if !(self.lambda_mil >= 0.0 && self.lambda_global >= 0.0) {
            return Err(MatcherError::InvalidConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// Overrides `epochs` with an exact number of optimizer steps.
    pub max_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            warmup_epochs: 5,
            max_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}
