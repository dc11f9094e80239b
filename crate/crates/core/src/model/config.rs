use serde::{Deserialize, Serialize};

use crate::biror::GnnConfig;
use crate::encoder::EncoderConfig;
use crate::multiror::MtConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Classify the initial relation embeddings directly.
    Base,
    BiOnly,
    MultiOnly,
    /// Sum of the GNN and matrix-transformer outputs.
    Full,
}

impl Variant {
    pub fn uses_gnn(self) -> bool {
        matches!(self, Variant::BiOnly | Variant::Full)
    }

    pub fn uses_transformer(self) -> bool {
        matches!(self, Variant::MultiOnly | Variant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::BiOnly => "bi_only",
            Variant::MultiOnly => "multi_only",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Variant::Base),
            "bi_only" | "bi-only" => Ok(Variant::BiOnly),
            "multi_only" | "multi-only" => Ok(Variant::MultiOnly),
            "full" => Ok(Variant::Full),
            _ => Err(format!("unknown variant {s:?} (base, bi_only, multi_only, full)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    pub mt: MtConfig,
    pub dropout: f64,
    /// Score and train on self-relation cells too.
    pub include_diagonal: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 turns clipping off.
    pub grad_clip: f64,
    pub seed: u64,
    pub two_stage: bool,
    pub ensemble_size: usize,
    /// Share of training documents held out for checkpoint selection.
    pub val_fraction: f64,
    pub min_token_count: usize,
    /// Threads computing per-document gradients within a batch.
    pub workers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            encoder: EncoderConfig::default(),
            gnn: GnnConfig::default(),
            mt: MtConfig::default(),
            dropout: 0.1,
            include_diagonal: false,
            epochs: 30,
            batch_size: 8,
            peak_lr: 1e-4,
            warmup: 0.1,
            weight_decay: 0.0,
            grad_clip: 1.0,
            seed: 0,
            two_stage: false,
            ensemble_size: 1,
            val_fraction: 0.1,
            min_token_count: 1,
            workers: 1,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for CPU experiments: d = 32, feed-forward width 64.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.encoder.embed_dim = 32;
        cfg.gnn.heads = 4;
        cfg.gnn.ffn_hidden = 64;
        cfg.mt.heads = 4;
        cfg.mt.ffn_hidden = 64;
        cfg
    }

    pub fn d(&self) -> usize {
        self.encoder.embed_dim
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = self.d();
        if d == 0 {
            return Err("embed_dim must be positive".into());
        }
        if self.variant.uses_gnn() && (self.gnn.heads == 0 || !d.is_multiple_of(self.gnn.heads)) {
            return Err(format!("embed_dim {d} is not divisible by {} GNN heads", self.gnn.heads));
        }
        if self.variant.uses_transformer() && (self.mt.heads == 0 || !d.is_multiple_of(self.mt.heads)) {
            return Err(format!("embed_dim {d} is not divisible by {} transformer heads", self.mt.heads));
        }
        if self.batch_size == 0 || self.ensemble_size == 0 {
            return Err("batch_size and ensemble_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(format!("warmup {} outside [0, 1)", self.warmup));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        if self.peak_lr <= 0.0 || self.peak_lr.is_nan() {
            return Err("peak_lr must be positive".into());
        }
        Ok(())
    }
}
