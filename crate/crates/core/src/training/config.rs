use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, SimilarityKind};
use crate::error::{invalid, Result};
use crate::eval::RankMetric;
use crate::graph::GnnConfig;
use crate::lexical::Bm25Params;
use crate::tensor::{AdamW, LrSchedule, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Nll,
    Triplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub temperature: f64,
    pub margin: f64,
    pub similarity: SimilarityKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Nll,
            temperature: 0.01,
            margin: 1.0,
            similarity: SimilarityKind::Cosine,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.margin > 0.0) {
            return Err(invalid(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

/// One training run's hyperparameters, keyed like the published table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub peak_learning_rate: f64,
    pub learning_rate_decay: ScheduleKind,
    pub warmup_ratio: f64,
    pub adamw_epsilon: f64,
    pub adamw_beta1: f64,
    pub adamw_beta2: f64,
    pub gradient_clipping: Option<f64>,
    pub loss: LossConfig,
    pub seed: u64,
    /// Static BM25 negatives mined per query.
    pub bm25_negatives: usize,
    /// Add other in-batch positives as negatives.
    pub in_batch_negatives: bool,
    /// Dev metric used to pick the best epoch, e.g. `R@200`, `mAP`, `mRP`.
    pub selection_metric: String,
    /// Recall cutoffs reported on dev after each epoch.
    pub dev_cutoffs: Vec<usize>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self::dsr_published()
    }
}

impl TrainRunConfig {
    /// Bi-encoder settings as published for the full-size model.
    pub fn dsr_published() -> Self {
        TrainRunConfig {
            batch_size: 24,
            weight_decay: 0.01,
            max_epochs: 15,
            peak_learning_rate: 2e-5,
            learning_rate_decay: ScheduleKind::LinearWarmupDecay,
            warmup_ratio: 0.05,
            adamw_epsilon: 1e-7,
            adamw_beta1: 0.9,
            adamw_beta2: 0.999,
            gradient_clipping: Some(1.0),
            loss: LossConfig::default(),
            seed: 42,
            bm25_negatives: 4,
            in_batch_negatives: true,
            selection_metric: "R@200".into(),
            dev_cutoffs: vec![10, 100, 200, 500],
        }
    }

    /// Graph encoder settings as published for the full-size model.
    pub fn lge_published() -> Self {
        TrainRunConfig {
            batch_size: 512,
            weight_decay: 0.1,
            max_epochs: 10,
            peak_learning_rate: 2e-4,
            learning_rate_decay: ScheduleKind::Constant,
            warmup_ratio: 0.0,
            ..Self::dsr_published()
        }
    }

    /// Bi-encoder settings for the d=64 hashed encoder trained from scratch:
    /// the published schedule with a learning rate suited to random
    /// initialization.
    pub fn dsr_desk() -> Self {
        TrainRunConfig {
            peak_learning_rate: 1e-3,
            ..Self::dsr_published()
        }
    }

    /// Graph encoder settings at desk scale. The batch covers the whole
    /// training set, so more epochs stand in for the optimizer steps a
    /// large training set would provide.
    pub fn lge_desk() -> Self {
        TrainRunConfig {
            max_epochs: 100,
            peak_learning_rate: 2e-3,
            ..Self::lge_published()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if !(self.peak_learning_rate >= 0.0) || !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(invalid("learning rate must be non-negative and warmup ratio in [0, 1]"));
        }
        self.loss.validate()?;
        self.selection()?;
        Ok(())
    }

    pub fn selection(&self) -> Result<RankMetric> {
        self.selection_metric.parse()
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            beta1: self.adamw_beta1,
            beta2: self.adamw_beta2,
            eps: self.adamw_epsilon,
            weight_decay: self.weight_decay,
            clip_norm: self.gradient_clipping,
        }
    }

    pub fn schedule(&self, total_steps: usize) -> LrSchedule {
        match self.learning_rate_decay {
            ScheduleKind::Constant => LrSchedule::constant(self.peak_learning_rate),
            ScheduleKind::LinearWarmupDecay => {
                LrSchedule::linear(self.peak_learning_rate, self.warmup_ratio, total_steps)
            }
        }
    }
}

/// Everything a pipeline run needs besides data paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    pub dsr: TrainRunConfig,
    pub lge: TrainRunConfig,
    pub bm25: Bm25Params,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            encoder: EncoderConfig {
                bigrams: false,
                identity_context: true,
                ..EncoderConfig::default()
            },
            gnn: GnnConfig::default(),
            dsr: TrainRunConfig::dsr_desk(),
            lge: TrainRunConfig::lge_desk(),
            bm25: Bm25Params::default(),
        }
    }
}

impl RunConfig {
    /// Overrides every seed in the run with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dsr.seed = seed;
        self.lge.seed = seed;
        self
    }

    /// The defaults with `patch` merged over them key by key, so a partial
    /// section only replaces the keys it names.
    pub fn from_overrides(patch: serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(RunConfig::default())?;
        merge_json(&mut base, patch);
        Ok(serde_json::from_value(base)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gnn.validate()?;
        self.dsr.validate()?;
        self.lge.validate()?;
        if self.gnn.in_dim != self.encoder.dim {
            return Err(invalid(format!(
                "GNN input dim {} differs from encoder dim {}",
                self.gnn.in_dim, self.encoder.dim
            )));
        }
        Ok(())
    }
}

fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_keep_unnamed_keys() {
        let c = RunConfig::from_overrides(serde_json::json!({"dsr": {"batch_size": 8}, "seed": 3})).unwrap();
        assert_eq!(c.dsr.batch_size, 8);
        assert_eq!(c.seed, 3);
        assert_eq!(c.dsr.peak_learning_rate, TrainRunConfig::dsr_desk().peak_learning_rate);
        assert_eq!(c.lge, RunConfig::default().lge);
        assert!(RunConfig::from_overrides(serde_json::json!({"dsr": {"batch_size": "x"}})).is_err());
    }

    #[test]
    fn published_values() {
        let d = TrainRunConfig::dsr_published();
        assert_eq!((d.batch_size, d.max_epochs, d.peak_learning_rate), (24, 15, 2e-5));
        assert_eq!((d.adamw_epsilon, d.weight_decay, d.warmup_ratio), (1e-7, 0.01, 0.05));
        let l = TrainRunConfig::lge_published();
        assert_eq!((l.batch_size, l.max_epochs, l.peak_learning_rate, l.weight_decay), (512, 10, 2e-4, 0.1));
        assert_eq!(l.learning_rate_decay, ScheduleKind::Constant);
        assert_eq!(d.loss.temperature, 0.01);
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: TrainRunConfig = serde_json::from_str(r#"{"batch_size": 8}"#).unwrap();
        assert_eq!(partial.batch_size, 8);
        assert_eq!(partial.max_epochs, 15);
    }

    #[test]
    fn invalid_values() {
        let mut c = TrainRunConfig::default();
        c.loss.temperature = 0.0;
        assert!(c.validate().is_err());
        let c = TrainRunConfig {
            selection_metric: "P@5".into(),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
