//! TOML run configuration. Every key has a default and unknown keys are
//! rejected. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use maptraj_core::backbone::{Backbone, ToyBackbone, ToyBackboneConfig};
use maptraj_core::metrics::MetricsConfig;
use maptraj_core::pipeline::ModelConfig;
use maptraj_core::scenes::SceneSchema;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Seed for batch sampling.
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub loss: LossKind,
    /// Print the loss every this many steps (0 disables).
    pub log_every: usize,
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub metrics: MetricsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint: PathBuf::from("model.ckpt"),
            loss: LossKind::Mse,
            log_every: 100,
            data: DataConfig::default(),
            backbone: BackboneConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over points of the squared displacement.
    #[default]
    Mse,
    /// Mean over points of the per-coordinate Huber loss (δ = 1 m).
    SmoothL1,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// JSONL training scenes.
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    /// JSONL scenes used by `ablate` for evaluation.
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Only `toy-v1` ships with the harness.
    pub name: String,
    pub seed: u64,
    pub d_llm: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_sequence_length: usize,
    pub ffn_width: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let toy = ToyBackboneConfig::default();
        Self {
            name: ToyBackbone::IDENTITY.into(),
            seed: toy.seed,
            d_llm: toy.d_llm,
            layers: toy.layers,
            heads: toy.heads,
            vocab_size: toy.vocab_size,
            max_sequence_length: toy.max_sequence_length,
            ffn_width: toy.ffn_width,
        }
    }
}

impl BackboneConfig {
    pub fn build(&self) -> Result<Box<dyn Backbone>> {
        if self.name != ToyBackbone::IDENTITY {
            return Err(HarnessError::Config(format!(
                "unknown backbone `{}`; only `{}` is bundled",
                self.name,
                ToyBackbone::IDENTITY
            )));
        }
        let toy = ToyBackbone::new(ToyBackboneConfig {
            seed: self.seed,
            d_llm: self.d_llm,
            layers: self.layers,
            heads: self.heads,
            vocab_size: self.vocab_size,
            max_sequence_length: self.max_sequence_length,
            ffn_width: self.ffn_width,
        })?;
        Ok(Box::new(toy))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine decay from `learning_rate` to `min_learning_rate` over `steps`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            min_learning_rate: 0.0,
            schedule: Schedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            steps: 2000,
        }
    }
}

impl OptimizerConfig {
    /// Step size for 0-based step `t`.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let progress = t as f64 / self.steps.max(1) as f64;
                let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
                self.min_learning_rate + (self.learning_rate - self.min_learning_rate) * cos
            }
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.checkpoint);
        for p in [&mut self.data.train, &mut self.data.validation, &mut self.data.test]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(o.learning_rate > 0.0) || !(o.min_learning_rate >= 0.0) {
            return bad(format!("learning rates must be positive, got {} / {}", o.learning_rate, o.min_learning_rate));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad(format!("beta1/beta2 must lie in [0, 1), got {} / {}", o.beta1, o.beta2));
        }
        if !(o.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", o.epsilon));
        }
        if o.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.backbone.d_llm == 0 || self.backbone.heads == 0 || self.backbone.d_llm % self.backbone.heads != 0 {
            return bad(format!(
                "backbone d_llm {} must be a positive multiple of heads {}",
                self.backbone.d_llm, self.backbone.heads
            ));
        }
        let m = &self.model;
        if m.scene_encoder.d_scene == 0 || m.map_encoder.d_map == 0 || m.adapter.prototypes == 0 {
            return bad("d_scene, d_map and adapter.prototypes must be positive".into());
        }
        if m.fusion.heads == 0 || self.backbone.d_llm % m.fusion.heads != 0 {
            return bad(format!(
                "fusion heads {} must divide d_llm {}",
                m.fusion.heads, self.backbone.d_llm
            ));
        }
        if !(self.metrics.miss_threshold >= 0.0) {
            return bad("metrics.miss_threshold must be nonnegative".into());
        }
        Ok(())
    }

    /// Fails unless every configured data file exists.
    pub fn check_files(&self) -> Result<()> {
        for p in [&self.data.train, &self.data.validation, &self.data.test].into_iter().flatten() {
            if !p.is_file() {
                return Err(HarnessError::Config(format!("data file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> SceneSchema {
        SceneSchema {
            history_steps: self.model.history_steps,
            future_steps: self.model.future_steps,
        }
    }
}
