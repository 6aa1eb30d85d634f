//! Desk-scale training harness: synthetic scenes, a tabular policy that
//! emits the structured output, supervised warm-up, and group-relative RL
//! with routed or broadcast advantages.
//!
//! The RL loop only ever sees text. Sampled choices are serialized,
//! re-parsed, aligned to tokens and scored exactly as an external model's
//! output would be.

mod analysis;
mod policy;
mod scene;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credit::{AdvantageMode, CreditConfig, CreditError, DEFAULT_LAMBDA, DEFAULT_STD_EPS};
use crate::objective::ObjectiveError;
use crate::spans::AlignError;

pub use analysis::{analyze_variance, AnalysisConfig, FieldVariance, VarianceAnalysisReport};
pub use policy::{field_of_slot, slot_of, Draw, SceneProbs, TokenSource, ToyPolicy, COORD_SLOTS, FIELD_SLOT_OFFSETS};
pub use scene::{
    description_for, generate_scenes, look_at, scenes_from_jsonl, scenes_to_jsonl, Scene, SceneConfig,
    KEYPOINTS_PER_SCENE, LABELS,
};
pub use train::{
    curves_csv, evaluate, member_rng, rl_step, rollout_group, run_rl, sft_loss, sft_targets, sft_warmup, train,
    train_from, warm_start, CurvePoint, GroupSample, Metrics, Rollout, TrainingReport, WarmStart,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("could not place a scene in front of the camera after {attempts} attempts")]
    SceneGeneration { attempts: usize },
    #[error("bad input: {0}")]
    Format(String),
    #[error(transparent)]
    Credit(#[from] CreditError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub steps: usize,
    pub lr: f64,
    /// Width, in bins, of the Gaussian soft target around each coordinate;
    /// 0 gives one-hot targets.
    pub label_sigma: f64,
    /// Standard deviation, in bins, of a fixed per-coordinate offset applied
    /// to the warm-up targets, standing in for imprecise annotations.
    pub annotation_noise: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig { steps: 100, lr: 4.0, label_sigma: 1.5, annotation_noise: 2.0 }
    }
}

/// Everything that determines a simulator run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub scenes: usize,
    pub mode: AdvantageMode,
    pub lambda: f64,
    pub group_size: usize,
    pub clip_eps: f64,
    pub std_eps: f64,
    pub steps: usize,
    pub scenes_per_step: usize,
    pub inner_epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub eval_every: usize,
    pub threads: usize,
    pub sft: SftConfig,
    pub scene: SceneConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            scenes: 64,
            mode: AdvantageMode::Routed,
            lambda: DEFAULT_LAMBDA,
            group_size: 8,
            clip_eps: 0.2,
            std_eps: DEFAULT_STD_EPS,
            steps: 200,
            scenes_per_step: 16,
            inner_epochs: 2,
            lr: 2000.0,
            temperature: 1.0,
            eval_every: 20,
            threads: 1,
            sft: SftConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn credit(&self) -> CreditConfig {
        CreditConfig { lambda: self.lambda, std_eps: self.std_eps }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must be in (0, 1), got {}", self.clip_eps));
        }
        if !(self.std_eps > 0.0) {
            return bad(format!("std_eps must be positive, got {}", self.std_eps));
        }
        if self.scenes == 0 {
            return bad("scenes must be at least 1".into());
        }
        if self.scenes_per_step == 0 || self.scenes_per_step > self.scenes {
            return bad(format!("scenes_per_step must be in 1..={}, got {}", self.scenes, self.scenes_per_step));
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.sft.lr >= 0.0 && self.sft.lr.is_finite()) {
            return bad("learning rates must be finite and non-negative".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.sft.label_sigma >= 0.0 && self.sft.annotation_noise >= 0.0) {
            return bad("sft.label_sigma and sft.annotation_noise must be non-negative".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        self.scene.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig { lambda: 1.5, ..SimConfig::default() };
        assert!(matches!(bad.validate(), Err(SimError::Config(m)) if m.contains("lambda")));
        let bad = SimConfig { group_size: 1, ..SimConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { scenes_per_step: 100, ..SimConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let cfg: SimConfig = serde_json::from_str(r#"{"seed": 3, "mode": "broadcast"}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.mode, AdvantageMode::Broadcast);
        assert_eq!(cfg.group_size, 8);
    }
}
