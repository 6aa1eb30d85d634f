//! Broadcast versus routed gradient variance on a frozen policy.

use serde::{Deserialize, Serialize};

use crate::credit::{route_advantages, AdvantageMode};
use crate::objective::{restricted_score, AnalysisSample, VarianceAccumulator, VarianceReport};
use crate::schema::GeomField;

use super::train::{rollout_group, run_rl, warm_start};
use super::{SimConfig, SimError};

/// Stream tag separating analysis rollouts from training rollouts.
const ANALYSIS_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Warm start and pre-training settings. `sim.steps` routed RL steps
    /// run before the policy is frozen.
    pub sim: SimConfig,
    /// Scene whose rollouts are analyzed.
    pub scene: usize,
    /// Groups of `sim.group_size` rollouts drawn from the frozen policy.
    pub groups: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sim: SimConfig { steps: 100, mode: AdvantageMode::Routed, ..SimConfig::default() },
            scene: 0,
            groups: 1250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldVariance {
    pub field: GeomField,
    #[serde(flatten)]
    pub report: VarianceReport,
    /// Largest per-sample entry of `g_broad - g_route - residual * score`.
    pub max_identity_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceAnalysisReport {
    pub config: AnalysisConfig,
    pub n_rollouts: usize,
    pub fields: Vec<FieldVariance>,
}

/// Warm-starts, trains `sim.steps` routed steps, freezes the policy and
/// measures, per field, the trace variance of the broadcast and routed
/// direct gradient terms over `groups * group_size` rollouts of one scene.
pub fn analyze_variance(cfg: &AnalysisConfig) -> Result<VarianceAnalysisReport, SimError> {
    cfg.sim.validate()?;
    if cfg.scene >= cfg.sim.scenes {
        return Err(SimError::Config(format!("scene {} outside 0..{}", cfg.scene, cfg.sim.scenes)));
    }
    if cfg.groups == 0 {
        return Err(SimError::Config("groups must be at least 1".into()));
    }
    let ranges = cfg.sim.scene.ranges();
    let mut ws = warm_start(&cfg.sim)?;
    let train_cfg = SimConfig { mode: AdvantageMode::Routed, ..cfg.sim };
    run_rl(&mut ws.policy, &ws.scenes, &train_cfg, &ranges)?;

    let policy = &ws.policy;
    let scene = &ws.scenes[cfg.scene];
    let probs = policy.scene_probs(cfg.scene);
    let credit = cfg.sim.credit();
    let mut acc: Vec<VarianceAccumulator> = (0..4).map(|_| VarianceAccumulator::new()).collect();
    let mut gaps = [0.0f64; 4];
    for g in 0..cfg.groups {
        let sample =
            rollout_group(&probs, scene, cfg.sim.group_size, cfg.sim.seed, ANALYSIS_STREAM + g as u64, &ranges)?;
        let adv = route_advantages(&sample.group, &credit, AdvantageMode::Routed)?;
        for (r, a) in sample.rollouts.iter().zip(&adv.members) {
            let trace = policy.trace(&probs, &r.sources, &r.logp_old, true);
            for f in GeomField::ALL {
                let s = AnalysisSample {
                    score: restricted_score(&trace, &r.partition.field_tokens(f))?,
                    broadcast: a.broadcast,
                    routed: a.fields[f.index()],
                };
                gaps[f.index()] = gaps[f.index()].max(s.identity_gap());
                acc[f.index()].push(&s);
            }
        }
    }
    let fields = GeomField::ALL
        .iter()
        .map(|&f| Ok(FieldVariance { field: f, report: acc[f.index()].report()?, max_identity_gap: gaps[f.index()] }))
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(VarianceAnalysisReport { config: *cfg, n_rollouts: cfg.groups * cfg.sim.group_size, fields })
}
