//! Field rewards, reprojection consistency, group standardization and
//! routing of advantages onto token spans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    iou_2d, iou_3d, keypoint_containment, reprojected_box, Box2D, Box3D, CameraCalibration, QuantRanges, Region,
};
use crate::schema::{dequantize_fields, FieldStatus, GeomField, ParsedOutput};
use crate::spans::{TokenOwner, TokenSpanPartition};

/// Default epsilon in the standardization denominator.
pub const DEFAULT_STD_EPS: f64 = 1e-4;
/// Default weight of the reprojection term in the background advantage.
pub const DEFAULT_LAMBDA: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CreditError {
    #[error("calibration required")]
    CalibrationRequired,
    #[error("group too small: {0} members")]
    GroupTooSmall(usize),
    #[error("lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("std eps must be positive, got {0}")]
    InvalidEps(f64),
}

/// Reference geometry for one input. Keypoint fields are scored by
/// containment in these boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox2d: Box2D,
    pub bbox3d: Box3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldRewards {
    /// Indexed by [`GeomField::index`].
    pub fields: [f64; 4],
    pub rpc: f64,
}

impl FieldRewards {
    pub fn get(&self, f: GeomField) -> f64 {
        self.fields[f.index()]
    }

    pub fn mean_field(&self) -> f64 {
        self.fields.iter().sum::<f64>() / 4.0
    }
}

/// Rewards plus the diagnostics behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    pub rewards: FieldRewards,
    pub statuses: [FieldStatus; 4],
    pub swapped: Vec<GeomField>,
    pub out_of_range: Vec<GeomField>,
    /// `None` when RPC was not computed because a box was unavailable.
    pub projection_valid: Option<bool>,
}

/// Rewards for the four geometric fields only.
pub fn geometric_field_rewards(pred: &ParsedOutput, gt: &GroundTruth, ranges: &QuantRanges) -> [f64; 4] {
    score_output(pred, gt, ranges, None).rewards.fields
}

/// Field rewards and RPC with diagnostics. Without a calibration the RPC
/// reward is left at 0 and `projection_valid` is `None`.
pub fn score_output(
    pred: &ParsedOutput,
    gt: &GroundTruth,
    ranges: &QuantRanges,
    cal: Option<&CameraCalibration>,
) -> Scoring {
    let values = dequantize_fields(pred, ranges);
    let mut fields = [0.0; 4];
    if let Some(b) = &values.bbox2d {
        fields[GeomField::Bbox2d.index()] = iou_2d(b, &gt.bbox2d);
    }
    if let Some(b) = &values.bbox3d {
        fields[GeomField::Bbox3d.index()] = iou_3d(b, &gt.bbox3d);
    }
    if let Some(k) = &values.kpts2d {
        fields[GeomField::Kpts2d.index()] = keypoint_containment(k, Region::Planar(&gt.bbox2d)).unwrap_or(0.0);
    }
    if let Some(k) = &values.kpts3d {
        fields[GeomField::Kpts3d.index()] = keypoint_containment(k, Region::Spatial(&gt.bbox3d)).unwrap_or(0.0);
    }
    let mut rpc = 0.0;
    let mut projection_valid = None;
    if let (Some(cal), Some(b2), Some(b3)) = (cal, &values.bbox2d, &values.bbox3d) {
        match reprojected_box(b3, cal) {
            Some(footprint) => {
                projection_valid = Some(true);
                rpc = iou_2d(b2, &footprint);
            }
            None => projection_valid = Some(false),
        }
    }
    Scoring {
        rewards: FieldRewards { fields, rpc },
        statuses: pred.statuses(),
        swapped: values.swapped,
        out_of_range: values.out_of_range,
        projection_valid,
    }
}

/// Field rewards and the reprojection-consistency reward.
pub fn compute_field_rewards(
    pred: &ParsedOutput,
    gt: &GroundTruth,
    ranges: &QuantRanges,
    cal: Option<&CameraCalibration>,
) -> Result<FieldRewards, CreditError> {
    let cal = cal.ok_or(CreditError::CalibrationRequired)?;
    Ok(score_output(pred, gt, ranges, Some(cal)).rewards)
}

/// `(v_i - mean) / (std + eps)` with the population standard deviation.
pub fn standardize_group(values: &[f64], eps: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    values.iter().map(|v| (v - mean) / denom).collect()
}

/// `(1 - lambda) * mean(field_advs) + lambda * rpc_adv`.
pub fn background_advantage(field_advs: &[f64; 4], rpc_adv: f64, lambda: f64) -> f64 {
    let mean = field_advs.iter().sum::<f64>() / field_advs.len() as f64;
    (1.0 - lambda) * mean + lambda * rpc_adv
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageMode {
    Routed,
    Broadcast,
}

impl AdvantageMode {
    pub fn name(self) -> &'static str {
        match self {
            AdvantageMode::Routed => "routed",
            AdvantageMode::Broadcast => "broadcast",
        }
    }
}

impl std::str::FromStr for AdvantageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "routed" => Ok(AdvantageMode::Routed),
            "broadcast" => Ok(AdvantageMode::Broadcast),
            other => Err(format!("unknown mode '{other}' (expected routed or broadcast)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreditConfig {
    pub lambda: f64,
    pub std_eps: f64,
}

impl Default for CreditConfig {
    fn default() -> Self {
        CreditConfig { lambda: DEFAULT_LAMBDA, std_eps: DEFAULT_STD_EPS }
    }
}

impl CreditConfig {
    pub fn validate(&self) -> Result<(), CreditError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CreditError::InvalidLambda(self.lambda));
        }
        if !(self.std_eps > 0.0) {
            return Err(CreditError::InvalidEps(self.std_eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub partition: TokenSpanPartition,
    pub rewards: FieldRewards,
}

/// `G` rollouts for the same input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub input_id: String,
    pub members: Vec<GroupMember>,
}

/// Scalar advantages of one member, independent of mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberAdvantages {
    pub fields: [f64; 4],
    pub rpc: f64,
    pub background: f64,
    /// Standardized mean field reward, used by broadcast mode.
    pub broadcast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedAdvantages {
    pub mode: AdvantageMode,
    pub members: Vec<MemberAdvantages>,
    /// Per-member, per-token advantage.
    pub tokens: Vec<Vec<f64>>,
}

/// Standardizes every reward across the group and assigns per-token
/// advantages. Routed: field tokens get their field's advantage, the rest
/// get the background advantage. Broadcast: every token gets the member's
/// standardized mean field reward.
pub fn route_advantages(
    group: &GroupRollout,
    cfg: &CreditConfig,
    mode: AdvantageMode,
) -> Result<RoutedAdvantages, CreditError> {
    cfg.validate()?;
    let g = group.members.len();
    if g < 2 {
        return Err(CreditError::GroupTooSmall(g));
    }
    let per_field: Vec<Vec<f64>> = GeomField::ALL
        .iter()
        .map(|f| {
            let rewards: Vec<f64> = group.members.iter().map(|m| m.rewards.get(*f)).collect();
            standardize_group(&rewards, cfg.std_eps)
        })
        .collect();
    let rpc = standardize_group(&group.members.iter().map(|m| m.rewards.rpc).collect::<Vec<_>>(), cfg.std_eps);
    let broadcast =
        standardize_group(&group.members.iter().map(|m| m.rewards.mean_field()).collect::<Vec<_>>(), cfg.std_eps);

    let members: Vec<MemberAdvantages> = (0..g)
        .map(|i| {
            let fields = [per_field[0][i], per_field[1][i], per_field[2][i], per_field[3][i]];
            MemberAdvantages {
                fields,
                rpc: rpc[i],
                background: background_advantage(&fields, rpc[i], cfg.lambda),
                broadcast: broadcast[i],
            }
        })
        .collect();

    let tokens = group
        .members
        .iter()
        .zip(&members)
        .map(|(m, adv)| match mode {
            AdvantageMode::Routed => m
                .partition
                .owners()
                .iter()
                .map(|o| match o {
                    TokenOwner::Field(f) => adv.fields[f.index()],
                    TokenOwner::Background => adv.background,
                })
                .collect(),
            AdvantageMode::Broadcast => vec![adv.broadcast; m.partition.len()],
        })
        .collect();
    Ok(RoutedAdvantages { mode, members, tokens })
}
