//! The operations behind the command-line tool. Each one takes already-read
//! inputs and returns a serializable report; file and process handling stay
//! in the binary.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::credit::{
    route_advantages, score_output, AdvantageMode, CreditConfig, CreditError, FieldRewards, GroundTruth, GroupMember,
    GroupRollout, MemberAdvantages,
};
use crate::geometry::{Box2D, Box3D, CameraCalibration, QuantRanges};
use crate::schema::{parse_text, serialize_fields, FieldStatus, GeomField};
use crate::simulator::{
    analyze_variance, curves_csv, generate_scenes, scenes_to_jsonl, train_from, warm_start, AnalysisConfig, Metrics,
    SceneConfig, SimConfig, SimError, TrainingReport, VarianceAnalysisReport,
};
use crate::spans::{char_to_token_spans, AlignError, TokenOwner, TokenizerView};

/// Scoring fails with a nonzero exit above this fraction of unmatched ids.
pub const MAX_UNMATCHED_FRACTION: f64 = 0.1;
/// Largest KPA-2D drop from the warm start tolerated by `simulate` checks.
pub const MAX_KPA_2D_DROP: f64 = 0.02;
/// Bound on the relative variance-identity residual checked by
/// `analyze-variance`.
pub const MAX_IDENTITY_RESIDUAL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("no predictions")]
    NoPredictions,
    #[error("{file}:{line}: {msg}")]
    Input { file: String, line: usize, msg: String },
    #[error("invalid calibration file: {0}")]
    Calibration(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Credit(#[from] CreditError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// A named pass/fail condition attached to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Ids may be strings or integers in input files.
fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

fn parse_line<T: for<'de> Deserialize<'de>>(file: &str, line: usize, text: &str) -> Result<T, CommandError> {
    serde_json::from_str(text).map_err(|e| CommandError::Input { file: file.into(), line, msg: e.to_string() })
}

#[derive(Deserialize)]
struct PredLine {
    id: Value,
    text: String,
}

#[derive(Deserialize)]
struct GtLine {
    id: Value,
    bbox2d: [f64; 4],
    bbox3d: [f64; 6],
    #[serde(default)]
    camera: Option<CameraCalibration>,
}

/// Cameras for `score`: one shared calibration, or one per input id.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Calibrations {
    #[default]
    None,
    Shared(CameraCalibration),
    PerId(BTreeMap<String, CameraCalibration>),
}

impl Calibrations {
    /// A single `{"K", "R", "t"}` object, or an object mapping ids to them.
    pub fn from_json(text: &str) -> Result<Self, CommandError> {
        let v: Value = serde_json::from_str(text).map_err(|e| CommandError::Calibration(e.to_string()))?;
        let Value::Object(map) = &v else {
            return Err(CommandError::Calibration("expected a JSON object".into()));
        };
        if map.contains_key("K") {
            let cal = CameraCalibration::from_json_value(&v).map_err(|e| CommandError::Calibration(e.to_string()))?;
            return Ok(Calibrations::Shared(cal));
        }
        let per_id = map
            .iter()
            .map(|(id, c)| {
                CameraCalibration::from_json_value(c)
                    .map(|cal| (id.clone(), cal))
                    .map_err(|e| CommandError::Calibration(format!("{id}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Calibrations::PerId(per_id))
    }

    fn get(&self, id: &str) -> Option<&CameraCalibration> {
        match self {
            Calibrations::None => None,
            Calibrations::Shared(c) => Some(c),
            Calibrations::PerId(m) => m.get(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub pred: String,
    pub gt: String,
    pub calib: Option<String>,
    pub ranges: QuantRanges,
    pub max_unmatched_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub r_bbox2d: f64,
    pub r_bbox3d: f64,
    pub r_kpts2d: f64,
    pub r_kpts3d: f64,
    /// `None` when no calibration was available for this id.
    pub rpc: Option<f64>,
    pub statuses: BTreeMap<GeomField, FieldStatus>,
    pub swapped: Vec<GeomField>,
    pub out_of_range: Vec<GeomField>,
    pub projection_valid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAggregate {
    pub n: usize,
    pub iou_2d: f64,
    pub iou_3d: f64,
    pub kpa_2d: f64,
    pub kpa_3d: f64,
    /// Mean over the `n_rpc` examples that had a calibration.
    pub rpc: Option<f64>,
    pub n_rpc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub config: ScoreConfig,
    pub aggregate: ScoreAggregate,
    pub examples: Vec<ExampleScore>,
    pub pred_only: Vec<String>,
    pub gt_only: Vec<String>,
    pub unmatched_fraction: f64,
}

impl ScoreReport {
    pub fn too_many_unmatched(&self) -> bool {
        self.unmatched_fraction > self.config.max_unmatched_fraction
    }
}

/// Scores predictions against ground truth, joined on `id`. Unmatched ids
/// are listed and left out of the aggregates.
pub fn score(
    pred_jsonl: &str,
    gt_jsonl: &str,
    calibrations: &Calibrations,
    config: ScoreConfig,
) -> Result<ScoreReport, CommandError> {
    config.ranges.validate().map_err(|e| CommandError::Config(e.to_string()))?;
    let mut preds: BTreeMap<String, String> = BTreeMap::new();
    for (line, text) in lines(pred_jsonl) {
        let p: PredLine = parse_line("pred", line, text)?;
        let id = id_string(&p.id).ok_or_else(|| CommandError::Input {
            file: "pred".into(),
            line,
            msg: "id must be a string or integer".into(),
        })?;
        if preds.insert(id.clone(), p.text).is_some() {
            return Err(CommandError::Input { file: "pred".into(), line, msg: format!("duplicate id {id}") });
        }
    }
    if preds.is_empty() {
        return Err(CommandError::NoPredictions);
    }
    let mut gts: BTreeMap<String, (GroundTruth, Option<CameraCalibration>)> = BTreeMap::new();
    for (line, text) in lines(gt_jsonl) {
        let bad = |msg: String| CommandError::Input { file: "gt".into(), line, msg };
        let g: GtLine = parse_line("gt", line, text)?;
        let id = id_string(&g.id).ok_or_else(|| bad("id must be a string or integer".into()))?;
        let bbox2d = Box2D::from_array(g.bbox2d).map_err(|e| bad(e.to_string()))?;
        let bbox3d = Box3D::from_array(g.bbox3d).map_err(|e| bad(e.to_string()))?;
        if gts.insert(id.clone(), (GroundTruth { bbox2d, bbox3d }, g.camera)).is_some() {
            return Err(bad(format!("duplicate id {id}")));
        }
    }

    let mut examples = Vec::new();
    let mut pred_only = Vec::new();
    for (id, text) in &preds {
        let Some((gt, camera)) = gts.get(id) else {
            pred_only.push(id.clone());
            continue;
        };
        let cal = camera.as_ref().or_else(|| calibrations.get(id));
        let parsed = parse_text(text);
        let s = score_output(&parsed, gt, &config.ranges, cal);
        let f = s.rewards.fields;
        examples.push(ExampleScore {
            id: id.clone(),
            r_bbox2d: f[0],
            r_bbox3d: f[1],
            r_kpts2d: f[2],
            r_kpts3d: f[3],
            rpc: cal.map(|_| s.rewards.rpc),
            statuses: GeomField::ALL.iter().map(|f| (*f, s.statuses[f.index()])).collect(),
            swapped: s.swapped,
            out_of_range: s.out_of_range,
            projection_valid: s.projection_valid,
        });
    }
    let gt_only: Vec<String> = gts.keys().filter(|id| !preds.contains_key(*id)).cloned().collect();
    let total_ids = examples.len() + pred_only.len() + gt_only.len();
    let unmatched_fraction = (pred_only.len() + gt_only.len()) as f64 / total_ids as f64;

    let n = examples.len();
    let mean = |get: fn(&ExampleScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            examples.iter().map(get).sum::<f64>() / n as f64
        }
    };
    let rpcs: Vec<f64> = examples.iter().filter_map(|e| e.rpc).collect();
    let aggregate = ScoreAggregate {
        n,
        iou_2d: mean(|e| e.r_bbox2d),
        iou_3d: mean(|e| e.r_bbox3d),
        kpa_2d: mean(|e| e.r_kpts2d),
        kpa_3d: mean(|e| e.r_kpts3d),
        rpc: (!rpcs.is_empty()).then(|| rpcs.iter().sum::<f64>() / rpcs.len() as f64),
        n_rpc: rpcs.len(),
    };
    Ok(ScoreReport { config, aggregate, examples, pred_only, gt_only, unmatched_fraction })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardLine {
    bbox2d: f64,
    bbox3d: f64,
    kpts2d: f64,
    kpts3d: f64,
    #[serde(default)]
    rpc: f64,
}

#[derive(Deserialize)]
struct MemberLine {
    pieces: Vec<String>,
    rewards: RewardLine,
}

#[derive(Deserialize)]
struct GroupLine {
    input_id: Value,
    members: Vec<MemberLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedMember {
    pub statuses: BTreeMap<GeomField, FieldStatus>,
    /// Owner of each token: a field name or `"background"`.
    pub owners: Vec<String>,
    pub advantages: MemberAdvantages,
    pub routed: Vec<f64>,
    pub broadcast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedGroup {
    pub input_id: String,
    pub members: Vec<RoutedMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteReport {
    pub config: CreditConfig,
    pub groups: Vec<RoutedGroup>,
}

/// Builds a group from decoded token pieces and externally computed rewards.
pub fn group_from_pieces(input_id: &str, members: &[(Vec<String>, FieldRewards)]) -> Result<GroupRollout, AlignError> {
    let members = members
        .iter()
        .map(|(pieces, rewards)| {
            let view = TokenizerView::from_pieces(pieces.iter().cloned());
            let parsed = parse_text(&view.text());
            Ok(GroupMember { partition: char_to_token_spans(&view, &parsed)?, rewards: *rewards })
        })
        .collect::<Result<_, AlignError>>()?;
    Ok(GroupRollout { input_id: input_id.to_string(), members })
}

/// Routed and broadcast per-token advantages for every group in a JSONL
/// rollout file. Each line is
/// `{"input_id", "members": [{"pieces": [...], "rewards": {...}}]}`.
pub fn route(rollouts_jsonl: &str, config: CreditConfig) -> Result<RouteReport, CommandError> {
    config.validate()?;
    let mut groups = Vec::new();
    for (line, text) in lines(rollouts_jsonl) {
        let bad = |msg: String| CommandError::Input { file: "rollouts".into(), line, msg };
        let g: GroupLine = parse_line("rollouts", line, text)?;
        let input_id = id_string(&g.input_id).ok_or_else(|| bad("input_id must be a string or integer".into()))?;
        let members: Vec<(Vec<String>, FieldRewards)> = g
            .members
            .into_iter()
            .map(|m| {
                let r = m.rewards;
                (m.pieces, FieldRewards { fields: [r.bbox2d, r.bbox3d, r.kpts2d, r.kpts3d], rpc: r.rpc })
            })
            .collect();
        let group = group_from_pieces(&input_id, &members)?;
        let routed = route_advantages(&group, &config, AdvantageMode::Routed).map_err(|e| bad(e.to_string()))?;
        let broadcast = route_advantages(&group, &config, AdvantageMode::Broadcast).map_err(|e| bad(e.to_string()))?;
        let members = group
            .members
            .iter()
            .zip(&members)
            .enumerate()
            .map(|(i, (m, (pieces, _)))| {
                let parsed = parse_text(&pieces.concat());
                RoutedMember {
                    statuses: GeomField::ALL.iter().map(|f| (*f, parsed.status(*f))).collect(),
                    owners: m
                        .partition
                        .owners()
                        .iter()
                        .map(|o| match o {
                            TokenOwner::Field(f) => f.name().to_string(),
                            TokenOwner::Background => "background".to_string(),
                        })
                        .collect(),
                    advantages: routed.members[i],
                    routed: routed.tokens[i].clone(),
                    broadcast: broadcast.tokens[i].clone(),
                }
            })
            .collect();
        groups.push(RoutedGroup { input_id, members });
    }
    Ok(RouteReport { config, groups })
}

/// Simulator scenes as scoring inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneExport {
    /// Full scene records.
    pub scenes_jsonl: String,
    /// `{"id", "bbox2d", "bbox3d", "camera"}` per scene.
    pub gt_jsonl: String,
    /// `{"id", "text"}` holding the quantized ground truth as a response.
    pub pred_jsonl: String,
}

pub fn export_scenes(seed: u64, count: usize, scene: &SceneConfig) -> Result<SceneExport, CommandError> {
    if count == 0 {
        return Err(CommandError::Config("scenes must be at least 1".into()));
    }
    scene.validate()?;
    let scenes = generate_scenes(seed, count, scene)?;
    let ranges = scene.ranges();
    let mut gt_jsonl = String::new();
    let mut pred_jsonl = String::new();
    for s in &scenes {
        let gt = serde_json::json!({
            "id": s.scene_code,
            "bbox2d": s.gt_box2d.as_array(),
            "bbox3d": s.gt_box3d.as_array(),
            "camera": s.camera,
        });
        let (raw, _) = serialize_fields(&s.target_fields(&ranges));
        let pred = serde_json::json!({ "id": s.scene_code, "text": raw.text });
        gt_jsonl.push_str(&format!("{gt}\n"));
        pred_jsonl.push_str(&format!("{pred}\n"));
    }
    Ok(SceneExport { scenes_jsonl: scenes_to_jsonl(&scenes), gt_jsonl, pred_jsonl })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    /// Shared settings; `sim.seed` and `sim.mode` are overridden per run.
    pub sim: SimConfig,
    pub seeds: Vec<u64>,
    pub modes: Vec<AdvantageMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: AdvantageMode,
    pub mean_warm_start: Metrics,
    pub mean_final: Metrics,
    /// Largest per-seed drop of KPA-2D from warm start to final.
    pub worst_kpa_2d_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub config: SimulateConfig,
    pub runs: Vec<TrainingReport>,
    pub summary: Vec<ModeSummary>,
    pub checks: Vec<Check>,
}

impl SimulateReport {
    /// Metric curves per run, named `curves_<mode>_seed<seed>.csv`.
    pub fn curve_files(&self) -> Vec<(String, String)> {
        self.runs
            .iter()
            .map(|r| (format!("curves_{}_seed{}.csv", r.config.mode.name(), r.config.seed), curves_csv(r)))
            .collect()
    }
}

/// Trains every (seed, mode) pair. Runs for the same seed share one warm
/// start, so modes are compared on matched budgets and initializations.
pub fn simulate(config: SimulateConfig) -> Result<SimulateReport, CommandError> {
    if config.seeds.is_empty() || config.modes.is_empty() {
        return Err(CommandError::Config("need at least one seed and one mode".into()));
    }
    let unique: BTreeSet<_> = config.modes.iter().map(|m| m.name()).collect();
    if unique.len() != config.modes.len() {
        return Err(CommandError::Config("modes must be distinct".into()));
    }
    config.sim.validate()?;
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let ws = warm_start(&SimConfig { seed, ..config.sim })?;
        for &mode in &config.modes {
            runs.push(train_from(&ws, &SimConfig { seed, mode, ..config.sim })?);
        }
    }
    let summary: Vec<ModeSummary> = config
        .modes
        .iter()
        .map(|&mode| {
            let mine: Vec<&TrainingReport> = runs.iter().filter(|r| r.config.mode == mode).collect();
            let warm: Vec<Metrics> = mine.iter().map(|r| r.warm_start).collect();
            let fin: Vec<Metrics> = mine.iter().map(|r| r.final_metrics).collect();
            let worst =
                mine.iter().map(|r| r.warm_start.kpa_2d - r.final_metrics.kpa_2d).fold(f64::NEG_INFINITY, f64::max);
            ModeSummary {
                mode,
                mean_warm_start: Metrics::mean(&warm),
                mean_final: Metrics::mean(&fin),
                worst_kpa_2d_drop: worst,
            }
        })
        .collect();

    let mut checks: Vec<Check> = summary
        .iter()
        .map(|s| {
            Check::new(
                &format!("{}_kpa_2d_maintained", s.mode.name()),
                s.worst_kpa_2d_drop <= MAX_KPA_2D_DROP,
                format!("worst drop {:.6} (limit {MAX_KPA_2D_DROP})", s.worst_kpa_2d_drop),
            )
        })
        .collect();
    let find = |m: AdvantageMode| summary.iter().find(|s| s.mode == m);
    if let (Some(r), Some(b)) = (find(AdvantageMode::Routed), find(AdvantageMode::Broadcast)) {
        checks.push(Check::new(
            "routed_kpa_3d_above_broadcast",
            r.mean_final.kpa_3d > b.mean_final.kpa_3d,
            format!("routed {:.6} vs broadcast {:.6}", r.mean_final.kpa_3d, b.mean_final.kpa_3d),
        ));
    }
    Ok(SimulateReport { config, runs, summary, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCommandReport {
    #[serde(flatten)]
    pub analysis: VarianceAnalysisReport,
    pub checks: Vec<Check>,
}

/// Variance analysis plus per-field checks of the identity residual and of
/// `var_broadcast > var_routed`.
pub fn analyze_variance_cmd(config: &AnalysisConfig) -> Result<VarianceCommandReport, CommandError> {
    let analysis = analyze_variance(config)?;
    let mut checks = Vec::new();
    for f in &analysis.fields {
        let r = &f.report;
        checks.push(Check::new(
            &format!("{}_identity_residual", f.field.name()),
            r.identity_residual <= MAX_IDENTITY_RESIDUAL,
            format!("{:.3e} (limit {MAX_IDENTITY_RESIDUAL:e})", r.identity_residual),
        ));
        checks.push(Check::new(
            &format!("{}_broadcast_variance_exceeds_routed", f.field.name()),
            r.var_broadcast > r.var_routed,
            format!("var_broadcast {:.6e} vs var_routed {:.6e}, scov {:.6e}", r.var_broadcast, r.var_routed, r.scov),
        ));
    }
    Ok(VarianceCommandReport { analysis, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score_cfg() -> ScoreConfig {
        ScoreConfig {
            pred: "pred".into(),
            gt: "gt".into(),
            calib: None,
            ranges: QuantRanges::default(),
            max_unmatched_fraction: MAX_UNMATCHED_FRACTION,
        }
    }

    #[test]
    fn empty_predictions_are_an_error() {
        let err = score("\n\n", "", &Calibrations::None, score_cfg()).unwrap_err();
        assert_eq!(err.to_string(), "no predictions");
    }

    #[test]
    fn bad_pred_line_reports_its_number() {
        let err = score("{\"id\": 1, \"text\": \"{}\"}\nnot json\n", "", &Calibrations::None, score_cfg()).unwrap_err();
        assert!(matches!(err, CommandError::Input { line: 2, .. }), "{err}");
    }

    #[test]
    fn unmatched_ids_are_listed_and_excluded() {
        let ex = export_scenes(0, 3, &SceneConfig::default()).unwrap();
        let extra = format!("{}{{\"id\": \"ghost\", \"text\": \"\"}}\n", ex.pred_jsonl);
        let r = score(&extra, &ex.gt_jsonl, &Calibrations::None, score_cfg()).unwrap();
        assert_eq!(r.pred_only, vec!["ghost".to_string()]);
        assert_eq!(r.aggregate.n, 3);
        assert!((r.unmatched_fraction - 0.25).abs() < 1e-12);
        assert!(r.too_many_unmatched());
    }

    #[test]
    fn exported_oracle_scores_near_one() {
        let ex = export_scenes(0, 6, &SceneConfig::default()).unwrap();
        let r = score(&ex.pred_jsonl, &ex.gt_jsonl, &Calibrations::None, score_cfg()).unwrap();
        assert_eq!(r.aggregate.n, 6);
        assert_eq!(r.aggregate.n_rpc, 6);
        assert_eq!(r.aggregate.iou_3d, 1.0);
        assert_eq!(r.aggregate.kpa_2d, 1.0);
        assert_eq!(r.aggregate.kpa_3d, 1.0);
        assert!(r.aggregate.iou_2d > 0.98 && r.aggregate.rpc.unwrap() > 0.95, "{:?}", r.aggregate);
    }

    #[test]
    fn calibration_file_forms() {
        let one = r#"{"K": [100,0,100,0,100,100,0,0,1], "R": [1,0,0,0,1,0,0,0,1], "t": [0,0,5]}"#;
        assert!(matches!(Calibrations::from_json(one).unwrap(), Calibrations::Shared(_)));
        let many = format!("{{\"a\": {one}, \"b\": {one}}}");
        let Calibrations::PerId(m) = Calibrations::from_json(&many).unwrap() else { panic!() };
        assert_eq!(m.len(), 2);
        assert!(Calibrations::from_json("[1, 2]").is_err());
        assert!(Calibrations::from_json(r#"{"K": [1], "R": [], "t": []}"#).is_err());
    }

    #[test]
    fn route_needs_two_members_and_well_formed_lines() {
        let line = r#"{"input_id": "x", "members": [{"pieces": ["{}"], "rewards": {"bbox2d": 0, "bbox3d": 0, "kpts2d": 0, "kpts3d": 0}}]}"#;
        let err = route(line, CreditConfig::default()).unwrap_err();
        assert!(matches!(err, CommandError::Input { line: 1, .. }), "{err}");
        let err = route("\n{\"input_id\": 3}\n", CreditConfig::default()).unwrap_err();
        assert!(matches!(err, CommandError::Input { line: 2, .. }), "{err}");
    }

    #[test]
    fn simulate_rejects_empty_and_duplicate_modes() {
        let sim = SimConfig { scenes: 2, scenes_per_step: 1, steps: 0, ..SimConfig::default() };
        let cfg = SimulateConfig { sim, seeds: vec![0], modes: vec![] };
        assert!(simulate(cfg.clone()).is_err());
        let dup = SimulateConfig { modes: vec![AdvantageMode::Routed, AdvantageMode::Routed], ..cfg.clone() };
        assert!(simulate(dup).is_err());
        let ok =
            simulate(SimulateConfig { modes: vec![AdvantageMode::Routed, AdvantageMode::Broadcast], ..cfg }).unwrap();
        assert_eq!(ok.runs.len(), 2);
        assert_eq!(ok.runs[0].warm_start, ok.runs[1].warm_start);
        assert_eq!(ok.curve_files()[1].0, "curves_broadcast_seed0.csv");
        assert_eq!(ok.checks.len(), 3);
    }
}
