//! Warm-up, rollouts, the RL loop and greedy evaluation.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::credit::{route_advantages, score_output, GroupMember, GroupRollout, RoutedAdvantages, Scoring};
use crate::geometry::{QuantRange, QuantRanges};
use crate::objective::{surrogate_token_weights, LogProbTrace, SurrogateTerm};
use crate::schema::{parse_text, ParsedOutput};
use crate::spans::{char_to_token_spans, TokenSpanPartition, TokenizerView};

use super::policy::{Draw, SceneProbs, TokenSource, ToyPolicy, COORD_SLOTS};
use super::scene::{generate_scenes, Scene};
use super::{SftConfig, SimConfig, SimError};

/// Mean greedy-decoding metrics over a scene set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub iou_2d: f64,
    pub iou_3d: f64,
    pub kpa_2d: f64,
    pub kpa_3d: f64,
    pub rpc: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["iou_2d", "iou_3d", "kpa_2d", "kpa_3d", "rpc"];

    pub fn values(&self) -> [f64; 5] {
        [self.iou_2d, self.iou_3d, self.kpa_2d, self.kpa_3d, self.rpc]
    }

    fn from_scoring(s: &Scoring) -> Self {
        let f = s.rewards.fields;
        Metrics { iou_2d: f[0], iou_3d: f[1], kpa_2d: f[2], kpa_3d: f[3], rpc: s.rewards.rpc }
    }

    /// Elementwise mean; all zeros for an empty slice.
    pub fn mean(all: &[Metrics]) -> Self {
        let n = all.len().max(1) as f64;
        let mut m = Metrics::default();
        for x in all {
            m.iou_2d += x.iou_2d / n;
            m.iou_3d += x.iou_3d / n;
            m.kpa_2d += x.kpa_2d / n;
            m.kpa_3d += x.kpa_3d / n;
            m.rpc += x.rpc / n;
        }
        m
    }
}

/// Runs a draw through serialization, parsing and scoring.
fn score_draw(draw: &Draw, scene: &Scene, ranges: &QuantRanges) -> (String, ParsedOutput, Scoring) {
    let (pieces, _) = draw.tokens();
    let text = pieces.concat();
    let parsed = parse_text(&text);
    let scoring = score_output(&parsed, &scene.ground_truth(), ranges, Some(&scene.camera));
    (text, parsed, scoring)
}

/// Greedy-decoded metrics, averaged over scenes.
pub fn evaluate(policy: &ToyPolicy, scenes: &[Scene], ranges: &QuantRanges) -> Metrics {
    let all: Vec<Metrics> =
        scenes.iter().map(|s| Metrics::from_scoring(&score_draw(&policy.greedy(s.scene_code), s, ranges).2)).collect();
    Metrics::mean(&all)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for one group member.
pub fn member_rng(seed: u64, step: u64, scene: u64, member: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [step, scene, member] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub draw: Draw,
    pub text: String,
    pub sources: Vec<TokenSource>,
    pub parsed: ParsedOutput,
    pub partition: TokenSpanPartition,
    pub scoring: Scoring,
    pub logp_old: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub scene: usize,
    pub rollouts: Vec<Rollout>,
    pub group: GroupRollout,
}

/// Samples `g` outputs for one scene and scores them from their text.
pub fn rollout_group(
    probs: &SceneProbs,
    scene: &Scene,
    g: usize,
    seed: u64,
    step: u64,
    ranges: &QuantRanges,
) -> Result<GroupSample, SimError> {
    let mut rollouts = Vec::with_capacity(g);
    for m in 0..g {
        let mut rng = member_rng(seed, step, scene.scene_code as u64, m as u64);
        let draw = probs.sample(&mut rng);
        let (pieces, sources) = draw.tokens();
        let view = TokenizerView::from_pieces(pieces);
        let text = view.text();
        let parsed = parse_text(&text);
        let partition = char_to_token_spans(&view, &parsed)?;
        let scoring = score_output(&parsed, &scene.ground_truth(), ranges, Some(&scene.camera));
        let logp_old = sources.iter().map(|s| probs.logp(*s)).collect();
        rollouts.push(Rollout { draw, text, sources, parsed, partition, scoring, logp_old });
    }
    let group = GroupRollout {
        input_id: scene.scene_code.to_string(),
        members: rollouts
            .iter()
            .map(|r| GroupMember { partition: r.partition.clone(), rewards: r.scoring.rewards })
            .collect(),
    };
    Ok(GroupSample { scene: scene.scene_code, rollouts, group })
}

/// Order-preserving map over `threads` scoped workers.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Coordinate values and ranges per slot, in slot order.
fn slot_targets(scene: &Scene, ranges: &QuantRanges) -> Vec<(f64, QuantRange)> {
    let [u, v] = ranges.planar();
    let [x, y, z] = ranges.spatial();
    let b2 = scene.gt_box2d.as_array();
    let b3 = scene.gt_box3d.as_array();
    let mut out = Vec::with_capacity(COORD_SLOTS);
    out.extend(b2.iter().zip([u, v, u, v]).map(|(c, r)| (*c, r)));
    out.extend(b3.iter().zip([x, y, z, x, y, z]).map(|(c, r)| (*c, r)));
    for p in &scene.gt_kpts2d {
        out.extend([(p[0], u), (p[1], v)]);
    }
    for p in &scene.gt_kpts3d {
        out.extend([(p[0], x), (p[1], y), (p[2], z)]);
    }
    out
}

/// Per-slot target distributions as sparse `(bin, weight)` lists. Each
/// coordinate is first moved by a fixed Gaussian offset of
/// `cfg.annotation_noise` bins drawn from `seed`; the target is then a
/// Gaussian of width `cfg.label_sigma` bins around it, or one-hot on its
/// nearest bin when that width is 0.
pub fn sft_targets(scene: &Scene, ranges: &QuantRanges, cfg: &SftConfig, seed: u64) -> Vec<Vec<(usize, f64)>> {
    let sigma = cfg.label_sigma;
    let mut rng = member_rng(seed, u64::MAX, scene.scene_code as u64, 0);
    let noise = Normal::new(0.0, cfg.annotation_noise).expect("noise validated");
    slot_targets(scene, ranges)
        .into_iter()
        .map(|(value, r)| {
            let value = value + noise.sample(&mut rng) * r.bin_width();
            if sigma == 0.0 {
                return vec![(r.quantize(value) as usize, 1.0)];
            }
            let n = r.bin_count as f64;
            let pos = (value.clamp(r.lo, r.hi) - r.lo) / (r.hi - r.lo) * n;
            let lo = (pos - 4.0 * sigma).floor().max(0.0) as usize;
            let hi = (pos + 4.0 * sigma).ceil().min(n) as usize;
            let w: Vec<(usize, f64)> =
                (lo..=hi).map(|b| (b, (-(b as f64 - pos).powi(2) / (2.0 * sigma * sigma)).exp())).collect();
            let total: f64 = w.iter().map(|p| p.1).sum();
            w.into_iter().map(|(b, x)| (b, x / total)).collect()
        })
        .collect()
}

/// Mean cross-entropy per coordinate slot.
pub fn sft_loss(policy: &ToyPolicy, scenes: &[Scene], targets: &[Vec<Vec<(usize, f64)>>]) -> f64 {
    let mut total = 0.0;
    for (s, t) in scenes.iter().zip(targets) {
        for (slot, q) in t.iter().enumerate() {
            let p = policy.slot_probs(s.scene_code, slot);
            total -= q.iter().map(|(b, w)| w * p[*b].ln()).sum::<f64>();
        }
    }
    total / (scenes.len() * COORD_SLOTS) as f64
}

fn softmax_into(logits: &[f64], inv_t: f64, out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|z| ((z - max) * inv_t).exp()));
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
}

/// Warm-up of one scene block. Returns the summed slot cross-entropy before
/// each step and after the last one.
fn sft_scene(
    block: &mut [f64],
    n_bins: usize,
    inv_t: f64,
    targets: &[Vec<(usize, f64)>],
    label: usize,
    cfg: &SftConfig,
) -> Vec<f64> {
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut p = Vec::with_capacity(n_bins);
    let step = cfg.lr * inv_t;
    for k in 0..=cfg.steps {
        let update = k < cfg.steps;
        let mut loss = 0.0;
        for (slot, q) in targets.iter().enumerate() {
            let logits = &mut block[slot * n_bins..(slot + 1) * n_bins];
            softmax_into(logits, inv_t, &mut p);
            loss -= q.iter().map(|(b, w)| w * p[*b].ln()).sum::<f64>();
            if update {
                logits.iter_mut().zip(&p).for_each(|(z, pb)| *z -= step * pb);
                for (b, w) in q {
                    logits[*b] += step * w;
                }
            }
        }
        if update {
            let labels = &mut block[COORD_SLOTS * n_bins..];
            softmax_into(labels, inv_t, &mut p);
            for (l, (z, pl)) in labels.iter_mut().zip(&p).enumerate() {
                *z -= step * (pl - if l == label { 1.0 } else { 0.0 });
            }
        }
        losses.push(loss);
    }
    losses
}

/// Full-batch gradient descent on the cross-entropy of the target outputs,
/// spread over `threads` workers. Scene blocks are independent, so the
/// result does not depend on `threads`. Returns the loss before each step
/// and after the last one.
pub fn sft_warmup(
    policy: &mut ToyPolicy,
    scenes: &[Scene],
    ranges: &QuantRanges,
    cfg: &SftConfig,
    seed: u64,
    threads: usize,
) -> Vec<f64> {
    let mut jobs: Vec<Option<(Vec<Vec<(usize, f64)>>, usize)>> = vec![None; policy.n_scenes()];
    for s in scenes {
        jobs[s.scene_code] = Some((sft_targets(s, ranges, cfg, seed), s.answer_label));
    }
    let n_bins = policy.n_bins();
    let inv_t = 1.0 / policy.temperature();
    let block_len = policy.block_len();
    let mut work: Vec<(&mut [f64], &(Vec<Vec<(usize, f64)>>, usize))> =
        policy.params_mut().chunks_mut(block_len).zip(&jobs).filter_map(|(b, j)| j.as_ref().map(|j| (b, j))).collect();
    let per_scene: Vec<Vec<f64>> = if threads <= 1 || work.len() <= 1 {
        work.iter_mut().map(|(b, (t, l))| sft_scene(b, n_bins, inv_t, t, *l, cfg)).collect()
    } else {
        let chunk = work.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = work
                .chunks_mut(chunk)
                .map(|c| {
                    s.spawn(move || {
                        c.iter_mut().map(|(b, (t, l))| sft_scene(b, n_bins, inv_t, t, *l, cfg)).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let denom = (scenes.len().max(1) * COORD_SLOTS) as f64;
    (0..=cfg.steps).map(|k| per_scene.iter().map(|l| l[k]).sum::<f64>() / denom).collect()
}

/// Scenes trained at `step`: a rotating window over the scene list.
fn batch_for(step: usize, cfg: &SimConfig) -> Vec<usize> {
    (0..cfg.scenes_per_step).map(|j| (step * cfg.scenes_per_step + j) % cfg.scenes).collect()
}

/// One RL update: sample groups, route advantages, then `inner_epochs`
/// ascent steps on the clipped surrogate. Returns the batch mean of the
/// mean field reward.
pub fn rl_step(
    policy: &mut ToyPolicy,
    scenes: &[Scene],
    cfg: &SimConfig,
    step: usize,
    ranges: &QuantRanges,
) -> Result<f64, SimError> {
    let batch = batch_for(step, cfg);
    let old: Vec<SceneProbs> = par_map(&batch, cfg.threads, |&s| policy.scene_probs(s));
    let jobs: Vec<(usize, &SceneProbs)> = batch.iter().copied().zip(&old).collect();
    let groups: Vec<GroupSample> = par_map(&jobs, cfg.threads, |(s, probs)| {
        rollout_group(probs, &scenes[*s], cfg.group_size, cfg.seed, step as u64, ranges)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let credit = cfg.credit();
    let advantages: Vec<RoutedAdvantages> =
        groups.iter().map(|g| route_advantages(&g.group, &credit, cfg.mode)).collect::<Result<_, _>>()?;

    let reward = groups.iter().flat_map(|g| g.rollouts.iter().map(|r| r.scoring.rewards.mean_field())).sum::<f64>()
        / (groups.len() * cfg.group_size) as f64;

    let inv_t = 1.0 / policy.temperature();
    for epoch in 0..cfg.inner_epochs {
        let current: Vec<SceneProbs> =
            if epoch == 0 { old.clone() } else { par_map(&batch, cfg.threads, |&s| policy.scene_probs(s)) };
        let traces: Vec<Vec<LogProbTrace>> = groups
            .iter()
            .zip(&current)
            .map(|(g, probs)| g.rollouts.iter().map(|r| policy.trace(probs, &r.sources, &r.logp_old, false)).collect())
            .collect();
        let terms: Vec<SurrogateTerm<'_>> = traces
            .iter()
            .zip(&advantages)
            .flat_map(|(ts, adv)| ts.iter().zip(&adv.tokens).map(|(t, a)| SurrogateTerm { trace: t, advantages: a }))
            .collect();
        let weights = surrogate_token_weights(&terms, cfg.clip_eps)?;

        // Gradient of the objective with respect to each slot's logits is
        // sum_t w_t (e_{y_t} - p) / temperature over that slot's tokens.
        let mut w_iter = weights.iter();
        for (g, probs) in groups.iter().zip(&current) {
            let mut chosen = vec![0.0; policy.block_len()];
            let mut slot_w = vec![0.0; COORD_SLOTS + 1];
            for r in &g.rollouts {
                let w = w_iter.next().expect("one weight vector per member");
                for (src, wt) in r.sources.iter().zip(w) {
                    match *src {
                        TokenSource::Fixed => {}
                        TokenSource::Label(l) => {
                            chosen[policy.label_offset() + l] += wt;
                            slot_w[COORD_SLOTS] += wt;
                        }
                        TokenSource::Coord { slot, bin } => {
                            chosen[policy.slot_offset(slot) + bin as usize] += wt;
                            slot_w[slot] += wt;
                        }
                    }
                }
            }
            let step_size = cfg.lr * inv_t;
            let offsets: Vec<usize> = (0..COORD_SLOTS).map(|s| policy.slot_offset(s)).collect();
            let label_off = policy.label_offset();
            let block = policy.scene_block_mut(g.scene);
            for (slot, p) in probs.slots.iter().enumerate() {
                if slot_w[slot] == 0.0 {
                    continue;
                }
                let o = offsets[slot];
                for (b, q) in p.iter().enumerate() {
                    block[o + b] += step_size * (chosen[o + b] - slot_w[slot] * q);
                }
            }
            if slot_w[COORD_SLOTS] != 0.0 {
                for (l, q) in probs.labels.iter().enumerate() {
                    block[label_off + l] += step_size * (chosen[label_off + l] - slot_w[COORD_SLOTS] * q);
                }
            }
        }
    }
    Ok(reward)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Mean field reward of the rollouts sampled at this step.
    pub train_reward: f64,
}

/// RL for `cfg.steps` steps, evaluating every `cfg.eval_every` steps and
/// after the last one.
pub fn run_rl(
    policy: &mut ToyPolicy,
    scenes: &[Scene],
    cfg: &SimConfig,
    ranges: &QuantRanges,
) -> Result<Vec<CurvePoint>, SimError> {
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let train_reward = rl_step(policy, scenes, cfg, step, ranges)?;
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            curve.push(CurvePoint { step: done, metrics: evaluate(policy, scenes, ranges), train_reward });
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct WarmStart {
    /// Config the warm start was built from.
    pub config: SimConfig,
    pub scenes: Vec<Scene>,
    pub policy: ToyPolicy,
    pub sft_losses: Vec<f64>,
}

impl WarmStart {
    /// Whether `cfg` would have produced this warm start; RL-only settings
    /// may differ.
    pub fn matches(&self, cfg: &SimConfig) -> bool {
        let a = &self.config;
        a.seed == cfg.seed
            && a.scenes == cfg.scenes
            && a.temperature == cfg.temperature
            && a.sft == cfg.sft
            && a.scene == cfg.scene
    }
}

/// Scenes for `cfg.seed` and a policy trained on them with the supervised
/// warm-up.
pub fn warm_start(cfg: &SimConfig) -> Result<WarmStart, SimError> {
    cfg.validate()?;
    let ranges = cfg.scene.ranges();
    let scenes = generate_scenes(cfg.seed, cfg.scenes, &cfg.scene)?;
    let mut policy = ToyPolicy::uniform(cfg.scenes, ranges.u.bin_count, cfg.temperature);
    let sft_losses = sft_warmup(&mut policy, &scenes, &ranges, &cfg.sft, cfg.seed, cfg.threads);
    Ok(WarmStart { config: *cfg, scenes, policy, sft_losses })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: SimConfig,
    pub sft_loss_initial: f64,
    pub sft_loss_final: f64,
    pub warm_start: Metrics,
    pub final_metrics: Metrics,
    pub curve: Vec<CurvePoint>,
    /// Not serialized, so reports from identical configs are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Warm start followed by RL; the report is a pure function of `cfg`.
pub fn train(cfg: &SimConfig) -> Result<TrainingReport, SimError> {
    let started = Instant::now();
    let ws = warm_start(cfg)?;
    let mut report = train_from(&ws, cfg)?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// RL from a shared warm start, giving the same report as [`train`].
pub fn train_from(ws: &WarmStart, cfg: &SimConfig) -> Result<TrainingReport, SimError> {
    let started = Instant::now();
    cfg.validate()?;
    if !ws.matches(cfg) {
        return Err(SimError::Config("warm start was built from a different seed, scene or sft config".into()));
    }
    let ranges = cfg.scene.ranges();
    let mut policy = ws.policy.clone();
    let warm = evaluate(&policy, &ws.scenes, &ranges);
    let curve = run_rl(&mut policy, &ws.scenes, cfg, &ranges)?;
    let final_metrics = curve.last().map(|c| c.metrics).unwrap_or(warm);
    Ok(TrainingReport {
        config: *cfg,
        sft_loss_initial: ws.sft_losses[0],
        sft_loss_final: *ws.sft_losses.last().expect("initial loss recorded"),
        warm_start: warm,
        final_metrics,
        curve,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// `step` plus one column per metric, starting with the warm start at step 0.
pub fn curves_csv(report: &TrainingReport) -> String {
    let mut out = format!("step,{},train_reward\n", Metrics::NAMES.join(","));
    let row = |step: usize, m: &Metrics, reward: Option<f64>| {
        let vals: Vec<String> = m.values().iter().map(|v| format!("{v:.6}")).collect();
        format!("{step},{},{}\n", vals.join(","), reward.map(|r| format!("{r:.6}")).unwrap_or_default())
    };
    out.push_str(&row(0, &report.warm_start, None));
    for c in &report.curve {
        out.push_str(&row(c.step, &c.metrics, Some(c.train_reward)));
    }
    out
}
