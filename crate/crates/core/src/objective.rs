//! Policy ratios, the clipped surrogate and the broadcast/routed gradient
//! variance estimators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("length mismatch: {what} has {got} entries, expected {want}")]
    LengthMismatch { what: &'static str, got: usize, want: usize },
    #[error("scores unavailable")]
    ScoresUnavailable,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("clip eps must be positive, got {0}")]
    InvalidClip(f64),
}

/// Sparse parameter-space vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, a: f64) -> SparseVec {
        SparseVec { indices: self.indices.clone(), values: self.values.iter().map(|v| a * v).collect() }
    }

    /// `dense += a * self`, growing `dense` as needed.
    pub fn add_into(&self, dense: &mut Vec<f64>, a: f64) {
        if let Some(&last) = self.indices.last() {
            if dense.len() <= last {
                dense.resize(last + 1, 0.0);
            }
        }
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            dense[i] += a * v;
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.add_into(&mut out, 1.0);
        out
    }

    /// Sum of several vectors. Concatenation is used directly when the
    /// inputs are already ordered and non-overlapping.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a SparseVec>) -> SparseVec {
        let mut out = SparseVec::default();
        let mut ordered = true;
        for p in parts {
            if let (Some(&last), Some(&first)) = (out.indices.last(), p.indices.first()) {
                ordered &= first > last;
            }
            out.indices.extend_from_slice(&p.indices);
            out.values.extend_from_slice(&p.values);
        }
        if ordered {
            return out;
        }
        let mut pairs: Vec<(usize, f64)> = out.indices.into_iter().zip(out.values).collect();
        pairs.sort_by_key(|p| p.0);
        let mut merged = SparseVec::default();
        for (i, v) in pairs {
            if merged.indices.last() == Some(&i) {
                *merged.values.last_mut().unwrap() += v;
            } else {
                merged.indices.push(i);
                merged.values.push(v);
            }
        }
        merged
    }
}

/// Per-token log-probabilities under the current and the rollout policy,
/// optionally with exact per-token score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbTrace {
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<SparseVec>>,
}

impl LogProbTrace {
    pub fn len(&self) -> usize {
        self.logp_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp_new.is_empty()
    }
}

pub fn policy_ratio(trace: &LogProbTrace) -> Result<Vec<f64>, ObjectiveError> {
    if trace.logp_old.len() != trace.logp_new.len() {
        return Err(ObjectiveError::LengthMismatch {
            what: "logp_old",
            got: trace.logp_old.len(),
            want: trace.logp_new.len(),
        });
    }
    trace
        .logp_new
        .iter()
        .zip(&trace.logp_old)
        .enumerate()
        .map(|(t, (new, old))| {
            if new.is_finite() && old.is_finite() {
                Ok((new - old).exp())
            } else {
                Err(ObjectiveError::InvalidTrace(format!("non-finite log-probability at token {t}")))
            }
        })
        .collect()
}

/// One member's contribution to the surrogate.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateTerm<'a> {
    pub trace: &'a LogProbTrace,
    pub advantages: &'a [f64],
}

fn check_clip(clip_eps: f64) -> Result<(), ObjectiveError> {
    if clip_eps > 0.0 && clip_eps.is_finite() {
        Ok(())
    } else {
        Err(ObjectiveError::InvalidClip(clip_eps))
    }
}

fn ratios_for(term: &SurrogateTerm<'_>) -> Result<Vec<f64>, ObjectiveError> {
    let r = policy_ratio(term.trace)?;
    if r.len() != term.advantages.len() {
        return Err(ObjectiveError::LengthMismatch { what: "advantages", got: term.advantages.len(), want: r.len() });
    }
    Ok(r)
}

/// Mean over members of the token-mean clipped objective
/// `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(terms: &[SurrogateTerm<'_>], clip_eps: f64) -> Result<f64, ObjectiveError> {
    check_clip(clip_eps)?;
    if terms.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for term in terms {
        let ratios = ratios_for(term)?;
        if ratios.is_empty() {
            continue;
        }
        let sum: f64 = ratios
            .iter()
            .zip(term.advantages)
            .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a))
            .sum();
        total += sum / ratios.len() as f64;
    }
    Ok(total / terms.len() as f64)
}

/// Derivative of [`clipped_surrogate`] with respect to each token's
/// current log-probability. Tokens whose ratio sits past the clip boundary
/// in the direction of their advantage get weight 0.
pub fn surrogate_token_weights(terms: &[SurrogateTerm<'_>], clip_eps: f64) -> Result<Vec<Vec<f64>>, ObjectiveError> {
    check_clip(clip_eps)?;
    let g = terms.len() as f64;
    terms
        .iter()
        .map(|term| {
            let ratios = ratios_for(term)?;
            let l = ratios.len() as f64;
            Ok(ratios
                .iter()
                .zip(term.advantages)
                .map(|(&r, &a)| {
                    let clipped = (a >= 0.0 && r > 1.0 + clip_eps) || (a < 0.0 && r < 1.0 - clip_eps);
                    if clipped {
                        0.0
                    } else {
                        a * r / (l * g)
                    }
                })
                .collect())
        })
        .collect()
}

/// Sum of per-token scores over `span`.
pub fn restricted_score(trace: &LogProbTrace, span: &[usize]) -> Result<SparseVec, ObjectiveError> {
    let scores = trace.scores.as_ref().ok_or(ObjectiveError::ScoresUnavailable)?;
    if scores.len() != trace.len() {
        return Err(ObjectiveError::LengthMismatch { what: "scores", got: scores.len(), want: trace.len() });
    }
    if let Some(&t) = span.iter().find(|&&t| t >= scores.len()) {
        return Err(ObjectiveError::InvalidTrace(format!("token {t} outside trace of length {}", scores.len())));
    }
    Ok(SparseVec::sum(span.iter().map(|&t| &scores[t])))
}

/// One rollout's view of a single field: its restricted score and the
/// two scalar advantages that could multiply it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSample {
    pub score: SparseVec,
    pub broadcast: f64,
    pub routed: f64,
}

impl AnalysisSample {
    pub fn residual(&self) -> f64 {
        self.broadcast - self.routed
    }

    pub fn g_broad(&self) -> SparseVec {
        self.score.scaled(self.broadcast)
    }

    pub fn g_route(&self) -> SparseVec {
        self.score.scaled(self.routed)
    }

    /// Largest absolute entry of `g_broad - g_route - residual * score`.
    pub fn identity_gap(&self) -> f64 {
        let b = self.g_broad();
        let r = self.g_route();
        let xi = self.residual();
        b.values
            .iter()
            .zip(&r.values)
            .zip(&self.score.values)
            .map(|((b, r), s)| (b - r - xi * s).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub var_broadcast: f64,
    pub var_routed: f64,
    pub var_residual: f64,
    pub scov: f64,
    /// `|Var_broad - (Var_route + Var_residual + 2 SCov)|` over `|Var_broad|`.
    pub identity_residual: f64,
    pub n_samples: usize,
    pub broadcast_exceeds_routed: bool,
    pub scov_sign: i8,
    /// Norm of the mean residual term; near `residual_mean_null_scale`
    /// when the residual is orthogonal to the score on average.
    pub residual_mean_norm: f64,
    pub residual_mean_null_scale: f64,
}

/// Streaming trace-variance moments for one field.
#[derive(Debug, Clone, Default)]
pub struct VarianceAccumulator {
    n: usize,
    sum_broad: Vec<f64>,
    sum_route: Vec<f64>,
    sum_resid: Vec<f64>,
    sq_broad: f64,
    sq_route: f64,
    sq_resid: f64,
    cross: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl VarianceAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn push(&mut self, s: &AnalysisSample) {
        let xi = s.residual();
        let norm = s.score.norm_sq();
        s.score.add_into(&mut self.sum_broad, s.broadcast);
        s.score.add_into(&mut self.sum_route, s.routed);
        s.score.add_into(&mut self.sum_resid, xi);
        self.sq_broad += s.broadcast * s.broadcast * norm;
        self.sq_route += s.routed * s.routed * norm;
        self.sq_resid += xi * xi * norm;
        self.cross += s.routed * xi * norm;
        self.n += 1;
    }

    pub fn report(&self) -> Result<VarianceReport, ObjectiveError> {
        if self.n < 2 {
            return Err(ObjectiveError::TooFewSamples(self.n));
        }
        let n = self.n as f64;
        let mean = |v: &[f64]| v.iter().map(|x| x / n).collect::<Vec<_>>();
        let (mb, mr, mx) = (mean(&self.sum_broad), mean(&self.sum_route), mean(&self.sum_resid));
        let var_broadcast = self.sq_broad / n - dot(&mb, &mb);
        let var_routed = self.sq_route / n - dot(&mr, &mr);
        let var_residual = self.sq_resid / n - dot(&mx, &mx);
        let scov = self.cross / n - dot(&mr, &mx);
        let gap = (var_broadcast - (var_routed + var_residual + 2.0 * scov)).abs();
        let identity_residual = if gap == 0.0 { 0.0 } else { gap / var_broadcast.abs().max(f64::MIN_POSITIVE) };
        Ok(VarianceReport {
            var_broadcast,
            var_routed,
            var_residual,
            scov,
            identity_residual,
            n_samples: self.n,
            broadcast_exceeds_routed: var_broadcast > var_routed,
            scov_sign: if scov > 0.0 {
                1
            } else if scov < 0.0 {
                -1
            } else {
                0
            },
            residual_mean_norm: dot(&mx, &mx).sqrt(),
            residual_mean_null_scale: (var_residual.max(0.0) / n).sqrt(),
        })
    }
}

pub fn variance_analysis(samples: &[AnalysisSample]) -> Result<VarianceReport, ObjectiveError> {
    let mut acc = VarianceAccumulator::new();
    for s in samples {
        acc.push(s);
    }
    acc.report()
}
