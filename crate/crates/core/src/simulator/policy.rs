//! Slot-factorized categorical policy over the canonical output template.
//!
//! Every coordinate of the output is one token drawn from its own
//! categorical over quantization bins, conditioned only on the scene code.
//! The answer is one token over a small label vocabulary. Template text and
//! the description are fixed given the answer, so they carry probability 1.
//! With `pi = softmax(theta / temperature)` the score of a sampled token is
//! `(e_y - pi) / temperature` on that slot's logits and zero elsewhere.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::objective::{LogProbTrace, SparseVec};
use crate::schema::{canonical_pieces, CanonicalFields, GeomField, PieceRole};
use crate::simulator::scene::{description_for, KEYPOINTS_PER_SCENE, LABELS};

/// First slot of each geometric field, in [`GeomField::index`] order.
pub const FIELD_SLOT_OFFSETS: [usize; 4] = [0, 4, 10, 10 + 2 * KEYPOINTS_PER_SCENE];
pub const COORD_SLOTS: usize = 10 + 5 * KEYPOINTS_PER_SCENE;

pub fn slot_of(field: GeomField, index: usize) -> usize {
    FIELD_SLOT_OFFSETS[field.index()] + index
}

pub fn field_of_slot(slot: usize) -> GeomField {
    match slot {
        s if s < FIELD_SLOT_OFFSETS[1] => GeomField::Bbox2d,
        s if s < FIELD_SLOT_OFFSETS[2] => GeomField::Bbox3d,
        s if s < FIELD_SLOT_OFFSETS[3] => GeomField::Kpts2d,
        _ => GeomField::Kpts3d,
    }
}

/// What generated a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenSource {
    Fixed,
    Label(usize),
    Coord { slot: usize, bin: u32 },
}

/// Sampled choices for one output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    pub bins: Vec<u32>,
    pub label: usize,
}

impl Draw {
    pub fn fields(&self) -> CanonicalFields {
        let b = &self.bins;
        let k2 = FIELD_SLOT_OFFSETS[2];
        let k3 = FIELD_SLOT_OFFSETS[3];
        CanonicalFields {
            answer: LABELS[self.label].to_string(),
            description: description_for(self.label),
            bbox2d: std::array::from_fn(|i| b[i]),
            bbox3d: std::array::from_fn(|i| b[4 + i]),
            kpts2d: (0..KEYPOINTS_PER_SCENE).map(|k| [b[k2 + 2 * k], b[k2 + 2 * k + 1]]).collect(),
            kpts3d: (0..KEYPOINTS_PER_SCENE).map(|k| [b[k3 + 3 * k], b[k3 + 3 * k + 1], b[k3 + 3 * k + 2]]).collect(),
        }
    }

    /// Token pieces and their sources, in order.
    pub fn tokens(&self) -> (Vec<String>, Vec<TokenSource>) {
        canonical_pieces(&self.fields())
            .into_iter()
            .map(|p| {
                let src = match p.role {
                    PieceRole::Template | PieceRole::Description => TokenSource::Fixed,
                    PieceRole::Answer => TokenSource::Label(self.label),
                    PieceRole::Coord { field, index } => {
                        let slot = slot_of(field, index);
                        TokenSource::Coord { slot, bin: self.bins[slot] }
                    }
                };
                (p.text, src)
            })
            .unzip()
    }
}

/// Probabilities and cumulative sums for every slot of one scene.
#[derive(Debug, Clone)]
pub struct SceneProbs {
    pub slots: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    cdfs: Vec<Vec<f64>>,
    label_cdf: Vec<f64>,
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u = rng.gen::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

impl SceneProbs {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Draw {
        let label = draw(&self.label_cdf, rng);
        let bins = self.cdfs.iter().map(|c| draw(c, rng) as u32).collect();
        Draw { bins, label }
    }

    pub fn greedy(&self) -> Draw {
        Draw { bins: self.slots.iter().map(|p| argmax(p) as u32).collect(), label: argmax(&self.labels) }
    }

    pub fn logp(&self, src: TokenSource) -> f64 {
        match src {
            TokenSource::Fixed => 0.0,
            TokenSource::Label(l) => self.labels[l].ln(),
            TokenSource::Coord { slot, bin } => self.slots[slot][bin as usize].ln(),
        }
    }
}

/// Tabular logits for every scene, slot and bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    n_scenes: usize,
    n_bins: usize,
    temperature: f64,
    params: Vec<f64>,
}

impl ToyPolicy {
    /// All-zero logits, i.e. uniform over `bin_count + 1` bins.
    pub fn uniform(n_scenes: usize, bin_count: u32, temperature: f64) -> Self {
        let n_bins = bin_count as usize + 1;
        let block = COORD_SLOTS * n_bins + LABELS.len();
        ToyPolicy { n_scenes, n_bins, temperature, params: vec![0.0; n_scenes * block] }
    }

    pub fn n_scenes(&self) -> usize {
        self.n_scenes
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Parameters per scene.
    pub fn block_len(&self) -> usize {
        COORD_SLOTS * self.n_bins + LABELS.len()
    }

    /// Index of a slot's first logit inside a scene block.
    pub fn slot_offset(&self, slot: usize) -> usize {
        slot * self.n_bins
    }

    pub fn label_offset(&self) -> usize {
        COORD_SLOTS * self.n_bins
    }

    pub fn scene_block(&self, scene: usize) -> &[f64] {
        let b = self.block_len();
        &self.params[scene * b..(scene + 1) * b]
    }

    pub fn scene_block_mut(&mut self, scene: usize) -> &mut [f64] {
        let b = self.block_len();
        &mut self.params[scene * b..(scene + 1) * b]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn slot_probs(&self, scene: usize, slot: usize) -> Vec<f64> {
        let o = self.slot_offset(slot);
        softmax(&self.scene_block(scene)[o..o + self.n_bins], self.temperature)
    }

    pub fn label_probs(&self, scene: usize) -> Vec<f64> {
        softmax(&self.scene_block(scene)[self.label_offset()..], self.temperature)
    }

    pub fn scene_probs(&self, scene: usize) -> SceneProbs {
        let slots: Vec<Vec<f64>> = (0..COORD_SLOTS).map(|s| self.slot_probs(scene, s)).collect();
        let labels = self.label_probs(scene);
        let cdfs = slots.iter().map(|p| cumulative(p)).collect();
        let label_cdf = cumulative(&labels);
        SceneProbs { slots, labels, cdfs, label_cdf }
    }

    /// Argmax decoding; ties go to the lowest bin.
    pub fn greedy(&self, scene: usize) -> Draw {
        let block = self.scene_block(scene);
        let bins = (0..COORD_SLOTS)
            .map(|s| argmax(&block[self.slot_offset(s)..self.slot_offset(s) + self.n_bins]) as u32)
            .collect();
        Draw { bins, label: argmax(&block[self.label_offset()..]) }
    }

    /// Score of one token, indexed within the scene block.
    pub fn token_score(&self, probs: &SceneProbs, src: TokenSource) -> SparseVec {
        let (offset, p, chosen) = match src {
            TokenSource::Fixed => return SparseVec::default(),
            TokenSource::Label(l) => (self.label_offset(), &probs.labels, l),
            TokenSource::Coord { slot, bin } => (self.slot_offset(slot), &probs.slots[slot], bin as usize),
        };
        let inv_t = 1.0 / self.temperature;
        SparseVec {
            indices: (offset..offset + p.len()).collect(),
            values: p.iter().enumerate().map(|(i, &q)| (if i == chosen { 1.0 } else { 0.0 } - q) * inv_t).collect(),
        }
    }

    /// Log-probabilities of a token sequence, with exact scores when asked.
    pub fn trace(
        &self,
        probs: &SceneProbs,
        sources: &[TokenSource],
        logp_old: &[f64],
        with_scores: bool,
    ) -> LogProbTrace {
        LogProbTrace {
            logp_new: sources.iter().map(|s| probs.logp(*s)).collect(),
            logp_old: logp_old.to_vec(),
            scores: with_scores.then(|| sources.iter().map(|s| self.token_score(probs, *s)).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::restricted_score;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn slot_layout_matches_canonical_pieces() {
        assert_eq!(COORD_SLOTS, 90);
        let d = Draw { bins: (0..COORD_SLOTS as u32).collect(), label: 2 };
        let (pieces, sources) = d.tokens();
        let mut seen = Vec::new();
        for (p, s) in pieces.iter().zip(&sources) {
            if let TokenSource::Coord { slot, bin } = s {
                assert_eq!(p, &bin.to_string());
                seen.push(*slot);
            }
        }
        assert_eq!(seen, (0..COORD_SLOTS).collect::<Vec<_>>());
        assert_eq!(field_of_slot(3), GeomField::Bbox2d);
        assert_eq!(field_of_slot(4), GeomField::Bbox3d);
        assert_eq!(field_of_slot(41), GeomField::Kpts2d);
        assert_eq!(field_of_slot(42), GeomField::Kpts3d);
        assert!(sources.contains(&TokenSource::Label(2)));
    }

    #[test]
    fn uniform_probabilities_and_sampling() {
        let pol = ToyPolicy::uniform(2, 1000, 1.0);
        let probs = pol.scene_probs(1);
        assert!(probs.slots.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!((probs.logp(TokenSource::Coord { slot: 0, bin: 7 }) + 1001f64.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = probs.sample(&mut rng);
        assert!(a.bins.iter().all(|b| *b <= 1000));
        assert_eq!(probs.greedy().bins, vec![0; COORD_SLOTS]);
    }

    #[test]
    fn scores_are_gradients_of_log_probs() {
        let mut pol = ToyPolicy::uniform(1, 10, 0.7);
        for (i, v) in pol.params_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) * 0.3;
        }
        let src = TokenSource::Coord { slot: 5, bin: 3 };
        let probs = pol.scene_probs(0);
        let score = pol.token_score(&probs, src);
        let h = 1e-6;
        for (&i, &g) in score.indices.iter().zip(&score.values) {
            let mut up = pol.clone();
            up.params_mut()[i] += h;
            let mut dn = pol.clone();
            dn.params_mut()[i] -= h;
            let fd = (up.scene_probs(0).logp(src) - dn.scene_probs(0).logp(src)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7, "{i}: {fd} vs {g}");
        }
    }

    #[test]
    fn restricted_scores_partition_the_full_score() {
        let pol = ToyPolicy::uniform(1, 20, 1.0);
        let probs = pol.scene_probs(0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = probs.sample(&mut rng);
        let (_, sources) = d.tokens();
        let logp: Vec<f64> = sources.iter().map(|s| probs.logp(*s)).collect();
        let trace = pol.trace(&probs, &sources, &logp, true);
        let all: Vec<usize> = (0..sources.len()).collect();
        let full = restricted_score(&trace, &all).unwrap().to_dense(pol.block_len());
        let mut parts = vec![0.0; pol.block_len()];
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); 5];
        for (t, s) in sources.iter().enumerate() {
            let b = match s {
                TokenSource::Coord { slot, .. } => field_of_slot(*slot).index(),
                _ => 4,
            };
            buckets[b].push(t);
        }
        for b in &buckets {
            restricted_score(&trace, b).unwrap().add_into(&mut parts, 1.0);
        }
        for (x, y) in full.iter().zip(&parts) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
