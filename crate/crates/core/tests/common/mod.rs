//! Reference computations shared by the integration tests. The IoU oracles
//! count grid cells and never call the library's geometry code.

#![allow(dead_code)]

pub mod fuzz;

use grca::geometry::{Box2D, Box3D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// IoU by counting cell centres of an `n x n` grid laid over the bounding
/// box of the union.
pub fn raster_iou_2d(a: &Box2D, b: &Box2D, n: usize) -> f64 {
    let (a, b) = (a.as_array(), b.as_array());
    let lo = [a[0].min(b[0]), a[1].min(b[1])];
    let hi = [a[2].max(b[2]), a[3].max(b[3])];
    let step = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
    let inside = |bx: &[f64; 4], axis: usize, v: f64| bx[axis] <= v && v <= bx[axis + 2];
    let (mut inter, mut union) = (0u64, 0u64);
    for j in 0..n {
        let y = lo[1] + (j as f64 + 0.5) * step[1];
        let (ay, by) = (inside(&a, 1, y), inside(&b, 1, y));
        if !ay && !by {
            continue;
        }
        for i in 0..n {
            let x = lo[0] + (i as f64 + 0.5) * step[0];
            let ia = ay && inside(&a, 0, x);
            let ib = by && inside(&b, 0, x);
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU by counting voxel centres of an `n^3` grid over the union's bounds.
pub fn voxel_iou_3d(a: &Box3D, b: &Box3D, n: usize) -> f64 {
    let lo: Vec<f64> = (0..3).map(|i| a.min[i].min(b.min[i])).collect();
    let hi: Vec<f64> = (0..3).map(|i| a.max[i].max(b.max[i])).collect();
    let centre = |axis: usize, k: usize| lo[axis] + (k as f64 + 0.5) * (hi[axis] - lo[axis]) / n as f64;
    let inside = |bx: &Box3D, axis: usize, v: f64| bx.min[axis] <= v && v <= bx.max[axis];
    let (mut inter, mut union) = (0u64, 0u64);
    for k in 0..n {
        let z = centre(2, k);
        let (az, bz) = (inside(a, 2, z), inside(b, 2, z));
        if !az && !bz {
            continue;
        }
        for j in 0..n {
            let y = centre(1, j);
            let (ay, by) = (az && inside(a, 1, y), bz && inside(b, 1, y));
            if !ay && !by {
                continue;
            }
            for i in 0..n {
                let x = centre(0, i);
                let ia = ay && inside(a, 0, x);
                let ib = by && inside(b, 0, x);
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Interval inside `[0, 1]` with length at least `min_len`.
fn interval(rng: &mut ChaCha8Rng, min_len: f64) -> (f64, f64) {
    let len = rng.gen_range(min_len..=1.0);
    let start = rng.gen_range(0.0..=1.0 - len);
    (start, start + len)
}

/// A second interval related to the first: overlapping, nested, disjoint or
/// independent, so the pair set covers the whole IoU range.
fn partner(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64), kind: u8, min_len: f64) -> (f64, f64) {
    let len = hi - lo;
    match kind {
        0 => {
            let shift = rng.gen_range(-0.5..0.5) * len;
            let scale = rng.gen_range(0.7..1.3);
            let l = (len * scale).max(min_len);
            (lo + shift, lo + shift + l)
        }
        1 => {
            let a = rng.gen_range(lo..hi - 0.5 * len);
            (a, a + 0.5 * len)
        }
        2 => {
            let gap = rng.gen_range(0.0..0.5);
            (hi + gap, hi + gap + rng.gen_range(min_len..=1.0))
        }
        _ => interval(rng, min_len),
    }
}

pub fn box_pair_2d(rng: &mut ChaCha8Rng) -> (Box2D, Box2D) {
    let kind = rng.gen_range(0..4u8);
    let (ax, ay) = (interval(rng, 0.05), interval(rng, 0.05));
    let (bx, by) = (partner(rng, ax, kind, 0.05), partner(rng, ay, kind.min(1), 0.05));
    (Box2D::new(ax.0, ay.0, ax.1, ay.1).unwrap(), Box2D::new(bx.0, by.0, bx.1, by.1).unwrap())
}

pub fn box_pair_3d(rng: &mut ChaCha8Rng) -> (Box3D, Box3D) {
    let kind = rng.gen_range(0..4u8);
    let a: Vec<(f64, f64)> = (0..3).map(|_| interval(rng, 0.2)).collect();
    let b: Vec<(f64, f64)> =
        a.iter().enumerate().map(|(i, &r)| partner(rng, r, if i == 0 { kind } else { kind.min(1) }, 0.2)).collect();
    let make = |v: &[(f64, f64)]| Box3D::new([v[0].0, v[1].0, v[2].0], [v[0].1, v[1].1, v[2].1]).unwrap();
    (make(&a), make(&b))
}

/// Central finite differences of the clipped surrogate on a small random
/// toy policy against the analytic gradient (per-token weights times
/// per-token scores). Returns the max-norm relative error, or `None` when
/// some token ratio sits within 0.02 of a clip boundary.
pub fn surrogate_fd_error(seed: u64, clip_eps: f64) -> Option<f64> {
    use grca::objective::{clipped_surrogate, surrogate_token_weights, SurrogateTerm};
    use grca::simulator::ToyPolicy;
    use rand::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = ToyPolicy::uniform(1, 12, rng.gen_range(0.5..1.5));
    for v in policy.params_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut old = policy.clone();
    for v in old.params_mut() {
        *v += rng.gen_range(-0.03..0.03);
    }
    let old_probs = old.scene_probs(0);
    let members: Vec<_> = (0..4)
        .map(|_| {
            let (_, sources) = old_probs.sample(&mut rng).tokens();
            let logp_old: Vec<f64> = sources.iter().map(|s| old_probs.logp(*s)).collect();
            let adv: Vec<f64> = sources.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
            (sources, logp_old, adv)
        })
        .collect();

    let objective = |p: &ToyPolicy| {
        let probs = p.scene_probs(0);
        let traces: Vec<_> = members.iter().map(|(s, lo, _)| p.trace(&probs, s, lo, false)).collect();
        let terms: Vec<_> =
            traces.iter().zip(&members).map(|(t, m)| SurrogateTerm { trace: t, advantages: &m.2 }).collect();
        clipped_surrogate(&terms, clip_eps).unwrap()
    };

    let probs = policy.scene_probs(0);
    let traces: Vec<_> = members.iter().map(|(s, lo, _)| policy.trace(&probs, s, lo, false)).collect();
    for t in &traces {
        for (n, o) in t.logp_new.iter().zip(&t.logp_old) {
            let r = (n - o).exp();
            if !(r > 1.0 - clip_eps + 0.02 && r < 1.0 + clip_eps - 0.02) {
                return None;
            }
        }
    }
    let terms: Vec<_> =
        traces.iter().zip(&members).map(|(t, m)| SurrogateTerm { trace: t, advantages: &m.2 }).collect();
    let weights = surrogate_token_weights(&terms, clip_eps).unwrap();
    let dim = policy.params().len();
    let mut grad = vec![0.0; dim];
    for ((sources, _, _), w) in members.iter().zip(&weights) {
        for (s, wt) in sources.iter().zip(w) {
            policy.token_score(&probs, *s).add_into(&mut grad, *wt);
        }
    }

    let h = 1e-6;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for (i, g) in grad.iter().enumerate() {
        let mut up = policy.clone();
        up.params_mut()[i] += h;
        let mut dn = policy.clone();
        dn.params_mut()[i] -= h;
        let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
        worst = worst.max((fd - g).abs());
        scale = scale.max(g.abs());
    }
    Some(worst / scale)
}
