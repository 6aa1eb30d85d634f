//! Synthetic calibrated scenes.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::credit::GroundTruth;
use crate::geometry::{
    enclosing_box_2d, project_corners, Box2D, Box3D, CameraCalibration, Point3, QuantRanges, DEPTH_EPSILON,
};
use crate::schema::{quantize_fields, CanonicalFields};

use super::SimError;

pub const LABELS: [&str; 8] = ["chair", "table", "lamp", "mug", "sofa", "bottle", "bed", "car"];
pub const KEYPOINTS_PER_SCENE: usize = 16;
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub image_size: f64,
    pub focal: f64,
    pub min_half_extent: f64,
    pub max_half_extent: f64,
    /// Box centers are drawn from `[-center_range, center_range]^3`.
    pub center_range: f64,
    pub min_distance: f64,
    pub max_distance: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    /// Share of 3D keypoints placed just inside a box face rather than in
    /// the interior.
    pub face_fraction: f64,
    pub face_inset: f64,
    /// Keypoints not on a face stay within this fraction of each extent,
    /// centered.
    pub interior_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 512.0,
            focal: 250.0,
            min_half_extent: 0.15,
            max_half_extent: 0.45,
            center_range: 0.4,
            min_distance: 2.5,
            max_distance: 3.5,
            min_elevation_deg: 15.0,
            max_elevation_deg: 35.0,
            face_fraction: 0.75,
            face_inset: 1e-4,
            interior_fraction: 0.8,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.image_size > 0.0 && self.focal > 0.0) {
            return bad("image_size and focal must be positive");
        }
        if !(0.0 < self.min_half_extent && self.min_half_extent <= self.max_half_extent) {
            return bad("half extents must satisfy 0 < min <= max");
        }
        if self.center_range < 0.0 || self.center_range + self.max_half_extent > 1.0 {
            return bad("boxes must fit inside [-1, 1]^3");
        }
        if !(0.0 < self.min_distance && self.min_distance <= self.max_distance) {
            return bad("camera distances must satisfy 0 < min <= max");
        }
        if self.min_elevation_deg > self.max_elevation_deg {
            return bad("min elevation exceeds max elevation");
        }
        if !(0.0..=1.0).contains(&self.face_fraction) || !(0.0 < self.interior_fraction && self.interior_fraction < 1.0)
        {
            return bad("face_fraction must be in [0, 1] and interior_fraction in (0, 1)");
        }
        if !(self.face_inset > 0.0) {
            return bad("face_inset must be positive");
        }
        Ok(())
    }

    pub fn ranges(&self) -> QuantRanges {
        QuantRanges::for_image(self.image_size, self.image_size, crate::geometry::QuantRange::DEFAULT_BIN_COUNT)
            .expect("image size validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_code: usize,
    pub gt_box3d: Box3D,
    pub camera: CameraCalibration,
    pub gt_box2d: Box2D,
    pub gt_kpts3d: Vec<Point3>,
    pub gt_kpts2d: Vec<[f64; 2]>,
    pub answer_label: usize,
}

impl Scene {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth { bbox2d: self.gt_box2d, bbox3d: self.gt_box3d }
    }

    pub fn label(&self) -> &'static str {
        LABELS[self.answer_label]
    }

    /// Quantized ground truth in the output schema.
    pub fn target_fields(&self, ranges: &QuantRanges) -> CanonicalFields {
        quantize_fields(
            self.label(),
            &description_for(self.answer_label),
            &self.gt_box2d,
            &self.gt_box3d,
            &self.gt_kpts2d,
            &self.gt_kpts3d,
            ranges,
        )
    }
}

/// The description text is a fixed function of the answer.
pub fn description_for(label: usize) -> String {
    format!("a {} seen from above", LABELS[label])
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: Point3) -> Point3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// World-to-camera extrinsics for a camera at `eye` looking at `target`,
/// with +z up in the world and x right, y down, z forward in the camera.
pub fn look_at(eye: Point3, target: Point3) -> ([[f64; 3]; 3], [f64; 3]) {
    let forward = normalize(sub(target, eye));
    let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
    let down = cross(forward, right);
    let r = [right, down, forward];
    let t = [
        -(r[0][0] * eye[0] + r[0][1] * eye[1] + r[0][2] * eye[2]),
        -(r[1][0] * eye[0] + r[1][1] * eye[1] + r[1][2] * eye[2]),
        -(r[2][0] * eye[0] + r[2][1] * eye[1] + r[2][2] * eye[2]),
    ];
    (r, t)
}

fn try_scene(code: usize, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Option<Scene> {
    let center: Point3 = std::array::from_fn(|_| rng.gen_range(-cfg.center_range..=cfg.center_range));
    let half: Point3 = std::array::from_fn(|_| rng.gen_range(cfg.min_half_extent..=cfg.max_half_extent));
    // Faces sit exactly on bin values, so quantized ground truth reproduces
    // the box and its face keypoints exactly.
    let ranges = cfg.ranges();
    let axes = ranges.spatial();
    let snap = |a: usize, v: f64| axes[a].dequantize(axes[a].quantize(v)).expect("quantized bin is in range");
    let gt_box3d = Box3D::new(
        std::array::from_fn(|a| snap(a, center[a] - half[a])),
        std::array::from_fn(|a| snap(a, center[a] + half[a])),
    )
    .ok()?;

    let distance = rng.gen_range(cfg.min_distance..=cfg.max_distance);
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let elevation = rng.gen_range(cfg.min_elevation_deg..=cfg.max_elevation_deg).to_radians();
    let eye = [
        center[0] + distance * elevation.cos() * azimuth.cos(),
        center[1] + distance * elevation.cos() * azimuth.sin(),
        center[2] + distance * elevation.sin(),
    ];
    let (r, t) = look_at(eye, center);
    let c = cfg.image_size / 2.0;
    let camera = CameraCalibration::new(CameraCalibration::intrinsics(cfg.focal, c, c), r, t).ok()?;

    let proj = project_corners(&gt_box3d, &camera);
    if !proj.valid || proj.depths.iter().any(|d| *d < DEPTH_EPSILON) {
        return None;
    }
    let gt_box2d = enclosing_box_2d(&proj.points).ok()?;
    if gt_box2d.x_min < 0.0
        || gt_box2d.y_min < 0.0
        || gt_box2d.x_max > cfg.image_size
        || gt_box2d.y_max > cfg.image_size
    {
        return None;
    }

    let inner = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let margin = (hi - lo) * (1.0 - cfg.interior_fraction) / 2.0;
        rng.gen_range(lo + margin..=hi - margin)
    };
    let gt_kpts3d = (0..KEYPOINTS_PER_SCENE)
        .map(|_| {
            let mut p: Point3 = std::array::from_fn(|a| inner(rng, gt_box3d.min[a], gt_box3d.max[a]));
            if rng.gen_bool(cfg.face_fraction) {
                let axis = rng.gen_range(0..3);
                p[axis] = if rng.gen_bool(0.5) {
                    gt_box3d.min[axis] + cfg.face_inset
                } else {
                    gt_box3d.max[axis] - cfg.face_inset
                };
            }
            p
        })
        .collect();
    let gt_kpts2d = (0..KEYPOINTS_PER_SCENE)
        .map(|_| [inner(rng, gt_box2d.x_min, gt_box2d.x_max), inner(rng, gt_box2d.y_min, gt_box2d.y_max)])
        .collect();
    let answer_label = rng.gen_range(0..LABELS.len());
    Some(Scene { scene_code: code, gt_box3d, camera, gt_box2d, gt_kpts3d, gt_kpts2d, answer_label })
}

/// Deterministic scene list for `seed`.
pub fn generate_scenes(seed: u64, count: usize, cfg: &SceneConfig) -> Result<Vec<Scene>, SimError> {
    if count == 0 {
        return Err(SimError::Config("scene count must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|code| {
            (0..MAX_ATTEMPTS)
                .find_map(|_| try_scene(code, cfg, &mut rng))
                .ok_or(SimError::SceneGeneration { attempts: MAX_ATTEMPTS })
        })
        .collect()
}

/// One scene per line.
pub fn scenes_to_jsonl(scenes: &[Scene]) -> String {
    scenes.iter().map(|s| serde_json::to_string(s).expect("scene serializes") + "\n").collect()
}

pub fn scenes_from_jsonl(text: &str) -> Result<Vec<Scene>, SimError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SimError::Format(format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credit::score_output;
    use crate::geometry::{iou_2d, iou_3d, keypoint_containment, KeypointSet, Region};
    use crate::schema::{parse_text, serialize_fields};

    #[test]
    fn deterministic_and_in_front_of_camera() {
        let cfg = SceneConfig::default();
        let a = generate_scenes(3, 20, &cfg).unwrap();
        assert_eq!(a, generate_scenes(3, 20, &cfg).unwrap());
        assert_ne!(a, generate_scenes(4, 20, &cfg).unwrap());
        for s in &a {
            let p = project_corners(&s.gt_box3d, &s.camera);
            assert!(p.valid && p.depths.iter().all(|d| *d >= DEPTH_EPSILON));
        }
    }

    #[test]
    fn ground_truth_is_self_consistent() {
        for s in generate_scenes(1, 10, &SceneConfig::default()).unwrap() {
            let footprint = enclosing_box_2d(&project_corners(&s.gt_box3d, &s.camera).points).unwrap();
            assert_eq!(iou_2d(&s.gt_box2d, &footprint), 1.0);
            assert_eq!(iou_3d(&s.gt_box3d, &s.gt_box3d), 1.0);
            let k3 = KeypointSet::Spatial(s.gt_kpts3d.clone());
            let k2 = KeypointSet::Planar(s.gt_kpts2d.clone());
            assert_eq!(keypoint_containment(&k3, Region::Spatial(&s.gt_box3d)).unwrap(), 1.0);
            assert_eq!(keypoint_containment(&k2, Region::Planar(&s.gt_box2d)).unwrap(), 1.0);
            for p in &s.gt_kpts3d {
                assert!((0..3).all(|a| s.gt_box3d.min[a] < p[a] && p[a] < s.gt_box3d.max[a]));
            }
        }
    }

    #[test]
    fn quantized_targets_score_near_one() {
        let cfg = SceneConfig::default();
        let ranges = cfg.ranges();
        for s in generate_scenes(2, 10, &cfg).unwrap() {
            let text = serialize_fields(&s.target_fields(&ranges)).0.text;
            let r = score_output(&parse_text(&text), &s.ground_truth(), &ranges, Some(&s.camera)).rewards;
            assert!(r.fields[0] > 0.98 && r.rpc > 0.97, "{r:?}");
            assert_eq!(r.fields[1], 1.0);
            assert_eq!(r.fields[2], 1.0);
            assert_eq!(r.fields[3], 1.0);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let scenes = generate_scenes(5, 3, &SceneConfig::default()).unwrap();
        assert_eq!(scenes_from_jsonl(&scenes_to_jsonl(&scenes)).unwrap(), scenes);
        assert!(scenes_from_jsonl("{}\n").is_err());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_scenes(0, 0, &SceneConfig::default()).is_err());
        let cfg = SceneConfig { center_range: 0.9, ..SceneConfig::default() };
        assert!(generate_scenes(0, 1, &cfg).is_err());
        // A camera far too close puts the footprint outside the image every time.
        let cfg = SceneConfig { min_distance: 0.01, max_distance: 0.01, ..SceneConfig::default() };
        assert_eq!(generate_scenes(0, 1, &cfg), Err(SimError::SceneGeneration { attempts: 100 }));
    }
}
