//! Geometric kernels: axis-aligned boxes, keypoint containment, pinhole
//! projection and coordinate quantization.
//!
//! Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A corner is rejected for projection when its camera-space depth is at or
/// below this value.
pub const DEPTH_EPSILON: f64 = 1e-6;

const ROTATION_TOLERANCE: f64 = 1e-6;

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("no points")]
    NoPoints,
    #[error("bin out of range: {bin} not in 0..={bin_count}")]
    BinOutOfRange { bin: u32, bin_count: u32 },
    #[error("invalid quantization range: lo={lo}, hi={hi}, bin_count={bin_count}")]
    InvalidRange { lo: f64, hi: f64, bin_count: u32 },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("keypoint dimensionality does not match the target box")]
    DimensionMismatch,
}

/// Axis-aligned box in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let b = Box2D { x_min, y_min, x_max, y_max };
        if !b.as_array().iter().all(|v| v.is_finite()) || x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvalidBox(format!("{:?}", b.as_array())));
        }
        Ok(b)
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed containment: boundary points are inside.
    pub fn contains(&self, p: Point2) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub min: Point3,
    pub max: Point3,
}

impl Box3D {
    pub fn new(min: Point3, max: Point3) -> Result<Self, GeometryError> {
        let ok = (0..3).all(|i| min[i].is_finite() && max[i].is_finite() && min[i] <= max[i]);
        if !ok {
            return Err(GeometryError::InvalidBox(format!("{min:?} .. {max:?}")));
        }
        Ok(Box3D { min, max })
    }

    /// `[x_min, y_min, z_min, x_max, y_max, z_max]`.
    pub fn from_array(v: [f64; 6]) -> Result<Self, GeometryError> {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.min[0], self.min[1], self.min[2], self.max[0], self.max[1], self.max[2]]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn volume(&self) -> f64 {
        self.extent(0) * self.extent(1) * self.extent(2)
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// The eight corners, x varying fastest.
    pub fn corners(&self) -> [Point3; 8] {
        let mut out = [[0.0; 3]; 8];
        for (j, c) in out.iter_mut().enumerate() {
            for axis in 0..3 {
                c[axis] = if j >> axis & 1 == 0 { self.min[axis] } else { self.max[axis] };
            }
        }
        out
    }
}

/// Predicted or reference keypoints, tagged by dimensionality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KeypointSet {
    Planar(Vec<Point2>),
    Spatial(Vec<Point3>),
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        match self {
            KeypointSet::Planar(p) => p.len(),
            KeypointSet::Spatial(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Target region for [`keypoint_containment`].
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Planar(&'a Box2D),
    Spatial(&'a Box3D),
}

fn overlap_1d(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

/// Intersection over union of two image boxes; 0 when the union has no area.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = overlap_1d(a.x_min, a.x_max, b.x_min, b.x_max) * overlap_1d(a.y_min, a.y_max, b.y_min, b.y_max);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection over union of two world boxes; 0 when the union has no volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter: f64 = (0..3).map(|i| overlap_1d(a.min[i], a.max[i], b.min[i], b.max[i])).product();
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of keypoints inside the (closed) target region. An empty set
/// scores 0.
pub fn keypoint_containment(kpts: &KeypointSet, region: Region<'_>) -> Result<f64, GeometryError> {
    let (inside, total) = match (kpts, region) {
        (KeypointSet::Planar(pts), Region::Planar(b)) => (pts.iter().filter(|p| b.contains(**p)).count(), pts.len()),
        (KeypointSet::Spatial(pts), Region::Spatial(b)) => (pts.iter().filter(|p| b.contains(**p)).count(), pts.len()),
        _ => return Err(GeometryError::DimensionMismatch),
    };
    if total == 0 {
        return Ok(0.0);
    }
    Ok(inside as f64 / total as f64)
}

/// Pinhole camera: intrinsics `k` and world-to-camera extrinsics `(r, t)`.
/// Serializes in the wire form and validates on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationWire", into = "CalibrationWire")]
pub struct CameraCalibration {
    pub k: [[f64; 3]; 3],
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

/// Wire form: `{"K": [9 row-major], "R": [9 row-major], "t": [3]}`.
#[derive(Serialize, Deserialize)]
struct CalibrationWire {
    #[serde(rename = "K")]
    k: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: Vec<f64>,
}

impl From<CameraCalibration> for CalibrationWire {
    fn from(c: CameraCalibration) -> Self {
        let flat = |m: &[[f64; 3]; 3]| m.iter().flatten().copied().collect::<Vec<_>>();
        CalibrationWire { k: flat(&c.k), r: flat(&c.r), t: c.t.to_vec() }
    }
}

impl TryFrom<CalibrationWire> for CameraCalibration {
    type Error = GeometryError;

    fn try_from(wire: CalibrationWire) -> Result<Self, GeometryError> {
        if wire.k.len() != 9 || wire.r.len() != 9 || wire.t.len() != 3 {
            return Err(GeometryError::InvalidCalibration("expected K[9], R[9], t[3]".into()));
        }
        CameraCalibration::new(rows(&wire.k), rows(&wire.r), [wire.t[0], wire.t[1], wire.t[2]])
    }
}

fn rows(v: &[f64]) -> [[f64; 3]; 3] {
    [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]
}

fn mat_vec(m: &[[f64; 3]; 3], v: Point3) -> Point3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

impl CameraCalibration {
    pub fn new(k: [[f64; 3]; 3], r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self, GeometryError> {
        let cal = CameraCalibration { k, r, t };
        cal.validate()?;
        Ok(cal)
    }

    /// Simple intrinsics with square pixels and no skew.
    pub fn intrinsics(focal: f64, cx: f64, cy: f64) -> [[f64; 3]; 3] {
        [[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]]
    }

    pub fn identity_rotation() -> [[f64; 3]; 3] {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let k = &self.k;
        let all_finite =
            k.iter().chain(self.r.iter()).flatten().all(|v| v.is_finite()) && self.t.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(GeometryError::InvalidCalibration("non-finite entry".into()));
        }
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
            return Err(GeometryError::InvalidCalibration("K must be upper-triangular".into()));
        }
        if k[0][0] <= 0.0 || k[1][1] <= 0.0 {
            return Err(GeometryError::InvalidCalibration("focal lengths must be positive".into()));
        }
        if k[2][2] != 1.0 {
            return Err(GeometryError::InvalidCalibration("K[2][2] must be 1".into()));
        }
        let r = &self.r;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|c| r[i][c] * r[j][c]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ROTATION_TOLERANCE {
                    return Err(GeometryError::InvalidCalibration("R is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidCalibration("det(R) must be +1".into()));
        }
        Ok(())
    }

    pub fn from_json_value(v: &serde_json::Value) -> Result<Self, GeometryError> {
        let wire: CalibrationWire =
            serde_json::from_value(v.clone()).map_err(|e| GeometryError::InvalidCalibration(e.to_string()))?;
        wire.try_into()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("calibration serializes")
    }

    /// Homogeneous image coordinate `K (R p + t)`.
    pub fn project_homogeneous(&self, p: Point3) -> Point3 {
        let cam = mat_vec(&self.r, p);
        mat_vec(&self.k, [cam[0] + self.t[0], cam[1] + self.t[1], cam[2] + self.t[2]])
    }
}

/// Projected corners of a 3D box. `valid` is false if any corner has depth
/// at or below [`DEPTH_EPSILON`]; the points are then not meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: [Point2; 8],
    pub depths: [f64; 8],
    pub valid: bool,
}

pub fn project_corners(b: &Box3D, cal: &CameraCalibration) -> Projection {
    let mut points = [[0.0; 2]; 8];
    let mut depths = [0.0; 8];
    let mut valid = true;
    for (j, c) in b.corners().into_iter().enumerate() {
        let h = cal.project_homogeneous(c);
        depths[j] = h[2];
        if h[2] <= DEPTH_EPSILON {
            valid = false;
            points[j] = [f64::NAN, f64::NAN];
        } else {
            points[j] = [h[0] / h[2], h[1] / h[2]];
        }
    }
    Projection { points, depths, valid }
}

/// Smallest axis-aligned box enclosing the points.
pub fn enclosing_box_2d(points: &[Point2]) -> Result<Box2D, GeometryError> {
    let first = points.first().ok_or(GeometryError::NoPoints)?;
    let mut b = Box2D { x_min: first[0], y_min: first[1], x_max: first[0], y_max: first[1] };
    for p in &points[1..] {
        b.x_min = b.x_min.min(p[0]);
        b.y_min = b.y_min.min(p[1]);
        b.x_max = b.x_max.max(p[0]);
        b.y_max = b.y_max.max(p[1]);
    }
    if !b.as_array().iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidBox("non-finite point".into()));
    }
    Ok(b)
}

/// Footprint of a 3D box in the image, or `None` when a corner is behind
/// the camera.
pub fn reprojected_box(b: &Box3D, cal: &CameraCalibration) -> Option<Box2D> {
    let proj = project_corners(b, cal);
    if !proj.valid {
        return None;
    }
    enclosing_box_2d(&proj.points).ok()
}

/// Uniform binning of `[lo, hi]` into bins `0..=bin_count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantRange {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "QuantRange::default_bin_count")]
    pub bin_count: u32,
}

impl QuantRange {
    pub const DEFAULT_BIN_COUNT: u32 = 1000;

    fn default_bin_count() -> u32 {
        Self::DEFAULT_BIN_COUNT
    }

    pub fn new(lo: f64, hi: f64, bin_count: u32) -> Result<Self, GeometryError> {
        let r = QuantRange { lo, hi, bin_count };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi && self.bin_count >= 1) {
            return Err(GeometryError::InvalidRange { lo: self.lo, hi: self.hi, bin_count: self.bin_count });
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bin_count as f64
    }

    /// Clamps into `[lo, hi]`, then rounds to the nearest bin.
    pub fn quantize(&self, v: f64) -> u32 {
        let v = if v.is_nan() { self.lo } else { v.clamp(self.lo, self.hi) };
        let scaled = (v - self.lo) / (self.hi - self.lo) * self.bin_count as f64;
        (scaled.round() as u32).min(self.bin_count)
    }

    pub fn dequantize(&self, bin: u32) -> Result<f64, GeometryError> {
        if bin > self.bin_count {
            return Err(GeometryError::BinOutOfRange { bin, bin_count: self.bin_count });
        }
        if bin == self.bin_count {
            return Ok(self.hi);
        }
        Ok(self.lo + bin as f64 / self.bin_count as f64 * (self.hi - self.lo))
    }
}

/// Per-axis quantization ranges: `u`/`v` for image coordinates, `x`/`y`/`z`
/// for world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantRanges {
    pub u: QuantRange,
    pub v: QuantRange,
    pub x: QuantRange,
    pub y: QuantRange,
    pub z: QuantRange,
}

impl QuantRanges {
    /// Image axes over `[0, width] x [0, height]` pixels, world axes over
    /// `[-1, 1]`.
    pub fn for_image(width: f64, height: f64, bin_count: u32) -> Result<Self, GeometryError> {
        Ok(QuantRanges {
            u: QuantRange::new(0.0, width, bin_count)?,
            v: QuantRange::new(0.0, height, bin_count)?,
            x: QuantRange::new(-1.0, 1.0, bin_count)?,
            y: QuantRange::new(-1.0, 1.0, bin_count)?,
            z: QuantRange::new(-1.0, 1.0, bin_count)?,
        })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for r in [self.u, self.v, self.x, self.y, self.z] {
            r.validate()?;
        }
        Ok(())
    }

    pub fn planar(&self) -> [QuantRange; 2] {
        [self.u, self.v]
    }

    pub fn spatial(&self) -> [QuantRange; 3] {
        [self.x, self.y, self.z]
    }
}

impl Default for QuantRanges {
    fn default() -> Self {
        QuantRanges::for_image(512.0, 512.0, QuantRange::DEFAULT_BIN_COUNT).expect("valid default ranges")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b2(v: [f64; 4]) -> Box2D {
        Box2D::from_array(v).unwrap()
    }

    fn b3(v: [f64; 6]) -> Box3D {
        Box3D::from_array(v).unwrap()
    }

    fn cube_camera(tz: f64) -> CameraCalibration {
        CameraCalibration::new(
            CameraCalibration::intrinsics(100.0, 100.0, 100.0),
            CameraCalibration::identity_rotation(),
            [0.0, 0.0, tz],
        )
        .unwrap()
    }

    #[test]
    fn iou_2d_examples() {
        assert_eq!(iou_2d(&b2([0.0, 0.0, 2.0, 2.0]), &b2([0.0, 0.0, 2.0, 2.0])), 1.0);
        assert!((iou_2d(&b2([0.0, 0.0, 2.0, 2.0]), &b2([1.0, 1.0, 3.0, 3.0])) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou_2d(&b2([0.0, 0.0, 1.0, 1.0]), &b2([2.0, 2.0, 3.0, 3.0])), 0.0);
        let point = b2([1.0, 1.0, 1.0, 1.0]);
        assert_eq!(iou_2d(&point, &point), 0.0);
    }

    #[test]
    fn iou_3d_examples() {
        let unit = b3([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(iou_3d(&unit, &unit), 1.0);
        let shifted = b3([0.5, 0.0, 0.0, 1.5, 1.0, 1.0]);
        assert!((iou_3d(&unit, &shifted) - 1.0 / 3.0).abs() < 1e-12);
        let touching = b3([1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        assert_eq!(iou_3d(&unit, &touching), 0.0);
    }

    #[test]
    fn containment_counts() {
        let target = b2([0.0, 0.0, 10.0, 10.0]);
        let mut pts: Vec<Point2> = (0..12).map(|i| [i as f64 * 0.5, 5.0]).collect();
        pts.extend((0..4).map(|i| [20.0 + i as f64, 5.0]));
        let kp = KeypointSet::Planar(pts);
        assert_eq!(keypoint_containment(&kp, Region::Planar(&target)).unwrap(), 0.75);
        let boundary = KeypointSet::Planar(vec![[0.0, 0.0], [10.0, 10.0]]);
        assert_eq!(keypoint_containment(&boundary, Region::Planar(&target)).unwrap(), 1.0);
        let empty = KeypointSet::Planar(vec![]);
        assert_eq!(keypoint_containment(&empty, Region::Planar(&target)).unwrap(), 0.0);
        let spatial = KeypointSet::Spatial(vec![[0.0; 3]]);
        assert_eq!(keypoint_containment(&spatial, Region::Planar(&target)), Err(GeometryError::DimensionMismatch));
    }

    #[test]
    fn cube_projection() {
        let cube = b3([-0.5, -0.5, -0.5, 0.5, 0.5, 0.5]);
        let proj = project_corners(&cube, &cube_camera(5.0));
        assert!(proj.valid);
        let footprint = enclosing_box_2d(&proj.points).unwrap();
        let lo = 100.0 - 0.5 / 4.5 * 100.0;
        let hi = 100.0 + 0.5 / 4.5 * 100.0;
        for (got, want) in footprint.as_array().iter().zip([lo, lo, hi, hi]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(!project_corners(&cube, &cube_camera(-5.0)).valid);
        assert!(reprojected_box(&cube, &cube_camera(-5.0)).is_none());
    }

    #[test]
    fn degenerate_box_projects_to_principal_point() {
        let point = b3([0.0, 0.0, 5.0, 0.0, 0.0, 5.0]);
        let proj = project_corners(&point, &cube_camera(0.0));
        assert!(proj.valid);
        for p in proj.points {
            assert_eq!(p, [100.0, 100.0]);
        }
    }

    #[test]
    fn enclosing_box_examples() {
        assert_eq!(enclosing_box_2d(&[[1.0, 2.0]]).unwrap().as_array(), [1.0, 2.0, 1.0, 2.0]);
        assert_eq!(enclosing_box_2d(&[[0.0, 0.0], [2.0, 1.0], [1.0, 3.0]]).unwrap().as_array(), [0.0, 0.0, 2.0, 3.0]);
        assert_eq!(enclosing_box_2d(&[]), Err(GeometryError::NoPoints));
    }

    #[test]
    fn quantization_endpoints() {
        let r = QuantRange::new(-1.0, 1.0, 1000).unwrap();
        assert_eq!(r.quantize(-1.0), 0);
        assert_eq!(r.quantize(1.0), 1000);
        assert_eq!(r.quantize(0.0), 500);
        assert_eq!(r.quantize(7.0), 1000);
        assert_eq!(r.quantize(-7.0), 0);
        assert_eq!(r.dequantize(1000).unwrap(), 1.0);
        assert_eq!(r.dequantize(1001), Err(GeometryError::BinOutOfRange { bin: 1001, bin_count: 1000 }));
        assert!(QuantRange::new(1.0, 1.0, 10).is_err());
        assert!(QuantRange::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn calibration_validation() {
        let bad_r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(CameraCalibration::new(CameraCalibration::intrinsics(1.0, 0.0, 0.0), bad_r, [0.0; 3]).is_err());
        let mut k = CameraCalibration::intrinsics(1.0, 0.0, 0.0);
        k[2][2] = 2.0;
        assert!(CameraCalibration::new(k, CameraCalibration::identity_rotation(), [0.0; 3]).is_err());
        let cal = cube_camera(5.0);
        let json = cal.to_json_value();
        assert_eq!(CameraCalibration::from_json_value(&json).unwrap(), cal);
        let short = serde_json::json!({"K": [1, 0, 0], "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "t": [0, 0, 0]});
        assert!(CameraCalibration::from_json_value(&short).is_err());
    }
}
