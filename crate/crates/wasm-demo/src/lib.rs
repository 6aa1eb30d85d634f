//! Browser bindings for the demo page in `www/`. Each export takes a JSON
//! string and returns a JSON string; the `*_json` functions are the same
//! operations for native callers and tests.

use grca::commands::group_from_pieces;
use grca::credit::{route_advantages, AdvantageMode, CreditConfig, FieldRewards};
use grca::geometry::{iou_2d, iou_3d, project_corners, reprojected_box, Box2D, Box3D, CameraCalibration};
use grca::schema::{parse_text, GeomField};
use grca::simulator::look_at;
use grca::spans::{reference_tokenizer, TokenOwner, TokenizerMode};
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse<'a, T: Deserialize<'a>>(input: &'a str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("bad input: {e}"))
}

#[derive(Deserialize)]
struct Orbit {
    /// Degrees around the vertical axis.
    azimuth: f64,
    /// Degrees above the horizontal plane; kept inside (-90, 90).
    elevation: f64,
    distance: f64,
    focal: f64,
    image_size: f64,
}

#[derive(Deserialize)]
struct ProjectInput {
    camera: Orbit,
    box3d: [f64; 6],
    /// Predicted 2D box compared against the footprint.
    bbox2d: [f64; 4],
}

/// Projects a 3D box through an orbiting camera and scores a 2D box
/// against its footprint.
pub fn project_scene_json(input: &str) -> Result<String, String> {
    let p: ProjectInput = parse(input)?;
    let o = &p.camera;
    if !(o.elevation.abs() < 89.0) {
        return Err("elevation must be inside (-89, 89) degrees".into());
    }
    let (az, el) = (o.azimuth.to_radians(), o.elevation.to_radians());
    let eye = [o.distance * el.cos() * az.cos(), o.distance * el.cos() * az.sin(), o.distance * el.sin()];
    let (r, t) = look_at(eye, [0.0, 0.0, 0.0]);
    let k = CameraCalibration::intrinsics(o.focal, o.image_size / 2.0, o.image_size / 2.0);
    let cal = CameraCalibration::new(k, r, t).map_err(|e| e.to_string())?;
    let b3 = Box3D::from_array(p.box3d).map_err(|e| e.to_string())?;
    let b2 = Box2D::from_array(p.bbox2d).map_err(|e| e.to_string())?;
    let proj = project_corners(&b3, &cal);
    let footprint = reprojected_box(&b3, &cal);
    Ok(json!({
        "corners": proj.valid.then_some(proj.points),
        "depths": proj.depths,
        "valid": proj.valid,
        "footprint": footprint.map(|f| f.as_array()),
        "rpc": footprint.map(|f| iou_2d(&b2, &f)).unwrap_or(0.0),
        "camera": cal,
    })
    .to_string())
}

#[derive(Deserialize)]
struct RewardInput {
    bbox2d: f64,
    bbox3d: f64,
    kpts2d: f64,
    kpts3d: f64,
    #[serde(default)]
    rpc: f64,
}

#[derive(Deserialize)]
struct MemberInput {
    text: String,
    rewards: RewardInput,
}

#[derive(Deserialize)]
struct RouteInput {
    lambda: f64,
    members: Vec<MemberInput>,
}

/// Tokenizes each member at digit boundaries, parses it and returns routed
/// and broadcast per-token advantages side by side.
pub fn route_group_json(input: &str) -> Result<String, String> {
    let p: RouteInput = parse(input)?;
    let cfg = CreditConfig { lambda: p.lambda, ..CreditConfig::default() };
    let members: Vec<(Vec<String>, FieldRewards)> = p
        .members
        .iter()
        .map(|m| {
            let view = reference_tokenizer(&m.text, TokenizerMode::DigitBoundary);
            let r = &m.rewards;
            (view.pieces().to_vec(), FieldRewards { fields: [r.bbox2d, r.bbox3d, r.kpts2d, r.kpts3d], rpc: r.rpc })
        })
        .collect();
    let group = group_from_pieces("demo", &members).map_err(|e| e.to_string())?;
    let routed = route_advantages(&group, &cfg, AdvantageMode::Routed).map_err(|e| e.to_string())?;
    let broadcast = route_advantages(&group, &cfg, AdvantageMode::Broadcast).map_err(|e| e.to_string())?;
    let out: Vec<Value> = members
        .iter()
        .enumerate()
        .map(|(i, (pieces, _))| {
            let parsed = parse_text(&p.members[i].text);
            let owners: Vec<&str> = group.members[i]
                .partition
                .owners()
                .iter()
                .map(|o| match o {
                    TokenOwner::Field(f) => f.name(),
                    TokenOwner::Background => "background",
                })
                .collect();
            let statuses: serde_json::Map<String, Value> =
                GeomField::ALL.iter().map(|f| (f.name().to_string(), json!(parsed.status(*f)))).collect();
            json!({
                "pieces": pieces,
                "owners": owners,
                "statuses": statuses,
                "advantages": routed.members[i],
                "routed": routed.tokens[i],
                "broadcast": broadcast.tokens[i],
            })
        })
        .collect();
    Ok(json!({ "lambda": cfg.lambda, "members": out }).to_string())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BoxPair {
    Planar { a2: [f64; 4], b2: [f64; 4] },
    Spatial { a3: [f64; 6], b3: [f64; 6] },
}

/// IoU of two 2D boxes (`a2`, `b2`) or two 3D boxes (`a3`, `b3`).
pub fn box_iou_json(input: &str) -> Result<String, String> {
    let iou = match parse(input)? {
        BoxPair::Planar { a2, b2 } => {
            let a = Box2D::from_array(a2).map_err(|e| e.to_string())?;
            iou_2d(&a, &Box2D::from_array(b2).map_err(|e| e.to_string())?)
        }
        BoxPair::Spatial { a3, b3 } => {
            let a = Box3D::from_array(a3).map_err(|e| e.to_string())?;
            iou_3d(&a, &Box3D::from_array(b3).map_err(|e| e.to_string())?)
        }
    };
    Ok(json!({ "iou": iou }).to_string())
}

#[wasm_bindgen]
pub fn project_scene(input: &str) -> Result<String, JsValue> {
    project_scene_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn route_group(input: &str) -> Result<String, JsValue> {
    route_group_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn box_iou(input: &str) -> Result<String, JsValue> {
    box_iou_json(input).map_err(|e| JsValue::from_str(&e))
}
