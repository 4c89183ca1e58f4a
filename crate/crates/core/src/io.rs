//! Versioned JSON documents for scenes, cameras, annotations, detections and results,
//! and CSV output.
//!
//! Floats are written in shortest round-trip form, so `load(save(doc)) == doc` bit for
//! bit. Loading happens in stages: syntax (errors carry line, column and byte offset),
//! format version, schema (unknown fields are rejected), then domain invariants. A
//! document that loads successfully always converts to valid domain values.

use std::collections::HashMap;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::association::{Detection, DetectionEllipse, LocalizationResult};
use crate::conic::{BBox, Ellipse};
use crate::quadric::{Camera, CameraIntrinsics, Ellipsoid, Pose};
use crate::reconstruction::{Annotation, SceneModel, SceneObject};

pub const FORMAT_VERSION: u32 = 1;

/// Quaternions further than this from unit norm are rejected.
pub const QUATERNION_TOL: f64 = 1e-6;
/// Quaternions within [`QUATERNION_TOL`] but further than this are renormalized.
const QUATERNION_RENORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("parse error at line {line}, column {column} (byte {offset}): {message}")]
    Parse {
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("schema mismatch (format_version {FORMAT_VERSION}): {0}")]
    SchemaMismatch(String),
    #[error("invalid `{object}`: {message}")]
    InvariantViolation { object: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type FormatResult<T> = std::result::Result<T, FormatError>;

fn violation(object: &str, message: impl ToString) -> FormatError {
    FormatError::InvariantViolation {
        object: object.to_string(),
        message: message.to_string(),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Parse, check the version and deserialize a document.
fn parse<T: DeserializeOwned>(text: &str) -> FormatResult<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| FormatError::Parse {
        line: e.line(),
        column: e.column(),
        offset: if e.is_eof() {
            text.len()
        } else {
            byte_offset(text, e.line(), e.column())
        },
        message: e.to_string(),
    })?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(FormatError::SchemaMismatch(format!("unsupported format_version {v}"))),
        None => return Err(FormatError::SchemaMismatch("missing format_version".into())),
    }
    serde_json::from_value(value).map_err(|e| FormatError::SchemaMismatch(e.to_string()))
}

fn render<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn read_file(path: &std::path::Path) -> FormatResult<String> {
    std::fs::read_to_string(path).map_err(|e| FormatError::Io(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &std::path::Path, text: &str) -> FormatResult<()> {
    std::fs::write(path, text).map_err(|e| FormatError::Io(format!("{}: {e}", path.display())))
}

/// Rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> FormatResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| FormatError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| FormatError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ── shared records ──────────────────────────────────────────────────────────

/// `[w, x, y, z]` unit quaternion to rotation matrix, renormalizing tiny drift.
fn rotation_from_quat(q: &[f64; 4], object: &str) -> FormatResult<Matrix3<f64>> {
    if q.iter().any(|x| !x.is_finite()) {
        return Err(violation(object, "non-finite quaternion"));
    }
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = quat.norm();
    if (n - 1.0).abs() > QUATERNION_TOL {
        return Err(violation(object, format!("quaternion norm {n} is not 1")));
    }
    if (n - 1.0).abs() > QUATERNION_RENORM {
        log::warn!("{object}: renormalizing quaternion of norm {n}");
    }
    Ok(*UnitQuaternion::from_quaternion(quat).to_rotation_matrix().matrix())
}

fn quat_from_rotation(r: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_matrix(r);
    let q = q.quaternion();
    // Fix the sign so the document is canonical.
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

fn finite(v: &[f64], object: &str, what: &str) -> FormatResult<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(violation(object, format!("non-finite {what}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// World-to-camera rotation `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// World-to-camera translation.
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose) -> Self {
        let t = p.translation();
        Self {
            rotation: quat_from_rotation(&p.rotation()),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_pose(&self, object: &str) -> FormatResult<Pose> {
        finite(&self.translation, object, "translation")?;
        let r = rotation_from_quat(&self.rotation, object)?;
        Pose::new(r, Vector3::from(self.translation)).map_err(|e| violation(object, e))
    }
}

fn bbox_from(b: &[f64; 4], object: &str) -> FormatResult<BBox> {
    BBox::from_corners(b[0], b[1], b[2], b[3]).map_err(|e| violation(object, e))
}

fn bbox_record(b: &BBox) -> [f64; 4] {
    [b.min().x, b.min().y, b.max().x, b.max().y]
}

// ── scene ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: String,
    pub class: String,
    pub center: [f64; 3],
    pub axes: [f64; 3],
    /// Ellipsoid-to-world rotation `[w, x, y, z]`.
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub format_version: u32,
    pub objects: Vec<ObjectRecord>,
}

impl SceneFile {
    pub fn from_model(m: &SceneModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            objects: m
                .objects()
                .iter()
                .map(|o| {
                    let (c, a) = (o.ellipsoid.center(), o.ellipsoid.axes());
                    ObjectRecord {
                        id: o.id.clone(),
                        class: o.class.clone(),
                        center: [c.x, c.y, c.z],
                        axes: [a.x, a.y, a.z],
                        rotation: quat_from_rotation(&o.ellipsoid.rotation()),
                    }
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> FormatResult<SceneModel> {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                finite(&o.center, &o.id, "center")?;
                finite(&o.axes, &o.id, "axes")?;
                let r = rotation_from_quat(&o.rotation, &o.id)?;
                let e = Ellipsoid::new(Vector3::from(o.center), Vector3::from(o.axes), r)
                    .map_err(|e| violation(&o.id, e))?;
                Ok(SceneObject {
                    id: o.id.clone(),
                    class: o.class.clone(),
                    ellipsoid: e,
                })
            })
            .collect::<FormatResult<Vec<_>>>()?;
        SceneModel::new(objects).map_err(|e| violation("objects", e))
    }

    pub fn load(text: &str) -> FormatResult<Self> {
        let doc: Self = parse(text)?;
        doc.to_model()?;
        Ok(doc)
    }

    pub fn save(&self) -> String {
        render(self)
    }
}

// ── cameras ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera pose; absent when unknown (e.g. the camera to localize).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseRecord>,
}

impl CameraRecord {
    pub fn new(id: impl Into<String>, k: &CameraIntrinsics, width: u32, height: u32, pose: Option<&Pose>) -> Self {
        Self {
            id: id.into(),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width,
            height,
            pose: pose.map(PoseRecord::from_pose),
        }
    }

    pub fn intrinsics(&self) -> FormatResult<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy).map_err(|e| violation(&self.id, e))
    }

    pub fn pose(&self) -> FormatResult<Option<Pose>> {
        self.pose.as_ref().map(|p| p.to_pose(&self.id)).transpose()
    }

    /// Camera with its pose, which must be present.
    pub fn camera(&self) -> FormatResult<Camera> {
        let pose = self
            .pose()?
            .ok_or_else(|| FormatError::SchemaMismatch(format!("camera `{}` has no pose", self.id)))?;
        Ok(Camera {
            intrinsics: self.intrinsics()?,
            pose,
            width: self.width,
            height: self.height,
        })
    }

    fn validate(&self) -> FormatResult<()> {
        self.intrinsics()?;
        self.pose()?;
        if self.width == 0 || self.height == 0 {
            return Err(violation(&self.id, "image size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub format_version: u32,
    pub cameras: Vec<CameraRecord>,
}

impl CameraFile {
    pub fn new(cameras: Vec<CameraRecord>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            cameras,
        }
    }

    pub fn load(text: &str) -> FormatResult<Self> {
        let doc: Self = parse(text)?;
        let mut seen = std::collections::HashSet::new();
        for c in &doc.cameras {
            c.validate()?;
            if !seen.insert(c.id.as_str()) {
                return Err(violation(&c.id, "duplicate camera id"));
            }
        }
        Ok(doc)
    }

    pub fn save(&self) -> String {
        render(self)
    }

    pub fn get(&self, id: &str) -> Option<&CameraRecord> {
        self.cameras.iter().find(|c| c.id == id)
    }

    /// All cameras with poses, by id.
    pub fn posed(&self) -> FormatResult<HashMap<String, Camera>> {
        self.cameras.iter().map(|c| Ok((c.id.clone(), c.camera()?))).collect()
    }
}

// ── annotations ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    /// `[x_min, y_min, x_max, y_max]`, pixels.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationsFile {
    pub format_version: u32,
    pub annotations: Vec<AnnotationRecord>,
}

impl AnnotationsFile {
    pub fn from_annotations(a: &[Annotation]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            annotations: a
                .iter()
                .map(|a| AnnotationRecord {
                    image: a.image.clone(),
                    label: a.label.clone(),
                    class: a.class.clone(),
                    bbox: bbox_record(&a.bbox),
                })
                .collect(),
        }
    }

    pub fn to_annotations(&self) -> FormatResult<Vec<Annotation>> {
        self.annotations
            .iter()
            .map(|a| {
                Ok(Annotation {
                    image: a.image.clone(),
                    bbox: bbox_from(&a.bbox, &a.label)?,
                    label: a.label.clone(),
                    class: a.class.clone(),
                })
            })
            .collect()
    }

    pub fn load(text: &str) -> FormatResult<Self> {
        let doc: Self = parse(text)?;
        doc.to_annotations()?;
        Ok(doc)
    }

    pub fn save(&self) -> String {
        render(self)
    }
}

// ── detections ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseRecord {
    pub center: [f64; 2],
    /// Semi-axes.
    pub axes: [f64; 2],
    /// Radians.
    pub angle: f64,
    /// Scene object this ellipse was predicted for, if specific.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

impl EllipseRecord {
    pub fn from_ellipse(e: &Ellipse, object: Option<String>) -> Self {
        Self {
            center: [e.center().x, e.center().y],
            axes: [e.alpha(), e.beta()],
            angle: e.theta(),
            object,
        }
    }

    pub fn to_ellipse(&self, object: &str) -> FormatResult<Ellipse> {
        Ellipse::new(Vector2::from(self.center), self.axes[0], self.axes[1], self.angle)
            .map_err(|e| violation(object, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub class: String,
    pub score: f64,
    pub bbox: [f64; 4],
    /// Candidate ellipses; empty means the inscribed ellipse of the box.
    #[serde(default)]
    pub ellipses: Vec<EllipseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsFile {
    pub format_version: u32,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionsFile {
    pub fn from_detections(d: &[Detection]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            detections: d
                .iter()
                .map(|d| DetectionRecord {
                    class: d.class().to_string(),
                    score: d.score(),
                    bbox: bbox_record(d.bbox()),
                    ellipses: d
                        .ellipses()
                        .iter()
                        .map(|e| EllipseRecord::from_ellipse(&e.ellipse, e.object.clone()))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_detections(&self) -> FormatResult<Vec<Detection>> {
        self.detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let name = format!("detection {i}");
                let bbox = bbox_from(&d.bbox, &name)?;
                if d.ellipses.is_empty() {
                    return Detection::inscribed(bbox, d.class.clone(), d.score).map_err(|e| violation(&name, e));
                }
                let ellipses = d
                    .ellipses
                    .iter()
                    .map(|e| {
                        Ok(DetectionEllipse {
                            ellipse: e.to_ellipse(&name)?,
                            object: e.object.clone(),
                        })
                    })
                    .collect::<FormatResult<Vec<_>>>()?;
                Detection::new(bbox, d.class.clone(), d.score, ellipses).map_err(|e| violation(&name, e))
            })
            .collect()
    }

    pub fn load(text: &str) -> FormatResult<Self> {
        let doc: Self = parse(text)?;
        doc.to_detections()?;
        Ok(doc)
    }

    pub fn save(&self) -> String {
        render(self)
    }
}

// ── results ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationRecord {
    pub detection: usize,
    pub object: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub format_version: u32,
    pub pose: PoseRecord,
    /// Camera center in world coordinates.
    pub position: [f64; 3],
    pub solver: String,
    pub mean_iou: f64,
    pub minimal_set: Vec<AssociationRecord>,
    pub inliers: Vec<AssociationRecord>,
}

impl ResultFile {
    pub fn from_result(r: &LocalizationResult) -> Self {
        let rec = |a: &crate::association::Association| AssociationRecord {
            detection: a.detection,
            object: a.object_id.clone(),
            iou: a.iou,
        };
        let c = r.pose.center();
        Self {
            format_version: FORMAT_VERSION,
            pose: PoseRecord::from_pose(&r.pose),
            position: [c.x, c.y, c.z],
            solver: r.solver.name().to_string(),
            mean_iou: r.mean_iou,
            minimal_set: r.minimal_set.iter().map(rec).collect(),
            inliers: r.inliers.iter().map(rec).collect(),
        }
    }

    pub fn load(text: &str) -> FormatResult<Self> {
        let doc: Self = parse(text)?;
        doc.pose.to_pose("pose")?;
        doc.solver
            .parse::<crate::solvers::Solver>()
            .map_err(|e| violation("solver", e))?;
        for a in doc.minimal_set.iter().chain(&doc.inliers) {
            if !(0.0..=1.0).contains(&a.iou) {
                return Err(violation(&a.object, "IoU outside [0, 1]"));
            }
        }
        Ok(doc)
    }

    pub fn save(&self) -> String {
        render(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = r#"{
  "format_version": 1,
  "objects": [
    {"id": "cup", "class": "cup", "center": [0.1, 0.2, 0.3], "axes": [0.1, 0.05, 0.04], "rotation": [1, 0, 0, 0]},
    {"id": "book", "class": "book", "center": [1, 0, 0], "axes": [0.2, 0.15, 0.03], "rotation": [0.5, 0.5, 0.5, 0.5]}
  ]
}"#;

    #[test]
    fn scene_round_trip() {
        let doc = SceneFile::load(SCENE).unwrap();
        assert_eq!(SceneFile::load(&doc.save()).unwrap(), doc);
        let model = doc.to_model().unwrap();
        assert_eq!(model.len(), 2);
    }

    #[test]
    fn negative_axis_names_object() {
        let bad = SCENE.replace("[0.2, 0.15, 0.03]", "[0.2, -0.15, 0.03]");
        match SceneFile::load(&bad) {
            Err(FormatError::InvariantViolation { object, .. }) => assert_eq!(object, "book"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let cut = &SCENE[..120];
        match SceneFile::load(cut) {
            Err(FormatError::Parse { offset, line, .. }) => {
                assert_eq!(offset, cut.len());
                assert!(line >= 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_and_version() {
        let extra = SCENE.replace("\"class\": \"cup\",", "\"class\": \"cup\", \"color\": \"red\",");
        assert!(matches!(SceneFile::load(&extra), Err(FormatError::SchemaMismatch(_))));
        let v2 = SCENE.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(SceneFile::load(&v2), Err(FormatError::SchemaMismatch(_))));
    }

    #[test]
    fn quaternion_tolerance() {
        let drift = SCENE.replace("[1, 0, 0, 0]", "[1.0000001, 0, 0, 0]");
        assert!(SceneFile::load(&drift).is_ok());
        let bad = SCENE.replace("[1, 0, 0, 0]", "[1.01, 0, 0, 0]");
        assert!(matches!(SceneFile::load(&bad), Err(FormatError::InvariantViolation { .. })));
    }

    #[test]
    fn csv_has_header() {
        #[derive(Serialize)]
        struct Row {
            a: f64,
            b: bool,
        }
        let s = to_csv(&[Row { a: 0.1, b: true }]).unwrap();
        assert_eq!(s, "a,b\n0.1,true\n");
    }
}
