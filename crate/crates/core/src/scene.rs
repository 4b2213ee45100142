//! Static tabletop world: primitives, the hidden attribute, fiducial markers
//! and the ground-truth visibility model that stands in for a physical camera.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    angle_between_deg, compose, distance, invert, look_at, marker_vertex_to_base, project,
    to_camera_frame, top_down, CameraIntrinsics, GeomError, HomogeneousTransform, Pose,
    UnitQuaternion, Vec3,
};
use crate::grid::{GridError, GridSpec};

pub mod generate;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scene file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid grid: {0}")]
    Grid(#[from] GridError),
    #[error("invalid geometry: {0}")]
    Geom(#[from] GeomError),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Box centered on its pose, `dims` are full side lengths.
    Box { dims: Vec3 },
    /// Cylinder centered on its pose with its axis along local +z.
    Cylinder { radius: f64, height: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub shape: Shape,
    pub pose: Pose,
    #[serde(default)]
    pub surface_attributes: Vec<String>,
}

impl ObjectSpec {
    pub fn centroid(&self) -> Vec3 {
        self.pose.position
    }

    /// Entry distance along a unit ray, 0 when the origin is inside.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let o = to_camera_frame(&self.pose, origin);
        let d = self.pose.orientation.inverse_transform_vector(dir);
        match self.shape {
            Shape::Box { dims } => ray_box(&o, &d, &(dims / 2.0)),
            Shape::Cylinder { radius, height } => ray_cylinder(&o, &d, radius, height / 2.0),
        }
    }

    /// Points on the surface hull used for silhouettes.
    pub fn hull_points(&self) -> Vec<Vec3> {
        let local: Vec<Vec3> = match self.shape {
            Shape::Box { dims } => {
                let h = dims / 2.0;
                let mut pts = Vec::with_capacity(8);
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            pts.push(Vec3::new(sx * h.x, sy * h.y, sz * h.z));
                        }
                    }
                }
                pts
            }
            Shape::Cylinder { radius, height } => {
                const SEGMENTS: usize = 24;
                let mut pts = Vec::with_capacity(2 * SEGMENTS);
                for s in 0..SEGMENTS {
                    let a = s as f64 / SEGMENTS as f64 * std::f64::consts::TAU;
                    for z in [-height / 2.0, height / 2.0] {
                        pts.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
                    }
                }
                pts
            }
        };
        local
            .iter()
            .map(|p| self.pose.position + self.pose.orientation * p)
            .collect()
    }

    fn validate(&self) -> Result<(), SceneError> {
        let ok = match self.shape {
            Shape::Box { dims } => dims.iter().all(|d| d.is_finite() && *d > 0.0),
            Shape::Cylinder { radius, height } => {
                radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SceneError::Invalid(format!(
                "object {} has non-positive dimensions",
                self.id
            )))
        }
    }
}

/// Slab test against an origin-centered box with half extents `h`.
fn ray_box(o: &Vec3, d: &Vec3, h: &Vec3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > h[a] {
                return None;
            }
            continue;
        }
        let t1 = (-h[a] - o[a]) / d[a];
        let t2 = (h[a] - o[a]) / d[a];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    (t_near <= t_far && t_far >= 0.0).then(|| t_near.max(0.0))
}

/// Ray against a z-aligned capped cylinder centered at the origin.
fn ray_cylinder(o: &Vec3, d: &Vec3, r: f64, half_h: f64) -> Option<f64> {
    // Interval of t inside the infinite cylinder.
    let a = d.x * d.x + d.y * d.y;
    let b = 2.0 * (o.x * d.x + o.y * d.y);
    let c = o.x * o.x + o.y * o.y - r * r;
    let (mut t0, mut t1) = if a < 1e-15 {
        if c > 0.0 {
            return None;
        }
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        ((-b - s) / (2.0 * a), (-b + s) / (2.0 * a))
    };
    // Intersect with the slab between the caps.
    if d.z.abs() < 1e-15 {
        if o.z.abs() > half_h {
            return None;
        }
    } else {
        let z1 = (-half_h - o.z) / d.z;
        let z2 = (half_h - o.z) / d.z;
        t0 = t0.max(z1.min(z2));
        t1 = t1.min(z1.max(z2));
    }
    (t0 <= t1 && t1 >= 0.0).then(|| t0.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenAttribute {
    pub owner_id: String,
    pub fact: String,
    pub opening_center: Vec3,
    pub opening_normal: Vec3,
    pub cone_half_angle_deg: f64,
    pub min_distance: f64,
    pub max_distance: f64,
}

impl HiddenAttribute {
    fn validate(&self) -> Result<(), SceneError> {
        if (self.opening_normal.norm() - 1.0).abs() > 1e-6 {
            return Err(SceneError::Invalid(
                "opening_normal must be a unit vector".into(),
            ));
        }
        if !(self.cone_half_angle_deg > 0.0 && self.cone_half_angle_deg < 90.0) {
            return Err(SceneError::Invalid(
                "cone_half_angle_deg must lie in (0, 90)".into(),
            ));
        }
        if !(self.min_distance > 0.0 && self.min_distance < self.max_distance) {
            return Err(SceneError::Invalid(
                "need 0 < min_distance < max_distance".into(),
            ));
        }
        Ok(())
    }

    /// Angle between the opening normal and the direction to `eye`.
    pub fn cone_angle_deg(&self, eye: &Vec3) -> f64 {
        let to_eye = eye - self.opening_center;
        if to_eye.norm() < 1e-12 {
            return 180.0;
        }
        angle_between_deg(&self.opening_normal, &to_eye)
    }

    /// Cone and distance-band part of the predicate, ignoring occlusion and framing.
    pub fn in_view_cone(&self, eye: &Vec3) -> bool {
        let d = distance(eye, &self.opening_center);
        self.cone_angle_deg(eye) <= self.cone_half_angle_deg
            && d >= self.min_distance
            && d <= self.max_distance
    }

    /// How far `eye` is outside the distance band (0 inside).
    pub fn band_gap(&self, eye: &Vec3) -> f64 {
        let d = distance(eye, &self.opening_center);
        (self.min_distance - d).max(d - self.max_distance).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl TableBounds {
    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.0,
        )
    }

    pub fn corners(&self) -> [Vec3; 4] {
        [
            Vec3::new(self.min[0], self.min[1], 0.0),
            Vec3::new(self.max[0], self.min[1], 0.0),
            Vec3::new(self.max[0], self.max[1], 0.0),
            Vec3::new(self.min[0], self.max[1], 0.0),
        ]
    }
}

/// A fiducial marker; its local +z is the outward face normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub id: u32,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub table: TableBounds,
    pub objects: Vec<ObjectSpec>,
    pub hidden: HiddenAttribute,
    pub markers: Vec<Marker>,
    pub grid: GridSpec,
    pub home_pose: Pose,
    pub goal_pose: Pose,
    pub query: String,
    pub truth_answer: String,
    #[serde(default)]
    pub camera: CameraIntrinsics,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: SceneSpec = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn object(&self, id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn owner(&self) -> &ObjectSpec {
        self.object(&self.hidden.owner_id)
            .expect("validated scene has the hidden owner")
    }

    /// Checks every invariant, including that the goal pose sees the hidden fact.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.id.trim().is_empty() {
            return Err(SceneError::Invalid("scene id is empty".into()));
        }
        if self.query.trim().is_empty() {
            return Err(SceneError::Invalid("query is empty".into()));
        }
        self.camera.validate()?;
        self.grid.validate()?;
        for o in &self.objects {
            o.validate()?;
        }
        let mut ids: Vec<&str> = self.objects.iter().map(|o| o.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SceneError::Invalid("duplicate object id".into()));
        }
        self.hidden.validate()?;
        if self.object(&self.hidden.owner_id).is_none() {
            return Err(SceneError::Invalid(format!(
                "hidden owner {} is not an object",
                self.hidden.owner_id
            )));
        }
        if self.markers.is_empty() {
            return Err(SceneError::Invalid(
                "at least one marker is required".into(),
            ));
        }
        if !observe(self, &self.goal_pose, &self.camera).hidden_fact_visible {
            return Err(SceneError::Invalid(
                "goal pose does not see the hidden attribute".into(),
            ));
        }
        Ok(())
    }
}

/// Whether the segment `from → to` is blocked by any object not in `exclude`.
pub fn occluded(scene: &SceneSpec, from: &Vec3, to: &Vec3, exclude: &[&str]) -> bool {
    let delta = to - from;
    let len = delta.norm();
    if len < 1e-12 {
        return false;
    }
    let dir = delta / len;
    scene
        .objects
        .iter()
        .filter(|o| !exclude.contains(&o.id.as_str()))
        .any(|o| o.ray_entry(from, &dir).is_some_and(|t| t < len - 1e-9))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerDetection {
    pub id: u32,
    pub marker_to_camera: HomogeneousTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFacts {
    pub camera_pose: Pose,
    pub visible_object_ids: Vec<String>,
    pub visible_surface_facts: Vec<(String, String)>,
    pub hidden_fact_visible: bool,
    pub detected_markers: Vec<MarkerDetection>,
}

impl ObservationFacts {
    pub fn summary(&self) -> String {
        format!(
            "visible: [{}]; hidden attribute {}",
            self.visible_object_ids.join(", "),
            if self.hidden_fact_visible {
                "seen"
            } else {
                "not seen"
            }
        )
    }
}

fn object_visible(
    scene: &SceneSpec,
    obj: &ObjectSpec,
    camera_pose: &Pose,
    k: &CameraIntrinsics,
) -> bool {
    let c = obj.centroid();
    match project(k, camera_pose, &c) {
        Ok(px) if k.contains(&px) => {
            !occluded(scene, &camera_pose.position, &c, &[obj.id.as_str()])
        }
        _ => false,
    }
}

/// Ground-truth observation with exact marker detections.
pub fn observe(scene: &SceneSpec, camera_pose: &Pose, k: &CameraIntrinsics) -> ObservationFacts {
    let mut facts = observe_without_markers(scene, camera_pose, k);
    facts.detected_markers = detect_markers_exact(scene, camera_pose, k);
    facts
}

/// Observation whose marker detections carry seeded translation noise.
pub fn observe_noisy<R: Rng + ?Sized>(
    scene: &SceneSpec,
    camera_pose: &Pose,
    k: &CameraIntrinsics,
    noise_std: f64,
    rng: &mut R,
) -> ObservationFacts {
    let mut facts = observe_without_markers(scene, camera_pose, k);
    facts.detected_markers = detect_markers(scene, camera_pose, k, noise_std, rng);
    facts
}

fn observe_without_markers(
    scene: &SceneSpec,
    camera_pose: &Pose,
    k: &CameraIntrinsics,
) -> ObservationFacts {
    let mut visible_object_ids = Vec::new();
    let mut visible_surface_facts = Vec::new();
    for obj in &scene.objects {
        if object_visible(scene, obj, camera_pose, k) {
            visible_object_ids.push(obj.id.clone());
            for f in &obj.surface_attributes {
                visible_surface_facts.push((obj.id.clone(), f.clone()));
            }
        }
    }
    let h = &scene.hidden;
    let eye = camera_pose.position;
    let hidden_fact_visible = visible_object_ids.contains(&h.owner_id)
        && h.in_view_cone(&eye)
        && !occluded(scene, &eye, &h.opening_center, &[h.owner_id.as_str()]);
    ObservationFacts {
        camera_pose: *camera_pose,
        visible_object_ids,
        visible_surface_facts,
        hidden_fact_visible,
        detected_markers: Vec::new(),
    }
}

fn marker_in_view(marker: &Marker, camera_pose: &Pose, k: &CameraIntrinsics) -> bool {
    let normal = marker.pose.orientation * Vec3::z();
    let view = marker.pose.position - camera_pose.position;
    normal.dot(&view) < 0.0
        && project(k, camera_pose, &marker.pose.position).is_ok_and(|px| k.contains(&px))
}

fn detect_markers_exact(
    scene: &SceneSpec,
    camera_pose: &Pose,
    k: &CameraIntrinsics,
) -> Vec<MarkerDetection> {
    let base_to_cam = invert(&camera_pose.to_transform());
    let mut out: Vec<MarkerDetection> = scene
        .markers
        .iter()
        .filter(|m| marker_in_view(m, camera_pose, k))
        .map(|m| MarkerDetection {
            id: m.id,
            marker_to_camera: compose(&base_to_cam, &m.pose.to_transform()),
        })
        .collect();
    out.sort_by_key(|d| d.id);
    out
}

/// Marker-to-camera transforms for markers in view and facing the camera,
/// sorted by id. Translations get zero-mean Gaussian noise of `noise_std`.
pub fn detect_markers<R: Rng + ?Sized>(
    scene: &SceneSpec,
    camera_pose: &Pose,
    k: &CameraIntrinsics,
    noise_std: f64,
    rng: &mut R,
) -> Vec<MarkerDetection> {
    let mut out = detect_markers_exact(scene, camera_pose, k);
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite std");
        for d in &mut out {
            let noise = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            let t = d.marker_to_camera;
            d.marker_to_camera = HomogeneousTransform::new(*t.rotation(), t.translation() + noise)
                .expect("rotation unchanged");
        }
    }
    out
}

/// Re-anchors the grid through the lowest-id detected marker:
/// `V_B = T_C^B · T_M^C · V_M`. Falls back to the calibrated grid when no
/// marker is in view.
pub fn estimate_grid(
    scene: &SceneSpec,
    grid: &GridSpec,
    camera_pose: &Pose,
    detections: &[MarkerDetection],
) -> GridSpec {
    let Some(det) = detections.first() else {
        return *grid;
    };
    let Some(marker) = scene.markers.iter().find(|m| m.id == det.id) else {
        return *grid;
    };
    let anchor_in_marker =
        crate::geom::transform_point(&invert(&marker.pose.to_transform()), &grid.anchor);
    let anchor = marker_vertex_to_base(
        &camera_pose.to_transform(),
        &det.marker_to_camera,
        &anchor_in_marker,
    );
    GridSpec { anchor, ..*grid }
}

/// Home configuration: top-down camera at (−0.1, 0.3, 0.8).
pub fn home_pose() -> Pose {
    Pose::new(Vec3::new(-0.1, 0.3, 0.8), top_down()).expect("finite")
}

/// 3×3 layout of upward-facing markers covering the default table.
pub fn default_markers() -> Vec<Marker> {
    let mut markers = Vec::with_capacity(9);
    for (row, y) in [0.0, 0.4, 0.8].into_iter().enumerate() {
        for (col, x) in [-0.4, 0.0, 0.4].into_iter().enumerate() {
            markers.push(Marker {
                id: (row * 3 + col) as u32,
                pose: Pose::new(Vec3::new(x, y, 0.0), UnitQuaternion::identity()).expect("finite"),
            });
        }
    }
    markers
}

pub fn default_table() -> TableBounds {
    TableBounds {
        min: [-0.5, -0.1],
        max: [0.5, 0.9],
    }
}

fn upright(position: Vec3) -> Pose {
    Pose::new(position, UnitQuaternion::identity()).expect("finite")
}

fn cracker_box() -> ObjectSpec {
    ObjectSpec {
        id: "cracker_box".into(),
        shape: Shape::Box {
            dims: Vec3::new(0.06, 0.16, 0.21),
        },
        pose: upright(Vec3::new(0.22, 0.6, 0.105)),
        surface_attributes: vec!["red cracker box".into()],
    }
}

/// Rotation about base x applied on top of the top-down camera orientation.
pub fn tilted_top_down(rot_x_deg: f64, rot_y_deg: f64) -> UnitQuaternion {
    let rx = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), rot_x_deg.to_radians());
    let ry = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), rot_y_deg.to_radians());
    ry * rx * top_down()
}

/// Upright tin whose contents are only visible from close above.
pub fn perpendicular_scene() -> SceneSpec {
    let tin_center = Vec3::new(-0.1, 0.3, 0.02);
    SceneSpec {
        id: "scene1".into(),
        table: default_table(),
        objects: vec![
            ObjectSpec {
                id: "tin".into(),
                shape: Shape::Cylinder {
                    radius: 0.04,
                    height: 0.04,
                },
                pose: upright(tin_center),
                surface_attributes: vec!["silver aluminium tin".into()],
            },
            cracker_box(),
        ],
        hidden: HiddenAttribute {
            owner_id: "tin".into(),
            fact: "contains a golf ball".into(),
            opening_center: Vec3::new(-0.1, 0.3, 0.04),
            opening_normal: Vec3::z(),
            cone_half_angle_deg: 40.0,
            min_distance: 0.05,
            max_distance: 0.6,
        },
        markers: default_markers(),
        grid: GridSpec::default_3d(),
        home_pose: home_pose(),
        goal_pose: Pose::new(Vec3::new(-0.1, 0.3, 0.2), top_down()).expect("finite"),
        query: "What is inside the tin?".into(),
        truth_answer: "golf ball".into(),
        camera: CameraIntrinsics::default(),
    }
}

/// Mug lying inclined with its opening facing the grid at 70° from vertical.
/// Reading its contents needs the camera tilted about base x.
pub fn inclined_scene() -> SceneSpec {
    let tilt = -70.0_f64.to_radians();
    let orientation = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), tilt);
    let normal = orientation * Vec3::z();
    let opening = Vec3::new(-0.1, 0.15, 0.08);
    let height = 0.10;
    let goal_position = opening + normal * 0.25;
    SceneSpec {
        id: "scene2".into(),
        table: default_table(),
        objects: vec![
            ObjectSpec {
                id: "mug".into(),
                shape: Shape::Cylinder {
                    radius: 0.04,
                    height,
                },
                pose: Pose::new(opening - normal * (height / 2.0), orientation).expect("finite"),
                surface_attributes: vec!["white coffee mug".into()],
            },
            cracker_box(),
        ],
        hidden: HiddenAttribute {
            owner_id: "mug".into(),
            fact: "contains a golf ball".into(),
            opening_center: opening,
            opening_normal: normal,
            cone_half_angle_deg: 10.0,
            min_distance: 0.08,
            max_distance: 0.45,
        },
        markers: default_markers(),
        grid: GridSpec::default_3d(),
        home_pose: home_pose(),
        goal_pose: Pose::new(goal_position, tilted_top_down(-35.0, 0.0)).expect("finite"),
        query: "What is inside the mug?".into(),
        truth_answer: "golf ball".into(),
        camera: CameraIntrinsics::default(),
    }
}

/// Upright cup readable only from a narrow cone up to ~0.3 m above it.
pub fn narrow_cone_scene() -> SceneSpec {
    SceneSpec {
        id: "narrow_cup".into(),
        table: default_table(),
        objects: vec![ObjectSpec {
            id: "cup".into(),
            shape: Shape::Cylinder {
                radius: 0.04,
                height: 0.09,
            },
            pose: upright(Vec3::new(0.1, 0.5, 0.045)),
            surface_attributes: vec!["blue plastic cup".into()],
        }],
        hidden: HiddenAttribute {
            owner_id: "cup".into(),
            fact: "contains a plastic strawberry".into(),
            opening_center: Vec3::new(0.1, 0.5, 0.09),
            opening_normal: Vec3::z(),
            cone_half_angle_deg: 15.0,
            min_distance: 0.1,
            max_distance: 0.3,
        },
        markers: default_markers(),
        grid: GridSpec::default_3d(),
        home_pose: home_pose(),
        goal_pose: Pose::new(Vec3::new(0.1, 0.5, 0.3), top_down()).expect("finite"),
        query: "What is inside the cup?".into(),
        truth_answer: "strawberry".into(),
        camera: CameraIntrinsics::default(),
    }
}

/// Scenes shipped with the harness: the perpendicular and the inclined target.
pub fn default_scenes() -> Vec<SceneSpec> {
    vec![perpendicular_scene(), inclined_scene()]
}

/// Five passive viewpoints: four sides of the table at 0.15 m facing its
/// center, then the home top view.
pub fn fixed_view_poses(scene: &SceneSpec) -> [Pose; 5] {
    let c = scene.table.center();
    let t = &scene.table;
    let side = |x: f64, y: f64| {
        let eye = Vec3::new(x, y, 0.15);
        Pose::new(eye, look_at(&eye, &c)).expect("finite")
    };
    [
        side(c.x, t.min[1]),
        side(c.x, t.max[1]),
        side(t.min[0], c.y),
        side(t.max[0], c.y),
        Pose::new(Vec3::new(-0.1, 0.3, 0.8), top_down()).expect("finite"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pose_at(p: Vec3) -> Pose {
        Pose::new(p, top_down()).unwrap()
    }

    #[test]
    fn default_scenes_validate() {
        for s in default_scenes().into_iter().chain([narrow_cone_scene()]) {
            s.validate().unwrap();
            let back = SceneSpec::from_json(&s.to_json()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn home_does_not_see_hidden_fact() {
        for s in default_scenes() {
            assert!(
                !observe(&s, &s.home_pose, &s.camera).hidden_fact_visible,
                "{}",
                s.id
            );
        }
    }

    #[test]
    fn goal_sees_hidden_fact() {
        for s in default_scenes() {
            let f = observe(&s, &s.goal_pose, &s.camera);
            assert!(f.hidden_fact_visible);
            assert!(f.visible_object_ids.contains(&s.hidden.owner_id));
        }
    }

    #[test]
    fn cone_predicate_hand_cases() {
        // upright mug, cone 40°, band [0.1, 0.6]
        let mut s = narrow_cone_scene();
        s.hidden.cone_half_angle_deg = 40.0;
        s.hidden.min_distance = 0.1;
        s.hidden.max_distance = 0.6;
        let c = s.hidden.opening_center;
        let above = pose_at(c + Vec3::new(0.0, 0.0, 0.3));
        assert!(observe(&s, &above, &s.camera).hidden_fact_visible);
        let side_eye = c + Vec3::new(0.3, 0.0, 0.0);
        let side = Pose::new(side_eye, look_at(&side_eye, &s.owner().centroid())).unwrap();
        assert!(observe(&s, &side, &s.camera)
            .visible_object_ids
            .contains(&"cup".to_string()));
        assert!(!observe(&s, &side, &s.camera).hidden_fact_visible);
        // behind the opening plane
        let below_eye = c - Vec3::new(0.0, 0.0, 0.3);
        let below = Pose::new(below_eye, look_at(&below_eye, &c)).unwrap();
        assert!((s.hidden.cone_angle_deg(&below_eye) - 180.0).abs() < 1e-9);
        assert!(!observe(&s, &below, &s.camera).hidden_fact_visible);
    }

    #[test]
    fn occlusion_hides_objects() {
        let mut s = narrow_cone_scene();
        s.goal_pose = pose_at(Vec3::new(0.1, 0.5, 0.3));
        s.objects.push(ObjectSpec {
            id: "lid".into(),
            shape: Shape::Box {
                dims: Vec3::new(0.2, 0.2, 0.01),
            },
            pose: upright(Vec3::new(0.1, 0.5, 0.2)),
            surface_attributes: vec![],
        });
        let f = observe(&s, &s.goal_pose, &s.camera);
        assert!(f.visible_object_ids.contains(&"lid".to_string()));
        assert!(!f.visible_object_ids.contains(&"cup".to_string()));
        assert!(!f.hidden_fact_visible);
        assert!(s.validate().is_err());
    }

    #[test]
    fn ray_primitives() {
        let h = Vec3::new(0.5, 0.5, 0.5);
        assert_eq!(
            ray_box(&Vec3::new(-2.0, 0.0, 0.0), &Vec3::x(), &h),
            Some(1.5)
        );
        assert_eq!(ray_box(&Vec3::new(-2.0, 2.0, 0.0), &Vec3::x(), &h), None);
        assert_eq!(ray_box(&Vec3::zeros(), &Vec3::x(), &h), Some(0.0));
        assert_eq!(ray_box(&Vec3::new(2.0, 0.0, 0.0), &Vec3::x(), &h), None);
        assert_eq!(
            ray_cylinder(&Vec3::new(-2.0, 0.0, 0.0), &Vec3::x(), 0.5, 0.5),
            Some(1.5)
        );
        assert_eq!(
            ray_cylinder(&Vec3::new(0.0, 0.0, 2.0), &-Vec3::z(), 0.5, 0.5),
            Some(1.5)
        );
        assert_eq!(
            ray_cylinder(&Vec3::new(0.6, 0.0, 2.0), &-Vec3::z(), 0.5, 0.5),
            None
        );
        assert_eq!(
            ray_cylinder(&Vec3::new(-2.0, 0.0, 0.6), &Vec3::x(), 0.5, 0.5),
            None
        );
    }

    #[test]
    fn markers_from_home() {
        let s = perpendicular_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = detect_markers(&s, &s.home_pose, &s.camera, 0.0, &mut rng);
        assert_eq!(d.len(), 9);
        let cam = s.home_pose.to_transform();
        for det in &d {
            let m = s.markers.iter().find(|m| m.id == det.id).unwrap();
            let recovered = compose(&cam, &det.marker_to_camera);
            assert!(recovered.max_abs_diff(&m.pose.to_transform()) < 1e-9);
        }
        // looking up from below the table: the markers face away
        let up = Pose::new(Vec3::new(0.0, 0.4, -0.5), UnitQuaternion::identity()).unwrap();
        assert!(detect_markers(&s, &up, &s.camera, 0.0, &mut rng).is_empty());
    }

    #[test]
    fn noisy_markers_shift_the_grid_estimate() {
        let s = perpendicular_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let exact = detect_markers(&s, &s.home_pose, &s.camera, 0.0, &mut rng);
        let g = estimate_grid(&s, &s.grid, &s.home_pose, &exact);
        assert!((g.anchor - s.grid.anchor).amax() < 1e-9);
        let noisy = detect_markers(&s, &s.home_pose, &s.camera, 0.01, &mut rng);
        let g = estimate_grid(&s, &s.grid, &s.home_pose, &noisy);
        let shift = (g.anchor - s.grid.anchor).norm();
        assert!(shift > 0.0 && shift < 0.1);
        assert_eq!(estimate_grid(&s, &s.grid, &s.home_pose, &[]), s.grid);
    }

    #[test]
    fn rejects_invalid_scenes() {
        let mut s = perpendicular_scene();
        s.markers.clear();
        assert!(s.validate().is_err());
        let mut s = perpendicular_scene();
        s.goal_pose = s.home_pose;
        assert!(s.validate().is_err());
        let mut s = perpendicular_scene();
        s.hidden.opening_normal = Vec3::new(0.0, 0.0, 2.0);
        assert!(s.validate().is_err());
        let mut s = perpendicular_scene();
        s.hidden.owner_id = "ghost".into();
        assert!(s.validate().is_err());
        assert!(matches!(
            SceneSpec::from_json("{"),
            Err(SceneError::Parse(_))
        ));
    }

    #[test]
    fn fixed_views_face_the_table() {
        let s = perpendicular_scene();
        let c = s.table.center();
        for p in &fixed_view_poses(&s)[..4] {
            assert!((p.position.z - 0.15).abs() < 1e-12);
            let axis = p.optical_axis();
            assert!(angle_between_deg(&axis, &(c - p.position)) < 1e-9);
        }
    }
}
