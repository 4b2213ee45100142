//! The virtual grid anchored in the base frame and its image-space overlay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    project_camera_point, to_camera_frame, CameraIntrinsics, PixelCoord, Pose, Vec3, MIN_DEPTH,
};

const MULTIPLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid extent must be positive and finite")]
    BadExtent,
    #[error("grid spacing must be positive and no larger than the extent")]
    BadSpacing,
    #[error("extent on axis {axis} ({extent}) is not a multiple of spacing {spacing}")]
    NotAMultiple {
        axis: char,
        extent: f64,
        spacing: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimensionality {
    TwoD,
    ThreeD,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Minimum corner of the cube in the base frame.
    pub anchor: Vec3,
    pub extent: Vec3,
    pub spacing_xy: f64,
    pub spacing_z: f64,
    pub dimensionality: Dimensionality,
    pub annotated: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::default_3d()
    }
}

impl GridSpec {
    /// 0.6 × 0.6 × 0.3 m cube at the workspace origin, 0.2 m / 0.1 m spacing.
    pub fn default_3d() -> Self {
        GridSpec {
            anchor: Vec3::new(-0.3, 0.1, 0.0),
            extent: Vec3::new(0.6, 0.6, 0.3),
            spacing_xy: 0.2,
            spacing_z: 0.1,
            dimensionality: Dimensionality::ThreeD,
            annotated: true,
        }
    }

    /// Single layer 0.1 m above the table.
    pub fn default_2d() -> Self {
        GridSpec::default_3d().to_2d()
    }

    /// The single-layer variant of this grid at the first layer height.
    pub fn to_2d(&self) -> Self {
        GridSpec {
            extent: Vec3::new(self.extent.x, self.extent.y, self.spacing_z),
            dimensionality: Dimensionality::TwoD,
            ..*self
        }
    }

    pub fn with_annotation(&self, annotated: bool) -> Self {
        GridSpec { annotated, ..*self }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !self.extent.iter().all(|e| e.is_finite() && *e > 0.0)
            || !self.anchor.iter().all(|a| a.is_finite())
        {
            return Err(GridError::BadExtent);
        }
        let ok = |s: f64, e: f64| s.is_finite() && s > 0.0 && s <= e + MULTIPLE_TOLERANCE;
        if !ok(self.spacing_xy, self.extent.x)
            || !ok(self.spacing_xy, self.extent.y)
            || !ok(self.spacing_z, self.extent.z)
        {
            return Err(GridError::BadSpacing);
        }
        for (axis, extent, spacing) in [
            ('x', self.extent.x, self.spacing_xy),
            ('y', self.extent.y, self.spacing_xy),
            ('z', self.extent.z, self.spacing_z),
        ] {
            let ratio = extent / spacing;
            if (ratio - ratio.round()).abs() > MULTIPLE_TOLERANCE {
                return Err(GridError::NotAMultiple {
                    axis,
                    extent,
                    spacing,
                });
            }
        }
        Ok(())
    }

    /// Largest index along x and y (there are `n + 1` vertices per row).
    pub fn max_i(&self) -> u32 {
        (self.extent.x / self.spacing_xy).round() as u32
    }

    pub fn max_j(&self) -> u32 {
        (self.extent.y / self.spacing_xy).round() as u32
    }

    /// Layer indices run from 1; the table plane itself is not a layer.
    pub fn max_k(&self) -> u32 {
        match self.dimensionality {
            Dimensionality::TwoD => 1,
            Dimensionality::ThreeD => (self.extent.z / self.spacing_z).round() as u32,
        }
    }

    pub fn vertex_count(&self) -> usize {
        ((self.max_i() + 1) * (self.max_j() + 1) * self.max_k()) as usize
    }

    /// Vertex position, snapped to whole nanometers so that decimal grids land
    /// on the same doubles as their written coordinates.
    pub fn position_of(&self, index: GridIndex) -> Vec3 {
        let snap = |v: f64| (v * 1e9).round() / 1e9;
        Vec3::new(
            snap(self.anchor.x + index.i as f64 * self.spacing_xy),
            snap(self.anchor.y + index.j as f64 * self.spacing_xy),
            snap(self.anchor.z + index.k as f64 * self.spacing_z),
        )
    }

    pub fn contains_index(&self, index: GridIndex) -> bool {
        index.i <= self.max_i()
            && index.j <= self.max_j()
            && index.k >= 1
            && index.k <= self.max_k()
    }

    pub fn vertex(&self, index: GridIndex) -> Option<GridVertex> {
        self.contains_index(index).then(|| {
            let position = self.position_of(index);
            GridVertex {
                index,
                position,
                label: format_label(&position, self.annotated),
            }
        })
    }

    /// Whether `p` lies inside the closed cube `[anchor, anchor + extent]`.
    pub fn contains_point(&self, p: &Vec3) -> bool {
        let hi = self.anchor + self.extent;
        (0..3).all(|a| {
            p[a] >= self.anchor[a] - MULTIPLE_TOLERANCE && p[a] <= hi[a] + MULTIPLE_TOLERANCE
        })
    }

    pub fn center(&self) -> Vec3 {
        self.anchor + self.extent / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[u32; 3]", from = "[u32; 3]")]
pub struct GridIndex {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl GridIndex {
    pub fn new(i: u32, j: u32, k: u32) -> Self {
        GridIndex { i, j, k }
    }

    /// Ordering key used for tie-breaking: `(k, j, i)`.
    pub fn lex_key(&self) -> (u32, u32, u32) {
        (self.k, self.j, self.i)
    }
}

impl From<GridIndex> for [u32; 3] {
    fn from(g: GridIndex) -> Self {
        [g.i, g.j, g.k]
    }
}

impl From<[u32; 3]> for GridIndex {
    fn from(a: [u32; 3]) -> Self {
        GridIndex::new(a[0], a[1], a[2])
    }
}

impl std::fmt::Display for GridIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{},{}]", self.i, self.j, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridVertex {
    pub index: GridIndex,
    pub position: Vec3,
    pub label: String,
}

/// All vertices, ordered with `k` outermost, then `j`, then `i`.
pub fn generate_vertices(spec: &GridSpec) -> Result<Vec<GridVertex>, GridError> {
    spec.validate()?;
    Ok(lattice(spec).filter_map(|idx| spec.vertex(idx)).collect())
}

fn lattice(spec: &GridSpec) -> impl Iterator<Item = GridIndex> + '_ {
    (1..=spec.max_k()).flat_map(move |k| {
        (0..=spec.max_j())
            .flat_map(move |j| (0..=spec.max_i()).map(move |i| GridIndex::new(i, j, k)))
    })
}

pub fn label_vertex(v: &GridVertex, annotated: bool) -> String {
    format_label(&v.position, annotated)
}

fn format_label(p: &Vec3, annotated: bool) -> String {
    if !annotated {
        return String::new();
    }
    format!("({}; {})", one_decimal(p.x), one_decimal(p.y))
}

fn one_decimal(x: f64) -> String {
    let s = format!("{x:.1}");
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

fn nearest_step(t: f64, lo: u32, hi: u32) -> u32 {
    let f = t.floor();
    // Exact halves (within tolerance) round down so ties go to the smaller index.
    let r = if t - f > 0.5 + MULTIPLE_TOLERANCE {
        f + 1.0
    } else {
        f
    };
    r.clamp(lo as f64, hi as f64) as u32
}

/// Closest vertex to `p`; ties go to the smallest `(k, j, i)`.
pub fn nearest_vertex(spec: &GridSpec, p: &Vec3) -> GridVertex {
    let d = p - spec.anchor;
    let index = GridIndex::new(
        nearest_step(d.x / spec.spacing_xy, 0, spec.max_i()),
        nearest_step(d.y / spec.spacing_xy, 0, spec.max_j()),
        nearest_step(d.z / spec.spacing_z, 1, spec.max_k()),
    );
    spec.vertex(index)
        .expect("clamped index lies on the lattice")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlaySegment {
    pub from: PixelCoord,
    pub to: PixelCoord,
    /// Mean camera-frame depth of the unclipped endpoints.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayLabel {
    pub anchor: PixelCoord,
    pub text: String,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedVertex {
    pub index: GridIndex,
    pub pixel: PixelCoord,
    pub depth: f64,
    pub in_image: bool,
}

/// Drawable form of the projected grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlayPrimitiveSet {
    pub width: u32,
    pub height: u32,
    pub segments: Vec<OverlaySegment>,
    pub labels: Vec<OverlayLabel>,
    /// Every vertex in front of the camera, whether or not it lands in the image.
    pub vertices: Vec<ProjectedVertex>,
}

impl OverlayPrimitiveSet {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty() && self.labels.is_empty()
    }

    /// Standalone SVG of the overlay.
    pub fn to_svg(&self) -> String {
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            w = self.width,
            h = self.height
        );
        for s in &self.segments {
            out.push_str(&format!(
                "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#00e676\" stroke-width=\"1\"/>\n",
                s.from.u, s.from.v, s.to.u, s.to.v
            ));
        }
        for l in &self.labels {
            out.push_str(&format!(
                "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"9\" fill=\"#ffffff\">{}</text>\n",
                l.anchor.u + 3.0,
                l.anchor.v - 3.0,
                l.text
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

const INSIDE: u8 = 0;
const LEFT: u8 = 1;
const RIGHT: u8 = 2;
const BOTTOM: u8 = 4;
const TOP: u8 = 8;

fn outcode(p: &PixelCoord, w: f64, h: f64) -> u8 {
    let mut c = INSIDE;
    if p.u < 0.0 {
        c |= LEFT;
    } else if p.u > w {
        c |= RIGHT;
    }
    if p.v < 0.0 {
        c |= TOP;
    } else if p.v > h {
        c |= BOTTOM;
    }
    c
}

/// Cohen–Sutherland clipping of a segment against `[0, w] × [0, h]`.
pub fn clip_segment(
    mut a: PixelCoord,
    mut b: PixelCoord,
    w: f64,
    h: f64,
) -> Option<(PixelCoord, PixelCoord)> {
    let mut ca = outcode(&a, w, h);
    let mut cb = outcode(&b, w, h);
    loop {
        if ca | cb == INSIDE {
            return Some((a, b));
        }
        if ca & cb != INSIDE {
            return None;
        }
        let out = if ca != INSIDE { ca } else { cb };
        let (du, dv) = (b.u - a.u, b.v - a.v);
        let p = if out & TOP != 0 {
            PixelCoord {
                u: a.u + du * (0.0 - a.v) / dv,
                v: 0.0,
            }
        } else if out & BOTTOM != 0 {
            PixelCoord {
                u: a.u + du * (h - a.v) / dv,
                v: h,
            }
        } else if out & RIGHT != 0 {
            PixelCoord {
                u: w,
                v: a.v + dv * (w - a.u) / du,
            }
        } else {
            PixelCoord {
                u: 0.0,
                v: a.v + dv * (0.0 - a.u) / du,
            }
        };
        if out == ca {
            a = p;
            ca = outcode(&a, w, h);
        } else {
            b = p;
            cb = outcode(&b, w, h);
        }
    }
}

pub fn project_grid(
    spec: &GridSpec,
    k: &CameraIntrinsics,
    camera_pose: &Pose,
) -> OverlayPrimitiveSet {
    let (w, h) = (k.width as f64, k.height as f64);
    let mut set = OverlayPrimitiveSet {
        width: k.width,
        height: k.height,
        ..Default::default()
    };
    let ni = spec.max_i() as usize + 1;
    let nj = spec.max_j() as usize + 1;
    let nk = spec.max_k() as usize;
    let slot = |g: GridIndex| (g.k as usize - 1) * nj * ni + g.j as usize * ni + g.i as usize;
    let mut projected: Vec<Option<(PixelCoord, f64)>> = vec![None; ni * nj * nk];

    for idx in lattice(spec) {
        let pc = to_camera_frame(camera_pose, &spec.position_of(idx));
        if pc.z <= MIN_DEPTH {
            continue;
        }
        let Ok(px) = project_camera_point(k, &pc) else {
            continue;
        };
        let in_image = k.contains(&px);
        projected[slot(idx)] = Some((px, pc.z));
        set.vertices.push(ProjectedVertex {
            index: idx,
            pixel: px,
            depth: pc.z,
            in_image,
        });
        if spec.annotated && in_image {
            set.labels.push(OverlayLabel {
                anchor: px,
                text: format_label(&spec.position_of(idx), true),
                depth: pc.z,
            });
        }
    }

    for idx in lattice(spec) {
        let Some((pa, da)) = projected[slot(idx)] else {
            continue;
        };
        let neighbours = [
            (idx.i < spec.max_i()).then(|| GridIndex::new(idx.i + 1, idx.j, idx.k)),
            (idx.j < spec.max_j()).then(|| GridIndex::new(idx.i, idx.j + 1, idx.k)),
            (idx.k < spec.max_k()).then(|| GridIndex::new(idx.i, idx.j, idx.k + 1)),
        ];
        for n in neighbours.into_iter().flatten() {
            let Some((pb, db)) = projected[slot(n)] else {
                continue;
            };
            if let Some((from, to)) = clip_segment(pa, pb, w, h) {
                set.segments.push(OverlaySegment {
                    from,
                    to,
                    depth: 0.5 * (da + db),
                });
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{top_down, UnitQuaternion};

    #[test]
    fn default_grids() {
        let v = generate_vertices(&GridSpec::default_3d()).unwrap();
        assert_eq!(v.len(), 48);
        assert!((v[0].position - Vec3::new(-0.3, 0.1, 0.1)).amax() < 1e-12);
        assert!((v[47].position - Vec3::new(0.3, 0.7, 0.3)).amax() < 1e-12);
        let v2 = generate_vertices(&GridSpec::default_2d()).unwrap();
        assert_eq!(v2.len(), 16);
        assert!(v2.iter().all(|v| (v.position.z - 0.1).abs() < 1e-12));
    }

    #[test]
    fn minimal_grid() {
        let spec = GridSpec {
            extent: Vec3::new(0.2, 0.2, 0.1),
            ..GridSpec::default_3d()
        };
        assert_eq!(generate_vertices(&spec).unwrap().len(), 4);
    }

    #[test]
    fn ordering_is_k_then_j_then_i() {
        let v = generate_vertices(&GridSpec::default_3d()).unwrap();
        let keys: Vec<_> = v.iter().map(|v| v.index.lex_key()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(v[1].index, GridIndex::new(1, 0, 1));
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = GridSpec {
            extent: Vec3::new(0.5, 0.6, 0.3),
            ..GridSpec::default_3d()
        };
        assert!(matches!(
            generate_vertices(&spec),
            Err(GridError::NotAMultiple { axis: 'x', .. })
        ));
        let spec = GridSpec {
            spacing_z: 0.0,
            ..GridSpec::default_3d()
        };
        assert_eq!(spec.validate(), Err(GridError::BadSpacing));
        let spec = GridSpec {
            extent: Vec3::new(-0.6, 0.6, 0.3),
            ..GridSpec::default_3d()
        };
        assert_eq!(spec.validate(), Err(GridError::BadExtent));
    }

    #[test]
    fn labels() {
        let spec = GridSpec::default_3d();
        let first = spec.vertex(GridIndex::new(0, 0, 1)).unwrap();
        assert_eq!(label_vertex(&first, true), "(-0.3; 0.1)");
        assert_eq!(label_vertex(&first, false), "");
        let v = GridVertex {
            index: GridIndex::new(3, 3, 2),
            position: Vec3::new(0.3, 0.7, 0.2),
            label: String::new(),
        };
        assert_eq!(label_vertex(&v, true), "(0.3; 0.7)");
        let z = GridVertex {
            position: Vec3::new(-0.01, 0.0, 0.0),
            ..v
        };
        assert_eq!(label_vertex(&z, true), "(0.0; 0.0)");
    }

    #[test]
    fn nearest_vertex_examples() {
        let spec = GridSpec::default_3d();
        for v in generate_vertices(&spec).unwrap() {
            assert_eq!(nearest_vertex(&spec, &v.position).index, v.index);
        }
        // grid center sits between eight vertices
        let c = nearest_vertex(&spec, &Vec3::new(0.0, 0.4, 0.15));
        assert_eq!(c.index, GridIndex::new(1, 1, 1));
        // far outside clamps to the hull
        let far = nearest_vertex(&spec, &Vec3::new(5.0, -5.0, -1.0));
        assert_eq!(far.index, GridIndex::new(3, 0, 1));
    }

    #[test]
    fn overhead_projection_sees_every_vertex() {
        let spec = GridSpec::default_3d();
        let k = CameraIntrinsics::default();
        let c = spec.center();
        let pose = Pose::new(Vec3::new(c.x, c.y, 0.8), top_down()).unwrap();
        let set = project_grid(&spec, &k, &pose);
        assert_eq!(set.vertices.len(), 48);
        assert_eq!(set.labels.len(), 48);
        // 3 along x per row * 4 rows * 3 layers * 2 axes + 16 * 2 vertical
        assert_eq!(set.segments.len(), 3 * 4 * 3 * 2 + 32);
    }

    #[test]
    fn facing_away_is_empty() {
        let pose = Pose::new(Vec3::new(0.0, 0.4, 0.8), UnitQuaternion::identity()).unwrap();
        let set = project_grid(&GridSpec::default_3d(), &CameraIntrinsics::default(), &pose);
        assert!(set.is_empty());
        assert!(set.vertices.is_empty());
    }

    #[test]
    fn minimal_grid_has_four_edges() {
        let spec = GridSpec {
            extent: Vec3::new(0.2, 0.2, 0.1),
            ..GridSpec::default_3d()
        };
        let pose = Pose::new(Vec3::new(-0.2, 0.2, 0.8), top_down()).unwrap();
        let set = project_grid(&spec, &CameraIntrinsics::default(), &pose);
        assert_eq!(set.segments.len(), 4);
        assert_eq!(set.labels.len(), 4);
    }

    #[test]
    fn clipping() {
        let a = PixelCoord { u: -10.0, v: 10.0 };
        let b = PixelCoord { u: 50.0, v: 10.0 };
        let (p, q) = clip_segment(a, b, 40.0, 30.0).unwrap();
        assert_eq!((p.u, p.v, q.u, q.v), (0.0, 10.0, 40.0, 10.0));
        assert!(clip_segment(
            PixelCoord { u: -5.0, v: -5.0 },
            PixelCoord { u: -1.0, v: 50.0 },
            40.0,
            30.0
        )
        .is_none());
    }

    #[test]
    fn svg_has_lines() {
        let pose = Pose::new(Vec3::new(0.0, 0.4, 0.8), top_down()).unwrap();
        let set = project_grid(&GridSpec::default_3d(), &CameraIntrinsics::default(), &pose);
        let svg = set.to_svg();
        assert_eq!(svg.matches("<line").count(), set.segments.len());
        assert_eq!(svg.matches("<text").count(), 48);
    }
}
