//! The eight action spaces, action validation and action-to-pose semantics.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose, Vec3};
use crate::grid::{nearest_vertex, GridIndex, GridSpec};
use crate::scene::tilted_top_down;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionSpaceKind {
    #[serde(rename = "NAP")]
    Nap,
    #[serde(rename = "2DNA")]
    TwoDna,
    #[serde(rename = "2DA")]
    TwoDa,
    #[serde(rename = "3DD")]
    ThreeDd,
    #[serde(rename = "3DC")]
    ThreeDc,
    #[serde(rename = "3Dx")]
    ThreeDx,
    #[serde(rename = "3DxN")]
    ThreeDxN,
    #[serde(rename = "3Dxy")]
    ThreeDxy,
}

impl ActionSpaceKind {
    /// Declaration order, which is also report row order.
    pub const ALL: [ActionSpaceKind; 8] = [
        ActionSpaceKind::Nap,
        ActionSpaceKind::TwoDa,
        ActionSpaceKind::TwoDna,
        ActionSpaceKind::ThreeDd,
        ActionSpaceKind::ThreeDc,
        ActionSpaceKind::ThreeDx,
        ActionSpaceKind::ThreeDxN,
        ActionSpaceKind::ThreeDxy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ActionSpaceKind::Nap => "NAP",
            ActionSpaceKind::TwoDna => "2DNA",
            ActionSpaceKind::TwoDa => "2DA",
            ActionSpaceKind::ThreeDd => "3DD",
            ActionSpaceKind::ThreeDc => "3DC",
            ActionSpaceKind::ThreeDx => "3Dx",
            ActionSpaceKind::ThreeDxN => "3DxN",
            ActionSpaceKind::ThreeDxy => "3Dxy",
        }
    }

    pub fn allows_rotation(&self) -> bool {
        matches!(
            self,
            ActionSpaceKind::ThreeDx | ActionSpaceKind::ThreeDxN | ActionSpaceKind::ThreeDxy
        )
    }
}

impl fmt::Display for ActionSpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown action space {0:?}")]
pub struct UnknownActionSpace(pub String);

impl FromStr for ActionSpaceKind {
    type Err = UnknownActionSpace;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionSpaceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownActionSpace(s.to_string()))
    }
}

/// One of the admissible rotation steps, degrees.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(try_from = "i32", into = "i32")]
pub enum RotationStep {
    Neg35,
    #[default]
    Zero,
    Pos35,
}

impl RotationStep {
    /// Preference order when a policy has no reason to pick one over another.
    pub const ALL: [RotationStep; 3] =
        [RotationStep::Zero, RotationStep::Pos35, RotationStep::Neg35];

    pub fn degrees(&self) -> i32 {
        match self {
            RotationStep::Neg35 => -35,
            RotationStep::Zero => 0,
            RotationStep::Pos35 => 35,
        }
    }
}

impl From<RotationStep> for i32 {
    fn from(r: RotationStep) -> i32 {
        r.degrees()
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("rotation must be one of -35, 0, 35 degrees (got {0})")]
pub struct BadRotation(pub i32);

impl TryFrom<i32> for RotationStep {
    type Error = BadRotation;

    fn try_from(v: i32) -> Result<Self, Self::Error> {
        match v {
            -35 => Ok(RotationStep::Neg35),
            0 => Ok(RotationStep::Zero),
            35 => Ok(RotationStep::Pos35),
            other => Err(BadRotation(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTarget {
    Vertex(GridIndex),
    Point(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub target: ActionTarget,
    #[serde(default)]
    pub rot_x_deg: RotationStep,
    #[serde(default)]
    pub rot_y_deg: RotationStep,
}

impl Action {
    pub fn vertex(index: GridIndex) -> Self {
        Action {
            target: ActionTarget::Vertex(index),
            rot_x_deg: RotationStep::Zero,
            rot_y_deg: RotationStep::Zero,
        }
    }

    pub fn point(p: Vec3) -> Self {
        Action {
            target: ActionTarget::Point(p),
            rot_x_deg: RotationStep::Zero,
            rot_y_deg: RotationStep::Zero,
        }
    }

    pub fn with_rotation(mut self, rot_x: RotationStep, rot_y: RotationStep) -> Self {
        self.rot_x_deg = rot_x;
        self.rot_y_deg = rot_y;
        self
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.target {
            ActionTarget::Vertex(v) => write!(f, "vertex {v}")?,
            ActionTarget::Point(p) => write!(f, "point ({:.3}; {:.3}; {:.3})", p.x, p.y, p.z)?,
        }
        write!(
            f,
            " rot_x={} rot_y={}",
            self.rot_x_deg.degrees(),
            self.rot_y_deg.degrees()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpaceRules {
    pub kind: ActionSpaceKind,
    pub grid: GridSpec,
    /// No movement at all (NAP).
    pub static_camera: bool,
    pub allows_continuous: bool,
    pub allows_rot_x: bool,
    pub allows_rot_y: bool,
    pub annotated: bool,
    pub include_home_obs: bool,
}

/// Rules over the default grid.
pub fn rules_for(kind: ActionSpaceKind) -> ActionSpaceRules {
    rules_for_grid(kind, &GridSpec::default_3d())
}

/// Rules over a scene's calibrated 3D grid; planar spaces use its first layer.
pub fn rules_for_grid(kind: ActionSpaceKind, grid3d: &GridSpec) -> ActionSpaceRules {
    use ActionSpaceKind::*;
    let planar = matches!(kind, TwoDna | TwoDa);
    let annotated = !matches!(kind, Nap | TwoDna);
    let grid = if planar { grid3d.to_2d() } else { *grid3d }.with_annotation(annotated);
    ActionSpaceRules {
        kind,
        grid,
        static_camera: kind == Nap,
        allows_continuous: matches!(kind, ThreeDc | ThreeDx | ThreeDxN | ThreeDxy),
        allows_rot_x: matches!(kind, ThreeDx | ThreeDxN | ThreeDxy),
        allows_rot_y: kind == ThreeDxy,
        annotated,
        include_home_obs: kind != ThreeDxN,
    }
}

impl ActionSpaceRules {
    pub fn rot_x_options(&self) -> &'static [RotationStep] {
        if self.allows_rot_x {
            &RotationStep::ALL
        } else {
            &[RotationStep::Zero]
        }
    }

    pub fn rot_y_options(&self) -> &'static [RotationStep] {
        if self.allows_rot_y {
            &RotationStep::ALL
        } else {
            &[RotationStep::Zero]
        }
    }

    /// Text description used in prompts and in the knowledge context.
    pub fn describe(&self) -> String {
        let g = &self.grid;
        let hi = g.anchor + g.extent;
        if self.static_camera {
            return "The camera stays at the home pose; no movement is possible.".into();
        }
        let mut s = if self.allows_continuous {
            format!(
                "Move the camera to any point inside the cube x in [{:.2}, {:.2}], y in [{:.2}, {:.2}], z in [{:.2}, {:.2}] meters.",
                g.anchor.x, hi.x, g.anchor.y, hi.y, g.anchor.z, hi.z
            )
        } else {
            let layers = if g.max_k() == 1 {
                format!("a single layer at z = {:.2} m", g.anchor.z + g.spacing_z)
            } else {
                format!(
                    "{} layers spaced {:.2} m apart starting at z = {:.2} m",
                    g.max_k(),
                    g.spacing_z,
                    g.anchor.z + g.spacing_z
                )
            };
            format!(
                "Move the camera to a grid vertex: x from {:.2} to {:.2}, y from {:.2} to {:.2} in steps of {:.2} m, {}.",
                g.anchor.x, hi.x, g.anchor.y, hi.y, g.spacing_xy, layers
            )
        };
        match (self.allows_rot_x, self.allows_rot_y) {
            (true, true) => s.push_str(
                " You may also rotate the camera by -35, 0 or 35 degrees about the x and y axes.",
            ),
            (true, false) => s.push_str(
                " You may also rotate the camera by -35, 0 or 35 degrees about the x axis.",
            ),
            _ => s.push_str(" The camera always looks straight down."),
        }
        s
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    #[error("OutOfBounds: target lies outside the workspace")]
    OutOfBounds,
    #[error("WrongTargetType: target kind is not allowed by this action space")]
    WrongTargetType,
    #[error("RotationNotAllowed: rotation is not allowed by this action space")]
    RotationNotAllowed,
    #[error("Revisit: the target's grid vertex was already visited")]
    Revisit,
}

impl Rejection {
    pub fn name(&self) -> &'static str {
        match self {
            Rejection::OutOfBounds => "OutOfBounds",
            Rejection::WrongTargetType => "WrongTargetType",
            Rejection::RotationNotAllowed => "RotationNotAllowed",
            Rejection::Revisit => "Revisit",
        }
    }
}

/// Grid vertex an action counts as visiting.
pub fn snapped_vertex(rules: &ActionSpaceRules, a: &Action) -> GridIndex {
    match a.target {
        ActionTarget::Vertex(v) => v,
        ActionTarget::Point(p) => nearest_vertex(&rules.grid, &p).index,
    }
}

pub fn validate(
    rules: &ActionSpaceRules,
    a: &Action,
    visited: &BTreeSet<GridIndex>,
) -> Result<(), Rejection> {
    let in_bounds = match a.target {
        ActionTarget::Vertex(v) => rules.grid.contains_index(v),
        ActionTarget::Point(p) => p.iter().all(|c| c.is_finite()) && rules.grid.contains_point(&p),
    };
    if !in_bounds {
        return Err(Rejection::OutOfBounds);
    }
    let is_point = matches!(a.target, ActionTarget::Point(_));
    if rules.static_camera || is_point != rules.allows_continuous {
        return Err(Rejection::WrongTargetType);
    }
    if (!rules.allows_rot_x && a.rot_x_deg != RotationStep::Zero)
        || (!rules.allows_rot_y && a.rot_y_deg != RotationStep::Zero)
    {
        return Err(Rejection::RotationNotAllowed);
    }
    if visited.contains(&snapped_vertex(rules, a)) {
        return Err(Rejection::Revisit);
    }
    Ok(())
}

/// Absolute pose commanded by an action: the top-down orientation rotated
/// about base x, then about base y.
pub fn action_to_pose(rules: &ActionSpaceRules, a: &Action) -> Pose {
    let position = match a.target {
        ActionTarget::Vertex(v) => rules.grid.position_of(v),
        ActionTarget::Point(p) => p,
    };
    let orientation = tilted_top_down(a.rot_x_deg.degrees() as f64, a.rot_y_deg.degrees() as f64);
    Pose::new(position, orientation).expect("validated target is finite")
}
