//! Perception analyzer and active-perception policy contracts, the knowledge
//! context they share, and the built-in scripted agents.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionspace::{
    snapped_vertex, validate, Action, ActionSpaceKind, ActionSpaceRules, Rejection, RotationStep,
};
use crate::geom::{angle_between_deg, CameraIntrinsics, Pose, Vec3};
use crate::grid::{
    generate_vertices, nearest_vertex, project_grid, GridIndex, GridSpec, OverlayPrimitiveSet,
};
use crate::metrics::normalize_text;
use crate::render::{render, RasterImage};
use crate::scene::{
    estimate_grid, fixed_view_poses, observe_noisy, tilted_top_down, HiddenAttribute,
    ObservationFacts, SceneSpec,
};

/// Confidence an answer needs before the loop accepts it.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Query(String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("query text is empty")]
pub struct EmptyQuery;

impl Query {
    pub fn new(text: impl Into<String>) -> Result<Self, EmptyQuery> {
        let text = text.into();
        if text.trim().is_empty() {
            Err(EmptyQuery)
        } else {
            Ok(Query(text))
        }
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub conclusive: bool,
    pub text: String,
    pub confidence: f64,
}

impl Answer {
    pub fn conclusive(text: impl Into<String>, confidence: f64) -> Self {
        let text = text.into();
        debug_assert!(!text.is_empty());
        Answer {
            conclusive: true,
            text,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn inconclusive(confidence: f64) -> Self {
        Answer {
            conclusive: false,
            text: String::new(),
            confidence: confidence.clamp(0.0, 1.0),
        }
    }
}

/// Immutable context fixed at episode start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeContext {
    pub query: String,
    pub action_space: ActionSpaceKind,
    pub action_rules: String,
    pub workspace_min: Vec3,
    pub workspace_max: Vec3,
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFact {
    pub step: usize,
    pub pose: Pose,
    pub vertex: GridIndex,
    pub summary: String,
}

/// `{eta, kappa}`: initial context plus one fact per executed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knowledge {
    pub eta: KnowledgeContext,
    pub kappa: Vec<StepFact>,
}

impl Knowledge {
    pub fn new(query: &Query, rules: &ActionSpaceRules) -> Self {
        let g = &rules.grid;
        Knowledge {
            eta: KnowledgeContext {
                query: query.text().to_string(),
                action_space: rules.kind,
                action_rules: rules.describe(),
                workspace_min: g.anchor,
                workspace_max: g.anchor + g.extent,
                goal: format!(
                    "Answer the query \"{}\". Move the camera only when the current view cannot answer it, and never go back to a visited vertex.",
                    query.text()
                ),
            },
            kappa: Vec::new(),
        }
    }

    pub fn visited(&self) -> BTreeSet<GridIndex> {
        self.kappa.iter().map(|f| f.vertex).collect()
    }
}

/// An observation with the grid overlay; the raster is only produced for
/// agents that look at pixels.
#[derive(Debug, Clone)]
pub struct EnhancedObservation {
    pub facts: ObservationFacts,
    pub overlay: OverlayPrimitiveSet,
    pub image: Option<RasterImage>,
}

/// Captures the scene at `pose`, re-anchors the grid through the detected
/// markers and projects it.
pub fn build_observation<R: Rng + ?Sized>(
    scene: &SceneSpec,
    grid: &GridSpec,
    pose: &Pose,
    k: &CameraIntrinsics,
    marker_noise_std: f64,
    with_image: bool,
    rng: &mut R,
) -> EnhancedObservation {
    let facts = observe_noisy(scene, pose, k, marker_noise_std, rng);
    let anchored = estimate_grid(scene, grid, pose, &facts.detected_markers);
    let overlay = project_grid(&anchored, k, pose);
    let image = with_image.then(|| render(scene, pose, k, &overlay));
    EnhancedObservation {
        facts,
        overlay,
        image,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("agent unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub answer: Answer,
    /// The remote model never produced a parseable reply.
    pub malformed_reply: bool,
}

impl From<Answer> for Analysis {
    fn from(answer: Answer) -> Self {
        Analysis {
            answer,
            malformed_reply: false,
        }
    }
}

pub trait PerceptionAnalyzer {
    fn analyze(&mut self, query: &Query, obs: &EnhancedObservation)
        -> Result<Analysis, AgentError>;

    fn needs_image(&self) -> bool {
        false
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("no unvisited action remains")]
    Exhausted,
    #[error("policy unavailable: {0}")]
    Unavailable(String),
    #[error("proposal rejected: {0}")]
    Rejected(Rejection),
    #[error("unusable proposal: {0}")]
    Malformed(String),
}

pub struct PolicyInput<'a> {
    pub pose: &'a Pose,
    pub obs: &'a EnhancedObservation,
    pub knowledge: &'a Knowledge,
    pub home_obs: Option<&'a EnhancedObservation>,
    pub rules: &'a ActionSpaceRules,
}

pub trait ActivePerceptionPolicy {
    fn choose(&mut self, input: &PolicyInput<'_>) -> Result<Action, PolicyError>;

    fn needs_image(&self) -> bool {
        false
    }
}

/// Asks `policy` for the next action and returns it with the updated knowledge.
pub fn propose_action(
    policy: &mut dyn ActivePerceptionPolicy,
    pose: &Pose,
    obs: &EnhancedObservation,
    knowledge: &Knowledge,
    home_obs: Option<&EnhancedObservation>,
    rules: &ActionSpaceRules,
) -> Result<(Action, Knowledge), PolicyError> {
    if rules.static_camera {
        return Err(PolicyError::Exhausted);
    }
    let visited = knowledge.visited();
    if visited.len() >= rules.grid.vertex_count() {
        return Err(PolicyError::Exhausted);
    }
    let input = PolicyInput {
        pose,
        obs,
        knowledge,
        home_obs: home_obs.filter(|_| rules.include_home_obs),
        rules,
    };
    let action = policy.choose(&input)?;
    validate(rules, &action, &visited).map_err(PolicyError::Rejected)?;
    let mut next = knowledge.clone();
    next.kappa.push(StepFact {
        step: knowledge.kappa.len(),
        pose: crate::actionspace::action_to_pose(rules, &action),
        vertex: snapped_vertex(rules, &action),
        summary: obs.facts.summary(),
    });
    Ok((action, next))
}

/// Ground-truth analyzer: answers exactly when the relevant fact is in view.
#[derive(Debug, Clone)]
pub struct OracleAnalyzer {
    scene_query: String,
    truth: String,
    hidden_owner: String,
    hidden_fact: String,
}

impl OracleAnalyzer {
    pub fn new(scene: &SceneSpec) -> Self {
        OracleAnalyzer {
            scene_query: normalize_text(&scene.query),
            truth: normalize_text(&scene.truth_answer),
            hidden_owner: scene.hidden.owner_id.clone(),
            hidden_fact: scene.hidden.fact.clone(),
        }
    }
}

impl PerceptionAnalyzer for OracleAnalyzer {
    fn analyze(
        &mut self,
        query: &Query,
        obs: &EnhancedObservation,
    ) -> Result<Analysis, AgentError> {
        let mut facts: Vec<(&str, &str)> = Vec::new();
        if obs.facts.hidden_fact_visible {
            facts.push((&self.hidden_owner, &self.hidden_fact));
        }
        facts.extend(
            obs.facts
                .visible_surface_facts
                .iter()
                .map(|(o, f)| (o.as_str(), f.as_str())),
        );
        let q = normalize_text(query.text());
        let hit = if q == self.scene_query {
            // The scene's own query: only the fact carrying the truth answers it.
            facts
                .iter()
                .find(|(_, f)| normalize_text(f).contains(&self.truth))
        } else {
            facts.iter().find(|(owner, _)| {
                let owner = normalize_text(owner);
                !owner.is_empty() && q.contains(&owner)
            })
        };
        Ok(match hit {
            Some((_, fact)) => Answer::conclusive(*fact, 1.0),
            None => Answer::inconclusive(0.0),
        }
        .into())
    }
}

/// Uniformly random unvisited targets.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ActivePerceptionPolicy for RandomPolicy {
    fn choose(&mut self, input: &PolicyInput<'_>) -> Result<Action, PolicyError> {
        let rules = input.rules;
        let visited = input.knowledge.visited();
        let open: Vec<_> = generate_vertices(&rules.grid)
            .map_err(|_| PolicyError::Exhausted)?
            .into_iter()
            .filter(|v| !visited.contains(&v.index))
            .collect();
        if open.is_empty() {
            return Err(PolicyError::Exhausted);
        }
        let v = &open[self.rng.random_range(0..open.len())];
        let rx = pick(&mut self.rng, rules.rot_x_options());
        let ry = pick(&mut self.rng, rules.rot_y_options());
        let action = if rules.allows_continuous {
            let g = &rules.grid;
            let jitter = Vec3::new(
                self.rng.random_range(-0.5..0.5) * g.spacing_xy,
                self.rng.random_range(-0.5..0.5) * g.spacing_xy,
                self.rng.random_range(-0.5..0.5) * g.spacing_z,
            );
            let lo = g.anchor;
            let hi = g.anchor + g.extent;
            let mut p = v.position + jitter;
            for a in 0..3 {
                p[a] = p[a].clamp(lo[a], hi[a]);
            }
            if nearest_vertex(g, &p).index != v.index {
                p = v.position;
            }
            Action::point(p)
        } else {
            Action::vertex(v.index)
        };
        Ok(action.with_rotation(rx, ry))
    }
}

fn pick<R: Rng>(rng: &mut R, options: &[RotationStep]) -> RotationStep {
    options[rng.random_range(0..options.len())]
}

/// Scripted baseline that knows where the hidden attribute's opening is.
///
/// Candidates are ranked by how far they fall outside the viewing cone, then
/// by distance to the distance band, then by how far off the optical axis the
/// target sits under the best allowed rotation.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    hidden: HiddenAttribute,
    target: Vec3,
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    key: [f64; 4],
    action: Action,
    vertex: GridIndex,
}

impl GreedyPolicy {
    pub fn new(scene: &SceneSpec) -> Self {
        GreedyPolicy {
            hidden: scene.hidden.clone(),
            target: scene.owner().centroid(),
        }
    }

    fn candidate_points(&self, rules: &ActionSpaceRules) -> Vec<(Vec3, Option<GridIndex>)> {
        let g = &rules.grid;
        if !rules.allows_continuous {
            return generate_vertices(g)
                .unwrap_or_default()
                .into_iter()
                .map(|v| (v.position, Some(v.index)))
                .collect();
        }
        let mut pts = Vec::new();
        let (nx, ny) = (2 * g.max_i(), 2 * g.max_j());
        let nz = 2 * g.max_k();
        for kz in 2..=nz {
            for jy in 0..=ny {
                for ix in 0..=nx {
                    pts.push((
                        Vec3::new(
                            g.anchor.x + ix as f64 * g.spacing_xy / 2.0,
                            g.anchor.y + jy as f64 * g.spacing_xy / 2.0,
                            g.anchor.z + kz as f64 * g.spacing_z / 2.0,
                        ),
                        None,
                    ));
                }
            }
        }
        let h = &self.hidden;
        const AXIS_SAMPLES: usize = 16;
        for s in 0..=AXIS_SAMPLES {
            let d =
                h.min_distance + (h.max_distance - h.min_distance) * s as f64 / AXIS_SAMPLES as f64;
            let p = h.opening_center + h.opening_normal * d;
            if g.contains_point(&p) {
                pts.push((p, None));
            }
        }
        pts
    }

    fn score(&self, rules: &ActionSpaceRules, p: &Vec3) -> ([f64; 4], RotationStep, RotationStep) {
        let cone = self.hidden.cone_angle_deg(p);
        let excess = (cone - self.hidden.cone_half_angle_deg).max(0.0);
        let gap = self.hidden.band_gap(p);
        let to_target = self.target - p;
        let mut best = (f64::INFINITY, RotationStep::Zero, RotationStep::Zero);
        for &rx in rules.rot_x_options() {
            for &ry in rules.rot_y_options() {
                let axis = tilted_top_down(rx.degrees() as f64, ry.degrees() as f64) * Vec3::z();
                let off = if to_target.norm() < 1e-12 {
                    180.0
                } else {
                    angle_between_deg(&axis, &to_target)
                };
                if off < best.0 {
                    best = (off, rx, ry);
                }
            }
        }
        ([excess, gap, best.0, cone], best.1, best.2)
    }
}

impl ActivePerceptionPolicy for GreedyPolicy {
    fn choose(&mut self, input: &PolicyInput<'_>) -> Result<Action, PolicyError> {
        let rules = input.rules;
        let visited = input.knowledge.visited();
        let mut best: Option<Scored> = None;
        for (p, vertex) in self.candidate_points(rules) {
            let (key, rx, ry) = self.score(rules, &p);
            let action = match vertex {
                Some(v) => Action::vertex(v),
                None => Action::point(p),
            }
            .with_rotation(rx, ry);
            let vertex = snapped_vertex(rules, &action);
            if visited.contains(&vertex) {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => key
                    .iter()
                    .zip(b.key.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .is_some_and(|o| o.is_lt()),
            };
            if better {
                best = Some(Scored {
                    key,
                    action,
                    vertex,
                });
            }
        }
        best.map(|b| {
            debug_assert!(!visited.contains(&b.vertex));
            b.action
        })
        .ok_or(PolicyError::Exhausted)
    }
}

/// Passive baseline: analyzes the five fixed views in order and returns the
/// first conclusive answer.
pub fn fixed_views_episode(
    scene: &SceneSpec,
    analyzer: &mut dyn PerceptionAnalyzer,
    k: &CameraIntrinsics,
) -> Result<Answer, AgentError> {
    let query =
        Query::new(scene.query.clone()).map_err(|e| AgentError::Unavailable(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let with_image = analyzer.needs_image();
    for pose in fixed_view_poses(scene) {
        let obs = build_observation(scene, &scene.grid, &pose, k, 0.0, with_image, &mut rng);
        let analysis = analyzer.analyze(&query, &obs)?;
        if analysis.answer.conclusive {
            return Ok(analysis.answer);
        }
    }
    Ok(Answer::inconclusive(0.0))
}
