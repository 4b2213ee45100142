//! The capture, analyze, act cycle and its replayable episode log.
//!
//! An episode log is JSON Lines: one `header` record, one `step` record per
//! analysis, and a closing `result` record. `replay_log` re-checks every
//! invariant of a log and tolerates a missing tail from an interrupted run.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionspace::{
    action_to_pose, snapped_vertex, Action, ActionSpaceKind, ActionSpaceRules,
};
use crate::agent::{
    build_observation, propose_action, ActivePerceptionPolicy, Answer, EnhancedObservation,
    Knowledge, PerceptionAnalyzer, PolicyError, Query, DEFAULT_CONFIDENCE_THRESHOLD,
};
use crate::geom::{distance, Pose, Vec3};
use crate::grid::GridIndex;
use crate::scene::{fixed_view_poses, SceneSpec};

pub const LOG_FORMAT: &str = "apvlm-episode";
pub const LOG_VERSION: u32 = 1;
const LENGTH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_iterations: usize,
    pub confidence_threshold: f64,
    pub random_seed: u64,
    pub marker_noise_std: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_iterations: 10,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            random_seed: 0,
            marker_noise_std: 0.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("max_iterations must be at least 1")]
    NoIterations,
    #[error("confidence_threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
    #[error("marker_noise_std must be finite and non-negative, got {0}")]
    Noise(f64),
}

impl EpisodeConfig {
    pub fn with_seed(seed: u64) -> Self {
        EpisodeConfig {
            random_seed: seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_iterations == 0 {
            return Err(ConfigError::NoIterations);
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(ConfigError::Threshold(self.confidence_threshold));
        }
        if !self.marker_noise_std.is_finite() || self.marker_noise_std < 0.0 {
            return Err(ConfigError::Noise(self.marker_noise_std));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConclusiveAnswer,
    IterationCap,
    Exhausted,
    AgentUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub pose_before: Pose,
    pub pose_after: Pose,
    pub action: Option<Action>,
    /// Vertex the executed action snaps to.
    pub vertex: Option<GridIndex>,
    pub answer: Answer,
    pub segment_length: f64,
    pub hidden_fact_visible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub malformed_reply: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: String,
    /// Action-space name, or the baseline name for passive methods.
    pub method: String,
    pub action_space: Option<ActionSpaceKind>,
    pub config: EpisodeConfig,
    pub home_pose: Pose,
    pub steps: Vec<StepRecord>,
    pub terminated_by: Termination,
    pub final_answer: Answer,
    pub final_pose: Pose,
    pub trajectory: Vec<Vec3>,
}

impl EpisodeResult {
    pub fn trajectory_length(&self) -> f64 {
        polyline_length(&self.trajectory)
    }

    pub fn visited_vertices(&self) -> Vec<GridIndex> {
        self.steps.iter().filter_map(|s| s.vertex).collect()
    }
}

pub fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| distance(&w[0], &w[1])).sum()
}

/// Runs one episode from the scene's home pose. A `None` policy (NAP) means
/// the home observation is analyzed once and the episode stops.
pub fn run_episode(
    scene: &SceneSpec,
    rules: &ActionSpaceRules,
    analyzer: &mut dyn PerceptionAnalyzer,
    mut policy: Option<&mut dyn ActivePerceptionPolicy>,
    cfg: &EpisodeConfig,
) -> EpisodeResult {
    let k = scene.camera;
    let query = Query::new(scene.query.clone()).expect("validated scene has a query");
    let with_image = analyzer.needs_image() || policy.as_ref().is_some_and(|p| p.needs_image());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.random_seed);
    noise_rng.set_stream(1);

    let mut pose = scene.home_pose;
    let mut knowledge = Knowledge::new(&query, rules);
    let mut home_obs: Option<EnhancedObservation> = None;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut trajectory = vec![pose.position];
    let mut final_answer = Answer::inconclusive(0.0);
    let mut terminated_by = Termination::IterationCap;

    for t in 0..cfg.max_iterations.max(1) {
        let obs = build_observation(
            scene,
            &rules.grid,
            &pose,
            &k,
            cfg.marker_noise_std,
            with_image,
            &mut noise_rng,
        );
        let analysis = match analyzer.analyze(&query, &obs) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("analyzer unavailable at step {t}: {e}");
                terminated_by = Termination::AgentUnavailable;
                break;
            }
        };
        let mut step = StepRecord {
            index: t,
            pose_before: pose,
            pose_after: pose,
            action: None,
            vertex: None,
            answer: analysis.answer.clone(),
            segment_length: 0.0,
            hidden_fact_visible: obs.facts.hidden_fact_visible,
            rejection: None,
            malformed_reply: analysis.malformed_reply,
        };
        final_answer = analysis.answer.clone();
        if analysis.answer.conclusive && analysis.answer.confidence >= cfg.confidence_threshold {
            steps.push(step);
            terminated_by = Termination::ConclusiveAnswer;
            break;
        }
        let last = t + 1 >= cfg.max_iterations;
        let Some(policy) = policy
            .as_deref_mut()
            .filter(|_| !rules.static_camera && !last)
        else {
            steps.push(step);
            terminated_by = Termination::IterationCap;
            break;
        };
        if t == 0 {
            home_obs = Some(obs.clone());
        }
        let home = if rules.include_home_obs {
            home_obs.as_ref()
        } else {
            None
        };
        match propose_action(policy, &pose, &obs, &knowledge, home, rules) {
            Ok((action, next)) => {
                let target = action_to_pose(rules, &action);
                step.action = Some(action);
                step.vertex = Some(snapped_vertex(rules, &action));
                step.pose_after = target;
                step.segment_length = distance(&pose.position, &target.position);
                pose = target;
                trajectory.push(pose.position);
                knowledge = next;
                steps.push(step);
            }
            Err(PolicyError::Rejected(r)) => {
                log::debug!("step {t}: proposal rejected ({})", r.name());
                step.rejection = Some(r.name().to_string());
                steps.push(step);
            }
            Err(PolicyError::Malformed(reason)) => {
                log::debug!("step {t}: unusable proposal ({reason})");
                step.rejection = Some("MalformedReply".to_string());
                step.malformed_reply = true;
                steps.push(step);
            }
            Err(PolicyError::Exhausted) => {
                steps.push(step);
                terminated_by = Termination::Exhausted;
                break;
            }
            Err(PolicyError::Unavailable(e)) => {
                log::warn!("policy unavailable at step {t}: {e}");
                steps.push(step);
                terminated_by = Termination::AgentUnavailable;
                break;
            }
        }
    }

    EpisodeResult {
        scene_id: scene.id.clone(),
        method: rules.kind.name().to_string(),
        action_space: Some(rules.kind),
        config: *cfg,
        home_pose: scene.home_pose,
        steps,
        terminated_by,
        final_answer,
        final_pose: pose,
        trajectory,
    }
}

pub const FIXED_VIEWS_METHOD: &str = "fixed-views";

/// The five-camera passive baseline expressed as an episode: each view is
/// visited in turn until one yields a conclusive answer.
pub fn run_fixed_views(
    scene: &SceneSpec,
    analyzer: &mut dyn PerceptionAnalyzer,
    cfg: &EpisodeConfig,
) -> EpisodeResult {
    let k = scene.camera;
    let query = Query::new(scene.query.clone()).expect("validated scene has a query");
    let with_image = analyzer.needs_image();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.random_seed);
    noise_rng.set_stream(1);
    let mut pose = scene.home_pose;
    let mut trajectory = vec![pose.position];
    let mut steps = Vec::new();
    let mut final_answer = Answer::inconclusive(0.0);
    let mut terminated_by = Termination::Exhausted;
    for (t, view) in fixed_view_poses(scene)
        .into_iter()
        .enumerate()
        .take(cfg.max_iterations.max(1))
    {
        let segment_length = distance(&pose.position, &view.position);
        let before = pose;
        pose = view;
        trajectory.push(pose.position);
        let obs = build_observation(
            scene,
            &scene.grid,
            &pose,
            &k,
            cfg.marker_noise_std,
            with_image,
            &mut noise_rng,
        );
        let analysis = match analyzer.analyze(&query, &obs) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("analyzer unavailable at fixed view {t}: {e}");
                trajectory.pop();
                pose = before;
                terminated_by = Termination::AgentUnavailable;
                break;
            }
        };
        final_answer = analysis.answer.clone();
        steps.push(StepRecord {
            index: t,
            pose_before: before,
            pose_after: pose,
            action: None,
            vertex: None,
            answer: analysis.answer.clone(),
            segment_length,
            hidden_fact_visible: obs.facts.hidden_fact_visible,
            rejection: None,
            malformed_reply: analysis.malformed_reply,
        });
        if analysis.answer.conclusive && analysis.answer.confidence >= cfg.confidence_threshold {
            terminated_by = Termination::ConclusiveAnswer;
            break;
        }
    }
    if terminated_by == Termination::Exhausted && steps.len() < 5 {
        terminated_by = Termination::IterationCap;
    }
    EpisodeResult {
        scene_id: scene.id.clone(),
        method: FIXED_VIEWS_METHOD.to_string(),
        action_space: None,
        config: *cfg,
        home_pose: scene.home_pose,
        steps,
        terminated_by,
        final_answer,
        final_pose: pose,
        trajectory,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub scene_id: String,
    pub method: String,
    pub action_space: Option<ActionSpaceKind>,
    pub config: EpisodeConfig,
    pub home_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFooter {
    pub terminated_by: Termination,
    pub final_answer: Answer,
    pub final_pose: Pose,
    pub trajectory: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Step(StepRecord),
    Result(LogFooter),
}

/// Serializes an episode as JSON Lines, newline-terminated.
pub fn to_jsonl(result: &EpisodeResult) -> String {
    let mut records = vec![LogRecord::Header(LogHeader {
        format: LOG_FORMAT.to_string(),
        version: LOG_VERSION,
        scene_id: result.scene_id.clone(),
        method: result.method.clone(),
        action_space: result.action_space,
        config: result.config,
        home_pose: result.home_pose,
    })];
    records.extend(result.steps.iter().cloned().map(LogRecord::Step));
    records.push(LogRecord::Result(LogFooter {
        terminated_by: result.terminated_by,
        final_answer: result.final_answer.clone(),
        final_pose: result.final_pose,
        trajectory: result.trajectory.clone(),
    }));
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r).expect("log records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {invariant} violated: {detail}")]
pub struct ReplayError {
    pub line: usize,
    pub invariant: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub footer: Option<LogFooter>,
    /// The log ended before its result record (interrupted run).
    pub truncated: bool,
}

impl Replay {
    pub fn into_result(self) -> Option<EpisodeResult> {
        let footer = self.footer?;
        Some(EpisodeResult {
            scene_id: self.header.scene_id,
            method: self.header.method,
            action_space: self.header.action_space,
            config: self.header.config,
            home_pose: self.header.home_pose,
            steps: self.steps,
            terminated_by: footer.terminated_by,
            final_answer: footer.final_answer,
            final_pose: footer.final_pose,
            trajectory: footer.trajectory,
        })
    }

    pub fn narrative(&self) -> Vec<String> {
        let mut lines = vec![format!(
            "episode on {} with {} (seed {})",
            self.header.scene_id, self.header.method, self.header.config.random_seed
        )];
        for s in &self.steps {
            let p = s.pose_before.position;
            let action = match (&s.action, &s.rejection) {
                (Some(a), _) => format!("move {a} ({:.3} m)", s.segment_length),
                (None, Some(r)) => format!("rejected: {r}"),
                (None, None) if s.segment_length > 0.0 => {
                    let q = s.pose_after.position;
                    format!(
                        "view ({:.3}, {:.3}, {:.3}) ({:.3} m)",
                        q.x, q.y, q.z, s.segment_length
                    )
                }
                (None, None) => "stop".to_string(),
            };
            let answer = if s.answer.conclusive {
                format!("\"{}\" @ {:.2}", s.answer.text, s.answer.confidence)
            } else {
                format!("inconclusive @ {:.2}", s.answer.confidence)
            };
            lines.push(format!(
                "step {}: at ({:.3}, {:.3}, {:.3}) answer {answer}; {action}",
                s.index, p.x, p.y, p.z
            ));
        }
        match &self.footer {
            Some(f) => lines.push(format!(
                "terminated by {:?} after {} steps, path {:.3} m",
                f.terminated_by,
                self.steps.len(),
                polyline_length(&f.trajectory)
            )),
            None => lines.push(format!("log truncated after {} steps", self.steps.len())),
        }
        lines
    }
}

fn fail(line: usize, invariant: &'static str, detail: impl Into<String>) -> ReplayError {
    ReplayError {
        line,
        invariant,
        detail: detail.into(),
    }
}

fn same_pose(a: &Pose, b: &Pose) -> bool {
    let (qa, qb) = (a.orientation.coords, b.orientation.coords);
    distance(&a.position, &b.position) <= LENGTH_TOLERANCE
        && ((qa - qb).norm() <= 1e-9 || (qa + qb).norm() <= 1e-9)
}

/// Parses and verifies an episode log.
pub fn replay_log(text: &str) -> Result<Replay, ReplayError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let Some(&(first_no, first)) = lines.first() else {
        return Err(fail(1, "header present", "log is empty"));
    };
    let header = match serde_json::from_str::<LogRecord>(first) {
        Ok(LogRecord::Header(h)) => h,
        Ok(_) => {
            return Err(fail(
                first_no,
                "header present",
                "first record is not a header",
            ))
        }
        Err(e) => return Err(fail(first_no, "header present", e.to_string())),
    };
    if header.format != LOG_FORMAT || header.version != LOG_VERSION {
        return Err(fail(
            first_no,
            "known format",
            format!("{} v{}", header.format, header.version),
        ));
    }

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut footer = None;
    let mut truncated = false;
    let mut visited = BTreeSet::new();
    let mut pose = header.home_pose;
    let mut footer_line = 0;
    for (pos, &(no, line)) in lines.iter().enumerate().skip(1) {
        if footer.is_some() {
            return Err(fail(
                no,
                "result is the last record",
                "records follow the result",
            ));
        }
        let record = match serde_json::from_str::<LogRecord>(line) {
            Ok(r) => r,
            Err(_) if pos + 1 == lines.len() && !text.ends_with('\n') => {
                // A partially written last line from an interrupted run.
                truncated = true;
                break;
            }
            Err(e) => return Err(fail(no, "well-formed record", e.to_string())),
        };
        match record {
            LogRecord::Header(_) => return Err(fail(no, "single header", "second header record")),
            LogRecord::Step(s) => {
                if s.index != steps.len() {
                    return Err(fail(
                        no,
                        "sequential step index",
                        format!("expected {}, got {}", steps.len(), s.index),
                    ));
                }
                if steps.len() >= header.config.max_iterations {
                    return Err(fail(
                        no,
                        "iteration cap",
                        format!("more than {} steps", header.config.max_iterations),
                    ));
                }
                if !same_pose(&s.pose_before, &pose) {
                    return Err(fail(
                        no,
                        "pose continuity",
                        "pose_before differs from the previous pose_after",
                    ));
                }
                let expected = distance(&s.pose_before.position, &s.pose_after.position);
                if !s.segment_length.is_finite()
                    || (s.segment_length - expected).abs() > LENGTH_TOLERANCE
                {
                    return Err(fail(
                        no,
                        "segment length",
                        format!(
                            "recorded {}, poses are {} apart",
                            s.segment_length, expected
                        ),
                    ));
                }
                if !(0.0..=1.0).contains(&s.answer.confidence)
                    || (s.answer.conclusive && s.answer.text.is_empty())
                {
                    return Err(fail(
                        no,
                        "answer well-formed",
                        "bad confidence or empty conclusive answer",
                    ));
                }
                if let Some(v) = s.vertex {
                    if !visited.insert(v) {
                        return Err(fail(no, "no revisits", format!("vertex {v} visited twice")));
                    }
                }
                pose = s.pose_after;
                steps.push(s);
            }
            LogRecord::Result(f) => {
                footer_line = no;
                footer = Some(f);
            }
        }
    }
    if footer.is_none() {
        truncated = true;
    }
    if let Some(f) = &footer {
        let no = footer_line;
        match f.trajectory.first() {
            Some(p) if distance(p, &header.home_pose.position) <= LENGTH_TOLERANCE => {}
            _ => {
                return Err(fail(
                    no,
                    "trajectory starts at home",
                    "first trajectory point is not the home position",
                ))
            }
        }
        let total: f64 = steps.iter().map(|s| s.segment_length).sum();
        let poly = polyline_length(&f.trajectory);
        if (total - poly).abs() > LENGTH_TOLERANCE {
            return Err(fail(
                no,
                "trajectory length",
                format!("segments sum to {total}, polyline is {poly}"),
            ));
        }
        if !same_pose(&f.final_pose, &pose) {
            return Err(fail(
                no,
                "final pose",
                "final_pose differs from the last step's pose_after",
            ));
        }
        if f.terminated_by == Termination::ConclusiveAnswer
            && (!f.final_answer.conclusive
                || f.final_answer.confidence < header.config.confidence_threshold)
        {
            return Err(fail(
                no,
                "conclusive termination",
                "final answer below the confidence threshold",
            ));
        }
    }
    Ok(Replay {
        header,
        steps,
        footer,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actionspace::rules_for_grid;
    use crate::agent::{GreedyPolicy, OracleAnalyzer, RandomPolicy};
    use crate::scene::{inclined_scene, narrow_cone_scene, perpendicular_scene};

    fn episode(scene: &SceneSpec, kind: ActionSpaceKind, seed: u64) -> EpisodeResult {
        let rules = rules_for_grid(kind, &scene.grid);
        let mut analyzer = OracleAnalyzer::new(scene);
        let mut policy = GreedyPolicy::new(scene);
        let policy: Option<&mut dyn ActivePerceptionPolicy> = if kind == ActionSpaceKind::Nap {
            None
        } else {
            Some(&mut policy)
        };
        run_episode(
            scene,
            &rules,
            &mut analyzer,
            policy,
            &EpisodeConfig::with_seed(seed),
        )
    }

    #[test]
    fn nap_analyzes_once() {
        for s in [perpendicular_scene(), inclined_scene()] {
            let r = episode(&s, ActionSpaceKind::Nap, 0);
            assert_eq!(r.steps.len(), 1);
            assert_eq!(r.terminated_by, Termination::IterationCap);
            assert!(!r.final_answer.conclusive);
            assert_eq!(r.trajectory_length(), 0.0);
        }
    }

    #[test]
    fn greedy_3dx_reaches_the_answer() {
        for s in [perpendicular_scene(), inclined_scene(), narrow_cone_scene()] {
            let r = episode(&s, ActionSpaceKind::ThreeDx, 0);
            assert_eq!(r.terminated_by, Termination::ConclusiveAnswer, "{}", s.id);
            assert!(r.steps.len() <= 10);
            assert!(crate::metrics::normalize_text(&r.final_answer.text).contains(&s.truth_answer));
        }
    }

    #[test]
    fn inclined_needs_rotation() {
        let s = inclined_scene();
        for kind in [
            ActionSpaceKind::TwoDa,
            ActionSpaceKind::TwoDna,
            ActionSpaceKind::ThreeDd,
            ActionSpaceKind::ThreeDc,
        ] {
            let r = episode(&s, kind, 0);
            assert!(!r.final_answer.conclusive, "{kind}");
        }
    }

    struct Never;
    impl PerceptionAnalyzer for Never {
        fn analyze(
            &mut self,
            _: &Query,
            _: &EnhancedObservation,
        ) -> Result<crate::agent::Analysis, crate::agent::AgentError> {
            Ok(Answer::inconclusive(0.3).into())
        }
    }

    #[test]
    fn single_iteration_cap() {
        let s = perpendicular_scene();
        let rules = rules_for_grid(ActionSpaceKind::ThreeDx, &s.grid);
        let mut p = RandomPolicy::new(1);
        let cfg = EpisodeConfig {
            max_iterations: 1,
            ..Default::default()
        };
        let r = run_episode(&s, &rules, &mut Never, Some(&mut p), &cfg);
        assert_eq!(r.steps.len(), 1);
        assert!(r.steps[0].action.is_none());
        assert_eq!(r.terminated_by, Termination::IterationCap);
    }

    #[test]
    fn random_episode_invariants_and_log_round_trip() {
        let s = perpendicular_scene();
        let rules = rules_for_grid(ActionSpaceKind::ThreeDxy, &s.grid);
        let run = || {
            let mut p = RandomPolicy::new(9);
            run_episode(
                &s,
                &rules,
                &mut Never,
                Some(&mut p),
                &EpisodeConfig::with_seed(9),
            )
        };
        let r = run();
        assert_eq!(r.steps.len(), 10);
        assert_eq!(r.terminated_by, Termination::IterationCap);
        let seg: f64 = r.steps.iter().map(|s| s.segment_length).sum();
        assert!((seg - r.trajectory_length()).abs() < 1e-9);
        let log = to_jsonl(&r);
        assert_eq!(log, to_jsonl(&run()));
        let replay = replay_log(&log).unwrap();
        assert!(!replay.truncated);
        assert_eq!(replay.narrative().len(), r.steps.len() + 2);
        assert_eq!(replay.into_result().unwrap(), r);
    }

    #[test]
    fn replay_detects_corruption_and_truncation() {
        let r = episode(&perpendicular_scene(), ActionSpaceKind::ThreeDx, 0);
        let log = to_jsonl(&r);
        let lines: Vec<&str> = log.lines().collect();

        let cut = format!("{}\n{}", lines[0], &lines[1][..lines[1].len() / 2]);
        let partial = replay_log(&cut).unwrap();
        assert!(partial.truncated && partial.steps.is_empty());

        let without_footer: String = lines[..lines.len() - 1]
            .iter()
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(replay_log(&without_footer).unwrap().truncated);

        let mut v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        v["segment_length"] = serde_json::json!(v["segment_length"].as_f64().unwrap() + 0.01);
        let mut bad: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        bad[1] = v.to_string();
        let err = replay_log(&(bad.join("\n") + "\n")).unwrap_err();
        assert_eq!(err.invariant, "segment length");
        assert_eq!(err.line, 2);
    }

    #[test]
    fn fixed_views_episode_is_consistent() {
        let s = narrow_cone_scene();
        let r = run_fixed_views(&s, &mut OracleAnalyzer::new(&s), &EpisodeConfig::default());
        assert_eq!(r.steps.len(), 5);
        assert!(!r.final_answer.conclusive);
        assert_eq!(r.terminated_by, Termination::Exhausted);
        replay_log(&to_jsonl(&r)).unwrap();
    }
}
