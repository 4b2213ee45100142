//! Evaluation metrics over sets of trials and report emission.
//!
//! | metric | meaning | unit |
//! |---|---|---|
//! | SR | fraction of trials answered correctly | fraction |
//! | TLP | mean trajectory length | m |
//! | TLPS | mean trajectory length of correct trials | m |
//! | PE | mean distance from final to goal position | m |
//! | OE | mean angle between final and goal orientation | deg |
//! | OSR | fraction of trials whose trajectory came within the margin of the goal | fraction |

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionspace::ActionSpaceKind;
use crate::agent::Answer;
use crate::exploration::EpisodeResult;
use crate::geom::{distance, quat_angle_deg, Pose};

pub const DEFAULT_OSR_MARGIN: f64 = 0.1;

/// Lowercases, turns every non-alphanumeric character into a space and
/// collapses runs of whitespace.
pub fn normalize_text(s: &str) -> String {
    let mut mapped = String::with_capacity(s.len());
    for c in s.chars() {
        if c.is_alphanumeric() {
            mapped.extend(c.to_lowercase());
        } else {
            mapped.push(' ');
        }
    }
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn correctness(answer: &Answer, truth: &str) -> bool {
    if !answer.conclusive {
        return false;
    }
    let truth = normalize_text(truth);
    !truth.is_empty() && normalize_text(&answer.text).contains(&truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub episode: EpisodeResult,
    pub correct: bool,
    pub goal_pose: Pose,
}

impl TrialOutcome {
    pub fn new(episode: EpisodeResult, truth: &str, goal_pose: Pose) -> Self {
        let correct = correctness(&episode.final_answer, truth);
        TrialOutcome {
            episode,
            correct,
            goal_pose,
        }
    }

    fn rotation_allowed(&self) -> bool {
        self.episode
            .action_space
            .is_some_and(|k| k.allows_rotation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sr: f64,
    pub tlp: f64,
    pub tlps: f64,
    pub pe: f64,
    pub oe: Option<f64>,
    pub osr: f64,
    pub trials: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no trials to aggregate")]
    Empty,
    #[error("OSR margin must be positive, got {0}")]
    Margin(f64),
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn compute_metrics(
    trials: &[TrialOutcome],
    osr_margin: f64,
) -> Result<MetricsRow, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::Empty);
    }
    if osr_margin.is_nan() || osr_margin <= 0.0 {
        return Err(MetricsError::Margin(osr_margin));
    }
    let n = trials.len() as f64;
    let correct = trials.iter().filter(|t| t.correct).count();
    let oe =
        if trials.iter().any(TrialOutcome::rotation_allowed) {
            mean(trials.iter().filter(|t| t.rotation_allowed()).map(|t| {
                quat_angle_deg(&t.episode.final_pose.orientation, &t.goal_pose.orientation)
            }))
        } else {
            None
        };
    let near = trials
        .iter()
        .filter(|t| {
            t.episode
                .trajectory
                .iter()
                .any(|p| distance(p, &t.goal_pose.position) <= osr_margin)
        })
        .count();
    Ok(MetricsRow {
        sr: correct as f64 / n,
        tlp: mean(trials.iter().map(|t| t.episode.trajectory_length())).unwrap_or(0.0),
        tlps: mean(
            trials
                .iter()
                .filter(|t| t.correct)
                .map(|t| t.episode.trajectory_length()),
        )
        .unwrap_or(0.0),
        pe: mean(
            trials
                .iter()
                .map(|t| distance(&t.episode.final_pose.position, &t.goal_pose.position)),
        )
        .unwrap_or(0.0),
        oe,
        osr: near as f64 / n,
        trials: trials.len(),
    })
}

/// One aggregated cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene: String,
    pub method: String,
    pub action_space: Option<ActionSpaceKind>,
    pub metrics: MetricsRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format: {other}")),
        }
    }
}

pub const CSV_HEADER: &str = "scene,method,sr,tlp,tlps,pe,oe,osr,trials";
const ABSENT: &str = "--";

pub fn emit_report(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => emit_csv(rows),
        ReportFormat::Markdown => emit_markdown(rows),
    }
}

fn emit_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        let oe = m.oe.map_or(ABSENT.to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&r.scene),
            csv_field(&r.method),
            m.sr,
            m.tlp,
            m.tlps,
            m.pe,
            oe,
            m.osr,
            m.trials
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn ordered_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Methods as rows, one block of metric columns per scene.
fn emit_markdown(rows: &[ReportRow]) -> String {
    const COLUMNS: [&str; 6] = ["SR", "TLP (m)", "TLPS (m)", "PE (m)", "OE (deg)", "OSR"];
    let scenes = ordered_unique(rows.iter().map(|r| r.scene.as_str()));
    let methods = ordered_unique(rows.iter().map(|r| r.method.as_str()));

    let mut out = String::from("| Method |");
    let mut rule = String::from("|---|");
    for s in &scenes {
        for c in COLUMNS {
            let _ = write!(out, " {s} {c} |");
            rule.push_str("---:|");
        }
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "| {m} |");
        for s in &scenes {
            match rows.iter().find(|r| r.scene == *s && r.method == *m) {
                Some(r) => {
                    let x = &r.metrics;
                    let oe = x.oe.map_or(ABSENT.to_string(), |v| format!("{v:.1}"));
                    let _ = write!(
                        out,
                        " {:.2} | {:.3} | {:.3} | {:.3} | {oe} | {:.2} |",
                        x.sr, x.tlp, x.tlps, x.pe, x.osr
                    );
                }
                None => out.push_str(&" |".repeat(COLUMNS.len())),
            }
        }
        out.push('\n');
    }
    if !rows.is_empty() {
        out.push_str(
            "\nOSR is reported as a fraction of trials, not a count. \
             TLP is measured from the home pose, so NAP's TLP is 0 by construction. \
             OE is only defined for action spaces that allow camera rotation (\"--\" otherwise). \
             The greedy policy is a scripted baseline that knows where the target opening is.\n",
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exploration::{EpisodeConfig, Termination};
    use crate::geom::{top_down, Vec3};

    fn trial(
        points: &[[f64; 3]],
        correct: bool,
        goal: [f64; 3],
        kind: ActionSpaceKind,
    ) -> TrialOutcome {
        let traj: Vec<Vec3> = points.iter().map(|p| Vec3::from(*p)).collect();
        let final_pose = Pose::new(*traj.last().unwrap(), top_down()).unwrap();
        TrialOutcome {
            episode: EpisodeResult {
                scene_id: "s".into(),
                method: kind.name().into(),
                action_space: Some(kind),
                config: EpisodeConfig::default(),
                home_pose: Pose::new(traj[0], top_down()).unwrap(),
                steps: vec![],
                terminated_by: Termination::IterationCap,
                final_answer: Answer::inconclusive(0.0),
                final_pose,
                trajectory: traj,
            },
            correct,
            goal_pose: Pose::new(Vec3::from(goal), top_down()).unwrap(),
        }
    }

    #[test]
    fn normalization() {
        assert!(correctness(
            &Answer::conclusive("a Golf-Ball.", 0.9),
            "golf ball"
        ));
        assert!(correctness(
            &Answer::conclusive("golf ball", 0.9),
            "golf ball"
        ));
        assert!(!correctness(&Answer::inconclusive(0.9), "golf ball"));
        assert!(!correctness(
            &Answer::conclusive("tennis ball", 1.0),
            "golf ball"
        ));
    }

    #[test]
    fn success_rate() {
        let trials: Vec<_> = (0..10)
            .map(|i| {
                trial(
                    &[[0.0, 0.0, 0.0]],
                    i % 2 == 0,
                    [0.0, 0.0, 1.0],
                    ActionSpaceKind::ThreeDd,
                )
            })
            .collect();
        let m = compute_metrics(&trials, 0.1).unwrap();
        assert_eq!(m.sr, 0.5);
        assert_eq!(m.oe, None);
    }

    #[test]
    fn osr_counts_passing_trajectories() {
        let t = trial(
            &[[0.0, 0.0, 0.0], [0.09, 0.0, 0.0], [0.2, 0.0, 0.0]],
            false,
            [0.0, 0.0, 0.0],
            ActionSpaceKind::ThreeDx,
        );
        let home = trial(
            &[[1.0, 0.0, 0.0], [0.09, 0.0, 0.0], [0.2, 0.0, 0.0]],
            false,
            [0.0, 0.0, 0.0],
            ActionSpaceKind::ThreeDx,
        );
        let m = compute_metrics(&[home], 0.1).unwrap();
        assert_eq!(m.osr, 1.0);
        assert!((m.pe - 0.2).abs() < 1e-12);
        assert_eq!(m.oe, Some(0.0));
        let boundary = trial(
            &[[0.1, 0.0, 0.0]],
            false,
            [0.0, 0.0, 0.0],
            ActionSpaceKind::Nap,
        );
        assert_eq!(compute_metrics(&[boundary], 0.1).unwrap().osr, 1.0);
        assert_eq!(compute_metrics(&[t], 0.05).unwrap().osr, 1.0);
        assert_eq!(compute_metrics(&[], 0.1), Err(MetricsError::Empty));
    }

    #[test]
    fn tlps_is_zero_without_successes() {
        let t = trial(
            &[[0.0, 0.0, 0.0], [0.0, 0.3, 0.0]],
            false,
            [0.0, 0.0, 0.0],
            ActionSpaceKind::ThreeDx,
        );
        let m = compute_metrics(&[t], 0.1).unwrap();
        assert!((m.tlp - 0.3).abs() < 1e-12);
        assert_eq!(m.tlps, 0.0);
    }

    fn row(method: &str, oe: Option<f64>) -> ReportRow {
        ReportRow {
            scene: "scene1".into(),
            method: method.into(),
            action_space: method.parse().ok(),
            metrics: MetricsRow {
                sr: 1.0,
                tlp: 0.5,
                tlps: 0.5,
                pe: 0.0,
                oe,
                osr: 1.0,
                trials: 10,
            },
        }
    }

    #[test]
    fn reports() {
        assert_eq!(
            emit_report(&[], ReportFormat::Csv),
            format!("{CSV_HEADER}\n")
        );
        assert_eq!(emit_report(&[], ReportFormat::Markdown).lines().count(), 2);
        let rows = [row("3DD", None), row("3Dx", Some(12.5))];
        let md = emit_report(&rows, ReportFormat::Markdown);
        assert!(md.lines().nth(2).unwrap().contains("| -- |"));
        assert!(md.lines().nth(3).unwrap().contains("12.5"));
        let csv = emit_report(&rows, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "scene1,3DD,1,0.5,0.5,0,--,1,10"
        );
    }
}
