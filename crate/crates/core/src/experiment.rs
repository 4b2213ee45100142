//! Multi-trial experiment harness.
//!
//! An experiment config is a JSON file:
//!
//! ```json
//! {
//!   "scenes": ["scenes/scene1.json", "scenes/scene2.json"],
//!   "action_spaces": ["NAP", "2DA", "2DNA", "3DD", "3DC", "3Dx", "3DxN", "3Dxy"],
//!   "trials_per_cell": 10,
//!   "base_seed": 0,
//!   "analyzer": "oracle",
//!   "policy": "greedy",
//!   "osr_margin": 0.1,
//!   "episode": { "max_iterations": 10, "confidence_threshold": 0.8, "marker_noise_std": 0.0 }
//! }
//! ```
//!
//! Scene paths are resolved against the config file's directory. `policy`
//! is one of `random`, `greedy`, `vlm` or `fixed-views`; the last ignores
//! `action_spaces` and runs the five-view baseline once per trial.
//! `endpoint` (see [`EndpointConfig`]) is required when a `vlm` agent is named.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionspace::{rules_for_grid, ActionSpaceKind};
use crate::agent::{
    ActivePerceptionPolicy, GreedyPolicy, Knowledge, OracleAnalyzer, PerceptionAnalyzer, Query,
    RandomPolicy,
};
use crate::exploration::{
    run_episode, run_fixed_views, EpisodeConfig, EpisodeResult, Termination, FIXED_VIEWS_METHOD,
};
use crate::geom::CameraIntrinsics;
use crate::metrics::{compute_metrics, MetricsError, ReportRow, TrialOutcome, DEFAULT_OSR_MARGIN};
use crate::scene::{SceneError, SceneSpec};
use crate::vlmclient::{episode_agents, record_transcript, EndpointConfig, VlmClient, VlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyzerChoice {
    Oracle,
    Vlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    Random,
    Greedy,
    Vlm,
    FixedViews,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenes: Vec<PathBuf>,
    #[serde(default = "all_spaces")]
    pub action_spaces: Vec<ActionSpaceKind>,
    #[serde(default = "default_trials")]
    pub trials_per_cell: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_analyzer")]
    pub analyzer: AnalyzerChoice,
    #[serde(default = "default_policy")]
    pub policy: PolicyChoice,
    #[serde(default = "default_margin")]
    pub osr_margin: f64,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    /// Overrides every scene's camera intrinsics.
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
}

fn all_spaces() -> Vec<ActionSpaceKind> {
    ActionSpaceKind::ALL.to_vec()
}
fn default_trials() -> usize {
    10
}
fn default_analyzer() -> AnalyzerChoice {
    AnalyzerChoice::Oracle
}
fn default_policy() -> PolicyChoice {
    PolicyChoice::Greedy
}
fn default_margin() -> f64 {
    DEFAULT_OSR_MARGIN
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("agent endpoint unavailable: {0}")]
    Unavailable(String),
}

impl From<MetricsError> for ExperimentError {
    fn from(e: MetricsError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative scene paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.scenes {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.scenes.is_empty() {
            return bad("no scenes listed");
        }
        if self.policy != PolicyChoice::FixedViews && self.action_spaces.is_empty() {
            return bad("no action spaces listed");
        }
        if self.trials_per_cell == 0 {
            return bad("trials_per_cell must be at least 1");
        }
        if self.osr_margin.is_nan() || self.osr_margin <= 0.0 {
            return bad("osr_margin must be positive");
        }
        self.episode
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if let Some(k) = &self.intrinsics {
            k.validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        if self.uses_vlm() {
            match &self.endpoint {
                None => return bad("a vlm agent needs an endpoint section"),
                Some(e) => e
                    .validate()
                    .map_err(|e| ExperimentError::Config(e.to_string()))?,
            }
        }
        Ok(())
    }

    pub fn uses_vlm(&self) -> bool {
        self.analyzer == AnalyzerChoice::Vlm || self.policy == PolicyChoice::Vlm
    }

    /// Loads every scene before anything runs.
    pub fn load_scenes(&self) -> Result<Vec<SceneSpec>, ExperimentError> {
        self.scenes
            .iter()
            .map(|p| {
                let mut s = SceneSpec::load(p)?;
                if let Some(k) = self.intrinsics {
                    s.camera = k;
                    s.validate()?;
                }
                Ok(s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub outcome: TrialOutcome,
    /// JSONL transcript of remote exchanges, when a remote agent ran.
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub row: ReportRow,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub cells: Vec<Cell>,
}

impl ExperimentOutput {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells.iter().map(|c| c.row.clone()).collect()
    }

    pub fn episode_count(&self) -> usize {
        self.cells.iter().map(|c| c.trials.len()).sum()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let scenes = cfg.load_scenes()?;
    run_on_scenes(cfg, &scenes)
}

#[derive(Clone, Copy)]
struct Job<'a> {
    scene: &'a SceneSpec,
    kind: Option<ActionSpaceKind>,
    trial: usize,
}

/// Runs every (scene, method, trial) job in parallel; results come back in
/// (scene, declared method, trial) order.
pub fn run_on_scenes(
    cfg: &ExperimentConfig,
    scenes: &[SceneSpec],
) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let client = match (&cfg.endpoint, cfg.uses_vlm()) {
        (Some(e), true) => Some(Arc::new(
            VlmClient::new(e.clone()).map_err(|e| ExperimentError::Config(e.to_string()))?,
        )),
        _ => None,
    };
    let kinds: Vec<Option<ActionSpaceKind>> = if cfg.policy == PolicyChoice::FixedViews {
        vec![None]
    } else {
        cfg.action_spaces.iter().copied().map(Some).collect()
    };
    let mut jobs = Vec::new();
    for scene in scenes {
        for &kind in &kinds {
            for trial in 0..cfg.trials_per_cell {
                jobs.push(Job { scene, kind, trial });
            }
        }
    }

    let unavailable = AtomicBool::new(false);
    let results: Vec<Option<(EpisodeResult, Option<String>)>> = jobs
        .par_iter()
        .map(|job| {
            if unavailable.load(Ordering::Relaxed) {
                return None;
            }
            let out = run_job(cfg, job, client.as_ref());
            if out.0.terminated_by == Termination::AgentUnavailable {
                unavailable.store(true, Ordering::Relaxed);
            }
            Some(out)
        })
        .collect();
    if unavailable.load(Ordering::Relaxed) {
        let url = cfg
            .endpoint
            .as_ref()
            .map(|e| e.completions_url())
            .unwrap_or_default();
        return Err(ExperimentError::Unavailable(url));
    }

    let mut cells = Vec::new();
    let mut it = jobs.iter().zip(results);
    for scene in scenes {
        for &kind in &kinds {
            let mut trials = Vec::with_capacity(cfg.trials_per_cell);
            for _ in 0..cfg.trials_per_cell {
                let (job, res) = it.next().expect("one result per job");
                let (episode, transcript) =
                    res.expect("no job skipped without an unavailable agent");
                trials.push(Trial {
                    index: job.trial,
                    outcome: TrialOutcome::new(episode, &scene.truth_answer, scene.goal_pose),
                    transcript,
                });
            }
            let outcomes: Vec<TrialOutcome> = trials.iter().map(|t| t.outcome.clone()).collect();
            let metrics = compute_metrics(&outcomes, cfg.osr_margin)?;
            cells.push(Cell {
                row: ReportRow {
                    scene: scene.id.clone(),
                    method: method_label(kind),
                    action_space: kind,
                    metrics,
                },
                trials,
            });
        }
    }
    Ok(ExperimentOutput { cells })
}

pub fn method_label(kind: Option<ActionSpaceKind>) -> String {
    kind.map_or(FIXED_VIEWS_METHOD.to_string(), |k| k.name().to_string())
}

fn run_job(
    cfg: &ExperimentConfig,
    job: &Job<'_>,
    client: Option<&Arc<VlmClient>>,
) -> (EpisodeResult, Option<String>) {
    let scene = job.scene;
    let seed = cfg.base_seed.wrapping_add(job.trial as u64);
    let ep = EpisodeConfig {
        random_seed: seed,
        ..cfg.episode
    };
    let kind = job.kind.unwrap_or(ActionSpaceKind::Nap);
    let rules = rules_for_grid(kind, &scene.grid);
    let query = Query::new(scene.query.clone()).expect("validated scene has a query");
    let knowledge = Knowledge::new(&query, &rules);
    let episode_id = episode_file_stem(&scene.id, &method_label(job.kind), job.trial);

    let vlm = client.map(|c| episode_agents(c.clone(), &knowledge));
    let (mut vlm_analyzer, mut vlm_policy, transcript) = match vlm {
        Some((a, p, t)) => (Some(a), Some(p), Some(t)),
        None => (None, None, None),
    };
    let mut oracle = OracleAnalyzer::new(scene);
    let analyzer: &mut dyn PerceptionAnalyzer = match (cfg.analyzer, vlm_analyzer.as_mut()) {
        (AnalyzerChoice::Vlm, Some(a)) => a,
        _ => &mut oracle,
    };

    let result = if job.kind.is_none() {
        run_fixed_views(scene, analyzer, &ep)
    } else {
        let mut random = RandomPolicy::new(seed);
        let mut greedy = GreedyPolicy::new(scene);
        let policy: Option<&mut dyn ActivePerceptionPolicy> = if rules.static_camera {
            None
        } else {
            match cfg.policy {
                PolicyChoice::Random => Some(&mut random),
                PolicyChoice::Greedy | PolicyChoice::FixedViews => Some(&mut greedy),
                PolicyChoice::Vlm => vlm_policy
                    .as_mut()
                    .map(|p| p as &mut dyn ActivePerceptionPolicy),
            }
        };
        run_episode(scene, &rules, analyzer, policy, &ep)
    };
    let model = cfg
        .endpoint
        .as_ref()
        .map(|e| e.model_name.as_str())
        .unwrap_or("");
    let transcript = transcript.map(|t| record_transcript(&episode_id, model, &t.entries()));
    (result, transcript)
}

/// File stem used for a trial's episode log.
pub fn episode_file_stem(scene_id: &str, method: &str, trial: usize) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect::<String>()
    };
    format!("{}_{}_{:03}", clean(scene_id), clean(method), trial)
}

impl From<VlmError> for ExperimentError {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::Config(m) => ExperimentError::Config(m),
            other => ExperimentError::Unavailable(other.to_string()),
        }
    }
}
