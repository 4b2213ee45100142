//! Remote vision-language agent over a chat-completions style HTTP endpoint.
//!
//! Replies must be short key-value blocks. Analysis replies:
//!
//! ```text
//! ANSWERABLE: yes
//! ANSWER: golf ball
//! CONFIDENCE: 0.9
//! ```
//!
//! Action replies: `TARGET: (x; y; z)` or `VERTEX: (x; y[; z])` in base-frame
//! meters, optionally followed by `ROT_X: <deg>` and `ROT_Y: <deg>`.
//! Unusable replies are re-prompted within the retry budget, and every
//! exchange is kept in a transcript that can be re-parsed offline.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use base64::Engine as _;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::actionspace::{
    validate, Action, ActionSpaceKind, ActionSpaceRules, Rejection, RotationStep,
};
use crate::agent::{
    ActivePerceptionPolicy, AgentError, Analysis, Answer, EnhancedObservation, Knowledge,
    KnowledgeContext, PerceptionAnalyzer, PolicyError, PolicyInput, Query,
};
use crate::geom::Vec3;
use crate::grid::{generate_vertices, GridIndex, GridSpec};
use crate::render::encode_png;

const SYSTEM_TEMPLATE: &str = include_str!("../templates/system.txt");
const ANALYSIS_TEMPLATE: &str = include_str!("../templates/analysis.txt");
const ACTION_TEMPLATE: &str = include_str!("../templates/action.txt");
const REMINDER_TEMPLATE: &str = include_str!("../templates/reminder.txt");

pub const TRANSCRIPT_FORMAT: &str = "apvlm-transcript";
pub const TRANSCRIPT_VERSION: u32 = 1;

/// Tolerance when matching a `VERTEX` label to a grid vertex, in meters.
const LABEL_TOLERANCE: f64 = 0.01;

/// Short hash identifying the prompt templates a run used.
pub fn template_hash() -> String {
    let mut h = Sha256::new();
    for t in [
        SYSTEM_TEMPLATE,
        ANALYSIS_TEMPLATE,
        ACTION_TEMPLATE,
        REMINDER_TEMPLATE,
    ] {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            model_name: "gpt-4o".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 2,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VlmError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("proposal rejected after retries: {0}")]
    ProposalRejected(Rejection),
    #[error("malformed reply after retries: {0}")]
    Malformed(String),
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), VlmError> {
        if self.base_url.trim().is_empty() {
            return Err(VlmError::Config("base_url is empty".into()));
        }
        if self.timeout_secs == 0 {
            return Err(VlmError::Config("timeout must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(VlmError::Config(format!(
                "bad temperature {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }
}

/// Rendered prompt: system text, user text and PNG attachments (current view
/// first, home view second when present).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<Vec<u8>>,
}

fn fmt_coord(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn fmt_point(p: &Vec3) -> String {
    format!(
        "({}; {}; {})",
        fmt_coord(p.x),
        fmt_coord(p.y),
        fmt_coord(p.z)
    )
}

pub fn system_text(eta: &KnowledgeContext) -> String {
    SYSTEM_TEMPLATE
        .replace("{goal}", &eta.goal)
        .replace("{x_min}", &fmt_coord(eta.workspace_min.x))
        .replace("{x_max}", &fmt_coord(eta.workspace_max.x))
        .replace("{y_min}", &fmt_coord(eta.workspace_min.y))
        .replace("{y_max}", &fmt_coord(eta.workspace_max.y))
        .replace("{z_min}", &fmt_coord(eta.workspace_min.z))
        .replace("{z_max}", &fmt_coord(eta.workspace_max.z))
        .replace("{action_space}", eta.action_space.name())
        .replace("{action_rules}", &eta.action_rules)
}

fn image_of(obs: &EnhancedObservation) -> Vec<Vec<u8>> {
    obs.image.as_ref().map(encode_png).into_iter().collect()
}

/// Bundle for the analyzer role.
pub fn analysis_bundle(
    eta: &KnowledgeContext,
    query: &Query,
    obs: &EnhancedObservation,
) -> PromptBundle {
    PromptBundle {
        system_text: system_text(eta),
        user_text: ANALYSIS_TEMPLATE.replace("{query}", query.text()),
        images: image_of(obs),
    }
}

/// Visited positions in the order they were visited.
pub fn visited_list(knowledge: &Knowledge) -> String {
    if knowledge.kappa.is_empty() {
        return "none".into();
    }
    knowledge
        .kappa
        .iter()
        .map(|f| fmt_point(&f.pose.position))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Bundle for the policy role.
pub fn action_bundle(
    knowledge: &Knowledge,
    obs: &EnhancedObservation,
    home_obs: Option<&EnhancedObservation>,
    rules: &ActionSpaceRules,
) -> PromptBundle {
    let mut images = image_of(obs);
    let image_note = match home_obs {
        Some(h) => {
            images.extend(image_of(h));
            "The first image is the current view; the second is the view from the home pose."
        }
        None => "The image is the current view.",
    };
    let target_line = if rules.allows_continuous {
        "TARGET: (x; y; z)"
    } else if rules.grid.max_k() == 1 {
        "VERTEX: (x; y)"
    } else {
        "VERTEX: (x; y; z)"
    };
    let mut rotation_lines = Vec::new();
    if rules.allows_rot_x {
        rotation_lines.push("ROT_X: <-35, 0 or 35>");
    }
    if rules.allows_rot_y {
        rotation_lines.push("ROT_Y: <-35, 0 or 35>");
    }
    let user_text = ACTION_TEMPLATE
        .replace("{query}", &knowledge.eta.query)
        .replace("{visited}", &visited_list(knowledge))
        .replace("{images}", image_note)
        .replace("{target_line}", target_line)
        .replace("{rotation_lines}", &rotation_lines.join("\n"));
    PromptBundle {
        system_text: system_text(&knowledge.eta),
        user_text,
        images,
    }
}

impl PromptBundle {
    pub fn image_hashes(&self) -> Vec<String> {
        self.images.iter().map(|b| sha256_hex(b)).collect()
    }

    fn messages(&self) -> Vec<Value> {
        let mut parts = vec![json!({"type": "text", "text": self.user_text})];
        for img in &self.images {
            let b64 = base64::engine::general_purpose::STANDARD.encode(img);
            parts.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}}));
        }
        vec![
            json!({"role": "system", "content": self.system_text}),
            json!({"role": "user", "content": parts}),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParsedReply {
    Answer { answer: Answer },
    Action { action: Action },
    Rejected { rejection: Rejection },
    Malformed { reason: String },
}

const NUM: &str = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)";

struct Patterns {
    answerable: Regex,
    answer: Regex,
    confidence: Regex,
    target: Regex,
    vertex: Regex,
    rot_x: Regex,
    rot_y: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: String| Regex::new(&s).expect("static pattern");
        Patterns {
            answerable: re(r"(?im)^[ \t]*ANSWERABLE[ \t]*:[ \t]*(yes|no)[ \t]*$".into()),
            answer: re(r"(?im)^[ \t]*ANSWER[ \t]*:[ \t]*(.*?)[ \t]*$".into()),
            confidence: re(format!(
                r"(?im)^[ \t]*CONFIDENCE[ \t]*:[ \t]*({NUM})[ \t]*$"
            )),
            target: re(format!(
                r"(?i)\bTARGET[ \t]*:[ \t]*\(\s*({NUM})\s*;\s*({NUM})\s*;\s*({NUM})\s*\)"
            )),
            vertex: re(format!(
                r"(?i)\bVERTEX[ \t]*:[ \t]*\(\s*({NUM})\s*;\s*({NUM})\s*(?:;\s*({NUM})\s*)?\)"
            )),
            rot_x: re(r"(?i)\bROT_X[ \t]*:[ \t]*([+-]?\d+(?:\.0*)?)\b".into()),
            rot_y: re(r"(?i)\bROT_Y[ \t]*:[ \t]*([+-]?\d+(?:\.0*)?)\b".into()),
        }
    })
}

fn single<'a>(re: &Regex, text: &'a str, key: &str) -> Result<Option<regex::Captures<'a>>, String> {
    let mut it = re.captures_iter(text);
    let first = it.next();
    if it.next().is_some() {
        return Err(format!("{key} appears more than once"));
    }
    Ok(first)
}

/// Parses an analyzer reply block.
pub fn parse_analysis(text: &str) -> Result<Answer, String> {
    let p = patterns();
    let answerable =
        single(&p.answerable, text, "ANSWERABLE")?.ok_or("missing ANSWERABLE: yes/no line")?;
    let confidence = single(&p.confidence, text, "CONFIDENCE")?.ok_or("missing CONFIDENCE line")?;
    let confidence: f64 = confidence[1]
        .parse()
        .map_err(|_| "CONFIDENCE is not a number")?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(format!("CONFIDENCE {confidence} is outside [0, 1]"));
    }
    if answerable[1].eq_ignore_ascii_case("no") {
        return Ok(Answer::inconclusive(confidence));
    }
    let answer = single(&p.answer, text, "ANSWER")?.ok_or("missing ANSWER line")?;
    let answer = answer[1].trim();
    if answer.is_empty() {
        return Err("ANSWERABLE is yes but ANSWER is empty".into());
    }
    Ok(Answer::conclusive(answer, confidence))
}

fn rotation(re: &Regex, text: &str, key: &str) -> Result<RotationStep, String> {
    match single(re, text, key)? {
        None => Ok(RotationStep::Zero),
        Some(c) => {
            let deg: f64 = c[1].parse().map_err(|_| format!("{key} is not a number"))?;
            RotationStep::try_from(deg as i32)
                .ok()
                .filter(|_| deg.fract() == 0.0)
                .ok_or_else(|| format!("{key} must be -35, 0 or 35"))
        }
    }
}

fn vertex_at(grid: &GridSpec, x: f64, y: f64, z: Option<f64>) -> Option<GridIndex> {
    let vertices = generate_vertices(grid).ok()?;
    let matches: Vec<_> = vertices
        .iter()
        .filter(|v| {
            (v.position.x - x).abs() <= LABEL_TOLERANCE
                && (v.position.y - y).abs() <= LABEL_TOLERANCE
                && z.is_none_or(|z| (v.position.z - z).abs() <= LABEL_TOLERANCE)
        })
        .collect();
    match matches.as_slice() {
        [one] => Some(one.index),
        _ => None,
    }
}

/// Parses a policy reply under `rules`. The result has not been checked for
/// revisits; see [`validate`].
pub fn parse_action(text: &str, rules: &ActionSpaceRules) -> ParsedReply {
    match parse_action_inner(text, rules) {
        Ok(action) => ParsedReply::Action { action },
        Err(Ok(rejection)) => ParsedReply::Rejected { rejection },
        Err(Err(reason)) => ParsedReply::Malformed { reason },
    }
}

fn parse_action_inner(
    text: &str,
    rules: &ActionSpaceRules,
) -> Result<Action, Result<Rejection, String>> {
    let p = patterns();
    let target = single(&p.target, text, "TARGET").map_err(Err)?;
    let vertex = single(&p.vertex, text, "VERTEX").map_err(Err)?;
    let num = |c: &regex::Captures, i: usize| -> Result<f64, Result<Rejection, String>> {
        c[i].parse::<f64>()
            .map_err(|_| Err("coordinate is not a number".to_string()))
    };
    let rx = rotation(&p.rot_x, text, "ROT_X").map_err(Err)?;
    let ry = rotation(&p.rot_y, text, "ROT_Y").map_err(Err)?;
    let grid = &rules.grid;
    let action = match (target, vertex) {
        (Some(_), Some(_)) => return Err(Err("give either TARGET or VERTEX, not both".into())),
        (None, None) => return Err(Err("missing TARGET or VERTEX line".into())),
        (Some(c), None) => {
            let point = Vec3::new(num(&c, 1)?, num(&c, 2)?, num(&c, 3)?);
            if rules.allows_continuous {
                Action::point(point)
            } else {
                if !grid.contains_point(&point) {
                    return Err(Ok(Rejection::OutOfBounds));
                }
                let v = vertex_at(grid, point.x, point.y, Some(point.z))
                    .ok_or(Ok(Rejection::WrongTargetType))?;
                Action::vertex(v)
            }
        }
        (None, Some(c)) => {
            let (x, y) = (num(&c, 1)?, num(&c, 2)?);
            let z = match c.get(3) {
                Some(m) => Some(
                    m.as_str()
                        .parse::<f64>()
                        .map_err(|_| Err("coordinate is not a number".to_string()))?,
                ),
                None if grid.max_k() == 1 => None,
                None => {
                    return Err(Err(
                        "VERTEX needs a z coordinate in a multi-layer grid".into()
                    ))
                }
            };
            let v = vertex_at(grid, x, y, z).ok_or(Ok(Rejection::OutOfBounds))?;
            if rules.allows_continuous {
                Action::point(grid.position_of(v))
            } else {
                Action::vertex(v)
            }
        }
    };
    Ok(action.with_rotation(rx, ry))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Analysis,
    Action,
}

/// What a reply was parsed against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParseContext {
    pub action_space: ActionSpaceKind,
    pub grid: GridSpec,
}

impl ParseContext {
    fn rules(&self) -> ActionSpaceRules {
        let mut rules = crate::actionspace::rules_for_grid(self.action_space, &self.grid);
        rules.grid = self.grid;
        rules
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub role: Role,
    pub request_hash: String,
    pub image_hashes: Vec<String>,
    pub raw_reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ParseContext>,
    pub parsed: ParsedReply,
    /// Rejection from the revisit-aware check after a successful parse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Rejection>,
}

/// Re-parses a recorded reply the way the client did.
pub fn reparse(entry: &TranscriptEntry) -> ParsedReply {
    match (entry.role, &entry.context) {
        (Role::Analysis, _) => match parse_analysis(&entry.raw_reply) {
            Ok(answer) => ParsedReply::Answer { answer },
            Err(reason) => ParsedReply::Malformed { reason },
        },
        (Role::Action, Some(ctx)) => parse_action(&entry.raw_reply, &ctx.rules()),
        (Role::Action, None) => ParsedReply::Malformed {
            reason: "no parse context recorded".into(),
        },
    }
}

/// Blocking chat-completions client.
pub struct VlmClient {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl std::fmt::Debug for VlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VlmClient")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl VlmClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, VlmError> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&cfg.api_key_env_var)
            .ok()
            .filter(|k| !k.is_empty());
        Ok(VlmClient {
            cfg,
            agent,
            api_key,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn post_once(&self, body: &str) -> Result<String, String> {
        let mut req = self
            .agent
            .post(self.cfg.completions_url())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| format!("bad response JSON: {e}"))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".into())
    }

    /// Sends one conversation, retrying transport failures. Returns the request
    /// hash and the reply text.
    fn chat(&self, messages: &[Value]) -> Result<(String, String), VlmError> {
        let body = json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": messages,
        })
        .to_string();
        let hash = sha256_hex(body.as_bytes());
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.post_once(&body) {
                Ok(reply) => return Ok((hash, reply)),
                Err(e) => {
                    log::warn!("request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(VlmError::Unavailable(last))
    }

    fn reprompt(messages: &mut Vec<Value>, raw: &str, reason: &str) {
        messages.push(json!({"role": "assistant", "content": raw}));
        messages.push(
            json!({"role": "user", "content": REMINDER_TEMPLATE.replace("{reason}", reason)}),
        );
    }

    /// Asks whether the view answers the query. After the retry budget is
    /// spent on unparseable replies the answer is inconclusive and flagged.
    pub fn request_analysis(
        &self,
        bundle: &PromptBundle,
    ) -> Result<(Analysis, Vec<TranscriptEntry>), VlmError> {
        let mut messages = bundle.messages();
        let images = bundle.image_hashes();
        let mut entries = Vec::new();
        for _ in 0..=self.cfg.max_retries {
            let (request_hash, raw) = self.chat(&messages)?;
            let parsed = parse_analysis(&raw);
            entries.push(TranscriptEntry {
                seq: 0,
                role: Role::Analysis,
                request_hash,
                image_hashes: images.clone(),
                raw_reply: raw.clone(),
                context: None,
                parsed: match &parsed {
                    Ok(answer) => ParsedReply::Answer {
                        answer: answer.clone(),
                    },
                    Err(reason) => ParsedReply::Malformed {
                        reason: reason.clone(),
                    },
                },
                validation: None,
            });
            match parsed {
                Ok(answer) => return Ok((answer.into(), entries)),
                Err(reason) => Self::reprompt(&mut messages, &raw, &reason),
            }
        }
        let analysis = Analysis {
            answer: Answer::inconclusive(0.0),
            malformed_reply: true,
        };
        Ok((analysis, entries))
    }

    /// Asks for the next action; rejected or unparseable proposals are
    /// re-prompted with the reason, once per violation.
    pub fn request_action(
        &self,
        bundle: &PromptBundle,
        rules: &ActionSpaceRules,
        visited: &BTreeSet<GridIndex>,
    ) -> (Result<Action, VlmError>, Vec<TranscriptEntry>) {
        let mut messages = bundle.messages();
        let images = bundle.image_hashes();
        let context = ParseContext {
            action_space: rules.kind,
            grid: rules.grid,
        };
        let mut entries = Vec::new();
        let mut failure = VlmError::Malformed("no reply".into());
        for _ in 0..=self.cfg.max_retries {
            let (request_hash, raw) = match self.chat(&messages) {
                Ok(r) => r,
                Err(e) => return (Err(e), entries),
            };
            let parsed = parse_action(&raw, rules);
            let validation = match &parsed {
                ParsedReply::Action { action } => validate(rules, action, visited).err(),
                _ => None,
            };
            entries.push(TranscriptEntry {
                seq: 0,
                role: Role::Action,
                request_hash,
                image_hashes: images.clone(),
                raw_reply: raw.clone(),
                context: Some(context),
                parsed: parsed.clone(),
                validation,
            });
            let reason = match (parsed, validation) {
                (ParsedReply::Action { action }, None) => return (Ok(action), entries),
                (ParsedReply::Action { .. }, Some(r))
                | (ParsedReply::Rejected { rejection: r }, _) => {
                    failure = VlmError::ProposalRejected(r);
                    format!("the proposal was rejected ({r})")
                }
                (ParsedReply::Malformed { reason }, _) => {
                    failure = VlmError::Malformed(reason.clone());
                    reason
                }
                (ParsedReply::Answer { .. }, _) => {
                    unreachable!("action parser never yields answers")
                }
            };
            Self::reprompt(&mut messages, &raw, &reason);
        }
        (Err(failure), entries)
    }
}

/// Exchanges recorded during one episode, shared by its analyzer and policy.
#[derive(Debug, Clone, Default)]
pub struct TranscriptHandle(Rc<RefCell<Vec<TranscriptEntry>>>);

impl TranscriptHandle {
    fn append(&self, entries: Vec<TranscriptEntry>) {
        let mut log = self.0.borrow_mut();
        for mut e in entries {
            e.seq = log.len();
            log.push(e);
        }
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.0.borrow().clone()
    }
}

pub struct VlmAnalyzer {
    client: Arc<VlmClient>,
    eta: KnowledgeContext,
    transcript: TranscriptHandle,
}

pub struct VlmPolicy {
    client: Arc<VlmClient>,
    transcript: TranscriptHandle,
}

/// Analyzer and policy for one episode, writing to a common transcript.
pub fn episode_agents(
    client: Arc<VlmClient>,
    knowledge: &Knowledge,
) -> (VlmAnalyzer, VlmPolicy, TranscriptHandle) {
    let transcript = TranscriptHandle::default();
    (
        VlmAnalyzer {
            client: client.clone(),
            eta: knowledge.eta.clone(),
            transcript: transcript.clone(),
        },
        VlmPolicy {
            client,
            transcript: transcript.clone(),
        },
        transcript,
    )
}

impl PerceptionAnalyzer for VlmAnalyzer {
    fn analyze(
        &mut self,
        query: &Query,
        obs: &EnhancedObservation,
    ) -> Result<Analysis, AgentError> {
        let bundle = analysis_bundle(&self.eta, query, obs);
        match self.client.request_analysis(&bundle) {
            Ok((analysis, entries)) => {
                self.transcript.append(entries);
                Ok(analysis)
            }
            Err(e) => Err(AgentError::Unavailable(e.to_string())),
        }
    }

    fn needs_image(&self) -> bool {
        true
    }
}

impl ActivePerceptionPolicy for VlmPolicy {
    fn choose(&mut self, input: &PolicyInput<'_>) -> Result<Action, PolicyError> {
        let bundle = action_bundle(input.knowledge, input.obs, input.home_obs, input.rules);
        let (result, entries) =
            self.client
                .request_action(&bundle, input.rules, &input.knowledge.visited());
        self.transcript.append(entries);
        result.map_err(|e| match e {
            VlmError::ProposalRejected(r) => PolicyError::Rejected(r),
            VlmError::Malformed(reason) => PolicyError::Malformed(reason),
            other => PolicyError::Unavailable(other.to_string()),
        })
    }

    fn needs_image(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub format: String,
    pub version: u32,
    pub episode: String,
    pub model: String,
    pub template_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Header(TranscriptHeader),
    Exchange(TranscriptEntry),
}

/// Transcript as JSON Lines: a header followed by one line per exchange.
pub fn record_transcript(episode: &str, model: &str, entries: &[TranscriptEntry]) -> String {
    let header = TranscriptRecord::Header(TranscriptHeader {
        format: TRANSCRIPT_FORMAT.into(),
        version: TRANSCRIPT_VERSION,
        episode: episode.into(),
        model: model.into(),
        template_hash: template_hash(),
    });
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for e in entries {
        out.push_str(
            &serde_json::to_string(&TranscriptRecord::Exchange(e.clone()))
                .expect("entry serializes"),
        );
        out.push('\n');
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("transcript has no header")]
    MissingHeader,
    #[error("exchange {seq}: re-parse differs: recorded {recorded}, got {replayed}")]
    Mismatch {
        seq: usize,
        recorded: String,
        replayed: String,
    },
}

/// Re-parses every recorded reply and checks the result matches the recording
/// byte for byte. Returns the header and the number of exchanges.
pub fn replay_transcript(text: &str) -> Result<(TranscriptHeader, usize), TranscriptError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let header = match lines.next() {
        Some((i, l)) => match serde_json::from_str::<TranscriptRecord>(l) {
            Ok(TranscriptRecord::Header(h)) => h,
            Ok(_) => return Err(TranscriptError::MissingHeader),
            Err(e) => return Err(TranscriptError::Parse(i + 1, e.to_string())),
        },
        None => return Err(TranscriptError::MissingHeader),
    };
    let mut n = 0;
    for (i, l) in lines {
        let entry = match serde_json::from_str::<TranscriptRecord>(l) {
            Ok(TranscriptRecord::Exchange(e)) => e,
            Ok(_) => {
                return Err(TranscriptError::Parse(
                    i + 1,
                    "unexpected second header".into(),
                ))
            }
            Err(e) => return Err(TranscriptError::Parse(i + 1, e.to_string())),
        };
        let recorded = serde_json::to_string(&entry.parsed).expect("serializes");
        let replayed = serde_json::to_string(&reparse(&entry)).expect("serializes");
        if recorded != replayed {
            return Err(TranscriptError::Mismatch {
                seq: entry.seq,
                recorded,
                replayed,
            });
        }
        n += 1;
    }
    Ok((header, n))
}
