//! Data synthesis anchored on expert-verified golden items: candidate
//! generation, coverage-gap augmentation, hybrid validation and dataset
//! construction.

mod dataset;
mod filter;
mod generate;
mod synth;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use dataset::{build_dataset, write_dataset, Dataset, DatasetConfig, DatasetRecord, RecordLineage, SplitManifest};
pub use filter::{
    evaluate_precision, simulate_filter, simulate_outcomes, stats_from_confusion, Confusion, FilterStats,
    DEFAULT_GTP_FRACTION,
};
pub use generate::{augment, coverage_gaps, generate_candidates, ingest_golden, AugmentResult};
pub use synth::{refresh_job, synthesize, BridgeConfig, DirectMode, SynthJob, SYNTH_JOBS};
pub use validate::{
    apply_outcome, replay_outcome, resolve_expert, unanimous, validate_bridged, validate_direct,
    validate_reverse, DirectOutcome, DirectVerifier, EquivCheck, EquivConfig, EvidenceStep, Method,
    OutcomeVerdict, SanityConfig, ValidationOutcome,
};

use crate::agent::{AgentResponse, AgentRuntime, AgentSpec, SCENARIO_KEY};
use crate::ir::{canonical_json, Checkpoint, Feature, PipelineArtifact, PortDecl, Stage};
use crate::pipeline::{parse_stage_output, StageDocument};
use crate::review::ReviewError;
use crate::store::StoreError;
use crate::util::sha256_hex;

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_MAX_REPAIR_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PlanToFeatures,
    FeatureToCheckpoints,
    SvaToCheckpoint,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::PlanToFeatures => "plan_to_features",
            Task::FeatureToCheckpoints => "feature_to_checkpoints",
            Task::SvaToCheckpoint => "sva_to_checkpoint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Task::PlanToFeatures, Task::FeatureToCheckpoints, Task::SvaToCheckpoint]
            .into_iter()
            .find(|t| t.as_str() == s)
    }

    fn payload_kind(self) -> &'static str {
        match self {
            Task::PlanToFeatures => "verification_plan",
            Task::FeatureToCheckpoints => "feature_list",
            Task::SvaToCheckpoint => "sva_assertion",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Marker that a golden input was checked by a named expert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub expert_verified: bool,
    pub reviewer: String,
    /// Where the verification is recorded (review id, sign-off file, ...).
    pub source: String,
    pub verified_ms: u64,
}

/// An input file entry before ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGolden {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub task: Task,
    /// Artifact document; for assertions a bare source string is accepted.
    pub artifact: Value,
    /// Reference to the expert sign-off for this artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    /// Signal table of the design, used to scope generated checkpoints.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signal_table: Vec<PortDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenItem {
    pub id: String,
    pub task: Task,
    pub payload: PipelineArtifact,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signal_table: Vec<PortDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl GoldenItem {
    /// Signals candidates may use: the explicit table, else the plan table,
    /// else the signals the payload itself names.
    pub fn signal_names(&self) -> Vec<String> {
        if !self.signal_table.is_empty() {
            return self.signal_table.iter().map(|p| p.name.clone()).collect();
        }
        match &self.payload {
            PipelineArtifact::VerificationPlan(p) => p.signal_table.iter().map(|d| d.name.clone()).collect(),
            PipelineArtifact::FeatureList(l) => {
                let mut out: Vec<String> = Vec::new();
                for s in l.features.iter().flat_map(|f| &f.signals) {
                    if !out.contains(s) {
                        out.push(s.clone());
                    }
                }
                out
            }
            PipelineArtifact::SvaAssertion(s) => s.ast.as_ref().map(|a| a.signals()).unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn verified(&self) -> Result<&Provenance, BridgeError> {
        match &self.provenance {
            Some(p) if p.expert_verified && !p.reviewer.trim().is_empty() => Ok(p),
            _ => Err(BridgeError::Unverified(self.id.clone())),
        }
    }
}

/// Ground truth attached to an outcome in evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Gtp,
    Gtn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapKind {
    Section,
    Signal,
}

/// An element of the golden input that no candidate covers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gap {
    pub kind: GapKind,
    pub element: String,
    /// For checkpoint tasks, the feature whose signal is uncovered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_id: Option<String>,
}

impl Gap {
    fn describe(&self) -> String {
        let kind = match self.kind {
            GapKind::Section => "plan section",
            GapKind::Signal => "signal",
        };
        format!("{kind} `{}`", self.element)
    }

    fn scenario_key(&self, golden_id: &str) -> String {
        let kind = match self.kind {
            GapKind::Section => "section",
            GapKind::Signal => "signal",
        };
        match &self.feature_id {
            Some(f) => format!("{golden_id}/gap/{f}/{kind}/{}", self.element),
            None => format!("{golden_id}/gap/{kind}/{}", self.element),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidatePayload {
    Feature(Feature),
    Checkpoint(Checkpoint),
}

impl CandidatePayload {
    fn document(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("serializable");
        if let Some(o) = v.as_object_mut() {
            o.remove("id");
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Origin {
    Generated,
    Augmented { gap: Gap },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateStatus {
    Pending,
    ExpertPending { item_id: String },
    Accepted,
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub golden_ref: String,
    pub task: Task,
    pub payload: CandidatePayload,
    pub origin: Origin,
    #[serde(flatten)]
    pub status: CandidateStatus,
}

/// Lowercased, whitespace-collapsed text; formatting differences between
/// agent replies do not make two payloads distinct.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Candidate {
    /// The only constructor: every candidate names the golden item it was
    /// derived from.
    pub fn new(golden: &GoldenItem, ordinal: usize, payload: CandidatePayload, origin: Origin) -> Self {
        Candidate {
            id: format!("{}.{ordinal}", golden.id),
            golden_ref: golden.id.clone(),
            task: golden.task,
            payload,
            origin,
            status: CandidateStatus::Pending,
        }
    }

    /// Digest of the normalized payload.
    pub fn dedup_key(&self) -> String {
        sha256_hex(normalize_text(&canonical_json(&self.payload.document())).as_bytes())
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self.status, CandidateStatus::Accepted | CandidateStatus::Rejected { .. })
    }

    /// Move forward through pending, expert-pending, then accepted or
    /// rejected. Any other move is refused.
    pub fn transition(&mut self, next: CandidateStatus) -> Result<(), BridgeError> {
        use CandidateStatus::*;
        let allowed = matches!(
            (&self.status, &next),
            (Pending, ExpertPending { .. } | Accepted | Rejected { .. }) | (ExpertPending { .. }, Accepted | Rejected { .. })
        );
        if !allowed {
            return Err(BridgeError::Transition {
                candidate: self.id.clone(),
                from: status_name(&self.status),
                to: status_name(&next),
            });
        }
        self.status = next;
        Ok(())
    }
}

fn status_name(s: &CandidateStatus) -> &'static str {
    match s {
        CandidateStatus::Pending => "pending",
        CandidateStatus::ExpertPending { .. } => "expert_pending",
        CandidateStatus::Accepted => "accepted",
        CandidateStatus::Rejected { .. } => "rejected",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub responses: Vec<AgentResponse>,
    pub warnings: Vec<String>,
}

impl CandidateSet {
    /// Append unless an equal normalized payload is already present.
    fn push_unique(&mut self, golden: &GoldenItem, payload: CandidatePayload, origin: Origin) -> bool {
        let probe = Candidate::new(golden, self.candidates.len(), payload, origin);
        let key = probe.dedup_key();
        if self.candidates.iter().any(|c| c.dedup_key() == key) {
            return false;
        }
        self.candidates.push(probe);
        true
    }
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("a reviewer id is required to ingest golden items")]
    MissingReviewer,
    #[error("golden input `{0}` has no expert-verification provenance; only expert-verified inputs may seed synthesis")]
    Unverified(String),
    #[error("golden input `{id}` is invalid: {detail}")]
    Schema { id: String, detail: String },
    #[error("{0}")]
    Agent(String),
    #[error("candidate `{candidate}` cannot move from {from} to {to}")]
    Transition {
        candidate: String,
        from: &'static str,
        to: &'static str,
    },
    #[error("unresolved candidates: {}", .0.join(", "))]
    Pending(Vec<String>),
    #[error("outcomes without a ground-truth label: {}", .0.join(", "))]
    Unlabeled(Vec<String>),
    #[error("{0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn template_for(task: Task) -> &'static str {
    match task {
        Task::PlanToFeatures => include_str!("../../templates/bridge/features.v1.txt"),
        Task::FeatureToCheckpoints => include_str!("../../templates/bridge/checkpoints.v1.txt"),
        Task::SvaToCheckpoint => include_str!("../../templates/bridge/sva_to_checkpoint.v1.txt"),
    }
}

pub(crate) const CHECKPOINT_TO_SVA: &str = include_str!("../../templates/bridge/checkpoint_to_sva.v1.txt");

/// The agent with an empty role prompt replaced by `template`.
pub(crate) fn with_template(agent: &AgentSpec, template: &str) -> AgentSpec {
    let mut agent = agent.clone();
    if agent.role_prompt.trim().is_empty() {
        agent.role_prompt = template.to_string();
    }
    agent
}

pub(crate) fn repair_note(diagnostic: Option<&str>) -> String {
    match diagnostic {
        None => String::new(),
        Some(d) => format!(
            "\n\nYour previous reply could not be used: {d}\nReply again with one corrected JSON document."
        ),
    }
}

pub(crate) fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

/// Ask the agent, parse the reply as a `stage` document and hand it to
/// `accept`; parse failures and rejections are fed back as repair prompts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ask<T>(
    runtime: &AgentRuntime,
    agent: &AgentSpec,
    key: &str,
    mut bindings: BTreeMap<String, String>,
    stage: Stage,
    max_repair_attempts: u32,
    responses: &mut Vec<AgentResponse>,
    mut accept: impl FnMut(StageDocument, &mut Vec<String>) -> Result<T, String>,
) -> Result<(T, Vec<String>), String> {
    bindings.insert(SCENARIO_KEY.into(), key.to_string());
    let mut diagnostic: Option<String> = None;
    for round in 0..=max_repair_attempts {
        bindings.insert("repair_note".into(), repair_note(diagnostic.as_deref()));
        let mut prompt = runtime
            .prepare(agent, &bindings, None)
            .map_err(|e| format!("{key}: {e}"))?;
        prompt.round = round;
        let response = runtime
            .invoke(agent, &prompt)
            .map_err(|e| format!("{key}: agent call failed: {e}"))?;
        let raw = response.raw_text.clone();
        responses.push(response);
        match parse_stage_output(stage, &raw) {
            Err(e) => diagnostic = Some(e.message),
            Ok(parsed) => {
                let mut warnings = parsed.warnings;
                match accept(parsed.document, &mut warnings) {
                    Ok(v) => return Ok((v, warnings.into_iter().map(|w| format!("{key}: {w}")).collect())),
                    Err(d) => diagnostic = Some(d),
                }
            }
        }
    }
    Err(format!(
        "{key}: no usable reply after {} attempts; last problem: {}",
        max_repair_attempts + 1,
        diagnostic.unwrap_or_default()
    ))
}
