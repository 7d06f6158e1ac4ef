use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::validate::ValidationOutcome;
use super::{
    apply_outcome, augment, generate_candidates, resolve_expert, validate_bridged, validate_direct,
    validate_reverse, BridgeError, Candidate, CandidateStatus, DirectOutcome, DirectVerifier, EquivConfig, Gap,
    GoldenItem, Method, SanityConfig, Task, DEFAULT_K, DEFAULT_MAX_REPAIR_ATTEMPTS,
};
use crate::agent::{AgentRuntime, AgentSpec};
use crate::pipeline::Resources;
use crate::review::ReviewQueue;
use crate::store::Store;
use crate::util::now_ms;

pub const SYNTH_JOBS: &str = "synth_jobs";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectMode {
    #[default]
    Schema,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeAgents {
    /// Writes candidates; an empty role prompt selects the task template.
    pub generator: AgentSpec,
    /// Fills coverage gaps; the generator is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmenter: Option<AgentSpec>,
    /// Regenerates assertions from checkpoints for k-agent checks.
    pub reverse: AgentSpec,
    /// Turns checkpoints into assertions for the bridged check.
    pub bridge: AgentSpec,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_repairs() -> u32 {
    DEFAULT_MAX_REPAIR_ATTEMPTS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub agents: BridgeAgents,
    #[serde(default = "default_k")]
    pub k: usize,
    /// How feature candidates are checked.
    #[serde(default)]
    pub direct: DirectMode,
    #[serde(default)]
    pub equiv: EquivConfig,
    #[serde(default)]
    pub sanity: SanityConfig,
    #[serde(default = "default_repairs")]
    pub max_repair_attempts: u32,
    #[serde(default = "default_true")]
    pub augment: bool,
    #[serde(default)]
    pub resources: Resources,
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.k == 0 {
            return Err(BridgeError::InvalidConfig("k must be at least 1".into()));
        }
        let a = &self.agents;
        for agent in [Some(&a.generator), a.augmenter.as_ref(), Some(&a.reverse), Some(&a.bridge)]
            .into_iter()
            .flatten()
        {
            agent
                .validate()
                .map_err(|e| BridgeError::InvalidConfig(format!("agent `{}`: {e}", agent.name)))?;
        }
        Ok(())
    }

    /// Read a config file; resource paths are relative to its directory.
    pub fn load(path: &Path) -> Result<(Self, AgentRuntime), BridgeError> {
        let text = std::fs::read_to_string(path)?;
        let config: BridgeConfig = serde_json::from_str(&text)
            .map_err(|e| BridgeError::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        let runtime = config
            .resources
            .build_runtime(path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| BridgeError::InvalidConfig(e.to_string()))?;
        Ok((config, runtime))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthJob {
    pub id: String,
    pub created_ms: u64,
    pub goldens: Vec<GoldenItem>,
    pub candidates: Vec<Candidate>,
    pub outcomes: Vec<ValidationOutcome>,
    pub gaps: BTreeMap<String, Vec<Gap>>,
    pub invocations: u64,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
}

impl SynthJob {
    pub fn pending(&self) -> Vec<String> {
        self.candidates
            .iter()
            .filter(|c| !c.is_resolved())
            .map(|c| c.id.clone())
            .collect()
    }

    pub fn save(&self, store: &dyn Store) -> Result<(), BridgeError> {
        store.put_record(SYNTH_JOBS, &self.id, &serde_json::to_value(self).expect("serializable"))?;
        Ok(())
    }

    pub fn load(store: &dyn Store, id: &str) -> Result<Option<Self>, BridgeError> {
        match store.get_record(SYNTH_JOBS, id)? {
            None => Ok(None),
            Some(v) => serde_json::from_value(v)
                .map(Some)
                .map_err(|e| BridgeError::InvalidConfig(format!("stored job `{id}` is malformed: {e}"))),
        }
    }
}

fn infrastructure_outcome(candidate: &Candidate, method: Method, error: &BridgeError) -> ValidationOutcome {
    let mut o = ValidationOutcome::new(candidate, method);
    o.infrastructure_failure = true;
    o.reason = Some(error.to_string());
    o
}

/// Validate one candidate with the method its task calls for.
fn validate_one(
    golden: &GoldenItem,
    candidate: &mut Candidate,
    cfg: &BridgeConfig,
    runtime: &AgentRuntime,
    queue: Option<&ReviewQueue>,
) -> Result<Option<ValidationOutcome>, BridgeError> {
    let outcome = match golden.task {
        Task::PlanToFeatures => {
            let verifier = match (cfg.direct, queue) {
                (DirectMode::Schema, _) => DirectVerifier::Schema,
                (DirectMode::Expert, Some(q)) => DirectVerifier::Expert(q),
                (DirectMode::Expert, None) => {
                    return Err(BridgeError::InvalidConfig("expert review needs a review queue".into()))
                }
            };
            match validate_direct(golden, candidate, verifier)? {
                DirectOutcome::Resolved(o) => o,
                DirectOutcome::Pending { .. } => return Ok(None),
            }
        }
        Task::FeatureToCheckpoints => {
            validate_bridged(candidate, &golden.signal_names(), &cfg.agents.bridge, runtime, &cfg.sanity)
                .unwrap_or_else(|e| infrastructure_outcome(candidate, Method::Bridged, &e))
        }
        Task::SvaToCheckpoint => {
            validate_reverse(golden, candidate, cfg.k, &cfg.equiv, &cfg.agents.reverse, runtime)?
        }
    };
    apply_outcome(candidate, &outcome)?;
    Ok(Some(outcome))
}

/// Generate, augment and validate candidates for every golden item, then
/// persist the job. A golden item whose generation fails is skipped with a
/// warning; expert-reviewed candidates stay pending until a verdict arrives.
pub fn synthesize(
    goldens: Vec<GoldenItem>,
    cfg: &BridgeConfig,
    runtime: &AgentRuntime,
    store: &dyn Store,
    queue: Option<&ReviewQueue>,
) -> Result<SynthJob, BridgeError> {
    cfg.validate()?;
    for g in &goldens {
        g.verified()?;
    }
    let before = runtime.invocation_count();
    let mut job = SynthJob {
        id: format!("synth-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]),
        created_ms: now_ms(),
        goldens: Vec::new(),
        candidates: Vec::new(),
        outcomes: Vec::new(),
        gaps: BTreeMap::new(),
        invocations: 0,
        warnings: Vec::new(),
        dataset_id: None,
    };
    for golden in goldens {
        let set = match generate_candidates(&golden, &cfg.agents.generator, runtime, cfg.max_repair_attempts) {
            Ok(set) => set,
            Err(e) => {
                job.warnings.push(format!("{}: {e}", golden.id));
                job.goldens.push(golden);
                continue;
            }
        };
        let set = if cfg.augment {
            let agent = cfg.agents.augmenter.as_ref().unwrap_or(&cfg.agents.generator);
            let result = augment(&golden, &set, agent, runtime)?;
            job.gaps.insert(golden.id.clone(), result.gaps);
            result.set
        } else {
            set
        };
        job.warnings.extend(set.warnings);
        for mut candidate in set.candidates {
            if let Some(outcome) = validate_one(&golden, &mut candidate, cfg, runtime, queue)? {
                job.outcomes.push(outcome);
            }
            job.candidates.push(candidate);
        }
        job.goldens.push(golden);
    }
    job.invocations = runtime.invocation_count() - before;
    job.save(store)?;
    Ok(job)
}

/// Pick up expert verdicts for pending candidates. Returns how many were
/// resolved; the job is saved when anything changed.
pub fn refresh_job(job: &mut SynthJob, queue: &ReviewQueue, store: &dyn Store) -> Result<usize, BridgeError> {
    let mut resolved = 0;
    for c in &mut job.candidates {
        if !matches!(c.status, CandidateStatus::ExpertPending { .. }) {
            continue;
        }
        if let Some(outcome) = resolve_expert(c, queue)? {
            job.outcomes.push(outcome);
            resolved += 1;
        }
    }
    if resolved > 0 {
        job.save(store)?;
    }
    Ok(resolved)
}
