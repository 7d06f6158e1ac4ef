//! The four-stage generation pipeline: spec to plan, plan to features,
//! features to checkpoints, checkpoints to assertions.

mod parse;
mod stage;

pub use parse::{
    parse_stage_output, CheckpointDraft, CheckpointsDocument, FeaturesDocument, ParseFailure,
    ParsedOutput, PlanDocument, StageDocument, SvasDocument,
};
pub use stage::{
    default_template, run_stage, FanoutLimits, StageConfig, StageEnv, StageFailure, StageOutput,
    DEFAULT_MAX_REPAIR_ATTEMPTS,
};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::agent::{
    AgentRuntime, AgentSpec, ContextStore, ScenarioFile, StochasticErrorModel, DEFAULT_MAX_IN_FLIGHT,
};
use crate::ir::{
    validate_artifact, DesignSpec, PipelineArtifact, PipelineRun, RunError, SchemaReport, Stage,
    StageStatus,
};
use crate::store::{Store, StoreError, StoreSource};

pub const RUNS: &str = "runs";

fn default_repairs() -> u32 {
    DEFAULT_MAX_REPAIR_ATTEMPTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAgents {
    pub plan: AgentSpec,
    pub features: AgentSpec,
    pub checkpoints: AgentSpec,
    pub svas: AgentSpec,
}

impl StageAgents {
    pub fn get(&self, stage: Stage) -> &AgentSpec {
        match stage {
            Stage::Plan => &self.plan,
            Stage::Features => &self.features,
            Stage::Checkpoints => &self.checkpoints,
            Stage::Svas => &self.svas,
        }
    }
}

/// Files the agent runtime loads, keyed by the refs agents use. Relative
/// paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Resources {
    pub scenarios: BTreeMap<String, PathBuf>,
    pub error_models: BTreeMap<String, PathBuf>,
    /// Retrieval stores built from plain-text documents.
    pub context_stores: BTreeMap<String, Vec<PathBuf>>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("`{path}` is malformed: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn malformed(path: &Path, message: impl ToString) -> ConfigError {
    ConfigError::Malformed {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

impl Resources {
    /// Build a runtime with every resource registered.
    pub fn build_runtime(&self, base: &Path) -> Result<AgentRuntime, ConfigError> {
        let mut rt = AgentRuntime::new(self.max_in_flight.unwrap_or(DEFAULT_MAX_IN_FLIGHT));
        for (name, rel) in &self.scenarios {
            let path = base.join(rel);
            let file = ScenarioFile::from_json_str(&read(&path)?).map_err(|e| malformed(&path, e))?;
            rt.register_scenarios(name.clone(), file);
        }
        for (name, rel) in &self.error_models {
            let path = base.join(rel);
            let model: StochasticErrorModel =
                serde_json::from_str(&read(&path)?).map_err(|e| malformed(&path, e))?;
            model.validate().map_err(|e| malformed(&path, e))?;
            rt.register_error_model(name.clone(), model);
        }
        for (name, docs) in &self.context_stores {
            let mut texts = Vec::new();
            for rel in docs {
                let path = base.join(rel);
                texts.push((rel.display().to_string(), read(&path)?));
            }
            let refs: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let store = ContextStore::from_documents(&refs).map_err(|e| malformed(base, e))?;
            rt.register_store(name.clone(), store);
        }
        Ok(rt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub agents: StageAgents,
    #[serde(default = "default_repairs")]
    pub max_repair_attempts: u32,
    #[serde(default)]
    pub fanout: FanoutLimits,
    #[serde(default)]
    pub resources: Resources,
}

impl PipelineConfig {
    /// Every stage served by one scripted scenario file.
    pub fn scripted(scenario_ref: &str) -> Self {
        let agent = |name: &str| {
            AgentSpec::new(
                name,
                "",
                crate::agent::Backend::ScriptedMock {
                    scenario_ref: scenario_ref.to_string(),
                },
            )
        };
        PipelineConfig {
            agents: StageAgents {
                plan: agent("planner"),
                features: agent("feature_extractor"),
                checkpoints: agent("checkpoint_writer"),
                svas: agent("sva_writer"),
            },
            max_repair_attempts: DEFAULT_MAX_REPAIR_ATTEMPTS,
            fanout: FanoutLimits::default(),
            resources: Resources::default(),
        }
    }

    pub fn stage_config(&self, stage: Stage) -> StageConfig {
        let mut cfg = StageConfig::new(stage, self.agents.get(stage).clone());
        cfg.max_repair_attempts = self.max_repair_attempts;
        cfg.fanout_limit = self.fanout.for_stage(stage);
        cfg
    }

    pub fn validate(&self) -> Result<(), String> {
        for stage in Stage::ALL {
            self.stage_config(stage).agent.validate().map_err(|e| format!("{stage}: {e}"))?;
        }
        Ok(())
    }

    /// Read a config file and build its runtime.
    pub fn load(path: &Path) -> Result<(Self, AgentRuntime), ConfigError> {
        let config: PipelineConfig = serde_json::from_str(&read(path)?).map_err(|e| malformed(path, e))?;
        config.validate().map_err(|e| malformed(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let runtime = config.resources.build_runtime(base)?;
        Ok((config, runtime))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub run_id: Option<String>,
    /// Stop after this stage completes, leaving later stages pending.
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("design spec is invalid: {}", .0.violations.iter().map(|v| format!("{}: {}", v.path, v.message)).collect::<Vec<_>>().join("; "))]
    InvalidSpec(SchemaReport),
    #[error("run `{run_id}` belongs to spec `{existing}`, not `{given}`")]
    SpecMismatch {
        run_id: String,
        existing: String,
        given: String,
    },
    #[error("run `{0}` not found")]
    UnknownRun(String),
    #[error("stored run `{0}` is malformed")]
    BadRun(String),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Run(#[from] RunError),
}

pub fn load_run(store: &dyn Store, run_id: &str) -> Result<Option<PipelineRun>, PipelineError> {
    match store.get_record(RUNS, run_id)? {
        None => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|_| PipelineError::BadRun(run_id.to_string())),
    }
}

pub fn save_run(store: &dyn Store, run: &PipelineRun) -> Result<(), PipelineError> {
    store.put_record(RUNS, &run.run_id, &serde_json::to_value(run).expect("serializable"))?;
    Ok(())
}

pub fn new_run_id() -> String {
    format!("run-{}", &uuid::Uuid::new_v4().simple().to_string()[..12])
}

/// Run (or resume) the pipeline for `spec`. Stages already done are not
/// re-executed. A stage failure leaves the run in the failed state and is
/// reported through the returned manifest, not as an error.
pub fn run_pipeline(
    spec: &DesignSpec,
    config: &PipelineConfig,
    runtime: &AgentRuntime,
    store: &dyn Store,
    options: &RunOptions,
) -> Result<PipelineRun, PipelineError> {
    config.validate().map_err(PipelineError::Config)?;
    let spec = PipelineArtifact::DesignSpec(DesignSpec {
        id: String::new(),
        ..spec.clone()
    })
    .seal();
    let report = validate_artifact(&spec, &StoreSource(store));
    if !report.ok {
        return Err(PipelineError::InvalidSpec(report));
    }
    store.put_artifact(&spec)?;

    let run_id = options.run_id.clone().unwrap_or_else(new_run_id);
    let mut run = match load_run(store, &run_id)? {
        Some(run) if run.spec_ref != spec.id() => {
            return Err(PipelineError::SpecMismatch {
                run_id,
                existing: run.spec_ref,
                given: spec.id().to_string(),
            })
        }
        Some(run) => run,
        None => PipelineRun::new(
            run_id,
            spec.id(),
            serde_json::to_value(config).expect("serializable"),
        ),
    };
    save_run(store, &run)?;
    drive(&mut run, config, runtime, store, options.stop_after)?;
    Ok(run)
}

/// Continue a stored run from its first unfinished stage.
pub fn resume_pipeline(
    run_id: &str,
    config: &PipelineConfig,
    runtime: &AgentRuntime,
    store: &dyn Store,
    stop_after: Option<Stage>,
) -> Result<PipelineRun, PipelineError> {
    let mut run = load_run(store, run_id)?.ok_or_else(|| PipelineError::UnknownRun(run_id.to_string()))?;
    drive(&mut run, config, runtime, store, stop_after)?;
    Ok(run)
}

fn checkpoint_ordinals(store: &dyn Store, ids: &[String]) -> HashMap<String, usize> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut out = HashMap::new();
    for id in ids {
        if let Ok(PipelineArtifact::Checkpoint(ck)) = store.get_artifact(id) {
            let key = ck.feature_ref.map(|r| format!("{}#{}", r.list_id, r.feature_id)).unwrap_or_default();
            let n = counts.entry(key).or_insert(0);
            out.insert(id.clone(), *n);
            *n += 1;
        }
    }
    out
}

fn drive(
    run: &mut PipelineRun,
    config: &PipelineConfig,
    runtime: &AgentRuntime,
    store: &dyn Store,
    stop_after: Option<Stage>,
) -> Result<(), PipelineError> {
    for stage in Stage::ALL {
        match run.stage(stage).status {
            StageStatus::Done => {
                if stop_after == Some(stage) {
                    return Ok(());
                }
                continue;
            }
            StageStatus::Failed => return Ok(()),
            StageStatus::Pending | StageStatus::Running => {}
        }
        let inputs: Vec<String> = match stage.previous() {
            None => vec![run.spec_ref.clone()],
            Some(prev) => run.stage(prev).artifacts.clone(),
        };
        run.start(stage)?;
        save_run(store, run)?;
        info!(run = %run.run_id, %stage, inputs = inputs.len(), "stage started");

        let cfg = config.stage_config(stage);
        let mut env = StageEnv::new(runtime, store);
        if stage == Stage::Svas {
            env.checkpoint_ordinals = checkpoint_ordinals(store, &inputs);
        }
        let results: Vec<Result<StageOutput, StageFailure>> = inputs
            .par_iter()
            .map(|id| {
                let input = store.get_artifact(id).map_err(|e| StageFailure {
                    message: format!("input {id}: {e}"),
                    responses: Vec::new(),
                })?;
                run_stage(&cfg, &input, &env)
            })
            .collect();

        let mut failure = None;
        let mut syntax = Vec::new();
        let record = run.stage_mut(stage);
        for result in results {
            let offset = record.responses.len();
            match result {
                Ok(out) => {
                    record.responses.extend(out.responses);
                    record.warnings.extend(out.warnings);
                    for (a, p) in out.artifacts.into_iter().zip(out.provenance) {
                        if record.provenance.contains_key(a.id()) {
                            continue;
                        }
                        record.provenance.insert(a.id().to_string(), offset + p);
                        record.artifacts.push(a.id().to_string());
                        if let PipelineArtifact::SvaAssertion(s) = &a {
                            syntax.push((s.id.clone(), s.syntax_ok));
                        }
                    }
                }
                Err(f) => {
                    record.responses.extend(f.responses);
                    failure.get_or_insert(f.message);
                }
            }
        }
        run.sva_syntax.extend(syntax);
        match failure {
            Some(message) => {
                info!(run = %run.run_id, %stage, %message, "stage failed");
                run.fail(stage, message)?;
                save_run(store, run)?;
                return Ok(());
            }
            None => {
                run.finish(stage)?;
                save_run(store, run)?;
                info!(run = %run.run_id, %stage, artifacts = run.stage(stage).artifacts.len(), "stage done");
            }
        }
        if stop_after == Some(stage) {
            return Ok(());
        }
    }
    Ok(())
}
