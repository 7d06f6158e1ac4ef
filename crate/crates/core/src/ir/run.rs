use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::ArtifactKind;
use crate::util::now_ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Plan,
    Features,
    Checkpoints,
    Svas,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Plan, Stage::Features, Stage::Checkpoints, Stage::Svas];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Plan => "plan",
            Stage::Features => "features",
            Stage::Checkpoints => "checkpoints",
            Stage::Svas => "svas",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn previous(self) -> Option<Stage> {
        self.index().checked_sub(1).map(|i| Stage::ALL[i])
    }

    /// Kind of artifact the stage consumes.
    pub fn input_kind(self) -> ArtifactKind {
        match self {
            Stage::Plan => ArtifactKind::DesignSpec,
            Stage::Features => ArtifactKind::VerificationPlan,
            Stage::Checkpoints => ArtifactKind::FeatureList,
            Stage::Svas => ArtifactKind::Checkpoint,
        }
    }

    pub fn output_kind(self) -> ArtifactKind {
        match self {
            Stage::Plan => ArtifactKind::VerificationPlan,
            Stage::Features => ArtifactKind::FeatureList,
            Stage::Checkpoints => ArtifactKind::Checkpoint,
            Stage::Svas => ArtifactKind::SvaAssertion,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// One raw agent response, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseLog {
    pub agent_name: String,
    pub input_ref: String,
    pub attempt_index: u32,
    pub prompt_digest: String,
    pub raw_text: String,
    pub backend_kind: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub artifacts: Vec<String>,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
    pub warnings: Vec<String>,
    pub responses: Vec<ResponseLog>,
    /// Artifact id to index into `responses` of the reply that produced it.
    pub provenance: BTreeMap<String, usize>,
    pub error: Option<String>,
}

impl StageRecord {
    fn new(stage: Stage) -> Self {
        StageRecord {
            stage,
            status: StageStatus::Pending,
            artifacts: Vec::new(),
            started_at_ms: None,
            finished_at_ms: None,
            warnings: Vec::new(),
            responses: Vec::new(),
            provenance: BTreeMap::new(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("stage {stage} cannot move from {from:?} to {to:?}")]
    InvalidTransition {
        stage: Stage,
        from: StageStatus,
        to: StageStatus,
    },
    #[error("stage {0} cannot start before the previous stage is done")]
    PreviousNotDone(Stage),
}

/// Manifest of one pipeline execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub spec_ref: String,
    pub stages: Vec<StageRecord>,
    pub config: Value,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    /// Syntax status of every produced assertion, by id.
    pub sva_syntax: BTreeMap<String, bool>,
}

impl PipelineRun {
    pub fn new(run_id: impl Into<String>, spec_ref: impl Into<String>, config: Value) -> Self {
        let now = now_ms();
        PipelineRun {
            run_id: run_id.into(),
            spec_ref: spec_ref.into(),
            stages: Stage::ALL.into_iter().map(StageRecord::new).collect(),
            config,
            created_at_ms: now,
            updated_at_ms: now,
            sva_syntax: BTreeMap::new(),
        }
    }

    pub fn stage(&self, stage: Stage) -> &StageRecord {
        &self.stages[stage.index()]
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageRecord {
        &mut self.stages[stage.index()]
    }

    fn transition(&mut self, stage: Stage, to: StageStatus) -> Result<(), RunError> {
        let from = self.stage(stage).status;
        let allowed = matches!(
            (from, to),
            (StageStatus::Pending, StageStatus::Running)
                | (StageStatus::Running, StageStatus::Running)
                | (StageStatus::Running, StageStatus::Done)
                | (StageStatus::Running, StageStatus::Failed)
        );
        if !allowed {
            return Err(RunError::InvalidTransition { stage, from, to });
        }
        self.stage_mut(stage).status = to;
        self.updated_at_ms = now_ms();
        Ok(())
    }

    /// Mark `stage` running. A stage left running by an interrupted process
    /// may be restarted; its partial output is discarded.
    pub fn start(&mut self, stage: Stage) -> Result<(), RunError> {
        if let Some(prev) = stage.previous() {
            if self.stage(prev).status != StageStatus::Done {
                return Err(RunError::PreviousNotDone(stage));
            }
        }
        self.transition(stage, StageStatus::Running)?;
        let record = self.stage_mut(stage);
        *record = StageRecord {
            status: StageStatus::Running,
            started_at_ms: Some(now_ms()),
            ..StageRecord::new(stage)
        };
        Ok(())
    }

    pub fn finish(&mut self, stage: Stage) -> Result<(), RunError> {
        self.transition(stage, StageStatus::Done)?;
        self.stage_mut(stage).finished_at_ms = Some(now_ms());
        Ok(())
    }

    pub fn fail(&mut self, stage: Stage, error: impl Into<String>) -> Result<(), RunError> {
        self.transition(stage, StageStatus::Failed)?;
        let record = self.stage_mut(stage);
        record.finished_at_ms = Some(now_ms());
        record.error = Some(error.into());
        Ok(())
    }

    pub fn status(&self) -> StageStatus {
        let statuses: Vec<_> = self.stages.iter().map(|s| s.status).collect();
        if statuses.contains(&StageStatus::Failed) {
            StageStatus::Failed
        } else if statuses.iter().all(|s| *s == StageStatus::Done) {
            StageStatus::Done
        } else if statuses.iter().all(|s| *s == StageStatus::Pending) {
            StageStatus::Pending
        } else {
            StageStatus::Running
        }
    }

    pub fn stage_artifacts(&self) -> BTreeMap<Stage, Vec<String>> {
        self.stages
            .iter()
            .map(|s| (s.stage, s.artifacts.clone()))
            .collect()
    }

    pub fn counts(&self) -> BTreeMap<Stage, usize> {
        self.stages
            .iter()
            .map(|s| (s.stage, s.artifacts.len()))
            .collect()
    }

    /// Percentage of produced assertions that parsed, if any were produced.
    pub fn recorded_spr(&self) -> Option<f64> {
        let total = self.sva_syntax.len();
        (total > 0).then(|| {
            let ok = self.sva_syntax.values().filter(|v| **v).count();
            ok as f64 * 100.0 / total as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_are_monotone() {
        let mut run = PipelineRun::new("r1", "spec-x", Value::Null);
        assert_eq!(run.start(Stage::Features), Err(RunError::PreviousNotDone(Stage::Features)));
        run.start(Stage::Plan).unwrap();
        run.finish(Stage::Plan).unwrap();
        assert!(matches!(run.start(Stage::Plan), Err(RunError::InvalidTransition { .. })));
        run.start(Stage::Features).unwrap();
        run.fail(Stage::Features, "boom").unwrap();
        assert_eq!(run.status(), StageStatus::Failed);
        assert!(run.finish(Stage::Features).is_err());
    }
}
