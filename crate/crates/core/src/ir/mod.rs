//! The five pipeline representations (spec, plan, features, checkpoints,
//! assertions), their canonical document form and content-addressed ids.

mod lineage;
mod run;
mod validate;

pub use lineage::{trace_lineage, LineageError};
pub use run::{PipelineRun, ResponseLog, RunError, Stage, StageRecord, StageStatus};
pub use validate::{validate_artifact, SchemaReport, Violation};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sva::SvaAst;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
    Inout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDecl {
    pub name: String,
    pub direction: Direction,
    pub width: u32,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterEntry {
    pub name: String,
    pub address: u64,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(default)]
    pub id: String,
    pub title: String,
    pub body: String,
    pub port_table: Vec<PortDecl>,
    #[serde(default)]
    pub register_map: Vec<RegisterEntry>,
    #[serde(default)]
    pub behavior_notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSection {
    pub title: String,
    pub function_summary: String,
    /// Free-text rules; signals are referenced as backtick-quoted names.
    #[serde(default)]
    pub signal_relations: Vec<String>,
    #[serde(default)]
    pub verification_requirements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPlan {
    #[serde(default)]
    pub id: String,
    pub spec_ref: String,
    pub sections: Vec<PlanSection>,
    pub signal_table: Vec<PortDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub feature_id: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub category: String,
    pub signals: Vec<String>,
    pub source_section: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureList {
    #[serde(default)]
    pub id: String,
    pub plan_ref: String,
    pub features: Vec<Feature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureRef {
    pub list_id: String,
    pub feature_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(default)]
    pub id: String,
    /// Absent for checkpoints reverse-generated from golden assertions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_ref: Option<FeatureRef>,
    pub description: String,
    pub signals: Vec<String>,
    pub trigger: String,
    pub expected: String,
    pub timing: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvaAssertion {
    #[serde(default)]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_ref: Option<String>,
    pub source_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ast: Option<SvaAst>,
    pub syntax_ok: bool,
    /// Ancestor ids, nearest first: checkpoint, feature list, plan, spec.
    #[serde(default)]
    pub lineage: Vec<String>,
    /// Signals used by the assertion but absent from the plan signal table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub semantic_warnings: Vec<String>,
}

impl SvaAssertion {
    /// Parse `source_text` and record the outcome.
    pub fn from_source(source_text: impl Into<String>, checkpoint_ref: Option<String>) -> Self {
        let source_text = source_text.into();
        let ast = crate::sva::parse_assertion(&source_text).ok();
        SvaAssertion {
            id: String::new(),
            checkpoint_ref,
            syntax_ok: ast.is_some(),
            ast,
            source_text,
            lineage: Vec::new(),
            semantic_warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    DesignSpec,
    VerificationPlan,
    FeatureList,
    Checkpoint,
    SvaAssertion,
}

impl ArtifactKind {
    pub fn id_prefix(self) -> &'static str {
        match self {
            ArtifactKind::DesignSpec => "spec-",
            ArtifactKind::VerificationPlan => "plan-",
            ArtifactKind::FeatureList => "feat-",
            ArtifactKind::Checkpoint => "ckpt-",
            ArtifactKind::SvaAssertion => "sva-",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::DesignSpec => "design_spec",
            ArtifactKind::VerificationPlan => "verification_plan",
            ArtifactKind::FeatureList => "feature_list",
            ArtifactKind::Checkpoint => "checkpoint",
            ArtifactKind::SvaAssertion => "sva_assertion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineArtifact {
    DesignSpec(DesignSpec),
    VerificationPlan(VerificationPlan),
    FeatureList(FeatureList),
    Checkpoint(Checkpoint),
    SvaAssertion(SvaAssertion),
}

#[derive(Debug, Error)]
pub enum ArtifactParseError {
    #[error("artifact document is not valid JSON: {0}")]
    Syntax(serde_json::Error),
    #[error("artifact document has an unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(Value),
    #[error("artifact document does not match the `{kind}` schema: {source}")]
    Shape {
        kind: String,
        source: serde_json::Error,
    },
}

impl PipelineArtifact {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            PipelineArtifact::DesignSpec(_) => ArtifactKind::DesignSpec,
            PipelineArtifact::VerificationPlan(_) => ArtifactKind::VerificationPlan,
            PipelineArtifact::FeatureList(_) => ArtifactKind::FeatureList,
            PipelineArtifact::Checkpoint(_) => ArtifactKind::Checkpoint,
            PipelineArtifact::SvaAssertion(_) => ArtifactKind::SvaAssertion,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            PipelineArtifact::DesignSpec(a) => &a.id,
            PipelineArtifact::VerificationPlan(a) => &a.id,
            PipelineArtifact::FeatureList(a) => &a.id,
            PipelineArtifact::Checkpoint(a) => &a.id,
            PipelineArtifact::SvaAssertion(a) => &a.id,
        }
    }

    fn id_mut(&mut self) -> &mut String {
        match self {
            PipelineArtifact::DesignSpec(a) => &mut a.id,
            PipelineArtifact::VerificationPlan(a) => &mut a.id,
            PipelineArtifact::FeatureList(a) => &mut a.id,
            PipelineArtifact::Checkpoint(a) => &mut a.id,
            PipelineArtifact::SvaAssertion(a) => &mut a.id,
        }
    }

    /// Id of the artifact this one was derived from, if any.
    pub fn parent_ref(&self) -> Option<&str> {
        match self {
            PipelineArtifact::DesignSpec(_) => None,
            PipelineArtifact::VerificationPlan(p) => Some(&p.spec_ref),
            PipelineArtifact::FeatureList(f) => Some(&f.plan_ref),
            PipelineArtifact::Checkpoint(c) => c.feature_ref.as_ref().map(|r| r.list_id.as_str()),
            PipelineArtifact::SvaAssertion(s) => s.checkpoint_ref.as_deref(),
        }
    }

    /// Self-describing document with `kind` and `schema_version`.
    pub fn to_document(&self) -> Value {
        let mut value = serde_json::to_value(self).expect("artifacts serialise");
        value
            .as_object_mut()
            .expect("artifact documents are objects")
            .insert("schema_version".into(), Value::from(SCHEMA_VERSION));
        value
    }

    pub fn from_document(mut value: Value) -> Result<Self, ArtifactParseError> {
        let kind = value
            .get("kind")
            .and_then(Value::as_str)
            .unwrap_or("<missing>")
            .to_string();
        if let Some(obj) = value.as_object_mut() {
            match obj.remove("schema_version") {
                Some(v) if v == SCHEMA_VERSION => {}
                Some(other) => return Err(ArtifactParseError::Version(other)),
                None => return Err(ArtifactParseError::Version(Value::Null)),
            }
        }
        serde_json::from_value(value).map_err(|source| ArtifactParseError::Shape { kind, source })
    }

    /// Canonical serialisation: sorted keys, no insignificant whitespace.
    pub fn canonical_text(&self) -> String {
        canonical_json(&self.to_document())
    }

    /// Content address: kind prefix plus a truncated SHA-256 over the
    /// canonical document with the `id` field removed.
    pub fn compute_id(&self) -> String {
        let mut doc = self.to_document();
        doc.as_object_mut().expect("object").remove("id");
        let digest = Sha256::digest(canonical_json(&doc).as_bytes());
        format!("{}{}", self.kind().id_prefix(), hex::encode(&digest[..16]))
    }

    /// Assign the content-addressed id.
    pub fn seal(mut self) -> Self {
        let id = self.compute_id();
        *self.id_mut() = id;
        self
    }
}

/// Parse one artifact document. Malformed input is reported separately from
/// invariant violations, which are the business of [`validate_artifact`].
pub fn parse_artifact(text: &str) -> Result<PipelineArtifact, ArtifactParseError> {
    let value: Value = serde_json::from_str(text).map_err(ArtifactParseError::Syntax)?;
    PipelineArtifact::from_document(value)
}

/// JSON text with object keys sorted recursively.
pub fn canonical_json(value: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<_> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sorted(&map[k]));
                }
                Value::Object(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(value)).expect("json serialises")
}

/// Lookup of artifacts by id, used for reference resolution.
pub trait ArtifactSource {
    fn get_artifact(&self, id: &str) -> Option<PipelineArtifact>;
}

/// In-memory artifact map.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    items: HashMap<String, PipelineArtifact>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, artifact: PipelineArtifact) -> String {
        let id = artifact.id().to_string();
        self.items.insert(id.clone(), artifact);
        id
    }

    pub fn remove(&mut self, id: &str) -> Option<PipelineArtifact> {
        self.items.remove(id)
    }
}

impl ArtifactSource for MemorySource {
    fn get_artifact(&self, id: &str) -> Option<PipelineArtifact> {
        self.items.get(id).cloned()
    }
}

/// Identifiers quoted with backticks inside free text, e.g. "`req` rises".
pub fn quoted_signals(text: &str) -> Vec<String> {
    text.split('`')
        .skip(1)
        .step_by(2)
        .filter(|s| {
            let mut chars = s.chars();
            chars
                .next()
                .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        })
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PipelineArtifact {
        PipelineArtifact::DesignSpec(DesignSpec {
            id: String::new(),
            title: "Toy".into(),
            body: "A request/acknowledge handshake.".into(),
            port_table: vec![PortDecl {
                name: "req".into(),
                direction: Direction::In,
                width: 1,
                description: String::new(),
            }],
            register_map: vec![],
            behavior_notes: vec![],
        })
    }

    #[test]
    fn ids_are_content_addressed() {
        let a = spec().seal();
        let b = spec().seal();
        assert_eq!(a.id(), b.id());
        assert!(a.id().starts_with("spec-"));
        assert_eq!(a.id().len(), "spec-".len() + 32);
        // the id itself does not feed the hash
        assert_eq!(a.compute_id(), a.id());
    }

    #[test]
    fn document_roundtrip_and_version_check() {
        let a = spec().seal();
        let text = a.canonical_text();
        assert_eq!(parse_artifact(&text).unwrap(), a);
        let bumped = text.replace("\"schema_version\":1", "\"schema_version\":9");
        assert!(matches!(parse_artifact(&bumped), Err(ArtifactParseError::Version(_))));
        assert!(matches!(parse_artifact("{nope"), Err(ArtifactParseError::Syntax(_))));
        assert!(matches!(
            parse_artifact(r#"{"kind":"checkpoint","schema_version":1}"#),
            Err(ArtifactParseError::Shape { .. })
        ));
    }

    #[test]
    fn backtick_references() {
        assert_eq!(
            quoted_signals("`req` high implies `ack` next; `not a name!` ignored"),
            vec!["req", "ack"]
        );
    }
}
