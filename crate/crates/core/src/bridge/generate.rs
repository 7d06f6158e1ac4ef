use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    ask, pretty, template_for, with_template, BridgeError, Candidate, CandidatePayload, CandidateSet, Gap,
    GapKind, GoldenItem, Origin, Provenance, RawGolden, Task,
};
use crate::agent::{AgentRuntime, AgentSpec, SCENARIO_KEY};
use crate::ir::{
    validate_artifact, ArtifactSource, Checkpoint, Feature, FeatureList, FeatureRef, PipelineArtifact,
    SchemaReport, Stage, SvaAssertion, VerificationPlan, SCHEMA_VERSION,
};
use crate::pipeline::{parse_stage_output, CheckpointDraft, StageDocument};
use crate::store::{MemoryStore, Store, StoreSource};
use crate::util::{now_ms, sha256_hex};

struct NoSource;

impl ArtifactSource for NoSource {
    fn get_artifact(&self, _id: &str) -> Option<PipelineArtifact> {
        None
    }
}

fn is_key(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn violations(report: &SchemaReport, skip_unresolved: bool) -> Vec<String> {
    report
        .violations
        .iter()
        .filter(|v| !(skip_unresolved && v.message.ends_with("does not resolve")))
        .map(|v| format!("{}: {}", v.path, v.message))
        .collect()
}

fn load_artifact(raw: &RawGolden, id: &str) -> Result<PipelineArtifact, BridgeError> {
    let schema = |detail: String| BridgeError::Schema {
        id: id.to_string(),
        detail,
    };
    let artifact = match (&raw.artifact, raw.task) {
        (Value::String(text), Task::SvaToCheckpoint) => PipelineArtifact::SvaAssertion(SvaAssertion::from_source(text.clone(), None)),
        (Value::Object(_), _) => {
            let mut doc = raw.artifact.clone();
            if let Some(o) = doc.as_object_mut() {
                o.entry("schema_version").or_insert(Value::from(SCHEMA_VERSION));
            }
            PipelineArtifact::from_document(doc).map_err(|e| schema(e.to_string()))?
        }
        _ => return Err(schema("artifact must be a JSON object".into())),
    };
    if artifact.kind().as_str() != raw.task.payload_kind() {
        return Err(schema(format!(
            "task {} needs a {}, got a {}",
            raw.task,
            raw.task.payload_kind(),
            artifact.kind().as_str()
        )));
    }
    if let PipelineArtifact::SvaAssertion(s) = &artifact {
        if let Err(d) = crate::sva::parse_assertion(&s.source_text) {
            return Err(schema(format!("assertion does not parse: {d}")));
        }
    }
    if let PipelineArtifact::FeatureList(l) = &artifact {
        if l.features.is_empty() {
            return Err(schema("feature list is empty".into()));
        }
    }
    let artifact = artifact.seal();
    // Golden items stand alone, so parent references need not resolve here.
    let problems = violations(&validate_artifact(&artifact, &NoSource), true);
    if !problems.is_empty() {
        return Err(schema(problems.join("; ")));
    }
    Ok(artifact)
}

/// Build golden items from expert-verified artifacts. Every entry must name
/// its verification record; entries without one are refused.
pub fn ingest_golden(raw: &[RawGolden], reviewer: &str) -> Result<Vec<GoldenItem>, BridgeError> {
    if reviewer.trim().is_empty() {
        return Err(BridgeError::MissingReviewer);
    }
    let mut out: Vec<GoldenItem> = Vec::new();
    for r in raw {
        let id = match &r.id {
            Some(id) => id.clone(),
            None => format!(
                "golden-{}",
                &sha256_hex(format!("{}:{}", r.task, crate::ir::canonical_json(&r.artifact)).as_bytes())[..12]
            ),
        };
        if !is_key(&id) {
            return Err(BridgeError::Schema {
                id,
                detail: "ids may use only letters, digits, `_` and `-`".into(),
            });
        }
        if out.iter().any(|g| g.id == id) {
            return Err(BridgeError::Schema {
                id,
                detail: "duplicate id".into(),
            });
        }
        let source = match r.provenance.as_deref().map(str::trim) {
            Some(p) if !p.is_empty() => p.to_string(),
            _ => return Err(BridgeError::Unverified(id)),
        };
        let payload = load_artifact(r, &id)?;
        out.push(GoldenItem {
            id,
            task: r.task,
            payload,
            signal_table: r.signal_table.clone(),
            provenance: Some(Provenance {
                expert_verified: true,
                reviewer: reviewer.to_string(),
                source,
                verified_ms: now_ms(),
            }),
        });
    }
    Ok(out)
}

/// Candidate payload checks against the golden item.
pub(crate) struct Checker {
    golden: GoldenItem,
    context: MemoryStore,
}

impl Checker {
    pub(crate) fn new(golden: &GoldenItem) -> Result<Self, BridgeError> {
        let context = MemoryStore::new();
        context.put_artifact(&golden.payload)?;
        Ok(Checker {
            golden: golden.clone(),
            context,
        })
    }

    fn plan(&self) -> Option<&VerificationPlan> {
        match &self.golden.payload {
            PipelineArtifact::VerificationPlan(p) => Some(p),
            _ => None,
        }
    }

    fn features(&self) -> Option<&FeatureList> {
        match &self.golden.payload {
            PipelineArtifact::FeatureList(l) => Some(l),
            _ => None,
        }
    }

    /// Signals a checkpoint may use, when the golden item fixes them.
    fn allowed_signals(&self) -> Option<BTreeSet<String>> {
        if !self.golden.signal_table.is_empty() || self.plan().is_some() {
            Some(self.golden.signal_names().into_iter().collect())
        } else {
            None
        }
    }

    fn feature(&self, f: &Feature) -> Result<Feature, String> {
        let plan = self.plan().ok_or("golden item is not a plan")?;
        let list = PipelineArtifact::FeatureList(FeatureList {
            id: String::new(),
            plan_ref: plan.id.clone(),
            features: vec![f.clone()],
        })
        .seal();
        let problems = violations(&validate_artifact(&list, &StoreSource(&self.context)), false);
        if problems.is_empty() {
            Ok(f.clone())
        } else {
            Err(problems.join("; ").replace("features[0].", ""))
        }
    }

    fn checkpoint(&self, feature_id: Option<&str>, d: &CheckpointDraft) -> Result<Checkpoint, String> {
        let feature_ref = match (feature_id, self.features()) {
            (Some(fid), Some(list)) => Some(FeatureRef {
                list_id: list.id.clone(),
                feature_id: fid.to_string(),
            }),
            _ => None,
        };
        let artifact = PipelineArtifact::Checkpoint(Checkpoint {
            id: String::new(),
            feature_ref,
            description: d.description.clone(),
            signals: d.signals.clone(),
            trigger: d.trigger.clone(),
            expected: d.expected.clone(),
            timing: d.timing.clone(),
        })
        .seal();
        let mut problems = violations(&validate_artifact(&artifact, &StoreSource(&self.context)), false);
        if let Some(allowed) = self.allowed_signals() {
            let unknown: Vec<&str> = d.signals.iter().map(String::as_str).filter(|s| !allowed.contains(*s)).collect();
            if !unknown.is_empty() {
                problems.push(format!("signals: unknown signal(s) {}", unknown.join(", ")));
            }
        }
        match artifact {
            PipelineArtifact::Checkpoint(c) if problems.is_empty() => Ok(c),
            _ => Err(problems.join("; ")),
        }
    }

    /// Revalidate a stored payload.
    pub(crate) fn payload(&self, payload: &CandidatePayload) -> Result<(), String> {
        match payload {
            CandidatePayload::Feature(f) => self.feature(f).map(|_| ()),
            CandidatePayload::Checkpoint(c) => {
                let draft = CheckpointDraft {
                    description: c.description.clone(),
                    signals: c.signals.clone(),
                    trigger: c.trigger.clone(),
                    expected: c.expected.clone(),
                    timing: c.timing.clone(),
                };
                self.checkpoint(c.feature_ref.as_ref().map(|r| r.feature_id.as_str()), &draft)
                    .map(|_| ())
            }
        }
    }

    /// Keep the valid items of a reply, noting each dropped one.
    fn items(
        &self,
        document: StageDocument,
        feature_id: Option<&str>,
        warnings: &mut Vec<String>,
    ) -> Vec<CandidatePayload> {
        let mut out = Vec::new();
        match document {
            StageDocument::Features(doc) => {
                for f in doc.features {
                    match self.feature(&f) {
                        Ok(f) => out.push(CandidatePayload::Feature(f)),
                        Err(e) => warnings.push(format!("feature `{}` dropped: {e}", f.feature_id)),
                    }
                }
            }
            StageDocument::Checkpoints(doc) => {
                for (i, d) in doc.checkpoints.iter().enumerate() {
                    match self.checkpoint(feature_id, d) {
                        Ok(c) => out.push(CandidatePayload::Checkpoint(c)),
                        Err(e) => warnings.push(format!("checkpoint {i} dropped: {e}")),
                    }
                }
                if self.golden.task == Task::SvaToCheckpoint && out.len() > 1 {
                    warnings.push(format!("kept the first of {} checkpoints; this task maps one assertion to one checkpoint", out.len()));
                    out.truncate(1);
                }
            }
            _ => {}
        }
        out
    }
}

fn plan_json(plan: &VerificationPlan) -> String {
    pretty(&serde_json::json!({"sections": plan.sections, "signal_table": plan.signal_table}))
}

fn stage_of(task: Task) -> Stage {
    match task {
        Task::PlanToFeatures => Stage::Features,
        _ => Stage::Checkpoints,
    }
}

/// Bindings for one request: the golden material plus an optional focus.
fn bindings(golden: &GoldenItem, feature: Option<&Feature>, focus: &str) -> BTreeMap<String, String> {
    let mut b = BTreeMap::new();
    b.insert("signal_names".to_string(), golden.signal_names().join(", "));
    b.insert("focus".to_string(), focus.to_string());
    b.insert("repair_note".to_string(), String::new());
    match &golden.payload {
        PipelineArtifact::VerificationPlan(p) => {
            b.insert("plan_json".into(), plan_json(p));
        }
        PipelineArtifact::SvaAssertion(s) => {
            b.insert("sva_text".into(), s.source_text.clone());
        }
        _ => {}
    }
    if let Some(f) = feature {
        b.insert("feature_json".into(), pretty(f));
    }
    b
}

/// Ask the task agent for candidates derived from one golden item. Items
/// that fail validation are dropped with a warning; a reply with no valid
/// item is sent back for repair.
pub fn generate_candidates(
    golden: &GoldenItem,
    agent: &AgentSpec,
    runtime: &AgentRuntime,
    max_repair_attempts: u32,
) -> Result<CandidateSet, BridgeError> {
    golden.verified()?;
    let agent = with_template(agent, template_for(golden.task));
    let checker = Checker::new(golden)?;
    let mut set = CandidateSet::default();
    let units: Vec<(String, Option<Feature>)> = match &golden.payload {
        PipelineArtifact::FeatureList(l) if golden.task == Task::FeatureToCheckpoints => l
            .features
            .iter()
            .map(|f| (format!("{}/generate/{}", golden.id, f.feature_id), Some(f.clone())))
            .collect(),
        _ => vec![(format!("{}/generate", golden.id), None)],
    };
    for (key, feature) in units {
        let fid = feature.as_ref().map(|f| f.feature_id.clone());
        let (items, warnings) = ask(
            runtime,
            &agent,
            &key,
            bindings(golden, feature.as_ref(), ""),
            stage_of(golden.task),
            max_repair_attempts,
            &mut set.responses,
            |doc, warnings| {
                let items = checker.items(doc, fid.as_deref(), warnings);
                if items.is_empty() {
                    Err("no valid items in the reply".to_string())
                } else {
                    Ok(items)
                }
            },
        )
        .map_err(BridgeError::Agent)?;
        set.warnings.extend(warnings);
        for item in items {
            if !set.push_unique(golden, item, Origin::Generated) {
                set.warnings.push(format!("{key}: duplicate item dropped"));
            }
        }
    }
    Ok(set)
}

/// Golden elements no candidate covers: plan sections and signals for
/// feature extraction, feature signals for checkpoint writing.
pub fn coverage_gaps(golden: &GoldenItem, candidates: &[Candidate]) -> Vec<Gap> {
    let mine = candidates.iter().filter(|c| c.golden_ref == golden.id);
    let mut gaps = Vec::new();
    match &golden.payload {
        PipelineArtifact::VerificationPlan(plan) if golden.task == Task::PlanToFeatures => {
            let mut sections = BTreeSet::new();
            let mut signals = BTreeSet::new();
            for c in mine {
                if let CandidatePayload::Feature(f) = &c.payload {
                    sections.insert(f.source_section.as_str());
                    signals.extend(f.signals.iter().map(String::as_str));
                }
            }
            for s in &plan.sections {
                if !sections.contains(s.title.as_str()) {
                    gaps.push(Gap {
                        kind: GapKind::Section,
                        element: s.title.clone(),
                        feature_id: None,
                    });
                }
            }
            for p in &plan.signal_table {
                if !signals.contains(p.name.as_str()) {
                    gaps.push(Gap {
                        kind: GapKind::Signal,
                        element: p.name.clone(),
                        feature_id: None,
                    });
                }
            }
        }
        PipelineArtifact::FeatureList(list) if golden.task == Task::FeatureToCheckpoints => {
            let mut covered: BTreeSet<(&str, &str)> = BTreeSet::new();
            for c in mine {
                if let CandidatePayload::Checkpoint(cp) = &c.payload {
                    if let Some(r) = &cp.feature_ref {
                        covered.extend(cp.signals.iter().map(|s| (r.feature_id.as_str(), s.as_str())));
                    }
                }
            }
            for f in &list.features {
                for s in &f.signals {
                    if !covered.contains(&(f.feature_id.as_str(), s.as_str())) {
                        gaps.push(Gap {
                            kind: GapKind::Signal,
                            element: s.clone(),
                            feature_id: Some(f.feature_id.clone()),
                        });
                    }
                }
            }
        }
        _ => {}
    }
    gaps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentResult {
    pub set: CandidateSet,
    pub gaps: Vec<Gap>,
    pub invocations: usize,
    pub added: usize,
}

/// One group member per coverage gap, each asked to cover its gap. New
/// items are merged with deduplication; failed members leave warnings.
pub fn augment(
    golden: &GoldenItem,
    set: &CandidateSet,
    agent: &AgentSpec,
    runtime: &AgentRuntime,
) -> Result<AugmentResult, BridgeError> {
    golden.verified()?;
    let gaps = coverage_gaps(golden, &set.candidates);
    let mut out = set.clone();
    if gaps.is_empty() {
        return Ok(AugmentResult {
            set: out,
            gaps,
            invocations: 0,
            added: 0,
        });
    }
    let agent = with_template(agent, template_for(golden.task));
    let checker = Checker::new(golden)?;
    let feature_of = |gap: &Gap| -> Option<Feature> {
        match (&golden.payload, &gap.feature_id) {
            (PipelineArtifact::FeatureList(l), Some(fid)) => l.features.iter().find(|f| &f.feature_id == fid).cloned(),
            _ => None,
        }
    };
    let group = runtime.invoke_group(&agent, gaps.len(), |i| {
        let gap = &gaps[i];
        let mut b = bindings(
            golden,
            feature_of(gap).as_ref(),
            &format!("\nThe current items do not cover {}. Add items that do.\n", gap.describe()),
        );
        b.insert(SCENARIO_KEY.into(), gap.scenario_key(&golden.id));
        runtime.prepare(&agent, &b, None)
    });
    let replies: Vec<(usize, crate::agent::AgentResponse)> = match group {
        Ok(all) => all.into_iter().enumerate().collect(),
        Err(e) => {
            for (i, err) in &e.failures {
                out.warnings.push(format!("augmenting {}: {err}", gaps[*i].describe()));
            }
            e.partial
        }
    };
    let mut added = 0;
    for (i, response) in replies {
        let gap = &gaps[i];
        let key = gap.scenario_key(&golden.id);
        match parse_stage_output(stage_of(golden.task), &response.raw_text) {
            Err(e) => out.warnings.push(format!("{key}: {e}")),
            Ok(parsed) => {
                let mut warnings = parsed.warnings;
                for item in checker.items(parsed.document, gap.feature_id.as_deref(), &mut warnings) {
                    if out.push_unique(golden, item, Origin::Augmented { gap: gap.clone() }) {
                        added += 1;
                    } else {
                        warnings.push("duplicate of an existing candidate dropped".into());
                    }
                }
                out.warnings.extend(warnings.into_iter().map(|w| format!("{key}: {w}")));
            }
        }
        out.responses.push(response);
    }
    Ok(AugmentResult {
        set: out,
        invocations: gaps.len(),
        gaps,
        added,
    })
}
