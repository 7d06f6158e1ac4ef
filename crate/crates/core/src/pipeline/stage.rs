use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{parse_stage_output, StageDocument};
use crate::agent::{AgentRuntime, AgentSpec, SCENARIO_KEY};
use crate::ir::{
    trace_lineage, validate_artifact, Checkpoint, DesignSpec, Direction, Feature, FeatureList, FeatureRef,
    PipelineArtifact, ResponseLog, SchemaReport, Stage, SvaAssertion, VerificationPlan,
};
use crate::store::{Store, StoreSource};
use crate::util::slug;

pub const DEFAULT_MAX_REPAIR_ATTEMPTS: u32 = 2;

const PLAN_TEMPLATE: &str = include_str!("../../templates/plan.v1.txt");
const FEATURES_TEMPLATE: &str = include_str!("../../templates/features.v1.txt");
const CHECKPOINTS_TEMPLATE: &str = include_str!("../../templates/checkpoints.v1.txt");
const SVAS_TEMPLATE: &str = include_str!("../../templates/svas.v1.txt");

/// Bundled prompt template for `stage`.
pub fn default_template(stage: Stage) -> &'static str {
    match stage {
        Stage::Plan => PLAN_TEMPLATE,
        Stage::Features => FEATURES_TEMPLATE,
        Stage::Checkpoints => CHECKPOINTS_TEMPLATE,
        Stage::Svas => SVAS_TEMPLATE,
    }
}

/// Maximum number of items kept from one reply, per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FanoutLimits {
    pub features: usize,
    pub checkpoints: usize,
    pub svas: usize,
}

impl Default for FanoutLimits {
    fn default() -> Self {
        FanoutLimits {
            features: 64,
            checkpoints: 16,
            svas: 4,
        }
    }
}

impl FanoutLimits {
    pub fn for_stage(&self, stage: Stage) -> usize {
        match stage {
            Stage::Plan => 1,
            Stage::Features => self.features,
            Stage::Checkpoints => self.checkpoints,
            Stage::Svas => self.svas,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub agent: AgentSpec,
    pub max_repair_attempts: u32,
    pub fanout_limit: usize,
}

impl StageConfig {
    /// Config with default limits; an empty role prompt gets the bundled
    /// template.
    pub fn new(stage: Stage, mut agent: AgentSpec) -> Self {
        if agent.role_prompt.trim().is_empty() {
            agent.role_prompt = default_template(stage).to_string();
        }
        StageConfig {
            stage,
            agent,
            max_repair_attempts: DEFAULT_MAX_REPAIR_ATTEMPTS,
            fanout_limit: FanoutLimits::default().for_stage(stage),
        }
    }
}

/// Shared services for stage execution.
pub struct StageEnv<'a> {
    pub runtime: &'a AgentRuntime,
    pub store: &'a dyn Store,
    /// Position of each checkpoint among its feature's checkpoints, used to
    /// key assertion requests. Missing entries count as position 0.
    pub checkpoint_ordinals: HashMap<String, usize>,
}

impl<'a> StageEnv<'a> {
    pub fn new(runtime: &'a AgentRuntime, store: &'a dyn Store) -> Self {
        StageEnv {
            runtime,
            store,
            checkpoint_ordinals: HashMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub artifacts: Vec<PipelineArtifact>,
    pub responses: Vec<ResponseLog>,
    /// For each artifact, the index into `responses` of the reply it came from.
    pub provenance: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct StageFailure {
    pub message: String,
    /// Every reply received before the failure.
    pub responses: Vec<ResponseLog>,
}

fn violations_text(report: &SchemaReport) -> String {
    report
        .violations
        .iter()
        .map(|v| format!("{}: {}", v.path, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn repair_note(diagnostic: Option<&str>) -> String {
    match diagnostic {
        None => String::new(),
        Some(d) => format!(
            "\n\nYour previous reply could not be used: {d}\nReply again with one corrected JSON document."
        ),
    }
}

/// One agent request plus its repair rounds.
struct Unit {
    input_ref: String,
    bindings: BTreeMap<String, String>,
    query: String,
}

struct Collector<'a> {
    cfg: &'a StageConfig,
    env: &'a StageEnv<'a>,
    out: StageOutput,
}

impl Collector<'_> {
    fn fail(&mut self, message: String) -> StageFailure {
        StageFailure {
            message,
            responses: std::mem::take(&mut self.out.responses),
        }
    }

    /// Ask, parse and materialize, feeding each diagnostic back as a repair
    /// prompt until `max_repair_attempts` is spent.
    fn run_unit<F>(&mut self, unit: Unit, mut materialize: F) -> Result<(), StageFailure>
    where
        F: FnMut(StageDocument, &mut Vec<String>) -> Result<Vec<PipelineArtifact>, String>,
    {
        let mut diagnostic: Option<String> = None;
        for round in 0..=self.cfg.max_repair_attempts {
            let mut bindings = unit.bindings.clone();
            bindings.insert("repair_note".into(), repair_note(diagnostic.as_deref()));
            let mut prompt = match self.env.runtime.prepare(&self.cfg.agent, &bindings, Some(&unit.query)) {
                Ok(p) => p,
                Err(e) => return Err(self.fail(format!("{}: {e}", unit.input_ref))),
            };
            prompt.round = round;
            let response = match self.env.runtime.invoke(&self.cfg.agent, &prompt) {
                Ok(r) => r,
                Err(e) => return Err(self.fail(format!("{}: agent call failed: {e}", unit.input_ref))),
            };
            let index = self.out.responses.len();
            self.out.responses.push(ResponseLog {
                agent_name: response.agent_name,
                input_ref: unit.input_ref.clone(),
                attempt_index: response.attempt_index,
                prompt_digest: response.prompt_digest,
                raw_text: response.raw_text.clone(),
                backend_kind: response.backend_kind,
                latency_ms: response.latency_ms,
            });
            let parsed = match parse_stage_output(self.cfg.stage, &response.raw_text) {
                Ok(p) => p,
                Err(e) => {
                    diagnostic = Some(e.message);
                    continue;
                }
            };
            let mut warnings: Vec<String> = parsed
                .warnings
                .into_iter()
                .map(|w| format!("{}: {w}", unit.input_ref))
                .collect();
            match materialize(parsed.document, &mut warnings) {
                Ok(artifacts) => {
                    self.out.warnings.extend(warnings);
                    for a in artifacts {
                        if let Err(e) = self.env.store.put_artifact(&a) {
                            return Err(self.fail(format!("storing {}: {e}", a.id())));
                        }
                        if self.out.artifacts.iter().any(|x| x.id() == a.id()) {
                            self.out
                                .warnings
                                .push(format!("{}: duplicate output {} dropped", unit.input_ref, a.id()));
                            continue;
                        }
                        self.out.artifacts.push(a);
                        self.out.provenance.push(index);
                    }
                    return Ok(());
                }
                Err(d) => diagnostic = Some(d),
            }
        }
        let attempts = self.cfg.max_repair_attempts + 1;
        Err(self.fail(format!(
            "{}: no usable reply after {attempts} attempts; last problem: {}",
            unit.input_ref,
            diagnostic.unwrap_or_default()
        )))
    }
}

fn truncate<T>(items: &mut Vec<T>, limit: usize, what: &str, warnings: &mut Vec<String>) {
    if items.len() > limit {
        warnings.push(format!("kept the first {limit} of {} {what}", items.len()));
        items.truncate(limit);
    }
}

fn port_lines(spec: &DesignSpec) -> String {
    spec.port_table
        .iter()
        .map(|p| {
            let dir = match p.direction {
                Direction::In => "input",
                Direction::Out => "output",
                Direction::Inout => "inout",
            };
            format!("- {} ({dir}, {} bit): {}", p.name, p.width, p.description)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn lineage(id: &str, store: &dyn Store) -> Result<Vec<PipelineArtifact>, String> {
    trace_lineage(id, &StoreSource(store)).map_err(|e| e.to_string())
}

fn spec_of(chain: &[PipelineArtifact]) -> Result<&DesignSpec, String> {
    match chain.last() {
        Some(PipelineArtifact::DesignSpec(s)) => Ok(s),
        _ => Err("lineage does not end at a design spec".into()),
    }
}

fn plan_of(chain: &[PipelineArtifact]) -> Result<&VerificationPlan, String> {
    chain
        .iter()
        .find_map(|a| match a {
            PipelineArtifact::VerificationPlan(p) => Some(p),
            _ => None,
        })
        .ok_or_else(|| "lineage has no verification plan".into())
}

fn base_bindings(spec: &DesignSpec, key: String) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("spec_title".to_string(), spec.title.clone()),
        (SCENARIO_KEY.to_string(), key),
    ])
}

/// Run one stage on one input artifact of the stage's input kind and store
/// every produced artifact. A checkpoints-stage input is a feature list;
/// one request is made per feature.
pub fn run_stage(cfg: &StageConfig, input: &PipelineArtifact, env: &StageEnv) -> Result<StageOutput, StageFailure> {
    let mut c = Collector {
        cfg,
        env,
        out: StageOutput {
            artifacts: Vec::new(),
            responses: Vec::new(),
            provenance: Vec::new(),
            warnings: Vec::new(),
        },
    };
    if input.kind() != cfg.stage.input_kind() {
        return Err(c.fail(format!(
            "stage {} expects a {} input, got a {}",
            cfg.stage,
            cfg.stage.input_kind().as_str(),
            input.kind().as_str()
        )));
    }
    let chain = match lineage(input.id(), env.store) {
        Ok(chain) => chain,
        Err(e) => return Err(c.fail(format!("{}: {e}", input.id()))),
    };
    let spec = match spec_of(&chain) {
        Ok(s) => s.clone(),
        Err(e) => return Err(c.fail(e)),
    };
    let design = slug(&spec.title);
    let source = StoreSource(env.store);
    let limit = cfg.fanout_limit;

    match input {
        PipelineArtifact::DesignSpec(_) => {
            let mut bindings = base_bindings(&spec, format!("{design}/plan"));
            bindings.insert("spec_body".into(), spec.body.clone());
            bindings.insert("port_table".into(), port_lines(&spec));
            bindings.insert("behavior_notes".into(), spec.behavior_notes.join("\n"));
            let unit = Unit {
                input_ref: spec.id.clone(),
                bindings,
                query: spec.body.clone(),
            };
            c.run_unit(unit, |doc, _| {
                let StageDocument::Plan(doc) = doc else { unreachable!() };
                let plan = PipelineArtifact::VerificationPlan(VerificationPlan {
                    id: String::new(),
                    spec_ref: spec.id.clone(),
                    sections: doc.sections,
                    signal_table: doc.signal_table,
                })
                .seal();
                let report = validate_artifact(&plan, &source);
                if report.ok {
                    Ok(vec![plan])
                } else {
                    Err(format!("plan is invalid: {}", violations_text(&report)))
                }
            })?;
        }
        PipelineArtifact::VerificationPlan(plan) => {
            let mut bindings = base_bindings(&spec, format!("{design}/features"));
            bindings.insert(
                "plan_json".into(),
                pretty(&serde_json::json!({"sections": plan.sections, "signal_table": plan.signal_table})),
            );
            let unit = Unit {
                input_ref: plan.id.clone(),
                bindings,
                query: plan.sections.iter().map(|s| s.function_summary.as_str()).collect::<Vec<_>>().join(" "),
            };
            c.run_unit(unit, |doc, warnings| {
                let StageDocument::Features(doc) = doc else { unreachable!() };
                let mut features = doc.features;
                truncate(&mut features, limit, "features", warnings);
                materialize_features(&plan.id, features, &source, warnings)
            })?;
        }
        PipelineArtifact::FeatureList(list) => {
            let names = match plan_of(&chain) {
                Ok(p) => signal_names(p),
                Err(e) => return Err(c.fail(e)),
            };
            for feature in &list.features {
                let mut bindings =
                    base_bindings(&spec, format!("{design}/checkpoints/{}", feature.feature_id));
                bindings.insert("feature_json".into(), pretty(feature));
                bindings.insert("signal_names".into(), names.clone());
                let unit = Unit {
                    input_ref: format!("{}#{}", list.id, feature.feature_id),
                    bindings,
                    query: feature.description.clone(),
                };
                c.run_unit(unit, |doc, warnings| {
                    let StageDocument::Checkpoints(doc) = doc else { unreachable!() };
                    let mut drafts = doc.checkpoints;
                    truncate(&mut drafts, limit, "checkpoints", warnings);
                    let mut out = Vec::new();
                    for (i, d) in drafts.into_iter().enumerate() {
                        let ck = PipelineArtifact::Checkpoint(Checkpoint {
                            id: String::new(),
                            feature_ref: Some(FeatureRef {
                                list_id: list.id.clone(),
                                feature_id: feature.feature_id.clone(),
                            }),
                            description: d.description,
                            signals: d.signals,
                            trigger: d.trigger,
                            expected: d.expected,
                            timing: d.timing,
                        })
                        .seal();
                        let report = validate_artifact(&ck, &source);
                        if report.ok {
                            out.push(ck);
                        } else {
                            warnings.push(format!(
                                "{}#{}: checkpoint {i} dropped: {}",
                                list.id,
                                feature.feature_id,
                                violations_text(&report)
                            ));
                        }
                    }
                    if out.is_empty() {
                        Err("no valid checkpoints in the reply".into())
                    } else {
                        Ok(out)
                    }
                })?;
            }
        }
        PipelineArtifact::Checkpoint(ck) => {
            let plan = match plan_of(&chain) {
                Ok(p) => p.clone(),
                Err(e) => return Err(c.fail(e)),
            };
            let feature_id = ck.feature_ref.as_ref().map_or("none", |r| r.feature_id.as_str());
            let n = env.checkpoint_ordinals.get(&ck.id).copied().unwrap_or(0);
            let mut bindings = base_bindings(&spec, format!("{design}/svas/{feature_id}/{n}"));
            bindings.insert("checkpoint_json".into(), pretty(ck));
            bindings.insert("signal_names".into(), signal_names(&plan));
            let unit = Unit {
                input_ref: ck.id.clone(),
                bindings,
                query: ck.description.clone(),
            };
            let lineage_ids: Vec<String> = chain.iter().map(|a| a.id().to_string()).collect();
            let table: HashSet<String> = plan.signal_table.iter().map(|p| p.name.clone()).collect();
            c.run_unit(unit, |doc, warnings| {
                let StageDocument::Svas(doc) = doc else { unreachable!() };
                let mut texts = doc.assertions;
                truncate(&mut texts, limit, "assertions", warnings);
                if texts.is_empty() {
                    return Err("the reply lists no assertions".into());
                }
                Ok(texts
                    .into_iter()
                    .map(|t| {
                        let mut sva = SvaAssertion::from_source(t, Some(ck.id.clone()));
                        sva.lineage = lineage_ids.clone();
                        if let Some(ast) = &sva.ast {
                            sva.semantic_warnings = ast
                                .signals()
                                .into_iter()
                                .filter(|s| !table.contains(s))
                                .map(|s| format!("signal `{s}` is not in the plan signal table"))
                                .collect();
                        }
                        PipelineArtifact::SvaAssertion(sva).seal()
                    })
                    .collect())
            })?;
        }
        PipelineArtifact::SvaAssertion(_) => unreachable!("assertions are no stage input"),
    }
    Ok(c.out)
}

fn signal_names(plan: &VerificationPlan) -> String {
    plan.signal_table
        .iter()
        .map(|p| p.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Build a feature list, dropping features that fail validation on their
/// own while keeping the rest.
fn materialize_features(
    plan_ref: &str,
    mut features: Vec<Feature>,
    source: &StoreSource,
    warnings: &mut Vec<String>,
) -> Result<Vec<PipelineArtifact>, String> {
    loop {
        if features.is_empty() {
            return Err("no valid features in the reply".into());
        }
        let list = PipelineArtifact::FeatureList(FeatureList {
            id: String::new(),
            plan_ref: plan_ref.to_string(),
            features: features.clone(),
        })
        .seal();
        let report = validate_artifact(&list, source);
        if report.ok {
            return Ok(vec![list]);
        }
        let mut bad: Vec<usize> = Vec::new();
        for v in &report.violations {
            match v.path.strip_prefix("features[").and_then(|r| r.split(']').next()) {
                Some(i) => {
                    let i: usize = i.parse().expect("numeric index");
                    if !bad.contains(&i) {
                        warnings.push(format!(
                            "feature `{}` dropped: {}: {}",
                            features[i].feature_id, v.path, v.message
                        ));
                        bad.push(i);
                    }
                }
                None => return Err(format!("feature list is invalid: {}", violations_text(&report))),
            }
        }
        let mut i = 0;
        features.retain(|_| {
            i += 1;
            !bad.contains(&(i - 1))
        });
    }
}
