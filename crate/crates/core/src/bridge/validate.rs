use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::Checker;
use super::{
    pretty, with_template, BridgeError, Label, Candidate, CandidatePayload, CandidateStatus, GoldenItem, CHECKPOINT_TO_SVA,
};
use crate::agent::{AgentRuntime, AgentSpec, SCENARIO_KEY};
use crate::equiv::{
    check_equivalence, default_bound, union_signals, EquivMode, EquivVerdict, EquivalenceResult,
};
use crate::ir::{Checkpoint, PipelineArtifact, Stage};
use crate::pipeline::{parse_stage_output, StageDocument};
use crate::review::{ReviewQueue, ReviewRequest, ReviewState, ReviewVerdict};
use crate::sva::{parse_assertion, CompiledAssertion, SvaAst, Trace, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Bridged,
    ReverseK { k: usize },
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeVerdict {
    Positive,
    Negative,
}

/// A recorded equivalence check that can be re-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivCheck {
    pub golden: String,
    pub candidate: String,
    pub result: EquivalenceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceStep {
    pub description: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub result: String,
    /// Equivalence verdict of this step, for k-agent checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<EquivCheck>,
    /// Set when the step failed for infrastructure reasons, not semantics.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub infrastructure: bool,
}

impl EvidenceStep {
    fn note(description: impl Into<String>, result: impl Into<String>) -> Self {
        EvidenceStep {
            description: description.into(),
            inputs: Vec::new(),
            result: result.into(),
            equivalence: None,
            check: None,
            infrastructure: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub candidate_ref: String,
    pub method: Method,
    pub verdict: OutcomeVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub evidence: Vec<EvidenceStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub infrastructure_failure: bool,
}

impl ValidationOutcome {
    pub(crate) fn new(candidate: &Candidate, method: Method) -> Self {
        ValidationOutcome {
            candidate_ref: candidate.id.clone(),
            method,
            verdict: OutcomeVerdict::Negative,
            reason: None,
            evidence: Vec::new(),
            label: None,
            reviewer: None,
            infrastructure_failure: false,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.verdict == OutcomeVerdict::Positive
    }
}

/// Whether a k-agent outcome obeys the unanimity rule: positive exactly
/// when there are k steps and every one is `equivalent`.
pub fn unanimous(outcome: &ValidationOutcome) -> bool {
    let Method::ReverseK { k } = outcome.method else {
        return true;
    };
    let all = outcome.evidence.len() == k
        && outcome
            .evidence
            .iter()
            .all(|s| s.equivalence == Some(EquivVerdict::Equivalent));
    all == outcome.is_positive()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivConfig {
    /// Trace length bound; defaults to the assertions' span plus two.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<usize>,
    /// Sample count used when exhaustive checking exceeds its budget.
    pub samples: u64,
    pub seed: u64,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            bound: None,
            samples: 20_000,
            seed: 0,
        }
    }
}

fn checkpoint_of(candidate: &Candidate) -> Result<&Checkpoint, BridgeError> {
    match &candidate.payload {
        CandidatePayload::Checkpoint(c) => Ok(c),
        CandidatePayload::Feature(_) => Err(BridgeError::InvalidConfig(format!(
            "candidate `{}` is not a checkpoint",
            candidate.id
        ))),
    }
}

fn checkpoint_json(c: &Checkpoint) -> String {
    pretty(&serde_json::json!({
        "description": c.description,
        "signals": c.signals,
        "trigger": c.trigger,
        "expected": c.expected,
        "timing": c.timing,
    }))
}

fn sva_bindings(c: &Checkpoint, signal_names: &[String], key: String) -> BTreeMap<String, String> {
    let mut b = BTreeMap::new();
    b.insert("checkpoint_json".to_string(), checkpoint_json(c));
    b.insert("signal_names".to_string(), signal_names.join(", "));
    b.insert("repair_note".to_string(), String::new());
    b.insert(SCENARIO_KEY.to_string(), key);
    b
}

/// First assertion of an assertions reply, parsed.
fn first_assertion(raw: &str) -> Result<(String, SvaAst), String> {
    let parsed = parse_stage_output(Stage::Svas, raw).map_err(|e| format!("syntax: {e}"))?;
    let StageDocument::Svas(doc) = parsed.document else {
        unreachable!("assertions stage yields assertion documents")
    };
    let text = doc.assertions.into_iter().next().ok_or("syntax: reply lists no assertion")?;
    let ast = parse_assertion(&text).map_err(|d| format!("syntax: {d}"))?;
    Ok((text, ast))
}

fn run_check(golden: (&str, &SvaAst), candidate: (&str, &SvaAst), cfg: &EquivConfig) -> Result<EquivCheck, String> {
    let mut signals = union_signals(golden.1, candidate.1);
    if signals.is_empty() {
        signals.push("_".into());
    }
    let bound = cfg.bound.unwrap_or_else(|| default_bound(golden.1, candidate.1)).max(1);
    let result = check_equivalence(golden.1, candidate.1, &signals, bound, EquivMode::Exhaustive)
        .or_else(|_| {
            check_equivalence(
                golden.1,
                candidate.1,
                &signals,
                bound,
                EquivMode::Sampled {
                    seed: cfg.seed,
                    n: cfg.samples,
                },
            )
        })
        .map_err(|e| e.to_string())?;
    Ok(EquivCheck {
        golden: golden.0.to_string(),
        candidate: candidate.0.to_string(),
        result,
    })
}

fn describe(result: &EquivalenceResult) -> String {
    match (&result.verdict, &result.counterexample) {
        (EquivVerdict::Equivalent, _) => format!("equivalent over {} traces", result.traces_checked),
        (EquivVerdict::Inconclusive, _) => format!("no difference on {} sampled traces", result.traces_checked),
        (EquivVerdict::Inequivalent, Some(cex)) => format!(
            "not equivalent: attempt at cycle {} gives {} vs {} on a {}-cycle trace",
            cex.attempt_cycle,
            cex.verdict_a,
            cex.verdict_b,
            cex.cycles.len()
        ),
        (EquivVerdict::Inequivalent, None) => "not equivalent".to_string(),
    }
}

/// Regenerate an assertion from the checkpoint with `k` independent agents
/// and accept only if every one parses and is equivalent to the golden
/// assertion. Inconclusive (sampled) checks do not count as equivalent.
#[allow(clippy::too_many_arguments)]
pub fn validate_reverse(
    golden: &GoldenItem,
    candidate: &Candidate,
    k: usize,
    cfg: &EquivConfig,
    agent: &AgentSpec,
    runtime: &AgentRuntime,
) -> Result<ValidationOutcome, BridgeError> {
    if k == 0 {
        return Err(BridgeError::InvalidConfig("k must be at least 1".into()));
    }
    let PipelineArtifact::SvaAssertion(sva) = &golden.payload else {
        return Err(BridgeError::InvalidConfig(format!("golden item `{}` is not an assertion", golden.id)));
    };
    let golden_ast = sva
        .ast
        .clone()
        .or_else(|| parse_assertion(&sva.source_text).ok())
        .ok_or_else(|| BridgeError::Schema {
            id: golden.id.clone(),
            detail: "golden assertion does not parse".into(),
        })?;
    let checkpoint = checkpoint_of(candidate)?;
    let agent = with_template(agent, CHECKPOINT_TO_SVA);
    let signals = golden.signal_names();
    let key = format!("{}/reverse", candidate.id);
    let group = runtime.invoke_group(&agent, k, |_| {
        runtime.prepare(&agent, &sva_bindings(checkpoint, &signals, key.clone()), None)
    });
    let mut outcome = ValidationOutcome::new(candidate, Method::ReverseK { k });
    let mut steps: Vec<Option<EvidenceStep>> = vec![None; k];
    let replies: Vec<(usize, String)> = match group {
        Ok(all) => all.into_iter().map(|r| r.raw_text).enumerate().collect(),
        Err(e) => {
            outcome.infrastructure_failure = true;
            for (i, err) in e.failures {
                let mut step = EvidenceStep::note(format!("reverse agent {i}"), format!("agent call failed: {err}"));
                step.infrastructure = true;
                steps[i] = Some(step);
            }
            e.partial.into_iter().map(|(i, r)| (i, r.raw_text)).collect()
        }
    };
    for (i, raw) in replies {
        let description = format!("reverse agent {i}: regenerate the assertion and compare with the golden one");
        steps[i] = Some(match first_assertion(&raw) {
            Err(e) => {
                let mut s = EvidenceStep::note(description, e);
                s.inputs = vec![raw];
                s
            }
            Ok((text, ast)) => match run_check((&sva.source_text, &golden_ast), (&text, &ast), cfg) {
                Err(e) => EvidenceStep::note(description, format!("check failed: {e}")),
                Ok(check) => EvidenceStep {
                    description,
                    inputs: vec![sva.source_text.clone(), text],
                    result: describe(&check.result),
                    equivalence: Some(check.result.verdict),
                    check: Some(check),
                    infrastructure: false,
                },
            },
        });
    }
    outcome.evidence = steps.into_iter().flatten().collect();
    let agreed = outcome.evidence.len() == k
        && outcome
            .evidence
            .iter()
            .all(|s| s.equivalence == Some(EquivVerdict::Equivalent));
    if agreed {
        outcome.verdict = OutcomeVerdict::Positive;
    } else {
        let failed = outcome
            .evidence
            .iter()
            .filter(|s| s.equivalence != Some(EquivVerdict::Equivalent))
            .count();
        outcome.reason = Some(if outcome.infrastructure_failure {
            format!("{failed} of {k} reverse agents failed to answer")
        } else {
            format!("{failed} of {k} regenerated assertions are not equivalent to the golden one")
        });
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanityConfig {
    /// Longest sampled trace.
    pub bound: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SanityConfig {
    fn default() -> Self {
        SanityConfig {
            bound: 6,
            samples: 256,
            seed: 0,
        }
    }
}

/// Overall verdicts of `ast` on random traces: (passing, failing).
pub(crate) fn sample_verdicts(ast: &SvaAst, cfg: &SanityConfig) -> (usize, usize) {
    let mut signals = ast.signals();
    if signals.is_empty() {
        signals.push("_".into());
    }
    let compiled = CompiledAssertion::new(ast, &signals).expect("signals come from the assertion");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut pass, mut fail) = (0, 0);
    for _ in 0..cfg.samples {
        let len = rng.random_range(1..=cfg.bound.max(1));
        let rows: Vec<Vec<bool>> = (0..len)
            .map(|_| (0..signals.len()).map(|_| rng.random_bool(0.5)).collect())
            .collect();
        let trace = Trace::new(signals.clone(), &rows).expect("well formed");
        match compiled.evaluate(&trace).overall {
            Verdict::Fail => fail += 1,
            _ => pass += 1,
        }
    }
    (pass, fail)
}

/// Turn the checkpoint into an assertion with a bridge agent and accept it
/// when the assertion parses and is not constant on random traces.
pub fn validate_bridged(
    candidate: &Candidate,
    signal_names: &[String],
    agent: &AgentSpec,
    runtime: &AgentRuntime,
    sanity: &SanityConfig,
) -> Result<ValidationOutcome, BridgeError> {
    let checkpoint = checkpoint_of(candidate)?;
    let agent = with_template(agent, CHECKPOINT_TO_SVA);
    let prompt = runtime
        .prepare(&agent, &sva_bindings(checkpoint, signal_names, format!("{}/bridge", candidate.id)), None)
        .map_err(|e| BridgeError::Agent(e.to_string()))?;
    let response = runtime
        .invoke(&agent, &prompt)
        .map_err(|e| BridgeError::Agent(format!("{}: bridge agent failed: {e}", candidate.id)))?;
    let mut outcome = ValidationOutcome::new(candidate, Method::Bridged);
    let description = "bridge the checkpoint to an assertion";
    let (text, ast) = match first_assertion(&response.raw_text) {
        Ok(x) => x,
        Err(e) => {
            outcome.evidence.push(EvidenceStep::note(description, e));
            outcome.reason = Some("syntax".into());
            return Ok(outcome);
        }
    };
    let mut step = EvidenceStep::note(description, "assertion parses");
    step.inputs = vec![text.clone()];
    outcome.evidence.push(step);
    let (pass, fail) = sample_verdicts(&ast, sanity);
    let mut step = EvidenceStep::note(
        format!("evaluate on {} random traces of up to {} cycles", sanity.samples, sanity.bound),
        format!("{pass} pass, {fail} fail"),
    );
    step.inputs = vec![text];
    outcome.evidence.push(step);
    if fail == 0 {
        outcome.reason = Some("trivially true".into());
    } else if pass == 0 {
        outcome.reason = Some("trivially false".into());
    } else {
        outcome.verdict = OutcomeVerdict::Positive;
    }
    Ok(outcome)
}

pub enum DirectVerifier<'a> {
    Schema,
    Expert(&'a ReviewQueue),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DirectOutcome {
    Resolved(ValidationOutcome),
    /// Waiting for a reviewer; the candidate is now expert-pending.
    Pending { item_id: String },
}

/// Check a candidate directly: by schema at once, or by sending it to the
/// expert queue.
pub fn validate_direct(
    golden: &GoldenItem,
    candidate: &mut Candidate,
    verifier: DirectVerifier,
) -> Result<DirectOutcome, BridgeError> {
    match verifier {
        DirectVerifier::Schema => {
            let mut outcome = ValidationOutcome::new(candidate, Method::Direct);
            match Checker::new(golden)?.payload(&candidate.payload) {
                Ok(()) => {
                    outcome.verdict = OutcomeVerdict::Positive;
                    outcome.evidence.push(EvidenceStep::note("schema check", "valid"));
                }
                Err(e) => {
                    outcome.evidence.push(EvidenceStep::note("schema check", e.clone()));
                    outcome.reason = Some(e);
                }
            }
            Ok(DirectOutcome::Resolved(outcome))
        }
        DirectVerifier::Expert(queue) => {
            let item = queue.enqueue(ReviewRequest {
                candidate_ref: candidate.id.clone(),
                golden_ref: golden.id.clone(),
                task: golden.task.to_string(),
                payload: serde_json::to_value(&candidate.payload).expect("serializable"),
                golden: serde_json::to_value(&golden.payload).expect("serializable"),
            })?;
            if let CandidateStatus::Pending = candidate.status {
                candidate.transition(CandidateStatus::ExpertPending {
                    item_id: item.item_id.clone(),
                })?;
            }
            Ok(DirectOutcome::Pending { item_id: item.item_id })
        }
    }
}

/// The expert outcome for an expert-pending candidate once a verdict has
/// been posted; the candidate status is updated accordingly.
pub fn resolve_expert(candidate: &mut Candidate, queue: &ReviewQueue) -> Result<Option<ValidationOutcome>, BridgeError> {
    let CandidateStatus::ExpertPending { item_id } = &candidate.status else {
        return Ok(None);
    };
    let item = queue.get(item_id)?;
    let ReviewState::Decided(decision) = item.state else {
        return Ok(None);
    };
    let mut outcome = ValidationOutcome::new(candidate, Method::Expert);
    outcome.reviewer = Some(decision.reviewer.clone());
    let verdict = match decision.verdict {
        ReviewVerdict::Approve => "approved",
        ReviewVerdict::Reject => "rejected",
    };
    let mut step = EvidenceStep::note(format!("expert review {}", item.item_id), verdict);
    step.inputs = decision.reason.iter().cloned().collect();
    outcome.evidence.push(step);
    if decision.verdict == ReviewVerdict::Approve {
        outcome.verdict = OutcomeVerdict::Positive;
    } else {
        outcome.reason = Some(decision.reason.unwrap_or_else(|| "rejected by reviewer".into()));
    }
    apply_outcome(candidate, &outcome)?;
    Ok(Some(outcome))
}

/// Settle the candidate status from its outcome.
pub fn apply_outcome(candidate: &mut Candidate, outcome: &ValidationOutcome) -> Result<(), BridgeError> {
    candidate.transition(if outcome.is_positive() {
        CandidateStatus::Accepted
    } else {
        CandidateStatus::Rejected {
            reason: outcome.reason.clone().unwrap_or_else(|| "validation failed".into()),
        }
    })
}

/// Re-run every recorded equivalence check; true when each still returns
/// the recorded verdict and, for positive outcomes, that verdict is
/// `equivalent`.
pub fn replay_outcome(outcome: &ValidationOutcome) -> Result<bool, String> {
    for step in &outcome.evidence {
        let Some(check) = &step.check else { continue };
        let a = parse_assertion(&check.golden).map_err(|d| d.to_string())?;
        let b = parse_assertion(&check.candidate).map_err(|d| d.to_string())?;
        let r = check_equivalence(&a, &b, &check.result.signals, check.result.bound, check.result.mode)
            .map_err(|e| e.to_string())?;
        if r.verdict != check.result.verdict {
            return Ok(false);
        }
        if outcome.is_positive() && r.verdict != EquivVerdict::Equivalent {
            return Ok(false);
        }
    }
    Ok(true)
}
