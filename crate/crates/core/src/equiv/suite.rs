use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sva::{CompiledAssertion, EvalError, SvaAst, Trace, TraceError, Verdict};

const DEFAULT_TAXONOMY: &str = include_str!("../../data/bug_taxonomy.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// Configurable list of bug types; its size is the coverage denominator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    #[serde(default)]
    pub version: u32,
    pub entries: Vec<TaxonomyEntry>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }
}

impl Taxonomy {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedTrace {
    pub name: String,
    pub cycles: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugTrace {
    pub bug_type: String,
    pub name: String,
    pub cycles: Vec<Vec<i64>>,
}

/// Must-pass and should-fail traces over one design's signal alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSuite {
    pub design_ref: String,
    pub signals: Vec<String>,
    pub golden_traces: Vec<NamedTrace>,
    pub bug_traces: Vec<BugTrace>,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("malformed trace suite: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trace `{name}`: {source}")]
    Trace { name: String, source: TraceError },
    #[error("trace `{0}` has no cycles")]
    EmptyTrace(String),
    #[error("trace `{name}` uses bug type `{bug_type}` which is not in the taxonomy")]
    UnknownBugType { name: String, bug_type: String },
    #[error("trace name `{0}` is used twice")]
    DuplicateName(String),
}

impl TraceSuite {
    pub fn from_json_str(text: &str, taxonomy: &Taxonomy) -> Result<Self, SuiteError> {
        let suite: TraceSuite = serde_json::from_str(text)?;
        suite.check(taxonomy)?;
        Ok(suite)
    }

    /// Verify every trace is well formed over the shared alphabet and every
    /// bug type belongs to `taxonomy`.
    pub fn check(&self, taxonomy: &Taxonomy) -> Result<(), SuiteError> {
        let mut names = HashSet::new();
        let all = self
            .golden_traces
            .iter()
            .map(|t| (&t.name, &t.cycles))
            .chain(self.bug_traces.iter().map(|t| (&t.name, &t.cycles)));
        for (name, cycles) in all {
            if !names.insert(name.as_str()) {
                return Err(SuiteError::DuplicateName(name.clone()));
            }
            self.trace(name, cycles)?;
        }
        for b in &self.bug_traces {
            if !taxonomy.contains(&b.bug_type) {
                return Err(SuiteError::UnknownBugType {
                    name: b.name.clone(),
                    bug_type: b.bug_type.clone(),
                });
            }
        }
        Ok(())
    }

    fn trace(&self, name: &str, cycles: &[Vec<i64>]) -> Result<Trace, SuiteError> {
        if cycles.is_empty() {
            return Err(SuiteError::EmptyTrace(name.to_string()));
        }
        Trace::from_int_rows(self.signals.clone(), cycles).map_err(|source| SuiteError::Trace {
            name: name.to_string(),
            source,
        })
    }

    pub fn golden(&self) -> Vec<(String, Trace)> {
        self.golden_traces
            .iter()
            .map(|t| (t.name.clone(), self.trace(&t.name, &t.cycles).expect("checked suite")))
            .collect()
    }

    pub fn bugs(&self) -> Vec<(String, String, Trace)> {
        self.bug_traces
            .iter()
            .map(|t| {
                let trace = self.trace(&t.name, &t.cycles).expect("checked suite");
                (t.bug_type.clone(), t.name.clone(), trace)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceFailure {
    pub trace: String,
    pub attempt_cycle: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceResult {
    pub functional_ok: bool,
    pub detected: BTreeSet<String>,
    /// Golden traces the assertion fails, with the first failing attempt.
    pub failures: Vec<ConformanceFailure>,
}

/// Golden traces must all pass; bug traces count as detected only for an
/// assertion that passes every golden trace.
pub fn check_conformance(ast: &SvaAst, suite: &TraceSuite) -> Result<ConformanceResult, EvalError> {
    let compiled = CompiledAssertion::new(ast, &suite.signals)?;
    let mut failures = Vec::new();
    for (name, trace) in suite.golden() {
        let per = compiled.per_attempt(&trace);
        if let Some(i) = per.iter().position(|v| *v == Verdict::Fail) {
            failures.push(ConformanceFailure {
                trace: name,
                attempt_cycle: i,
            });
        }
    }
    let functional_ok = failures.is_empty();
    let mut detected = BTreeSet::new();
    if functional_ok {
        for (bug_type, _, trace) in suite.bugs() {
            if compiled.evaluate(&trace).overall == Verdict::Fail {
                detected.insert(bug_type);
            }
        }
    }
    Ok(ConformanceResult {
        functional_ok,
        detected,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sva::parse_assertion;

    fn suite() -> TraceSuite {
        let text = r#"{
            "design_ref": "handshake",
            "signals": ["req", "ack"],
            "golden_traces": [{"name": "g", "cycles": [[1,0],[0,1],[0,0]]}],
            "bug_traces": [{"bug_type": "missing_acknowledge", "name": "b", "cycles": [[1,0],[0,0],[0,0]]}]
        }"#;
        TraceSuite::from_json_str(text, &Taxonomy::default()).unwrap()
    }

    fn ast(body: &str) -> SvaAst {
        parse_assertion(&format!("assert property (@(posedge clk) {body});")).unwrap()
    }

    #[test]
    fn default_taxonomy_has_sixteen_entries() {
        let t = Taxonomy::default();
        assert_eq!(t.len(), 16);
        assert!(t.contains("protocol_violation") && t.contains("illegal_branch"));
    }

    #[test]
    fn conformance_cases() {
        let s = suite();
        let good = check_conformance(&ast("req |=> ack"), &s).unwrap();
        assert!(good.functional_ok);
        assert_eq!(good.detected, BTreeSet::from(["missing_acknowledge".to_string()]));

        let always = check_conformance(&ast("1"), &s).unwrap();
        assert!(always.functional_ok && always.detected.is_empty());

        let never = check_conformance(&ast("0"), &s).unwrap();
        assert!(!never.functional_ok && never.detected.is_empty());
        assert_eq!(never.failures[0].attempt_cycle, 0);
    }

    #[test]
    fn rejects_unknown_bug_type() {
        let text = r#"{"design_ref":"d","signals":["a"],"golden_traces":[],
            "bug_traces":[{"bug_type":"cosmic_ray","name":"x","cycles":[[1]]}]}"#;
        assert!(matches!(
            TraceSuite::from_json_str(text, &Taxonomy::default()),
            Err(SuiteError::UnknownBugType { .. })
        ));
    }
}
