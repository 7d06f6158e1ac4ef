//! Syntax pass rate, functional pass rate and bug-type coverage.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equiv::{
    check_conformance, check_equivalence, default_bound, union_signals, EquivMode, EquivVerdict,
    Taxonomy, TraceSuite, DEFAULT_SAMPLES,
};
use crate::ir::{PipelineArtifact, PipelineRun, Stage, SvaAssertion};
use crate::store::{Store, StoreError};
use crate::sva::SvaAst;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRate {
    pub passed: usize,
    pub total: usize,
    /// Percentage rounded to two decimals.
    pub percent: f64,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} is undefined for an empty set")]
    UndefinedRate(&'static str),
    #[error("design `{0}` has neither a trace suite nor golden assertions")]
    NoReference(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn rate(passed: usize, total: usize, what: &'static str) -> Result<PassRate, MetricsError> {
    if total == 0 {
        return Err(MetricsError::UndefinedRate(what));
    }
    Ok(PassRate {
        passed,
        total,
        percent: round2(passed as f64 * 100.0 / total as f64),
    })
}

/// Share of `true` outcomes, in percent.
pub fn pass_rate(outcomes: &[bool]) -> Result<PassRate, MetricsError> {
    rate(outcomes.iter().filter(|b| **b).count(), outcomes.len(), "pass rate")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionMetrics {
    pub id: String,
    pub source_text: String,
    pub syntax_ok: bool,
    pub functional_ok: bool,
    /// Bug types this assertion catches (only for functionally correct ones).
    pub detected: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMetrics {
    pub design: String,
    pub n_generated: usize,
    /// Not applicable (None) when no assertions were generated.
    pub spr: Option<PassRate>,
    /// Over the syntactically valid subset; None when that subset is empty.
    pub fpr: Option<PassRate>,
    /// Bug types caught by functionally correct assertions over the
    /// taxonomy size; None without a trace suite.
    pub function_coverage: Option<PassRate>,
    /// For every taxonomy entry, the assertions that detect it.
    pub detected_by: BTreeMap<String, Vec<String>>,
    pub assertions: Vec<AssertionMetrics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_ref: Option<String>,
    pub n_generated: usize,
    /// Unweighted means over the designs where the rate is defined.
    pub spr: Option<f64>,
    pub fpr: Option<f64>,
    pub function_coverage: Option<f64>,
    /// Number of detecting assertions per bug type, summed over designs.
    pub bug_distribution: BTreeMap<String, usize>,
    pub taxonomy_size: usize,
    pub designs: Vec<DesignMetrics>,
}

/// Reference material for one design.
#[derive(Default)]
pub struct DesignReference<'a> {
    pub suite: Option<&'a TraceSuite>,
    /// Golden assertion per assertion id or checkpoint id. An assertion with
    /// an entry is judged by equivalence, otherwise by suite conformance.
    pub golden: BTreeMap<String, SvaAst>,
}

impl DesignReference<'_> {
    fn golden_for(&self, sva: &SvaAssertion) -> Option<&SvaAst> {
        self.golden
            .get(&sva.id)
            .or_else(|| sva.checkpoint_ref.as_ref().and_then(|c| self.golden.get(c)))
    }
}

fn golden_match(ast: &SvaAst, golden: &SvaAst, notes: &mut Vec<String>) -> bool {
    let signals = union_signals(ast, golden);
    if signals.is_empty() {
        // constant properties: compare on a one-signal alphabet
        return golden_match_on(ast, golden, &["_".to_string()], notes);
    }
    golden_match_on(ast, golden, &signals, notes)
}

fn golden_match_on(ast: &SvaAst, golden: &SvaAst, signals: &[String], notes: &mut Vec<String>) -> bool {
    let bound = default_bound(ast, golden).max(1);
    let result = check_equivalence(ast, golden, signals, bound, EquivMode::Exhaustive).or_else(|_| {
        check_equivalence(ast, golden, signals, bound, EquivMode::Sampled { seed: 0, n: DEFAULT_SAMPLES })
    });
    match result {
        Ok(r) if r.verdict == EquivVerdict::Equivalent => true,
        Ok(r) if r.verdict == EquivVerdict::Inconclusive => {
            notes.push("matched the golden assertion on sampled traces only".into());
            true
        }
        Ok(_) => false,
        Err(e) => {
            notes.push(format!("equivalence check failed: {e}"));
            false
        }
    }
}

fn optional_rate(passed: usize, total: usize) -> Option<PassRate> {
    rate(passed, total, "rate").ok()
}

/// Score one design's assertions. Assertions that fail to parse, or that
/// use signals outside the suite, count as functionally incorrect.
pub fn evaluate_design(
    design: &str,
    assertions: &[SvaAssertion],
    reference: &DesignReference,
    taxonomy: &Taxonomy,
) -> Result<DesignMetrics, MetricsError> {
    let mut warnings = Vec::new();
    let mut per = Vec::new();
    let mut detected_by: BTreeMap<String, Vec<String>> =
        taxonomy.names().map(|n| (n.to_string(), Vec::new())).collect();
    for sva in assertions {
        let mut m = AssertionMetrics {
            id: sva.id.clone(),
            source_text: sva.source_text.clone(),
            syntax_ok: sva.syntax_ok,
            functional_ok: false,
            detected: Vec::new(),
            notes: Vec::new(),
        };
        if let Some(ast) = &sva.ast {
            let golden = reference.golden_for(sva);
            if golden.is_none() && reference.suite.is_none() {
                return Err(MetricsError::NoReference(design.to_string()));
            }
            let conformance = match reference.suite {
                Some(suite) => match check_conformance(ast, suite) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        warnings.push(format!("{}: {e}; counted as functionally incorrect", sva.id));
                        m.notes.push(e.to_string());
                        None
                    }
                },
                None => None,
            };
            m.functional_ok = match golden {
                Some(g) => golden_match(ast, g, &mut m.notes),
                None => conformance.as_ref().is_some_and(|c| c.functional_ok),
            };
            if m.functional_ok {
                if let Some(c) = &conformance {
                    m.detected = c.detected.iter().cloned().collect();
                }
            }
            for t in &m.detected {
                detected_by.entry(t.clone()).or_default().push(sva.id.clone());
            }
        }
        per.push(m);
    }
    let valid = per.iter().filter(|m| m.syntax_ok).count();
    let correct = per.iter().filter(|m| m.functional_ok).count();
    let detected = detected_by.values().filter(|v| !v.is_empty()).count();
    Ok(DesignMetrics {
        design: design.to_string(),
        n_generated: per.len(),
        spr: optional_rate(valid, per.len()),
        fpr: optional_rate(correct, valid),
        function_coverage: reference.suite.and_then(|_| optional_rate(detected, taxonomy.len())),
        detected_by,
        assertions: per,
        warnings,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| round2(v.iter().sum::<f64>() / v.len() as f64))
}

pub fn compute_report(
    designs: Vec<DesignMetrics>,
    taxonomy: &Taxonomy,
    run_ref: Option<String>,
) -> MetricsReport {
    let percent = |r: &Option<PassRate>| r.as_ref().map(|r| r.percent);
    let mut bug_distribution: BTreeMap<String, usize> = taxonomy.names().map(|n| (n.to_string(), 0)).collect();
    for d in &designs {
        for (t, v) in &d.detected_by {
            *bug_distribution.entry(t.clone()).or_default() += v.len();
        }
    }
    MetricsReport {
        run_ref,
        n_generated: designs.iter().map(|d| d.n_generated).sum(),
        spr: mean(designs.iter().filter_map(|d| percent(&d.spr))),
        fpr: mean(designs.iter().filter_map(|d| percent(&d.fpr))),
        function_coverage: mean(designs.iter().filter_map(|d| percent(&d.function_coverage))),
        bug_distribution,
        taxonomy_size: taxonomy.len(),
        designs,
    }
}

/// Assertions produced by a run, in stage order.
pub fn run_assertions(run: &PipelineRun, store: &dyn Store) -> Result<Vec<SvaAssertion>, MetricsError> {
    let mut out = Vec::new();
    for id in &run.stage(Stage::Svas).artifacts {
        if let PipelineArtifact::SvaAssertion(s) = store.get_artifact(id)? {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Table,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(Self::Json),
            "table" => Some(Self::Table),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Render a report. Output is a pure function of the report.
pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    let pct = |r: &Option<PassRate>| fmt_opt(r.as_ref().map(|r| r.percent));
    let mut rows: Vec<[String; 5]> = report
        .designs
        .iter()
        .map(|d| {
            [
                d.design.clone(),
                d.n_generated.to_string(),
                pct(&d.spr),
                pct(&d.fpr),
                pct(&d.function_coverage),
            ]
        })
        .collect();
    let header = ["design", "generated", "spr", "fpr", "coverage"];
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("serializable"),
        ReportFormat::Csv => {
            let mut out = header.join(",");
            out.push('\n');
            for r in &rows {
                out.push_str(&r.join(","));
                out.push('\n');
            }
            out
        }
        ReportFormat::Table => {
            rows.push([
                "mean".to_string(),
                report.n_generated.to_string(),
                fmt_opt(report.spr),
                fmt_opt(report.fpr),
                fmt_opt(report.function_coverage),
            ]);
            let widths: Vec<usize> = (0..5)
                .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
                .collect();
            let mut out = String::new();
            let line = |cells: &[&str], out: &mut String| {
                let parts: Vec<String> = cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                    .collect();
                let _ = writeln!(out, "{}", parts.join("  ").trim_end());
            };
            line(&header, &mut out);
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            line(&rule.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
            for r in &rows {
                line(&r.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
            }
            let _ = writeln!(out, "\nbug distribution (detecting assertions)");
            let name_w = report.bug_distribution.keys().map(String::len).max().unwrap_or(0);
            for (t, n) in &report.bug_distribution {
                let bar = format!("{t:<name_w$}  {n:>3}  {}", "#".repeat(*n));
                let _ = writeln!(out, "{}", bar.trim_end());
            }
            out
        }
    }
}
