mod common;

use std::collections::BTreeMap;

use assertflow_core::equiv::{Taxonomy, TraceSuite};
use assertflow_core::ir::DesignSpec;
use assertflow_core::metrics::{
    compute_report, emit_report, evaluate_design, run_assertions, DesignReference, ReportFormat,
};
use assertflow_core::pipeline::{run_pipeline, PipelineConfig, RunOptions};
use assertflow_core::store::MemoryStore;
use common::fixture;
use common::oracle::{overall_fails, Waves};
use serde_json::Value;

fn rows(cycles: &[Vec<i64>]) -> Vec<Vec<bool>> {
    cycles.iter().map(|r| r.iter().map(|v| *v != 0).collect()).collect()
}

#[test]
fn toy_fifo_report_matches_expected_and_oracle() {
    let spec: DesignSpec = serde_json::from_str(&std::fs::read_to_string(fixture("spec.json")).unwrap()).unwrap();
    let (config, runtime) = PipelineConfig::load(&fixture("pipeline.json")).unwrap();
    let store = MemoryStore::new();
    let run = run_pipeline(&spec, &config, &runtime, &store, &RunOptions::default()).unwrap();
    let svas = run_assertions(&run, &store).unwrap();
    assert_eq!(svas.len(), 8);

    let taxonomy = Taxonomy::default();
    let suite = TraceSuite::from_json_str(&std::fs::read_to_string(fixture("suite.json")).unwrap(), &taxonomy).unwrap();
    let design = evaluate_design("toy_fifo", &svas, &DesignReference { suite: Some(&suite), golden: BTreeMap::new() }, &taxonomy).unwrap();
    let report = compute_report(vec![design.clone()], &taxonomy, Some(run.run_id.clone()));

    // Independent recomputation with the reference evaluator.
    let names: Vec<&str> = suite.signals.iter().map(String::as_str).collect();
    let mut ok_count = 0;
    let mut by_type: BTreeMap<String, usize> = BTreeMap::new();
    let mut incorrect = Vec::new();
    for sva in &svas {
        let ast = sva.ast.as_ref().unwrap();
        let ok = suite
            .golden_traces
            .iter()
            .all(|t| !overall_fails(ast, &Waves::new(&names, &rows(&t.cycles))));
        if ok {
            ok_count += 1;
            for b in &suite.bug_traces {
                if overall_fails(ast, &Waves::new(&names, &rows(&b.cycles))) {
                    *by_type.entry(b.bug_type.clone()).or_default() += 1;
                }
            }
        } else {
            incorrect.push(ast.label.clone().unwrap());
        }
    }
    let valid = svas.iter().filter(|s| s.syntax_ok).count();
    let oracle_fpr = ok_count as f64 * 100.0 / valid as f64;
    let oracle_cov = by_type.len() as f64 * 100.0 / taxonomy.len() as f64;

    let expected: Value = serde_json::from_str(&std::fs::read_to_string(fixture("expected_report.json")).unwrap()).unwrap();
    assert_eq!(design.spr.as_ref().unwrap().percent, expected["spr"].as_f64().unwrap());
    assert_eq!(design.fpr.as_ref().unwrap().percent, expected["fpr"].as_f64().unwrap());
    assert_eq!(design.fpr.as_ref().unwrap().percent, oracle_fpr);
    assert_eq!(design.function_coverage.as_ref().unwrap().percent, expected["coverage"].as_f64().unwrap());
    assert_eq!(design.function_coverage.as_ref().unwrap().percent, oracle_cov);
    incorrect.sort();
    let want_incorrect: Vec<String> = serde_json::from_value(expected["functionally_incorrect"].clone()).unwrap();
    assert_eq!(incorrect, want_incorrect);
    for (bug, n) in expected["detections"].as_object().unwrap() {
        let n = n.as_u64().unwrap() as usize;
        assert_eq!(design.detected_by[bug].len(), n, "{bug}");
        assert_eq!(by_type.get(bug).copied().unwrap_or(0), n, "{bug}");
    }
    assert_eq!(report.spr, Some(100.0));
    assert_eq!(report.bug_distribution["protocol_violation"], 2);

    let table = emit_report(&report, ReportFormat::Table);
    assert!(table.contains("toy_fifo") && table.contains("37.50"), "{table}");
    assert!(table.contains("bug distribution") && table.lines().any(|l| l.starts_with("protocol_violation") && l.ends_with(" 2  ##")), "{table}");
    let back: assertflow_core::metrics::MetricsReport = serde_json::from_str(&emit_report(&report, ReportFormat::Json)).unwrap();
    assert_eq!(back, report);
    let csv = emit_report(&report, ReportFormat::Csv);
    assert_eq!(csv.lines().next().unwrap(), "design,generated,spr,fpr,coverage");
    assert!(csv.contains("toy_fifo,8,100.00,75.00,37.50"));
}
