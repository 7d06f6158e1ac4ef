//! One line per acceptance criterion, with pinned tolerances. Exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use assertflow_core::agent::StochasticErrorModel;
use assertflow_core::bridge::{
    build_dataset, ingest_golden, replay_outcome, simulate_filter, simulate_outcomes, stats_from_confusion,
    synthesize, unanimous, BridgeConfig, Confusion, DatasetConfig, OutcomeVerdict, RawGolden, DEFAULT_GTP_FRACTION,
};
use assertflow_core::equiv::{check_equivalence, EquivMode, EquivVerdict, Taxonomy, TraceSuite};
use assertflow_core::ir::{DesignSpec, Stage, StageStatus};
use assertflow_core::metrics::{
    compute_report, evaluate_design, pass_rate, run_assertions, DesignReference, MetricsError,
};
use assertflow_core::pipeline::{resume_pipeline, run_pipeline, PipelineConfig, RunOptions};
use assertflow_core::store::{FileStore, MemoryStore};
use assertflow_core::sva::{check_syntax, eval_assertion, parse_assertion, SvaAst, Trace};
use common::oracle::{self, Waves};
use common::{corpus, fixture};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(
        elapsed <= limit,
        format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

/// Analytic rates of a unanimous k-check filter, derived from the model
/// parameters independently of the library.
fn analytic(m: &StochasticErrorModel, k: i32, gtp: f64) -> (f64, f64) {
    let h = m.hard_fraction;
    let fp = h * m.p_hard.powi(k) + (1.0 - h) * m.p_easy.powi(k);
    let tp = h * (m.base_correct_prob * (1.0 - m.p_hard)).powi(k)
        + (1.0 - h) * (m.base_correct_prob * (1.0 - m.p_easy)).powi(k);
    let (tp, fp_mass) = (gtp * tp, (1.0 - gtp) * fp);
    (fp * 100.0, tp / (tp + fp_mass) * 100.0)
}

fn filter_simulation() -> Outcome {
    let start = Instant::now();
    let model = StochasticErrorModel::default();
    let stats = simulate_filter(&model, &[1, 2, 3, 4, 5], 10_000, DEFAULT_GTP_FRACTION, 2024).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let fp: Vec<f64> = stats.iter().map(|s| s.fp_rate.unwrap_or(f64::NAN)).collect();
    let p: Vec<f64> = stats.iter().map(|s| s.precision.unwrap_or(f64::NAN)).collect();
    let detail = format!(
        "fp% {fp:?}, precision% {p:?}, analytic fp(1) {:.2} P(1) {:.2}, {:.1}s",
        analytic(&model, 1, DEFAULT_GTP_FRACTION).0,
        analytic(&model, 1, DEFAULT_GTP_FRACTION).1,
        elapsed.as_secs_f64()
    );
    ensure((fp[0] - 7.36).abs() <= 1.0, format!("fp(1) out of 7.36 +- 1.0: {detail}"))?;
    ensure(fp.windows(2).all(|w| w[1] <= w[0]), format!("fp rate increases with k: {detail}"))?;
    ensure(fp[4] <= 0.5, format!("fp(5) above 0.5: {detail}"))?;
    ensure((p[0] - 88.8).abs() <= 2.0, format!("P(1) out of 88.8 +- 2.0: {detail}"))?;
    ensure(p[4] >= 99.0, format!("P(5) below 99.0: {detail}"))?;
    within(elapsed, Duration::from_secs(60))?;
    Ok(detail)
}

fn rows(cycles: &[Vec<i64>]) -> Vec<Vec<bool>> {
    cycles.iter().map(|r| r.iter().map(|v| *v != 0).collect()).collect()
}

fn toy_pipeline_numbers() -> Outcome {
    let start = Instant::now();
    let read = |n: &str| std::fs::read_to_string(fixture(n)).map_err(|e| format!("{n}: {e}"));
    let spec: DesignSpec = serde_json::from_str(&read("spec.json")?).map_err(|e| e.to_string())?;
    let (config, runtime) = PipelineConfig::load(&fixture("pipeline.json")).map_err(|e| e.to_string())?;
    let store = MemoryStore::new();
    let run = run_pipeline(&spec, &config, &runtime, &store, &RunOptions::default()).map_err(|e| e.to_string())?;
    let svas = run_assertions(&run, &store).map_err(|e| e.to_string())?;
    let taxonomy = Taxonomy::default();
    let suite = TraceSuite::from_json_str(&read("suite.json")?, &taxonomy).map_err(|e| e.to_string())?;
    let reference = DesignReference {
        suite: Some(&suite),
        golden: BTreeMap::new(),
    };
    let design = evaluate_design("toy_fifo", &svas, &reference, &taxonomy).map_err(|e| e.to_string())?;
    let report = compute_report(vec![design], &taxonomy, Some(run.run_id.clone()));

    // Hand-derived values from the reference evaluator.
    let names: Vec<&str> = suite.signals.iter().map(String::as_str).collect();
    let mut correct = 0;
    let mut types = std::collections::BTreeSet::new();
    for sva in svas.iter().filter(|s| s.syntax_ok) {
        let ast = sva.ast.as_ref().ok_or("valid assertion without a tree")?;
        if suite.golden_traces.iter().all(|t| !oracle::overall_fails(ast, &Waves::new(&names, &rows(&t.cycles)))) {
            correct += 1;
            for b in &suite.bug_traces {
                if oracle::overall_fails(ast, &Waves::new(&names, &rows(&b.cycles))) {
                    types.insert(b.bug_type.clone());
                }
            }
        }
    }
    let valid = svas.iter().filter(|s| s.syntax_ok).count();
    let expected: serde_json::Value = serde_json::from_str(&read("expected_report.json")?).map_err(|e| e.to_string())?;
    let want = |k: &str| expected[k].as_f64().unwrap_or(f64::NAN);
    let oracle_fpr = (correct as f64 * 10_000.0 / valid as f64).round() / 100.0;
    let oracle_cov = (types.len() as f64 * 10_000.0 / taxonomy.len() as f64).round() / 100.0;
    let got = (report.spr, report.fpr, report.function_coverage);
    let detail = format!("spr/fpr/coverage {got:?}, oracle fpr {oracle_fpr} coverage {oracle_cov}");
    ensure(got == (Some(100.0), Some(want("fpr")), Some(want("coverage"))) && want("spr") == 100.0, detail.clone())?;
    ensure(got.1 == Some(oracle_fpr) && got.2 == Some(oracle_cov), detail.clone())?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(detail)
}

fn semantics_oracle() -> Outcome {
    let start = Instant::now();
    let bodies = corpus("semantics.sva");
    ensure(bodies.len() >= 50, format!("only {} corpus trees", bodies.len()))?;
    let names = ["a", "b"];
    let signals: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let mut evaluations = 0u64;
    let mut mismatches = Vec::new();
    for body in &bodies {
        let ast = parse_assertion(&format!("assert property (@(posedge clk) {body});")).map_err(|d| format!("{body}: {d}"))?;
        for len in 0..=4 {
            for r in oracle::all_rows(2, len) {
                let trace = Trace::new(signals.clone(), &r).map_err(|e| e.to_string())?;
                let got: Vec<_> = eval_assertion(&ast, &trace)
                    .map_err(|e| e.to_string())?
                    .per_attempt
                    .into_iter()
                    .map(oracle::convert)
                    .collect();
                let want = oracle::attempts(&ast, &Waves::new(&names, &r));
                evaluations += want.len() as u64;
                if got != want {
                    mismatches.push(format!("{body} on {r:?}"));
                }
            }
        }
    }
    let detail = format!("{} trees, {evaluations} (trace, attempt) pairs, {} mismatches", bodies.len(), mismatches.len());
    ensure(mismatches.is_empty(), format!("{detail}; first: {}", mismatches.first().cloned().unwrap_or_default()))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(detail)
}

fn body(b: &str) -> Result<SvaAst, String> {
    parse_assertion(&format!("assert property (@(posedge clk) {b});")).map_err(|d| d.to_string())
}

fn equivalence_ground_truths() -> Outcome {
    let signals = vec!["a".to_string(), "b".to_string()];
    let (imp, or) = (body("a |-> b")?, body("!a || b")?);
    let r = check_equivalence(&imp, &or, &signals, 4, EquivMode::Exhaustive).map_err(|e| e.to_string())?;
    ensure(r.verdict == EquivVerdict::Equivalent, format!("`a |-> b` vs `!a || b`: {:?}", r.verdict))?;
    ensure(oracle::brute_force_equiv(&imp, &or, &["a", "b"], 4).is_none(), "oracle finds a difference")?;
    let exhaustive = r.traces_checked;

    let (delayed, same) = (body("a |-> ##1 b")?, body("a |-> b")?);
    let r = check_equivalence(&delayed, &same, &signals, 4, EquivMode::Exhaustive).map_err(|e| e.to_string())?;
    let cex = r.counterexample.ok_or("no counterexample for `a |-> ##1 b` vs `a |-> b`")?;
    let names: Vec<&str> = cex.signals.iter().map(String::as_str).collect();
    let w = Waves::new(&names, &rows(&cex.cycles));
    let (va, vb) = (oracle::attempts(&delayed, &w)[cex.attempt_cycle], oracle::attempts(&same, &w)[cex.attempt_cycle]);
    ensure(
        (va, vb) == (oracle::convert(cex.verdict_a), oracle::convert(cex.verdict_b)) && va != vb,
        "counterexample does not replay on the reference evaluator",
    )?;
    Ok(format!(
        "equivalent over {exhaustive} traces; counterexample {:?} at attempt {} gives {} vs {}",
        cex.cycles, cex.attempt_cycle, cex.verdict_a, cex.verdict_b
    ))
}

fn metrics_exactness() -> Outcome {
    let r = pass_rate(&[true, true, false, true]).map_err(|e| e.to_string())?;
    ensure(format!("{:.2}", r.percent) == "75.00", format!("pass rate {}", r.percent))?;
    ensure(matches!(pass_rate(&[]), Err(MetricsError::UndefinedRate(_))), "empty pass rate is not an error")?;
    let s = stats_from_confusion(1, Confusion { tp: 9, fp: 1, tn: 0, fn_: 0 });
    ensure(s.precision.map(|p| format!("{p:.2}")) == Some("90.00".into()), format!("precision {:?}", s.precision))?;
    let s = stats_from_confusion(1, Confusion { tp: 0, fp: 0, tn: 5, fn_: 5 });
    ensure(s.precision.is_none(), "precision with nothing accepted is defined")?;
    Ok("75.00, undefined on empty, 90.00, n/a".into())
}

fn bridge_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bridge").join(name)
}

fn unanimity_and_purity() -> Outcome {
    let model = StochasticErrorModel::default();
    let mut populations = 0;
    for seed in 0..20u64 {
        let by_k: Vec<_> = (1..=5)
            .map(|k| simulate_outcomes(&model, k, 500, DEFAULT_GTP_FRACTION, seed).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        for outcomes in &by_k {
            ensure(outcomes.iter().all(unanimous), format!("seed {seed}: verdict disagrees with unanimity"))?;
        }
        let counts: Vec<(usize, usize)> = by_k
            .iter()
            .map(|os| {
                let fp = os.iter().filter(|o| o.is_positive() && o.label == Some(assertflow_core::bridge::Label::Gtn)).count();
                let fnn = os.iter().filter(|o| !o.is_positive() && o.label == Some(assertflow_core::bridge::Label::Gtp)).count();
                (fp, fnn)
            })
            .collect();
        ensure(
            counts.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 >= w[0].1),
            format!("seed {seed}: counts not monotone in k: {counts:?}"),
        )?;
        populations += 5;
    }

    let raw: Vec<RawGolden> = serde_json::from_str(&std::fs::read_to_string(bridge_fixture("golden.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let goldens = ingest_golden(&raw, "acceptance").map_err(|e| e.to_string())?;
    let (cfg, runtime) = BridgeConfig::load(&bridge_fixture("bridge.json")).map_err(|e| e.to_string())?;
    let job = synthesize(goldens, &cfg, &runtime, &MemoryStore::new(), None).map_err(|e| e.to_string())?;
    let ds = build_dataset(&job.goldens, &job.candidates, &job.outcomes, &DatasetConfig::default()).map_err(|e| e.to_string())?;
    let mut replayed = 0;
    for record in &ds.records {
        let o = job
            .outcomes
            .iter()
            .find(|o| o.candidate_ref == record.lineage.candidate_ref)
            .ok_or_else(|| format!("{}: no outcome", record.id))?;
        ensure(o.verdict == OutcomeVerdict::Positive, format!("{}: record from a negative outcome", record.id))?;
        ensure(replay_outcome(o) == Ok(true), format!("{}: evidence does not replay", record.id))?;
        for step in o.evidence.iter().filter_map(|s| s.check.as_ref()) {
            ensure(step.result.verdict == EquivVerdict::Equivalent, format!("{}: non-equivalent step", record.id))?;
            replayed += 1;
        }
    }
    Ok(format!(
        "{populations} simulated populations; {} records, {replayed} equivalence checks replayed",
        ds.records.len()
    ))
}

fn parser_corpus() -> Outcome {
    let valid = corpus("valid.sva");
    ensure(valid.len() >= 40, format!("valid corpus has {} entries", valid.len()))?;
    for line in &valid {
        let ast = parse_assertion(line).map_err(|d| format!("{line}: {d}"))?;
        let printed = ast.to_source();
        let again = parse_assertion(&printed).map_err(|d| format!("{printed}: {d}"))?;
        ensure(again == ast && again.to_source() == printed, format!("{line} does not round-trip"))?;
    }
    let invalid = corpus("invalid.sva");
    ensure(invalid.len() >= 20, format!("invalid corpus has {} entries", invalid.len()))?;
    for line in &invalid {
        let text = line.split_once("::").map_or(line.as_str(), |(_, t)| t.trim());
        let report = check_syntax(text);
        let d = report.diagnostics.first();
        ensure(!report.ok && d.is_some_and(|d| d.line >= 1 && d.column >= 1), format!("{text} accepted or unpositioned"))?;
    }
    Ok(format!("{} valid round-trip, {} invalid rejected with positions", valid.len(), invalid.len()))
}

fn resumable_pipeline() -> Outcome {
    let spec: DesignSpec = serde_json::from_str(&std::fs::read_to_string(fixture("spec.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (config, runtime) = PipelineConfig::load(&fixture("pipeline.json")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let options = RunOptions {
        run_id: Some("acceptance".into()),
        stop_after: Some(Stage::Checkpoints),
    };
    {
        let store = FileStore::open(dir.path()).map_err(|e| e.to_string())?;
        run_pipeline(&spec, &config, &runtime, &store, &options).map_err(|e| e.to_string())?;
    }
    let first = runtime.invocation_count();
    let store = FileStore::open(dir.path()).map_err(|e| e.to_string())?;
    let run = resume_pipeline("acceptance", &config, &runtime, &store, None).map_err(|e| e.to_string())?;
    let resumed = runtime.invocation_count() - first;
    ensure(run.status() == StageStatus::Done, "resumed run did not finish")?;
    // Only the assertion stage remains: one call per checkpoint.
    let checkpoints = run.stage(Stage::Checkpoints).artifacts.len() as u64;
    ensure(resumed == checkpoints, format!("resume made {resumed} calls, {checkpoints} were outstanding"))?;
    let before = runtime.invocation_count();
    resume_pipeline("acceptance", &config, &runtime, &store, None).map_err(|e| e.to_string())?;
    ensure(runtime.invocation_count() == before, "resuming a finished run made calls")?;
    Ok(format!("{first} calls before the stop, {resumed} after, 0 repeated"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("filter simulation", filter_simulation),
        ("toy pipeline numbers", toy_pipeline_numbers),
        ("semantics oracle equivalence", semantics_oracle),
        ("equivalence ground truths", equivalence_ground_truths),
        ("metrics exactness", metrics_exactness),
        ("unanimity and purity laws", unanimity_and_purity),
        ("parser corpus", parser_corpus),
        ("resumable pipeline", resumable_pipeline),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
