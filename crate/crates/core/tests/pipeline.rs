use std::path::PathBuf;

use assertflow_core::agent::{AgentRuntime, ScenarioFile};
use assertflow_core::ir::{
    trace_lineage, validate_artifact, ArtifactKind, DesignSpec, PipelineArtifact, Stage, StageStatus,
};
use assertflow_core::pipeline::{
    resume_pipeline, run_pipeline, run_stage, PipelineConfig, PipelineError, RunOptions, StageEnv,
};
use assertflow_core::store::{FileStore, MemoryStore, Store, StoreSource};
use serde_json::json;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy_fifo").join(name)
}

fn toy() -> (DesignSpec, PipelineConfig, AgentRuntime) {
    let spec: DesignSpec = serde_json::from_str(&std::fs::read_to_string(fixture("spec.json")).unwrap()).unwrap();
    let (config, runtime) = PipelineConfig::load(&fixture("pipeline.json")).unwrap();
    (spec, config, runtime)
}

fn sva_ids(store: &dyn Store, run: &assertflow_core::ir::PipelineRun) -> Vec<PipelineArtifact> {
    run.stage(Stage::Svas)
        .artifacts
        .iter()
        .map(|id| store.get_artifact(id).unwrap())
        .collect()
}

#[test]
fn toy_fifo_end_to_end() {
    let (spec, config, runtime) = toy();
    let store = MemoryStore::new();
    let run = run_pipeline(&spec, &config, &runtime, &store, &RunOptions::default()).unwrap();
    assert_eq!(run.status(), StageStatus::Done);
    let counts: Vec<usize> = Stage::ALL.iter().map(|s| run.stage(*s).artifacts.len()).collect();
    assert_eq!(counts, vec![1, 1, 5, 8]);
    // plan, features, one call per feature, one per checkpoint
    assert_eq!(runtime.invocation_count(), 1 + 1 + 3 + 5);
    assert_eq!(run.recorded_spr(), Some(100.0));

    let source = StoreSource(&store);
    for a in sva_ids(&store, &run) {
        assert!(validate_artifact(&a, &source).ok);
        let chain = trace_lineage(a.id(), &source).unwrap();
        let kinds: Vec<ArtifactKind> = chain.iter().map(|c| c.kind()).collect();
        assert_eq!(
            kinds,
            vec![
                ArtifactKind::SvaAssertion,
                ArtifactKind::Checkpoint,
                ArtifactKind::FeatureList,
                ArtifactKind::VerificationPlan,
                ArtifactKind::DesignSpec
            ]
        );
        let PipelineArtifact::SvaAssertion(s) = &a else { unreachable!() };
        assert_eq!(s.lineage.len(), 4);
        assert!(s.semantic_warnings.is_empty());
    }
    for stage in Stage::ALL {
        let rec = run.stage(stage);
        for id in &rec.artifacts {
            let i = rec.provenance[id];
            assert!(i < rec.responses.len());
        }
    }
}

#[test]
fn resumes_without_repeating_done_stages() {
    let (spec, config, runtime) = toy();
    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions {
        run_id: Some("resume-me".into()),
        stop_after: Some(Stage::Features),
    };
    {
        let store = FileStore::open(dir.path()).unwrap();
        let run = run_pipeline(&spec, &config, &runtime, &store, &options).unwrap();
        assert_eq!(run.stage(Stage::Features).status, StageStatus::Done);
        assert_eq!(run.stage(Stage::Checkpoints).status, StageStatus::Pending);
    }
    assert_eq!(runtime.invocation_count(), 2);
    let store = FileStore::open(dir.path()).unwrap();
    let before = runtime.invocation_count();
    let run = resume_pipeline("resume-me", &config, &runtime, &store, None).unwrap();
    assert_eq!(run.status(), StageStatus::Done);
    assert_eq!(runtime.invocation_count() - before, 3 + 5);

    // a finished run makes no further calls
    let before = runtime.invocation_count();
    let again = run_pipeline(&spec, &config, &runtime, &store, &RunOptions {
        run_id: Some("resume-me".into()),
        stop_after: None,
    })
    .unwrap();
    assert_eq!(runtime.invocation_count(), before);
    assert_eq!(again.stage_artifacts(), run.stage_artifacts());
}

#[test]
fn invalid_spec_makes_no_calls() {
    let (mut spec, config, runtime) = toy();
    spec.body = "  ".into();
    let store = MemoryStore::new();
    let err = run_pipeline(&spec, &config, &runtime, &store, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::InvalidSpec(_)));
    assert_eq!(runtime.invocation_count(), 0);
}

fn scripted(responses: serde_json::Value) -> (PipelineConfig, AgentRuntime) {
    let mut runtime = AgentRuntime::new(2);
    let file = ScenarioFile::from_json_str(&json!({"responses": responses}).to_string()).unwrap();
    runtime.register_scenarios("s", file);
    (PipelineConfig::scripted("s"), runtime)
}

fn small_spec() -> DesignSpec {
    serde_json::from_value(json!({
        "title": "Tiny",
        "body": "One request line and one grant line.",
        "port_table": [
            {"name": "a", "direction": "in", "width": 1, "description": ""},
            {"name": "b", "direction": "out", "width": 1, "description": ""}
        ]
    }))
    .unwrap()
}

const PLAN: &str = r#"{"sections":[{"title":"Main","function_summary":"b follows a","signal_relations":["`b` after `a`"]}],"signal_table":[{"name":"a","direction":"in","width":1,"description":""},{"name":"b","direction":"out","width":1,"description":""}]}"#;

#[test]
fn repair_round_recovers_then_exhaustion_fails() {
    let (config, runtime) = scripted(json!({
        "tiny/plan": ["Sorry, I cannot produce JSON today.", PLAN],
        "tiny/features": "still thinking"
    }));
    let store = MemoryStore::new();
    let run = run_pipeline(&small_spec(), &config, &runtime, &store, &RunOptions::default()).unwrap();
    let plan = run.stage(Stage::Plan);
    assert_eq!(plan.status, StageStatus::Done);
    assert_eq!(plan.responses.len(), 2);
    assert_eq!(plan.provenance[&plan.artifacts[0]], 1);

    let features = run.stage(Stage::Features);
    assert_eq!(features.status, StageStatus::Failed);
    assert_eq!(features.responses.len(), 3);
    assert!(features.error.as_deref().unwrap().contains("no document block"));
    assert_eq!(run.status(), StageStatus::Failed);
    assert_eq!(run.stage(Stage::Checkpoints).status, StageStatus::Pending);
}

#[test]
fn assertion_stage_keeps_malformed_assertions() {
    let features = r#"{"features":[{"feature_id":"F1","title":"t","description":"d","signals":["a","b"],"source_section":"Main"}]}"#;
    let checkpoints = r#"{"checkpoints":[{"description":"b after a","signals":["a","b"],"trigger":"a","expected":"b","timing":"next cycle"}]}"#;
    let svas = r#"{"assertions":["assert property (@(posedge clk) a |=> b);","assert property (@(posedge clk) a |=> );","assert property (@(posedge clk) a |-> zz);"]}"#;
    let (config, runtime) = scripted(json!({
        "tiny/plan": PLAN,
        "tiny/features": features,
        "tiny/checkpoints/F1": checkpoints,
        "tiny/svas/F1/0": svas
    }));
    let store = MemoryStore::new();
    let run = run_pipeline(&small_spec(), &config, &runtime, &store, &RunOptions::default()).unwrap();
    assert_eq!(run.status(), StageStatus::Done);
    let svas: Vec<_> = sva_ids(&store, &run)
        .into_iter()
        .map(|a| match a {
            PipelineArtifact::SvaAssertion(s) => s,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(svas.iter().map(|s| s.syntax_ok).collect::<Vec<_>>(), vec![true, false, true]);
    assert!(svas[2].semantic_warnings[0].contains("zz"));
    assert!((run.recorded_spr().unwrap() - 200.0 / 3.0).abs() < 1e-9);
}

#[test]
fn fanout_limit_truncates_with_warning() {
    let many: Vec<String> = (0..6)
        .map(|i| format!("assert property (@(posedge clk) a |-> ##{i} b);"))
        .collect();
    let (config, runtime) = scripted(json!({
        "tiny/plan": PLAN,
        "tiny/features": r#"{"features":[{"feature_id":"F1","title":"t","description":"d","signals":["a"],"source_section":"Main"},{"feature_id":"F2","title":"t","description":"d","signals":["nope"],"source_section":"Main"}]}"#,
        "tiny/checkpoints/F1": r#"{"checkpoints":[{"description":"x","signals":["a"],"trigger":"a","expected":"b","timing":"later"}]}"#,
        "tiny/svas/F1/0": json!({"assertions": many}).to_string()
    }));
    let store = MemoryStore::new();
    let run = run_pipeline(&small_spec(), &config, &runtime, &store, &RunOptions::default()).unwrap();
    assert_eq!(run.status(), StageStatus::Done);
    // F2 references an unknown signal and is dropped; F1 survives
    assert!(run.stage(Stage::Features).warnings.iter().any(|w| w.contains("F2")));
    assert_eq!(run.stage(Stage::Svas).artifacts.len(), 4);
    assert!(run.stage(Stage::Svas).warnings.iter().any(|w| w.contains("first 4 of 6")));
}

#[test]
fn run_stage_rejects_wrong_input_kind() {
    let (config, runtime) = scripted(json!({}));
    let store = MemoryStore::new();
    let spec = PipelineArtifact::DesignSpec(small_spec()).seal();
    store.put_artifact(&spec).unwrap();
    let env = StageEnv::new(&runtime, &store);
    let err = run_stage(&config.stage_config(Stage::Svas), &spec, &env).unwrap_err();
    assert!(err.message.contains("expects a checkpoint"));
    assert_eq!(runtime.invocation_count(), 0);
}
