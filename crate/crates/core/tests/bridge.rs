mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use assertflow_core::agent::{AgentRuntime, AgentSpec, Backend, ScenarioFile, ScenarioReply};
use assertflow_core::bridge::{
    augment, build_dataset, coverage_gaps, generate_candidates, ingest_golden, refresh_job, replay_outcome,
    synthesize, unanimous, validate_bridged, validate_direct, validate_reverse, write_dataset, BridgeConfig,
    BridgeError, Candidate, CandidatePayload, CandidateStatus, DatasetConfig, DirectMode,
    DirectOutcome, DirectVerifier, EquivConfig, GapKind, GoldenItem, Method, Origin, OutcomeVerdict, RawGolden,
    SanityConfig, SynthJob, Task,
};
use assertflow_core::equiv::EquivVerdict;
use assertflow_core::ir::Feature;
use assertflow_core::review::{ReviewError, ReviewQueue, ReviewVerdict};
use assertflow_core::store::{MemoryStore, Store};
use assertflow_core::sva::parse_assertion;
use common::oracle::{brute_force_equiv, convert};
use serde_json::json;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bridge").join(name)
}

fn raw_goldens() -> Vec<RawGolden> {
    serde_json::from_str(&std::fs::read_to_string(fixture("golden.json")).unwrap()).unwrap()
}

fn goldens() -> Vec<GoldenItem> {
    ingest_golden(&raw_goldens(), "alice").unwrap()
}

fn golden(id: &str) -> GoldenItem {
    goldens().into_iter().find(|g| g.id == id).unwrap()
}

fn loaded() -> (BridgeConfig, AgentRuntime) {
    BridgeConfig::load(&fixture("bridge.json")).unwrap()
}

fn scripted(name: &str, replies: &[(&str, &str)]) -> (AgentSpec, AgentRuntime) {
    let mut runtime = AgentRuntime::default();
    let responses: BTreeMap<String, ScenarioReply> = replies
        .iter()
        .map(|(k, v)| (k.to_string(), ScenarioReply::One(v.to_string())))
        .collect();
    runtime.register_scenarios(
        "s",
        ScenarioFile {
            description: String::new(),
            responses,
        },
    );
    let agent = AgentSpec::new(
        name,
        "",
        Backend::ScriptedMock {
            scenario_ref: "s".into(),
        },
    );
    (agent, runtime)
}

fn svas_reply(body: &str) -> String {
    format!("```json\n{{\"assertions\": [\"assert property (@(posedge clk) {body});\"]}}\n```")
}

fn feature(id: &str, section: &str, signals: &[&str]) -> Feature {
    Feature {
        feature_id: id.into(),
        title: format!("feature {id}"),
        description: format!("behaviour {id} of the handshake"),
        category: "protocol".into(),
        signals: signals.iter().map(|s| s.to_string()).collect(),
        source_section: section.into(),
    }
}

fn sva_golden(id: &str, body: &str) -> GoldenItem {
    let raw = RawGolden {
        id: Some(id.into()),
        task: Task::SvaToCheckpoint,
        artifact: json!(format!("assert property (@(posedge clk) {body});")),
        provenance: Some("signoff".into()),
        signal_table: Vec::new(),
    };
    ingest_golden(&[raw], "alice").unwrap().remove(0)
}

/// A checkpoint candidate for `golden` made by the fixture generator.
fn checkpoint_for(golden: &GoldenItem) -> Candidate {
    let (cfg, runtime) = loaded();
    let mut g = golden.clone();
    g.id = "hs_sva1".into();
    let mut c = generate_candidates(&g, &cfg.agents.generator, &runtime, 0).unwrap().candidates.remove(0);
    c.golden_ref = golden.id.clone();
    c.id = format!("{}.0", golden.id);
    c
}

#[test]
fn ingest_seals_and_records_provenance() {
    let gs = goldens();
    assert_eq!(gs.len(), 4);
    for g in &gs {
        let p = g.provenance.as_ref().unwrap();
        assert!(p.expert_verified);
        assert_eq!(p.reviewer, "alice");
        assert!(!g.payload.id().is_empty());
    }
    assert_eq!(gs[2].signal_names(), vec!["clk", "req", "ack"]);
    // Ids are derived from content when omitted.
    let mut raw = raw_goldens();
    raw[0].id = None;
    let a = ingest_golden(&raw[..1], "bob").unwrap();
    let b = ingest_golden(&raw[..1], "bob").unwrap();
    assert_eq!(a[0].id, b[0].id);
    assert!(a[0].id.starts_with("golden-"));
}

#[test]
fn ingest_refuses_bad_input() {
    let mut raw = raw_goldens();
    raw[1].provenance = None;
    assert!(matches!(ingest_golden(&raw, "alice"), Err(BridgeError::Unverified(id)) if id == "hs_features"));
    assert!(matches!(ingest_golden(&raw_goldens(), " "), Err(BridgeError::MissingReviewer)));
    let mut raw = raw_goldens();
    raw[2].artifact = json!("assert property (@(posedge clk) req |=> );");
    assert!(matches!(ingest_golden(&raw, "alice"), Err(BridgeError::Schema { id, .. }) if id == "hs_sva1"));
    let mut raw = raw_goldens();
    raw[0].task = Task::FeatureToCheckpoints;
    assert!(matches!(ingest_golden(&raw, "alice"), Err(BridgeError::Schema { .. })));
    let mut raw = raw_goldens();
    raw[1].id = Some("hs_plan".into());
    assert!(matches!(ingest_golden(&raw, "alice"), Err(BridgeError::Schema { detail, .. }) if detail == "duplicate id"));
}

#[test]
fn unverified_golden_is_refused_downstream() {
    let (cfg, runtime) = loaded();
    let mut g = golden("hs_plan");
    g.provenance = None;
    assert!(matches!(
        generate_candidates(&g, &cfg.agents.generator, &runtime, 0),
        Err(BridgeError::Unverified(_))
    ));
    let store = MemoryStore::new();
    assert!(matches!(
        synthesize(vec![g], &cfg, &runtime, &store, None),
        Err(BridgeError::Unverified(_))
    ));
    assert_eq!(runtime.invocation_count(), 0);
}

#[test]
fn generation_drops_invalid_items() {
    let (cfg, runtime) = loaded();
    let set = generate_candidates(&golden("hs_plan"), &cfg.agents.generator, &runtime, 0).unwrap();
    let ids: Vec<&str> = set.candidates.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, vec!["hs_plan.0", "hs_plan.1"]);
    assert!(set.warnings.iter().any(|w| w.contains("F3") && w.contains("gnt")), "{:?}", set.warnings);
    assert!(set.candidates.iter().all(|c| c.status == CandidateStatus::Pending));
    assert_eq!(set.responses.len(), 1);

    let set = generate_candidates(&golden("hs_features"), &cfg.agents.generator, &runtime, 0).unwrap();
    assert_eq!(set.candidates.len(), 2);
    for c in &set.candidates {
        let CandidatePayload::Checkpoint(cp) = &c.payload else { panic!() };
        assert_eq!(cp.feature_ref.as_ref().unwrap().feature_id, "F1");
    }
}

#[test]
fn coverage_gaps_follow_candidates() {
    let (cfg, runtime) = loaded();
    let g = golden("hs_plan");
    let set = generate_candidates(&g, &cfg.agents.generator, &runtime, 0).unwrap();
    let gaps = coverage_gaps(&g, &set.candidates);
    let got: Vec<(GapKind, &str)> = gaps.iter().map(|x| (x.kind, x.element.as_str())).collect();
    assert_eq!(got, vec![(GapKind::Section, "Errors"), (GapKind::Signal, "err")]);

    let all = coverage_gaps(&g, &[]);
    assert_eq!(all.len(), 2 + 3);

    let full = Candidate::new(
        &g,
        9,
        CandidatePayload::Feature(feature("F9", "Errors", &["req", "ack", "err"])),
        Origin::Generated,
    );
    let mut covered = set.candidates.clone();
    covered.push(full);
    assert!(coverage_gaps(&g, &covered).is_empty());
    assert!(coverage_gaps(&golden("hs_sva1"), &[]).is_empty());
}

#[test]
fn augmentation_fills_gaps_once() {
    let (cfg, runtime) = loaded();
    let g = golden("hs_plan");
    let set = generate_candidates(&g, &cfg.agents.generator, &runtime, 0).unwrap();
    let before = runtime.invocation_count();
    let r = augment(&g, &set, &cfg.agents.generator, &runtime).unwrap();
    assert_eq!(r.invocations, 2);
    assert_eq!(runtime.invocation_count() - before, 2);
    // Both gaps return the same feature up to case and spacing.
    assert_eq!(r.added, 1);
    assert_eq!(r.set.candidates.len(), 3);
    let last = r.set.candidates.last().unwrap();
    assert!(matches!(&last.origin, Origin::Augmented { gap } if gap.kind == GapKind::Section));
    assert!(r.set.warnings.iter().any(|w| w.contains("duplicate")));
    assert!(coverage_gaps(&g, &r.set.candidates).is_empty());

    let again = augment(&g, &r.set, &cfg.agents.generator, &runtime).unwrap();
    assert_eq!((again.invocations, again.added), (0, 0));
    assert_eq!(again.set, r.set);
}

#[test]
fn reverse_accepts_equivalent_regenerations() {
    let g = golden("hs_sva1");
    let c = checkpoint_for(&g);
    let (cfg, runtime) = loaded();
    let o = validate_reverse(&g, &c, 3, &EquivConfig::default(), &cfg.agents.reverse, &runtime).unwrap();
    assert_eq!(o.verdict, OutcomeVerdict::Positive, "{o:?}");
    assert_eq!(o.method, Method::ReverseK { k: 3 });
    assert_eq!(o.evidence.len(), 3);
    assert!(o.evidence[1].inputs[1].contains("##1"));
    assert!(unanimous(&o));
    assert_eq!(replay_outcome(&o), Ok(true));
}

#[test]
fn reverse_rejects_on_one_dissent() {
    let g = golden("fifo_sva1");
    let (cfg, runtime) = loaded();
    let set = generate_candidates(&g, &cfg.agents.generator, &runtime, 0).unwrap();
    let o = validate_reverse(&g, &set.candidates[0], 3, &EquivConfig::default(), &cfg.agents.reverse, &runtime)
        .unwrap();
    assert_eq!(o.verdict, OutcomeVerdict::Negative);
    let verdicts: Vec<Option<EquivVerdict>> = o.evidence.iter().map(|s| s.equivalence).collect();
    assert_eq!(
        verdicts,
        vec![Some(EquivVerdict::Equivalent), Some(EquivVerdict::Equivalent), Some(EquivVerdict::Inequivalent)]
    );
    assert_eq!(o.reason.as_deref(), Some("1 of 3 regenerated assertions are not equivalent to the golden one"));
    assert!(unanimous(&o));
    assert_eq!(replay_outcome(&o), Ok(true));
    // k=2 never asks the dissenting member.
    let o = validate_reverse(&g, &set.candidates[0], 2, &EquivConfig::default(), &cfg.agents.reverse, &runtime)
        .unwrap();
    assert!(o.is_positive());
}

#[test]
fn reverse_counterexample_matches_oracle() {
    let g = sva_golden("g", "a |-> ##1 b");
    let c = checkpoint_for(&g);
    let (agent, runtime) = scripted("rev", &[("g.0/reverse", &svas_reply("a |-> b"))]);
    let o = validate_reverse(&g, &c, 1, &EquivConfig { bound: Some(4), ..Default::default() }, &agent, &runtime)
        .unwrap();
    assert_eq!(o.verdict, OutcomeVerdict::Negative);
    let check = o.evidence[0].check.as_ref().unwrap();
    let cex = check.result.counterexample.as_ref().unwrap();
    let a = parse_assertion(&check.golden).unwrap();
    let b = parse_assertion(&check.candidate).unwrap();
    let names: Vec<&str> = cex.signals.iter().map(String::as_str).collect();
    let want = brute_force_equiv(&a, &b, &names, 4).unwrap();
    let rows: Vec<Vec<bool>> = cex.cycles.iter().map(|r| r.iter().map(|v| *v != 0).collect()).collect();
    assert_eq!(rows, want.rows);
    assert_eq!(cex.attempt_cycle, want.attempt);
    assert_eq!((convert(cex.verdict_a), convert(cex.verdict_b)), (want.a, want.b));
}

#[test]
fn reverse_syntax_error_is_negative() {
    let g = sva_golden("g", "a |=> b");
    let c = checkpoint_for(&g);
    let (agent, runtime) = scripted("rev", &[("g.0/reverse", &svas_reply("a |=> "))]);
    let o = validate_reverse(&g, &c, 1, &EquivConfig::default(), &agent, &runtime).unwrap();
    assert_eq!(o.verdict, OutcomeVerdict::Negative);
    assert!(!o.infrastructure_failure);
    assert!(o.evidence[0].result.starts_with("syntax"), "{}", o.evidence[0].result);
    assert_eq!(o.evidence[0].equivalence, None);
}

#[test]
fn reverse_group_failure_is_flagged() {
    let g = sva_golden("g", "a |=> b");
    let c = checkpoint_for(&g);
    // Only member 0 has a reply; the others fail to answer.
    let (agent, runtime) = scripted("rev", &[("g.0/reverse#0", &svas_reply("a |=> b"))]);
    let o = validate_reverse(&g, &c, 3, &EquivConfig::default(), &agent, &runtime).unwrap();
    assert_eq!(o.verdict, OutcomeVerdict::Negative);
    assert!(o.infrastructure_failure);
    assert_eq!(o.evidence.len(), 3);
    assert_eq!(o.evidence[0].equivalence, Some(EquivVerdict::Equivalent));
    assert!(o.evidence[1].infrastructure && o.evidence[2].infrastructure);
    assert_eq!(o.reason.as_deref(), Some("2 of 3 reverse agents failed to answer"));
}

#[test]
fn bridged_validation() {
    let (cfg, runtime) = loaded();
    let g = golden("hs_features");
    let set = generate_candidates(&g, &cfg.agents.generator, &runtime, 0).unwrap();
    let names = g.signal_names();
    let sanity = SanityConfig::default();
    let ok = validate_bridged(&set.candidates[0], &names, &cfg.agents.bridge, &runtime, &sanity).unwrap();
    assert!(ok.is_positive(), "{ok:?}");
    assert_eq!(ok.evidence.len(), 2);
    let trivial = validate_bridged(&set.candidates[1], &names, &cfg.agents.bridge, &runtime, &sanity).unwrap();
    assert_eq!(trivial.reason.as_deref(), Some("trivially true"));

    let c = &set.candidates[0];
    for (body, reason) in [("req |=> ", "syntax"), ("req && !req", "trivially false")] {
        let key = format!("{}/bridge", c.id);
        let (agent, runtime) = scripted("bridge", &[(&key, &svas_reply(body))]);
        let o = validate_bridged(c, &names, &agent, &runtime, &sanity).unwrap();
        assert_eq!(o.verdict, OutcomeVerdict::Negative);
        assert_eq!(o.reason.as_deref(), Some(reason));
    }
}

#[test]
fn direct_schema_and_expert_review() {
    let g = golden("hs_plan");
    let good = Candidate::new(&g, 0, CandidatePayload::Feature(feature("F1", "Handshake", &["req"])), Origin::Generated);
    let bad = Candidate::new(&g, 1, CandidatePayload::Feature(feature("F2", "Handshake", &["gnt"])), Origin::Generated);
    let mut c = good.clone();
    let DirectOutcome::Resolved(o) = validate_direct(&g, &mut c, DirectVerifier::Schema).unwrap() else { panic!() };
    assert!(o.is_positive());
    let mut c = bad.clone();
    let DirectOutcome::Resolved(o) = validate_direct(&g, &mut c, DirectVerifier::Schema).unwrap() else { panic!() };
    assert!(!o.is_positive());
    assert!(o.reason.unwrap().contains("gnt"));

    let store: Arc<dyn Store> = Arc::new(MemoryStore::new());
    let queue = ReviewQueue::open(store.clone()).unwrap();
    let (mut a, mut r) = (good.clone(), bad.clone());
    let DirectOutcome::Pending { item_id: ia } = validate_direct(&g, &mut a, DirectVerifier::Expert(&queue)).unwrap()
    else {
        panic!()
    };
    let DirectOutcome::Pending { item_id: ir } = validate_direct(&g, &mut r, DirectVerifier::Expert(&queue)).unwrap()
    else {
        panic!()
    };
    assert!(matches!(&a.status, CandidateStatus::ExpertPending { item_id } if *item_id == ia));
    assert!(assertflow_core::bridge::resolve_expert(&mut a, &queue).unwrap().is_none());

    queue.decide(&ia, ReviewVerdict::Approve, "carol", None).unwrap();
    queue.decide(&ir, ReviewVerdict::Reject, "carol", Some("wrong signal".into())).unwrap();
    let conflict = queue.decide(&ia, ReviewVerdict::Reject, "dave", None).unwrap_err();
    assert!(matches!(conflict, ReviewError::Conflict { existing, .. } if existing.verdict == ReviewVerdict::Approve));

    let oa = assertflow_core::bridge::resolve_expert(&mut a, &queue).unwrap().unwrap();
    assert_eq!((oa.method.clone(), oa.verdict, oa.reviewer.as_deref()), (Method::Expert, OutcomeVerdict::Positive, Some("carol")));
    assert_eq!(a.status, CandidateStatus::Accepted);
    let or = assertflow_core::bridge::resolve_expert(&mut r, &queue).unwrap().unwrap();
    assert_eq!(or.reason.as_deref(), Some("wrong signal"));
    assert!(matches!(r.status, CandidateStatus::Rejected { .. }));
    // Resolved candidates cannot move back.
    assert!(matches!(a.transition(CandidateStatus::Pending), Err(BridgeError::Transition { .. })));
}

fn plan_population(n_good: usize, n_bad: usize) -> (GoldenItem, Vec<Candidate>, Vec<assertflow_core::bridge::ValidationOutcome>) {
    let g = golden("hs_plan");
    let mut candidates = Vec::new();
    let mut outcomes = Vec::new();
    for i in 0..n_good + n_bad {
        let signals: &[&str] = if i < n_good { &["req", "ack"] } else { &["gnt"] };
        let mut c = Candidate::new(
            &g,
            i,
            CandidatePayload::Feature(feature(&format!("F{i}"), "Handshake", signals)),
            Origin::Generated,
        );
        let DirectOutcome::Resolved(o) = validate_direct(&g, &mut c, DirectVerifier::Schema).unwrap() else {
            panic!()
        };
        assertflow_core::bridge::apply_outcome(&mut c, &o).unwrap();
        candidates.push(c);
        outcomes.push(o);
    }
    (g, candidates, outcomes)
}

#[test]
fn dataset_keeps_only_accepted() {
    let (g, candidates, outcomes) = plan_population(10, 3);
    let ds = build_dataset(std::slice::from_ref(&g), &candidates, &outcomes, &DatasetConfig::default()).unwrap();
    assert_eq!(ds.records.len(), 10);
    assert!(ds.records.iter().all(|r| r.stage == "features" && r.lineage.golden_ref == "hs_plan"));
    assert!(ds.records[0].cot.contains("verified by alice"));
    let mut split: Vec<String> = ds.manifest.train.iter().chain(&ds.manifest.val).cloned().collect();
    split.sort();
    let mut ids: Vec<String> = ds.records.iter().map(|r| r.id.clone()).collect();
    ids.sort();
    assert_eq!(split, ids);

    let again = build_dataset(std::slice::from_ref(&g), &candidates, &outcomes, &DatasetConfig::default()).unwrap();
    assert_eq!(again, ds);
    let all_val = build_dataset(&[g], &candidates, &outcomes, &DatasetConfig { seed: 1, val_percent: 100 }).unwrap();
    assert_eq!(all_val.manifest.val.len(), 10);
    assert_ne!(all_val.id, ds.id);
}

#[test]
fn dataset_dedups_and_refuses_pending() {
    let (g, mut candidates, mut outcomes) = plan_population(2, 0);
    let mut twin = candidates[0].clone();
    twin.id = "hs_plan.7".into();
    if let CandidatePayload::Feature(f) = &mut twin.payload {
        f.description = f.description.to_uppercase();
    }
    let mut o = outcomes[0].clone();
    o.candidate_ref = twin.id.clone();
    candidates.push(twin);
    outcomes.push(o);
    let ds = build_dataset(std::slice::from_ref(&g), &candidates, &outcomes, &DatasetConfig::default()).unwrap();
    assert_eq!(ds.records.len(), 2);
    assert_eq!(ds.duplicates, vec!["hs_plan.7"]);

    outcomes.pop();
    let err = build_dataset(&[g], &candidates, &outcomes, &DatasetConfig::default()).unwrap_err();
    assert!(matches!(err, BridgeError::Pending(v) if v == vec!["hs_plan.7"]));
}

#[test]
fn synthesis_end_to_end() {
    let (cfg, runtime) = loaded();
    let store = MemoryStore::new();
    let job = synthesize(goldens(), &cfg, &runtime, &store, None).unwrap();
    let status: Vec<(&str, bool)> = job
        .candidates
        .iter()
        .map(|c| (c.id.as_str(), c.status == CandidateStatus::Accepted))
        .collect();
    assert_eq!(
        status,
        vec![
            ("hs_plan.0", true),
            ("hs_plan.1", true),
            ("hs_plan.2", true),
            ("hs_features.0", true),
            ("hs_features.1", false),
            ("hs_sva1.0", true),
            ("fifo_sva1.0", false),
        ]
    );
    assert!(job.pending().is_empty());
    assert_eq!(job.outcomes.len(), 7);
    // 1 plan + 2 gaps, 1 feature, 2 bridges, 2 x (1 generate + 3 reverse)
    assert_eq!(job.invocations, 3 + 1 + 2 + 8);
    assert_eq!(SynthJob::load(&store, &job.id).unwrap().unwrap(), job);

    let ds = build_dataset(&job.goldens, &job.candidates, &job.outcomes, &DatasetConfig::default()).unwrap();
    let stages: Vec<&str> = ds.records.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(stages, vec!["features", "features", "features", "checkpoints", "svas"]);
    let sva = ds.records.last().unwrap();
    assert_eq!(sva.output, "assert property (@(posedge clk) req |=> ack);");
    for o in &job.outcomes {
        assert_eq!(replay_outcome(o), Ok(true), "{}", o.candidate_ref);
    }

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, &dir.path().join("train.jsonl")).unwrap();
    assert_eq!(manifest.file_name().unwrap(), "train.split.json");
    let lines = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 5);
}

#[test]
fn synthesis_with_expert_review() {
    let (mut cfg, runtime) = loaded();
    cfg.direct = DirectMode::Expert;
    let store: Arc<dyn Store> = Arc::new(MemoryStore::new());
    let queue = ReviewQueue::open(store.clone()).unwrap();
    let plan = vec![golden("hs_plan")];
    assert!(matches!(
        synthesize(plan.clone(), &cfg, &runtime, store.as_ref(), None),
        Err(BridgeError::InvalidConfig(_))
    ));
    let mut job = synthesize(plan, &cfg, &runtime, store.as_ref(), Some(&queue)).unwrap();
    assert_eq!(job.pending().len(), 3);
    assert!(matches!(
        build_dataset(&job.goldens, &job.candidates, &job.outcomes, &DatasetConfig::default()),
        Err(BridgeError::Pending(v)) if v.len() == 3
    ));
    for (i, item) in queue.list(None).unwrap().iter().enumerate() {
        let verdict = if i == 0 { ReviewVerdict::Reject } else { ReviewVerdict::Approve };
        queue.decide(&item.item_id, verdict, "carol", None).unwrap();
    }
    assert_eq!(refresh_job(&mut job, &queue, store.as_ref()).unwrap(), 3);
    assert!(job.pending().is_empty());
    let ds = build_dataset(&job.goldens, &job.candidates, &job.outcomes, &DatasetConfig::default()).unwrap();
    assert_eq!(ds.records.len(), 2);
    assert_eq!(SynthJob::load(store.as_ref(), &job.id).unwrap().unwrap(), job);
}
