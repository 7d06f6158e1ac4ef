use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{normalize_text, pretty, BridgeError, Candidate, CandidatePayload, GoldenItem, Method, Origin, ValidationOutcome};
use crate::ir::{Feature, PipelineArtifact};
use crate::util::sha256_hex;

pub const DEFAULT_VAL_PERCENT: u32 = 5;

const FEATURE_INSTRUCTION: &str =
    "Extract one individually checkable feature from the verification plan. Name its source section and the plan signals it involves.";
const CHECKPOINT_INSTRUCTION: &str =
    "Write one verification checkpoint for the feature: the trigger, the expected response and the timing between them.";
const SVA_INSTRUCTION: &str =
    "Write one SystemVerilog concurrent assertion, clocked on posedge clk, that implements the checkpoint.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLineage {
    pub golden_ref: String,
    pub candidate_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub method: Method,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    /// Pipeline stage the record teaches: features, checkpoints or svas.
    pub stage: String,
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub cot: String,
    pub lineage: RecordLineage,
    pub validation: ValidationSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub val_percent: u32,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub records: Vec<DatasetRecord>,
    pub manifest: SplitManifest,
    /// Accepted candidates whose record duplicated an earlier one.
    #[serde(default)]
    pub duplicates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub val_percent: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            val_percent: DEFAULT_VAL_PERCENT,
        }
    }
}

fn feature_doc(f: &Feature) -> String {
    pretty(f)
}

fn checkpoint_doc(c: &crate::ir::Checkpoint) -> String {
    pretty(&serde_json::json!({
        "description": c.description,
        "signals": c.signals,
        "trigger": c.trigger,
        "expected": c.expected,
        "timing": c.timing,
    }))
}

/// (stage, instruction, input, output) for an accepted candidate.
fn qa(golden: &GoldenItem, candidate: &Candidate) -> Option<(&'static str, &'static str, String, String)> {
    match (&golden.payload, &candidate.payload) {
        (PipelineArtifact::VerificationPlan(plan), CandidatePayload::Feature(f)) => Some((
            "features",
            FEATURE_INSTRUCTION,
            pretty(&serde_json::json!({"sections": plan.sections, "signal_table": plan.signal_table})),
            feature_doc(f),
        )),
        (PipelineArtifact::FeatureList(list), CandidatePayload::Checkpoint(c)) => {
            let fid = c.feature_ref.as_ref()?.feature_id.as_str();
            let feature = list.features.iter().find(|f| f.feature_id == fid)?;
            Some(("checkpoints", CHECKPOINT_INSTRUCTION, feature_doc(feature), checkpoint_doc(c)))
        }
        // The checkpoint was derived from the golden assertion; the record
        // teaches the forward direction, checkpoint to assertion.
        (PipelineArtifact::SvaAssertion(s), CandidatePayload::Checkpoint(c)) => {
            Some(("svas", SVA_INSTRUCTION, checkpoint_doc(c), s.source_text.clone()))
        }
        _ => None,
    }
}

fn method_name(m: &Method) -> String {
    match m {
        Method::Direct => "direct schema check".into(),
        Method::Bridged => "bridged assertion check".into(),
        Method::ReverseK { k } => format!("reverse generation by {k} agents"),
        Method::Expert => "expert review".into(),
    }
}

/// Reasoning text rendered from the recorded evidence.
fn render_cot(golden: &GoldenItem, candidate: &Candidate, outcome: &ValidationOutcome) -> String {
    let mut cot = String::new();
    let reviewer = golden.provenance.as_ref().map_or("an expert", |p| p.reviewer.as_str());
    let _ = writeln!(
        cot,
        "Source: golden {} item {}, verified by {reviewer}.",
        golden.task, golden.id
    );
    match &candidate.origin {
        Origin::Generated => {
            let _ = writeln!(cot, "The answer was derived directly from that source.");
        }
        Origin::Augmented { gap } => {
            let _ = writeln!(cot, "The answer was added to cover {}.", gap.describe());
        }
    }
    let _ = writeln!(cot, "It was checked by {}:", method_name(&outcome.method));
    for (i, step) in outcome.evidence.iter().enumerate() {
        let _ = writeln!(cot, "{}. {}: {}.", i + 1, step.description, step.result);
    }
    let _ = write!(cot, "Every check passed, so the answer is accepted.");
    cot
}

fn record_id(instruction: &str, input: &str, output: &str) -> String {
    let key = format!(
        "{}\u{0}{}\u{0}{}",
        normalize_text(instruction),
        normalize_text(input),
        normalize_text(output)
    );
    format!("rec-{}", &sha256_hex(key.as_bytes())[..16])
}

fn in_val(seed: u64, id: &str, val_percent: u32) -> bool {
    let digest = sha256_hex(format!("{seed}:{id}").as_bytes());
    let bucket = u64::from_str_radix(&digest[..8], 16).expect("hex") % 100;
    bucket < u64::from(val_percent)
}

/// One record per accepted candidate, deduplicated by normalized content,
/// with a seeded train/validation split. Refuses while any candidate lacks
/// a resolved outcome.
pub fn build_dataset(
    goldens: &[GoldenItem],
    candidates: &[Candidate],
    outcomes: &[ValidationOutcome],
    cfg: &DatasetConfig,
) -> Result<Dataset, BridgeError> {
    if cfg.val_percent > 100 {
        return Err(BridgeError::InvalidConfig("val_percent must be at most 100".into()));
    }
    let by_candidate: BTreeMap<&str, &ValidationOutcome> =
        outcomes.iter().map(|o| (o.candidate_ref.as_str(), o)).collect();
    let pending: Vec<String> = candidates
        .iter()
        .filter(|c| !by_candidate.contains_key(c.id.as_str()))
        .map(|c| c.id.clone())
        .collect();
    if !pending.is_empty() {
        return Err(BridgeError::Pending(pending));
    }
    let goldens: BTreeMap<&str, &GoldenItem> = goldens.iter().map(|g| (g.id.as_str(), g)).collect();
    let mut records = Vec::new();
    let mut duplicates = Vec::new();
    let mut seen = HashSet::new();
    for c in candidates {
        let outcome = by_candidate[c.id.as_str()];
        if !outcome.is_positive() {
            continue;
        }
        let golden = goldens.get(c.golden_ref.as_str()).ok_or_else(|| BridgeError::Schema {
            id: c.id.clone(),
            detail: format!("golden item `{}` is missing", c.golden_ref),
        })?;
        let Some((stage, instruction, input, output)) = qa(golden, c) else {
            return Err(BridgeError::Schema {
                id: c.id.clone(),
                detail: "payload does not fit the golden task".into(),
            });
        };
        let id = record_id(instruction, &input, &output);
        if !seen.insert(id.clone()) {
            duplicates.push(c.id.clone());
            continue;
        }
        records.push(DatasetRecord {
            id,
            stage: stage.to_string(),
            instruction: instruction.to_string(),
            input,
            output,
            cot: render_cot(golden, c, outcome),
            lineage: RecordLineage {
                golden_ref: c.golden_ref.clone(),
                candidate_ref: c.id.clone(),
            },
            validation: ValidationSummary {
                method: outcome.method.clone(),
                summary: format!("{} passed", method_name(&outcome.method)),
            },
        });
    }
    let (val, train): (Vec<&DatasetRecord>, Vec<&DatasetRecord>) =
        records.iter().partition(|r| in_val(cfg.seed, &r.id, cfg.val_percent));
    let manifest = SplitManifest {
        seed: cfg.seed,
        val_percent: cfg.val_percent,
        train: train.iter().map(|r| r.id.clone()).collect(),
        val: val.iter().map(|r| r.id.clone()).collect(),
    };
    let all_ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let id = format!(
        "ds-{}",
        &sha256_hex(format!("{}:{}", cfg.seed, all_ids.join(",")).as_bytes())[..12]
    );
    Ok(Dataset {
        id,
        records,
        manifest,
        duplicates,
    })
}

/// Write records as JSON lines to `path` and the split manifest next to it
/// as `<stem>.split.json`. Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<PathBuf, BridgeError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in &dataset.records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let stem = path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    let manifest_path = path.with_file_name(format!("{stem}.split.json"));
    std::fs::write(&manifest_path, pretty(&dataset.manifest))?;
    Ok(manifest_path)
}
