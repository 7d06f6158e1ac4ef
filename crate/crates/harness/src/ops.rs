//! Operations shared by the CLI and the HTTP service.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use assertflow_core::agent::AgentRuntime;
use assertflow_core::bridge::{
    build_dataset, ingest_golden, refresh_job, synthesize, BridgeConfig, BridgeError, Dataset, DatasetConfig,
    RawGolden, SynthJob, Task, SYNTH_JOBS,
};
use assertflow_core::equiv::{Taxonomy, TraceSuite};
use assertflow_core::ir::{PipelineArtifact, PipelineRun};
use assertflow_core::metrics::{compute_report, evaluate_design, run_assertions, DesignReference, MetricsReport};
use assertflow_core::pipeline::load_run;
use assertflow_core::review::ReviewQueue;
use assertflow_core::store::Store;

pub const DATASETS: &str = "datasets";
pub const DEFAULT_STORE: &str = ".assertflow";

/// Store root from the flag, else `ASSERTFLOW_STORE`, else the default.
pub fn store_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("ASSERTFLOW_STORE").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Lowercase, with runs of other characters turned into `_`.
pub fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Trace suites from a file or from every `.json` file in a directory.
pub fn load_suites(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<TraceSuite>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut suites = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        // Directories may hold other documents; only trace suites count.
        match TraceSuite::from_json_str(&text, taxonomy) {
            Ok(s) => suites.push(s),
            Err(e) if path.is_dir() => tracing::debug!(file = %f.display(), "not a trace suite: {e}"),
            Err(e) => return Err(anyhow!("{}: {e}", f.display())),
        }
    }
    Ok(suites)
}

pub fn get_run(store: &dyn Store, run_id: &str) -> Result<PipelineRun> {
    load_run(store, run_id)?.ok_or_else(|| anyhow!("run `{run_id}` not found"))
}

/// Design name of a run: its spec title as a slug.
pub fn run_design(store: &dyn Store, run: &PipelineRun) -> Result<String> {
    match store.get_artifact(&run.spec_ref)? {
        PipelineArtifact::DesignSpec(s) => Ok(slug(&s.title)),
        other => bail!("run spec `{}` is a {}", run.spec_ref, other.kind().as_str()),
    }
}

/// Metrics for one run against the suite whose `design_ref` matches the
/// run's design, or the only suite given.
pub fn metrics_for_run(store: &dyn Store, run_id: &str, suites: &Path) -> Result<MetricsReport> {
    let taxonomy = Taxonomy::default();
    let run = get_run(store, run_id)?;
    let design = run_design(store, &run)?;
    let all = load_suites(suites, &taxonomy)?;
    let suite = match all.iter().find(|s| s.design_ref == design) {
        Some(s) => s,
        None if all.len() == 1 => &all[0],
        None => bail!("no trace suite for design `{design}` in {}", suites.display()),
    };
    let svas = run_assertions(&run, store)?;
    let reference = DesignReference {
        suite: Some(suite),
        ..Default::default()
    };
    let metrics = evaluate_design(&design, &svas, &reference, &taxonomy)?;
    Ok(compute_report(vec![metrics], &taxonomy, Some(run.run_id)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthRequest {
    pub goldens: Vec<RawGolden>,
    pub reviewer: String,
    /// Only golden items of this task are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

/// Ingest, synthesize and, when nothing waits for review, build the dataset.
pub fn synth(
    request: &SynthRequest,
    config: &BridgeConfig,
    runtime: &AgentRuntime,
    store: &dyn Store,
    queue: Option<&ReviewQueue>,
) -> Result<SynthJob, BridgeError> {
    let raw: Vec<RawGolden> = request
        .goldens
        .iter()
        .filter(|g| request.task.is_none_or(|t| g.task == t))
        .cloned()
        .collect();
    if raw.is_empty() {
        return Err(BridgeError::InvalidConfig("no golden items for the requested task".into()));
    }
    let goldens = ingest_golden(&raw, &request.reviewer)?;
    let mut config = config.clone();
    if let Some(k) = request.k {
        config.k = k;
    }
    let mut job = synthesize(goldens, &config, runtime, store, queue)?;
    finalize_job(&mut job, store)?;
    Ok(job)
}

/// Build and store the dataset of a job with no pending candidates.
pub fn finalize_job(job: &mut SynthJob, store: &dyn Store) -> Result<Option<Dataset>, BridgeError> {
    if !job.pending().is_empty() {
        return Ok(None);
    }
    let dataset = build_dataset(&job.goldens, &job.candidates, &job.outcomes, &DatasetConfig::default())?;
    store.put_record(DATASETS, &dataset.id, &serde_json::to_value(&dataset).expect("serializable"))?;
    job.dataset_id = Some(dataset.id.clone());
    job.save(store)?;
    Ok(Some(dataset))
}

/// Apply posted verdicts to every job still waiting for review.
pub fn refresh_jobs(queue: &ReviewQueue, store: &dyn Store) -> Result<usize, BridgeError> {
    let mut resolved = 0;
    for id in store.list_records(SYNTH_JOBS)? {
        let Some(mut job) = SynthJob::load(store, &id)? else { continue };
        if job.pending().is_empty() {
            continue;
        }
        resolved += refresh_job(&mut job, queue, store)?;
        finalize_job(&mut job, store)?;
    }
    Ok(resolved)
}

pub fn latest_job(store: &dyn Store) -> Result<Option<SynthJob>, BridgeError> {
    let mut best: Option<SynthJob> = None;
    for id in store.list_records(SYNTH_JOBS)? {
        if let Some(job) = SynthJob::load(store, &id)? {
            if best.as_ref().is_none_or(|b| (job.created_ms, &job.id) > (b.created_ms, &b.id)) {
                best = Some(job);
            }
        }
    }
    Ok(best)
}

pub fn get_dataset(store: &dyn Store, id: &str) -> Result<Option<Dataset>> {
    match store.get_record(DATASETS, id)? {
        None => Ok(None),
        Some(v) => Ok(Some(serde_json::from_value(v).with_context(|| format!("stored dataset `{id}`"))?)),
    }
}
