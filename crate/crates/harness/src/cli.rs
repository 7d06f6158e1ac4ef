//! Command-line interface. Exit status 0 on success, 1 on a domain error,
//! 2 on a usage error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use assertflow_core::agent::StochasticErrorModel;
use assertflow_core::bridge::{
    simulate_filter, write_dataset, BridgeConfig, FilterStats, RawGolden, SynthJob, Task, DEFAULT_GTP_FRACTION,
};
use assertflow_core::equiv::{check_equivalence, default_bound, union_signals, EquivMode};
use assertflow_core::ir::{DesignSpec, PipelineRun, Stage};
use assertflow_core::metrics::{emit_report, MetricsReport, ReportFormat};
use assertflow_core::pipeline::{resume_pipeline, run_pipeline, PipelineConfig, RunOptions};
use assertflow_core::review::ReviewQueue;
use assertflow_core::store::{FileStore, Store};
use assertflow_core::sva::{check_syntax, parse_assertion, CompiledAssertion, Trace};

use crate::ops;
use crate::server::{self, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "assertflow", version, about = "Assertion generation, data synthesis and trace checking")]
pub struct Cli {
    /// Store root; defaults to $ASSERTFLOW_STORE, then `.assertflow`.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Base URL of a running service; store-touching commands call its API.
    #[arg(long, global = true)]
    pub remote: Option<String>,
    /// Bearer token for --remote, or the shared token for `serve`.
    #[arg(long, global = true, env = "ASSERTFLOW_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assertion syntax checks and trace evaluation.
    #[command(subcommand)]
    Sva(SvaCommand),
    /// Bounded equivalence of two assertions.
    Equiv(EquivArgs),
    /// Assertion generation pipeline.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Training data synthesis.
    #[command(subcommand)]
    Bridge(BridgeCommand),
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum SvaCommand {
    /// Check every assertion in a file. Statements end at a line ending in
    /// `;` or at a blank line.
    Lint {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Evaluate one assertion on a trace file.
    Eval {
        file: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

#[derive(Debug, Args)]
pub struct EquivArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Comma-separated signal names; defaults to those of both assertions.
    #[arg(long, value_delimiter = ',')]
    signals: Vec<String>,
    /// Longest trace length; defaults to one past the longer horizon.
    #[arg(long)]
    bound: Option<usize>,
    /// Check this many random traces instead of all of them.
    #[arg(long)]
    sample: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Run the four stages for a design spec.
    Run {
        #[arg(long, required_unless_present = "resume")]
        spec: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue a stored run from its first unfinished stage.
        #[arg(long)]
        resume: Option<String>,
        #[arg(long, value_parser = parse_stage)]
        stop_after: Option<Stage>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
pub enum BridgeCommand {
    /// Synthesize and validate candidates from expert-verified inputs.
    Synth {
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long)]
        golden: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reviewer: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Filter precision of the k-agent check on a simulated population.
    SimulateFilter {
        /// A single k or an inclusive range such as `1..5`.
        #[arg(long, default_value = "1..5", value_parser = parse_k_range)]
        k: KRange,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Fraction of ground-truth positive items.
        #[arg(long, default_value_t = DEFAULT_GTP_FRACTION)]
        gtp: f64,
        /// Error model file; the bundled model when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: TableFormat,
    },
    /// Write the dataset of a finished job as JSON lines.
    BuildDataset {
        #[arg(long)]
        out: PathBuf,
        /// Job id; the most recent job when absent.
        #[arg(long)]
        job: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Syntax, functional and coverage metrics of a run.
    Report {
        #[arg(long)]
        run: String,
        /// A trace suite file or a directory of them.
        #[arg(long)]
        suites: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: TableFormat,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long)]
    pipeline_config: Option<PathBuf>,
    #[arg(long)]
    bridge_config: Option<PathBuf>,
    #[arg(long)]
    suites: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange(pub usize, pub usize);

fn parse_k_range(s: &str) -> Result<KRange, String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a count"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let k = parse(s)?;
            (k, k)
        }
    };
    if lo == 0 || hi < lo {
        return Err(format!("`{s}` is not a range of positive counts"));
    }
    Ok(KRange(lo, hi))
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage `{s}`"))
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).ok_or_else(|| format!("unknown task `{s}`"))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn open_store(cli: &Cli) -> Result<Arc<dyn Store>> {
    let root = ops::store_root(cli.store.as_deref());
    Ok(Arc::new(FileStore::open(&root).with_context(|| format!("opening store {}", root.display()))?))
}

/// Statements of a lint file with the line each starts on.
fn split_statements(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            out.extend(current.take());
            continue;
        }
        if current.is_none() && trimmed.starts_with("//") {
            continue;
        }
        let entry = current.get_or_insert_with(|| (i + 1, String::new()));
        if !entry.1.is_empty() {
            entry.1.push('\n');
        }
        entry.1.push_str(line);
        if trimmed.ends_with(';') {
            out.extend(current.take());
        }
    }
    out.extend(current);
    out
}

fn sva_lint(file: &Path, format: Format) -> Result<()> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let statements = split_statements(&text);
    if statements.is_empty() {
        bail!("{}: no assertions", file.display());
    }
    let mut results = Vec::new();
    for (start, source) in &statements {
        let mut report = check_syntax(source);
        for d in &mut report.diagnostics {
            d.line += start - 1;
        }
        results.push(json!({"line": start, "source": source, "ok": report.ok, "diagnostics": report.diagnostics}));
    }
    let failed = results.iter().filter(|r| r["ok"] == false).count();
    match format {
        Format::Json => print_json(&json!({"file": file, "ok": failed == 0, "statements": results})),
        Format::Text => {
            for r in &results {
                for d in r["diagnostics"].as_array().into_iter().flatten() {
                    println!(
                        "{}:{}:{}: {} (at `{}`)",
                        file.display(),
                        d["line"],
                        d["column"],
                        d["message"].as_str().unwrap_or_default(),
                        d["token"].as_str().unwrap_or_default()
                    );
                }
            }
            println!("{} of {} assertions pass the syntax check", results.len() - failed, results.len());
        }
    }
    if failed > 0 {
        bail!("{failed} assertion(s) failed the syntax check");
    }
    Ok(())
}

fn read_assertion(path: &Path) -> Result<assertflow_core::sva::SvaAst> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_assertion(&text).map_err(|d| anyhow!("{}:{d}", path.display()))
}

fn sva_eval(file: &Path, trace: &Path, format: Format) -> Result<()> {
    let ast = read_assertion(file)?;
    let text = std::fs::read_to_string(trace).with_context(|| format!("reading {}", trace.display()))?;
    let trace = Trace::from_json_str(&text).with_context(|| format!("parsing {}", trace.display()))?;
    let compiled = CompiledAssertion::new(&ast, trace.signals())?;
    let result = compiled.evaluate(&trace);
    match format {
        Format::Json => print_json(&result),
        Format::Text => {
            for (cycle, v) in result.per_attempt.iter().enumerate() {
                println!("attempt {cycle}: {v}");
            }
            println!("overall: {}", result.overall);
        }
    }
    Ok(())
}

fn equiv(args: &EquivArgs) -> Result<()> {
    let a = read_assertion(&args.a)?;
    let b = read_assertion(&args.b)?;
    let signals = if args.signals.is_empty() {
        union_signals(&a, &b)
    } else {
        args.signals.clone()
    };
    let bound = args.bound.unwrap_or_else(|| default_bound(&a, &b));
    let mode = match args.sample {
        Some(n) => EquivMode::Sampled { seed: args.seed, n },
        None => EquivMode::Exhaustive,
    };
    let result = check_equivalence(&a, &b, &signals, bound, mode)?;
    match args.format {
        Format::Json => print_json(&result),
        Format::Text => {
            println!(
                "{:?} over {} traces (bound {}, signals {})",
                result.verdict,
                result.traces_checked,
                result.bound,
                result.signals.join(",")
            );
            if let Some(cex) = &result.counterexample {
                println!(
                    "counterexample at attempt {}: a {} b {}",
                    cex.attempt_cycle, cex.verdict_a, cex.verdict_b
                );
                println!("{}", json!({"signals": cex.signals, "cycles": cex.cycles}));
            }
            for w in &result.warnings {
                println!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn print_run(run: &PipelineRun, format: Format) {
    match format {
        Format::Json => print_json(run),
        Format::Text => {
            println!("run {}: {:?}", run.run_id, run.status());
            for stage in Stage::ALL {
                let r = run.stage(stage);
                let error = r.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default();
                println!("  {stage}: {:?}, {} artifacts{error}", r.status, r.artifacts.len());
            }
        }
    }
}

fn pipeline_run(
    cli: &Cli,
    spec: Option<&Path>,
    config: Option<&Path>,
    resume: Option<&str>,
    stop_after: Option<Stage>,
    format: Format,
) -> Result<()> {
    if let Some(remote) = &cli.remote {
        if resume.is_some() || stop_after.is_some() {
            bail!("--resume and --stop-after are not available with --remote");
        }
        let spec: Value = ops::read_json(spec.expect("clap requires --spec"))?;
        let reply = Remote::new(remote, cli.token.as_deref()).call("POST", "/runs", Some(&json!({"spec": spec})))?;
        match format {
            Format::Json => print_json(&reply),
            Format::Text => println!("run {} submitted", reply["run_id"].as_str().unwrap_or_default()),
        }
        return Ok(());
    }
    let config = config.ok_or_else(|| anyhow!("--config is required"))?;
    let (config, runtime) = PipelineConfig::load(config)?;
    let store = open_store(cli)?;
    let run = match (resume, spec) {
        (Some(run_id), None) => resume_pipeline(run_id, &config, &runtime, store.as_ref(), stop_after)?,
        (resume, Some(spec)) => {
            let spec: DesignSpec = ops::read_json(spec)?;
            let options = RunOptions {
                run_id: resume.map(str::to_string),
                stop_after,
            };
            run_pipeline(&spec, &config, &runtime, store.as_ref(), &options)?
        }
        (None, None) => unreachable!("clap requires --spec or --resume"),
    };
    print_run(&run, format);
    if let Some(stage) = Stage::ALL.into_iter().find(|s| run.stage(*s).error.is_some()) {
        bail!("stage {stage} failed: {}", run.stage(stage).error.as_deref().unwrap_or_default());
    }
    Ok(())
}

fn read_goldens(path: &Path) -> Result<Vec<RawGolden>> {
    let value: Value = ops::read_json(path)?;
    let list = match value {
        Value::Object(mut o) if o.contains_key("goldens") => o.remove("goldens").expect("checked"),
        other => other,
    };
    serde_json::from_value(list).with_context(|| format!("{}: expected a list of golden items", path.display()))
}

fn print_job(job: &SynthJob, format: Format) {
    match format {
        Format::Json => print_json(job),
        Format::Text => {
            let mut by_status = std::collections::BTreeMap::<String, usize>::new();
            for c in &job.candidates {
                let status = serde_json::to_value(&c.status).expect("serializable");
                *by_status.entry(status["status"].as_str().unwrap_or("?").to_string()).or_default() += 1;
            }
            println!("job {}: {} candidates, {} agent calls", job.id, job.candidates.len(), job.invocations);
            for (status, n) in by_status {
                println!("  {status}: {n}");
            }
            match &job.dataset_id {
                Some(id) => println!("dataset {id}"),
                None => println!("{} candidates wait for expert review", job.pending().len()),
            }
            for w in &job.warnings {
                println!("warning: {w}");
            }
        }
    }
}

fn bridge_synth(cli: &Cli, request: ops::SynthRequest, config: Option<&Path>, format: Format) -> Result<()> {
    let job: SynthJob = if let Some(remote) = &cli.remote {
        let reply = Remote::new(remote, cli.token.as_deref()).call(
            "POST",
            "/bridge/synth",
            Some(&serde_json::to_value(&request).expect("serializable")),
        )?;
        serde_json::from_value(reply).context("service returned a malformed job")?
    } else {
        let config = config.ok_or_else(|| anyhow!("--config is required"))?;
        let (config, runtime) = BridgeConfig::load(config)?;
        let store = open_store(cli)?;
        let queue = ReviewQueue::open(store.clone())?;
        ops::synth(&request, &config, &runtime, store.as_ref(), Some(&queue))?
    };
    print_job(&job, format);
    Ok(())
}

fn simulate(k: KRange, n: usize, seed: u64, gtp: f64, model: Option<&Path>, format: TableFormat) -> Result<()> {
    let mut model: StochasticErrorModel = match model {
        Some(p) => ops::read_json(p)?,
        None => StochasticErrorModel::default(),
    };
    model.seed = seed;
    model.validate().map_err(|e| anyhow!("error model: {e}"))?;
    if !(0.0..=1.0).contains(&gtp) {
        bail!("--gtp must lie in [0, 1]");
    }
    let ks: Vec<usize> = (k.0..=k.1).collect();
    let stats = simulate_filter(&model, &ks, n, gtp, seed)?;
    print!("{}", render_filter(&stats, format));
    Ok(())
}

fn render_filter(stats: &[FilterStats], format: TableFormat) -> String {
    let cell = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
    let rows: Vec<[String; 5]> = stats
        .iter()
        .map(|s| {
            [
                s.k.to_string(),
                s.n_items.to_string(),
                cell(s.fp_rate),
                cell(s.fn_rate),
                cell(s.precision),
            ]
        })
        .collect();
    let header = ["k", "items", "fp%", "fn%", "precision%"];
    match format {
        TableFormat::Json => format!("{}\n", serde_json::to_string_pretty(stats).expect("serializable")),
        TableFormat::Csv => {
            let mut out = format!("{}\n", header.join(","));
            for r in &rows {
                out.push_str(&format!("{}\n", r.join(",")));
            }
            out
        }
        TableFormat::Table => {
            let mut out = header.iter().map(|h| format!("{h:>11}")).collect::<String>() + "\n";
            for r in &rows {
                out.push_str(&(r.iter().map(|c| format!("{c:>11}")).collect::<String>() + "\n"));
            }
            out
        }
    }
}

fn build_dataset_cmd(cli: &Cli, out: &Path, job: Option<&str>) -> Result<()> {
    let store = open_store(cli)?;
    let queue = ReviewQueue::open(store.clone())?;
    ops::refresh_jobs(&queue, store.as_ref())?;
    let job = match job {
        Some(id) => SynthJob::load(store.as_ref(), id)?.ok_or_else(|| anyhow!("job `{id}` not found"))?,
        None => ops::latest_job(store.as_ref())?.ok_or_else(|| anyhow!("the store holds no synthesis jobs"))?,
    };
    let pending = job.pending();
    if !pending.is_empty() {
        bail!("job {} has {} candidates waiting for expert review", job.id, pending.len());
    }
    let id = job.dataset_id.as_deref().ok_or_else(|| anyhow!("job {} has no dataset", job.id))?;
    let dataset = ops::get_dataset(store.as_ref(), id)?.ok_or_else(|| anyhow!("dataset `{id}` missing"))?;
    let manifest = write_dataset(&dataset, out)?;
    println!(
        "{} records to {} (split manifest {})",
        dataset.records.len(),
        out.display(),
        manifest.display()
    );
    Ok(())
}

fn metrics_report(cli: &Cli, run: &str, suites: Option<&Path>, format: TableFormat) -> Result<()> {
    let report: MetricsReport = if let Some(remote) = &cli.remote {
        let reply = Remote::new(remote, cli.token.as_deref()).call("GET", &format!("/metrics/{run}"), None)?;
        serde_json::from_value(reply).context("service returned a malformed report")?
    } else {
        let suites = suites.ok_or_else(|| anyhow!("--suites is required"))?;
        let store = open_store(cli)?;
        ops::metrics_for_run(store.as_ref(), run, suites)?
    };
    let format = match format {
        TableFormat::Table => ReportFormat::Table,
        TableFormat::Json => ReportFormat::Json,
        TableFormat::Csv => ReportFormat::Csv,
    };
    println!("{}", emit_report(&report, format).trim_end());
    Ok(())
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        store_root: ops::store_root(cli.store.as_deref()),
        pipeline_config: args.pipeline_config.clone(),
        bridge_config: args.bridge_config.clone(),
        suites: args.suites.clone(),
        token: cli.token.clone(),
    };
    let state = AppState::open(&config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        server::serve(listener, state).await?;
        Ok(())
    })
}

/// Minimal client for the service API.
struct Remote {
    base: String,
    token: Option<String>,
    http: ureq::Agent,
}

impl Remote {
    fn new(base: &str, token: Option<&str>) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Remote {
            base: base.trim_end_matches('/').to_string(),
            token: token.map(str::to_string),
            http: config.into(),
        }
    }

    fn call(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Value> {
        let url = format!("{}{path}", self.base);
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let response = match (method, body) {
            ("GET", _) => {
                let mut req = self.http.get(&url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.call()
            }
            (_, body) => {
                let mut req = self.http.post(&url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.send_json(body.cloned().unwrap_or(Value::Null))
            }
        };
        let mut response = response.with_context(|| format!("{method} {url}"))?;
        let status = response.status();
        let value: Value = response.body_mut().read_json().unwrap_or(Value::Null);
        if !status.is_success() {
            let message = value["error"].as_str().map_or_else(|| value.to_string(), str::to_string);
            bail!("{method} {path}: HTTP {}: {message}", status.as_u16());
        }
        Ok(value)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Sva(SvaCommand::Lint { file, format }) => sva_lint(file, *format),
        Command::Sva(SvaCommand::Eval { file, trace, format }) => sva_eval(file, trace, *format),
        Command::Equiv(args) => equiv(args),
        Command::Pipeline(PipelineCommand::Run {
            spec,
            config,
            resume,
            stop_after,
            format,
        }) => pipeline_run(&cli, spec.as_deref(), config.as_deref(), resume.as_deref(), *stop_after, *format),
        Command::Bridge(BridgeCommand::Synth {
            task,
            golden,
            k,
            config,
            reviewer,
            format,
        }) => {
            let request = ops::SynthRequest {
                goldens: read_goldens(golden)?,
                reviewer: reviewer.clone(),
                task: *task,
                k: *k,
            };
            bridge_synth(&cli, request, config.as_deref(), *format)
        }
        Command::Bridge(BridgeCommand::SimulateFilter {
            k,
            n,
            seed,
            gtp,
            model,
            format,
        }) => simulate(*k, *n, *seed, *gtp, model.as_deref(), *format),
        Command::Bridge(BridgeCommand::BuildDataset { out, job }) => build_dataset_cmd(&cli, out, job.as_deref()),
        Command::Metrics(MetricsCommand::Report { run, suites, format }) => {
            metrics_report(&cli, run, suites.as_deref(), *format)
        }
        Command::Serve(args) => serve(&cli, args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_ranges() {
        assert_eq!(parse_k_range("1..5"), Ok(KRange(1, 5)));
        assert_eq!(parse_k_range("2..=3"), Ok(KRange(2, 3)));
        assert_eq!(parse_k_range("4"), Ok(KRange(4, 4)));
        assert!(parse_k_range("0..2").is_err());
        assert!(parse_k_range("3..1").is_err());
    }

    #[test]
    fn statements_split_on_semicolons_and_blank_lines() {
        let text = "// header\nassert property (a |-> b);\nassert property (\n  a |=> c);\n\nb ##1 c\n";
        let s = split_statements(text);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].0, 2);
        assert_eq!(s[1], (3, "assert property (\n  a |=> c);".to_string()));
        assert_eq!(s[2], (6, "b ##1 c".to_string()));
    }

    #[test]
    fn cli_shape_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
