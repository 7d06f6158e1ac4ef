//! Backend-agnostic agent execution: prompt rendering with retrieved
//! context, a chat-completion client, scripted and stochastic mocks, and
//! independent k-member groups.

mod mock;
mod prompt;
mod remote;
mod retrieval;

pub use mock::{ScenarioFile, ScenarioReply, StochasticErrorModel};
pub use prompt::{placeholders, render_prompt, PromptText, RenderError};
pub use retrieval::{Chunk, ContextStore, ScoredChunk, StoreError};

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// Binding read by the scripted backend to pick a reply.
pub const SCENARIO_KEY: &str = "scenario_key";
/// Binding set by [`AgentRuntime::invoke_group`] for each member.
pub const MEMBER_INDEX: &str = "member_index";
/// Bindings read by the stochastic backend.
pub const ITEM_KEY: &str = "item_key";
pub const GROUND_TRUTH: &str = "ground_truth";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    Remote {
        base_url: String,
        model_name: String,
        /// Name of the environment variable holding the API key.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credential_ref: Option<String>,
    },
    ScriptedMock {
        scenario_ref: String,
    },
    StochasticMock {
        error_model_ref: String,
    },
}

impl Backend {
    pub fn kind(&self) -> &'static str {
        match self {
            Backend::Remote { .. } => "remote",
            Backend::ScriptedMock { .. } => "scripted_mock",
            Backend::StochasticMock { .. } => "stochastic_mock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub store_ref: String,
    pub top_k: usize,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    /// Template with `{name}` placeholders. Pipeline agents left empty use
    /// the bundled stage template.
    #[serde(default)]
    pub role_prompt: String,
    pub backend: Backend,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalConfig>,
}

impl AgentSpec {
    pub fn new(name: impl Into<String>, role_prompt: impl Into<String>, backend: Backend) -> Self {
        AgentSpec {
            name: name.into(),
            role_prompt: role_prompt.into(),
            backend,
            temperature: DEFAULT_TEMPERATURE,
            max_retries: DEFAULT_MAX_RETRIES,
            retrieval: None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(AgentError::Config(format!(
                "agent `{}`: temperature {} not in [0, 1]",
                self.name, self.temperature
            )));
        }
        placeholders(&self.role_prompt)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent_name: String,
    /// Verbatim reply text, recorded before any parsing.
    pub raw_text: String,
    pub prompt_digest: String,
    pub latency_ms: u64,
    /// Zero-based index of the transport attempt that succeeded.
    pub attempt_index: u32,
    pub backend_kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("scripted scenario has no reply for agent `{agent}` key `{key}`")]
    MissingScenario { agent: String, key: String },
    #[error("no scenario file registered as `{0}`")]
    UnknownScenarioRef(String),
    #[error("no error model registered as `{0}`")]
    UnknownErrorModel(String),
    #[error("no context store registered as `{0}`")]
    UnknownStore(String),
    #[error("prompt lacks the `{0}` binding required by this backend")]
    MissingBinding(String),
    #[error("credential environment variable `{0}` is not set")]
    CredentialMissing(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend answered HTTP {status}")]
    Http { status: u16 },
    #[error("malformed backend reply: {0}")]
    BadResponse(String),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{} of {k} group members failed; first: {}", failures.len(), failures[0].1)]
pub struct GroupError {
    pub k: usize,
    pub failures: Vec<(usize, AgentError)>,
    /// Responses of the members that succeeded, by member index.
    pub partial: Vec<(usize, AgentResponse)>,
}

/// Holds backend registries and executes invocations.
pub struct AgentRuntime {
    scenarios: HashMap<String, ScenarioFile>,
    error_models: HashMap<String, StochasticErrorModel>,
    stores: HashMap<String, ContextStore>,
    invocations: AtomicU64,
    retry_base: Duration,
    http: ureq::Agent,
    pool: rayon::ThreadPool,
}

impl Default for AgentRuntime {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_IN_FLIGHT)
    }
}

impl AgentRuntime {
    /// `max_in_flight` bounds concurrent group invocations.
    pub fn new(max_in_flight: usize) -> Self {
        let http = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        AgentRuntime {
            scenarios: HashMap::new(),
            error_models: HashMap::new(),
            stores: HashMap::new(),
            invocations: AtomicU64::new(0),
            retry_base: Duration::from_millis(200),
            http,
            pool: rayon::ThreadPoolBuilder::new()
                .num_threads(max_in_flight.max(1))
                .build()
                .expect("thread pool"),
        }
    }

    /// Base delay of the exponential retry backoff.
    pub fn with_retry_base(mut self, delay: Duration) -> Self {
        self.retry_base = delay;
        self
    }

    pub fn register_scenarios(&mut self, scenario_ref: impl Into<String>, file: ScenarioFile) {
        self.scenarios.insert(scenario_ref.into(), file);
    }

    pub fn register_error_model(&mut self, model_ref: impl Into<String>, model: StochasticErrorModel) {
        self.error_models.insert(model_ref.into(), model);
    }

    pub fn register_store(&mut self, store_ref: impl Into<String>, store: ContextStore) {
        self.stores.insert(store_ref.into(), store);
    }

    /// Number of `invoke` calls so far (retries within a call count once).
    pub fn invocation_count(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    /// Render the agent's template, adding retrieved context when the agent
    /// is configured for retrieval and `query` is given.
    pub fn prepare(
        &self,
        spec: &AgentSpec,
        bindings: &BTreeMap<String, String>,
        query: Option<&str>,
    ) -> Result<PromptText, AgentError> {
        let retrieved = match (&spec.retrieval, query) {
            (Some(cfg), Some(q)) => self
                .stores
                .get(&cfg.store_ref)
                .ok_or_else(|| AgentError::UnknownStore(cfg.store_ref.clone()))?
                .retrieve(q, cfg.top_k),
            _ => Vec::new(),
        };
        Ok(render_prompt(&spec.role_prompt, bindings, &retrieved)?)
    }

    pub fn invoke(&self, spec: &AgentSpec, prompt: &PromptText) -> Result<AgentResponse, AgentError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let (raw_text, attempt_index) = match &spec.backend {
            Backend::ScriptedMock { scenario_ref } => (self.scripted(spec, scenario_ref, prompt)?, 0),
            Backend::StochasticMock { error_model_ref } => {
                (self.stochastic(error_model_ref, prompt)?, 0)
            }
            Backend::Remote {
                base_url,
                model_name,
                credential_ref,
            } => remote::complete(
                &self.http,
                &remote::Request {
                    base_url,
                    model_name,
                    credential_ref: credential_ref.as_deref(),
                    temperature: spec.temperature,
                    max_retries: spec.max_retries,
                    retry_base: self.retry_base,
                },
                prompt,
            )?,
        };
        Ok(AgentResponse {
            agent_name: spec.name.clone(),
            raw_text,
            prompt_digest: prompt.digest.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_index,
            backend_kind: spec.backend.kind().to_string(),
        })
    }

    fn scripted(&self, spec: &AgentSpec, scenario_ref: &str, prompt: &PromptText) -> Result<String, AgentError> {
        let file = self
            .scenarios
            .get(scenario_ref)
            .ok_or_else(|| AgentError::UnknownScenarioRef(scenario_ref.to_string()))?;
        let key = prompt
            .binding(SCENARIO_KEY)
            .ok_or_else(|| AgentError::MissingBinding(SCENARIO_KEY.into()))?;
        let member = prompt.binding(MEMBER_INDEX).and_then(|m| m.parse().ok());
        file.lookup(&spec.name, key, member, prompt.round)
            .map(str::to_string)
            .ok_or_else(|| AgentError::MissingScenario {
                agent: spec.name.clone(),
                key: match member {
                    Some(m) => format!("{key}#{m}"),
                    None => key.to_string(),
                },
            })
    }

    fn stochastic(&self, model_ref: &str, prompt: &PromptText) -> Result<String, AgentError> {
        let model = self
            .error_models
            .get(model_ref)
            .ok_or_else(|| AgentError::UnknownErrorModel(model_ref.to_string()))?;
        let item = prompt
            .binding(ITEM_KEY)
            .ok_or_else(|| AgentError::MissingBinding(ITEM_KEY.into()))?;
        let positive = match prompt.binding(GROUND_TRUTH) {
            Some("gtp") => true,
            Some("gtn") => false,
            _ => return Err(AgentError::MissingBinding(GROUND_TRUTH.into())),
        };
        let member = prompt
            .binding(MEMBER_INDEX)
            .and_then(|m| m.parse().ok())
            .unwrap_or(0);
        Ok(if model.check_passes(item, positive, member) {
            "equivalent"
        } else {
            "inequivalent"
        }
        .to_string())
    }

    /// Run `k` independent invocations, prompt `i` built by `build(i)`.
    /// Each member's prompt carries its index; remote members also get a
    /// nonce line and a distinct sampling seed. Results are in index order.
    pub fn invoke_group<F>(&self, spec: &AgentSpec, k: usize, build: F) -> Result<Vec<AgentResponse>, GroupError>
    where
        F: Fn(usize) -> Result<PromptText, AgentError> + Sync,
    {
        let results: Vec<Result<AgentResponse, AgentError>> = self.pool.install(|| {
            (0..k)
                .into_par_iter()
                .map(|i| {
                    let mut prompt = build(i)?;
                    prompt.bindings.insert(MEMBER_INDEX.into(), i.to_string());
                    if matches!(spec.backend, Backend::Remote { .. }) {
                        prompt = PromptText::new(
                            format!("{}\n\n[independent reviewer {i}]", prompt.text),
                            prompt.bindings,
                            prompt.round,
                        );
                    }
                    self.invoke(spec, &prompt)
                })
                .collect()
        });
        let mut ok = Vec::with_capacity(k);
        let mut failures = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(resp) => ok.push((i, resp)),
                Err(e) => failures.push((i, e)),
            }
        }
        if failures.is_empty() {
            Ok(ok.into_iter().map(|(_, r)| r).collect())
        } else {
            Err(GroupError {
                k,
                failures,
                partial: ok,
            })
        }
    }
}
