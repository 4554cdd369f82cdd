//! Running a planned workflow against a provider.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cache::{CacheEntry, CacheError, CacheKey, EntrySource, StepCache};
use super::config::DirectiveConfig;
use super::plan::WorkflowPlan;
use super::template::substitute;
use crate::digest::fields_digest;
use crate::providers::{
    BudgetExceeded, BudgetTracker, CompletionProvider, CompletionRequest, ProviderError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("step `{0}` has no model parameters")]
    NoModel(String),
    #[error("step `{step}` failed: {source}")]
    Provider {
        step: String,
        #[source]
        source: ProviderError,
    },
    #[error("step `{step}`: {source}")]
    Budget {
        step: String,
        #[source]
        source: BudgetExceeded,
    },
    #[error("step `{step}`: {source}")]
    Cache {
        step: String,
        #[source]
        source: CacheError,
    },
    #[error("step `{0}` is not precomputable")]
    NotPrecomputable(String),
    #[error("upstream step `{0}` has no cached output")]
    NotCached(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    pub resolved_prompt: String,
    pub model: String,
    pub raw_response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
    pub inputs_digest: String,
    pub config_digest: String,
    pub cost: f64,
}

impl RunTrace {
    pub fn step(&self, name: &str) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&str> {
        self.step(name).map(|s| s.raw_response.as_str())
    }

    pub fn provider_calls(&self) -> usize {
        self.steps.iter().filter(|s| !s.cache_hit).count()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialization")
    }

    fn push(&mut self, record: StepRecord) {
        self.cost += record.cost;
        self.steps.push(record);
    }
}

/// An execution error together with the steps completed before it.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct ExecutionFailure {
    #[source]
    pub error: EngineError,
    pub trace: RunTrace,
}

/// Everything a run needs besides the plan and inputs.
pub struct Engine<'a> {
    pub provider: &'a dyn CompletionProvider,
    pub cache: &'a dyn StepCache,
    pub budget: Option<&'a BudgetTracker>,
    /// Record wall-clock latency per step. Offline runs switch this off so
    /// traces are byte-reproducible.
    pub measure_latency: bool,
}

impl<'a> Engine<'a> {
    pub fn new(provider: &'a dyn CompletionProvider, cache: &'a dyn StepCache) -> Self {
        Engine {
            provider,
            cache,
            budget: None,
            measure_latency: true,
        }
    }

    pub fn with_budget(mut self, budget: &'a BudgetTracker) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn with_latency(mut self, measure: bool) -> Self {
        self.measure_latency = measure;
        self
    }

    /// Run every node of `plan` in order.
    pub fn execute(
        &self,
        plan: &WorkflowPlan,
        config: &DirectiveConfig,
        inputs: &BTreeMap<String, String>,
    ) -> Result<RunTrace, ExecutionFailure> {
        self.run(plan, config, inputs, &plan.order, Mode::Execute)
            .map(|(trace, _)| trace)
    }

    /// Execute and cache every precomputable node; returns how many entries
    /// were newly written.
    pub fn precompute(
        &self,
        plan: &WorkflowPlan,
        config: &DirectiveConfig,
        question_inputs: &BTreeMap<String, String>,
    ) -> Result<usize, ExecutionFailure> {
        let nodes: Vec<String> = plan
            .order
            .iter()
            .filter(|n| plan.is_precomputable(n))
            .cloned()
            .collect();
        self.run(plan, config, question_inputs, &nodes, Mode::Precompute)
            .map(|(_, written)| written)
    }

    fn run(
        &self,
        plan: &WorkflowPlan,
        config: &DirectiveConfig,
        inputs: &BTreeMap<String, String>,
        nodes: &[String],
        mode: Mode,
    ) -> Result<(RunTrace, usize), ExecutionFailure> {
        let config_digest = config.digest();
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        for name in &plan.external_inputs {
            if let Some(value) = inputs.get(name) {
                values.insert(name.clone(), value.clone());
            }
        }
        let mut trace = RunTrace {
            steps: Vec::with_capacity(nodes.len()),
            inputs_digest: fields_digest(values.iter().flat_map(|(k, v)| [k.as_str(), v.as_str()])),
            config_digest: config_digest.clone(),
            cost: 0.0,
        };

        let needed = match mode {
            Mode::Execute => plan.required_inputs(),
            Mode::Precompute => plan.question_side_inputs(),
        };
        if let Some(missing) = needed.into_iter().find(|n| !values.contains_key(*n)) {
            return Err(ExecutionFailure {
                error: EngineError::MissingInput(missing.to_string()),
                trace,
            });
        }

        let mut written = 0;
        for name in nodes {
            match self.step(plan, config, &config_digest, name, &values) {
                Ok((record, newly_cached)) => {
                    written += usize::from(newly_cached);
                    values.insert(name.clone(), record.raw_response.clone());
                    trace.push(record);
                }
                Err(error) => return Err(ExecutionFailure { error, trace }),
            }
        }
        Ok((trace, written))
    }

    fn step(
        &self,
        plan: &WorkflowPlan,
        config: &DirectiveConfig,
        config_digest: &str,
        name: &str,
        values: &BTreeMap<String, String>,
    ) -> Result<(StepRecord, bool), EngineError> {
        let template = config
            .directive(name)
            .and_then(|d| d.template())
            .expect("plan nodes are template directives");
        let params = config
            .params(name)
            .ok_or_else(|| EngineError::NoModel(name.to_string()))?;
        let resolved = substitute(template, values);
        let cache_key = plan
            .is_precomputable(name)
            .then(|| CacheKey::new(config_digest, name, &resolved));

        if let Some(key) = &cache_key {
            let hit = self.cache.get(key).map_err(|source| EngineError::Cache {
                step: name.to_string(),
                source,
            })?;
            if let Some(entry) = hit {
                return Ok((
                    StepRecord {
                        name: name.to_string(),
                        resolved_prompt: resolved,
                        model: params.model.clone(),
                        raw_response: entry.output,
                        prompt_tokens: 0,
                        completion_tokens: 0,
                        cost: 0.0,
                        latency_ms: 0,
                        cache_hit: true,
                    },
                    false,
                ));
            }
        }

        if let Some(budget) = self.budget {
            budget.ensure_open().map_err(|source| EngineError::Budget {
                step: name.to_string(),
                source,
            })?;
        }
        let request = CompletionRequest {
            model: params.model.clone(),
            system: (!config.context_instructions.is_empty())
                .then(|| config.context_instructions.clone()),
            user: resolved.clone(),
            temperature: params.temperature,
            reasoning_effort: params.reasoning_effort,
            step: Some(name.to_string()),
        };
        let started = Instant::now();
        let response = self
            .provider
            .complete(&request)
            .map_err(|source| EngineError::Provider {
                step: name.to_string(),
                source,
            })?;
        let latency_ms = if self.measure_latency {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let cost = match self.budget {
            Some(budget) => budget
                .charge(&params.model, response.prompt_tokens, response.completion_tokens)
                .map_err(|source| EngineError::Budget {
                    step: name.to_string(),
                    source,
                })?
                .amount,
            None => 0.0,
        };

        if let Some(key) = &cache_key {
            let entry = CacheEntry::new(name, &params.model, &response.text, EntrySource::Provider);
            self.cache.put(key, &entry).map_err(|source| EngineError::Cache {
                step: name.to_string(),
                source,
            })?;
        }

        Ok((
            StepRecord {
                name: name.to_string(),
                resolved_prompt: resolved,
                model: params.model.clone(),
                raw_response: response.text,
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
                cost,
                latency_ms,
                cache_hit: false,
            },
            cache_key.is_some(),
        ))
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Execute,
    Precompute,
}

/// Execute `plan` with no budget tracking.
pub fn execute(
    plan: &WorkflowPlan,
    config: &DirectiveConfig,
    inputs: &BTreeMap<String, String>,
    provider: &dyn CompletionProvider,
    cache: &dyn StepCache,
) -> Result<RunTrace, ExecutionFailure> {
    Engine::new(provider, cache).execute(plan, config, inputs)
}

/// Precompute every submission-independent node of `plan` into `cache`.
pub fn precompute(
    plan: &WorkflowPlan,
    config: &DirectiveConfig,
    question_inputs: &BTreeMap<String, String>,
    provider: &dyn CompletionProvider,
    cache: &dyn StepCache,
) -> Result<usize, ExecutionFailure> {
    Engine::new(provider, cache).precompute(plan, config, question_inputs)
}

/// Store `text` as the output of precomputable `node` for the given
/// question-side inputs, replacing whatever a provider produced. Upstream
/// precomputable nodes must already be cached.
pub fn override_cached_output(
    plan: &WorkflowPlan,
    config: &DirectiveConfig,
    question_inputs: &BTreeMap<String, String>,
    node: &str,
    text: &str,
    cache: &dyn StepCache,
) -> Result<CacheKey, EngineError> {
    if !plan.is_precomputable(node) {
        return Err(EngineError::NotPrecomputable(node.to_string()));
    }
    let config_digest = config.digest();
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    for name in plan.question_side_inputs() {
        let value = question_inputs
            .get(name)
            .ok_or_else(|| EngineError::MissingInput(name.to_string()))?;
        values.insert(name.to_string(), value.clone());
    }
    let cache_err = |source| EngineError::Cache {
        step: node.to_string(),
        source,
    };
    for name in plan.order.iter().filter(|n| plan.is_precomputable(n)) {
        let template = config
            .directive(name)
            .and_then(|d| d.template())
            .expect("plan nodes are template directives");
        let key = CacheKey::new(&config_digest, name, &substitute(template, &values));
        let model = config.params(name).map(|p| p.model.as_str()).unwrap_or("");
        if name == node {
            cache
                .put(&key, &CacheEntry::new(node, model, text, EntrySource::Override))
                .map_err(cache_err)?;
            return Ok(key);
        }
        let entry = cache
            .get(&key)
            .map_err(cache_err)?
            .ok_or_else(|| EngineError::NotCached(name.clone()))?;
        values.insert(name.clone(), entry.output);
    }
    unreachable!("precomputable node is part of the plan order")
}
