//! Question registry, precomputation and the gated submission path.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use tutorflow::digest::fields_digest;
use tutorflow::directive::{
    build_plan, DirectiveConfig, Engine, RunTrace, StepCache, WorkflowPlan,
    DEFAULT_SUBMISSION_INPUT,
};
use tutorflow::evaluation::pipeline::{
    DEFAULT_FEEDBACK_NODE, DEFAULT_MARKSCHEME_INPUT, DEFAULT_QUESTION_INPUT, GENERIC_MARKSCHEME,
};
use tutorflow::providers::{
    BudgetTracker, CompletionProvider, CompletionRequest, ModerationVerdict, Moderator,
    RateLimiter,
};

use crate::questions::{parse_question_source, PrecomputeStatus, QuestionEntry, SourceError};
use crate::store::{get_json, is_valid_key, put_json, KvStore, StoreError};

pub const QUESTIONS_NS: &str = "questions";
pub const TRACES_NS: &str = "traces";
pub const DEFAULT_GRADE_NODE: &str = "regraded";
pub const COMPLETENESS_STEP: &str = "completeness";
pub const MAX_SUBMISSION_BYTES: usize = 64 * 1024;

const POLICY_MESSAGE: &str =
    "This submission was not processed because it did not pass the content policy check.";
const INCOMPLETE_WARNING: &str =
    "Your submission looks unfinished. Feedback was generated for the text as submitted.";
const ENGINE_FAILURE_MESSAGE: &str =
    "Feedback could not be generated right now. Please try again later.";

fn completeness_prompt(submission: &str) -> String {
    format!(
        "The text below is a student's written answer to a mathematics exercise. \
         Ignore whether it is correct. Decide only whether it stops before it is finished, \
         for example in the middle of a sentence, a formula or a list. \
         Reply with the single word YES if it looks cut off and NO otherwise.\n\n\"\"\"\n{submission}\n\"\"\""
    )
}

#[derive(Debug, Error)]
pub enum TutorError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("question `{question_id}` is not ready (status {status:?})")]
    NotReady {
        question_id: String,
        status: PrecomputeStatus,
    },
    #[error("quota exhausted; retry in {retry_after_secs} s")]
    QuotaExhausted { retry_after_secs: u64 },
    #[error("{message}")]
    Flagged { message: String, trace_id: String },
    #[error("moderation unavailable: {0}")]
    ModerationUnavailable(String),
    #[error("{ENGINE_FAILURE_MESSAGE}")]
    Engine { trace_id: String },
    #[error("malformed question source: {0}")]
    Source(#[from] SourceError),
    #[error("line {line}: question `{question_id}` names unknown workflow `{workflow}`")]
    UnknownWorkflow {
        question_id: String,
        workflow: String,
        line: usize,
    },
    #[error("unknown trace `{0}`")]
    UnknownTrace(String),
    #[error("workflow setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl TutorError {
    /// Stable machine-readable kind for JSON error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            TutorError::InvalidRequest(_) => "invalid_request",
            TutorError::UnknownQuestion(_) => "unknown_question",
            TutorError::NotReady { .. } => "question_not_ready",
            TutorError::QuotaExhausted { .. } => "quota_exhausted",
            TutorError::Flagged { .. } => "flagged",
            TutorError::ModerationUnavailable(_) => "moderation_unavailable",
            TutorError::Engine { .. } => "engine",
            TutorError::Source(_) => "malformed_source",
            TutorError::UnknownWorkflow { .. } => "unknown_workflow",
            TutorError::UnknownTrace(_) => "unknown_trace",
            TutorError::Setup(_) => "setup",
            TutorError::Store(_) => "store",
        }
    }

    /// Message safe to show a student. Internal details stay in traces and logs.
    pub fn public_message(&self) -> String {
        match self {
            TutorError::ModerationUnavailable(_) => {
                "Submissions are temporarily unavailable. Please try again later.".into()
            }
            TutorError::Store(_) => "Internal storage error.".into(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub user_id: String,
    pub question_id: String,
    pub submission: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub feedback: String,
    pub trace_id: String,
    pub quota_remaining: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaStatus {
    pub user_id: String,
    pub remaining: u32,
    pub limit: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub questions: Vec<QuestionEntry>,
    /// One per ingested question.
    pub precompute_jobs: usize,
    /// Cache entries written by this ingest; zero when nothing changed.
    pub new_cache_entries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Answered,
    Flagged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessRecord {
    pub model: String,
    pub raw_response: String,
    pub looks_truncated: bool,
}

/// What the admin trace endpoint returns for one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub user_id: String,
    pub question_id: String,
    pub workflow: String,
    pub created_unix: u64,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub moderation: ModerationVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<CompletenessRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunTrace>,
}

#[derive(Debug, Clone)]
pub struct TutorSettings {
    pub feedback_node: String,
    /// Grading directive whose output is never returned to students.
    pub grade_node: String,
    pub submission_input: String,
    pub question_input: String,
    pub markscheme_input: String,
    pub markscheme: String,
    /// Model for the advisory truncation check; `None` skips it.
    pub completeness_model: Option<String>,
    pub measure_latency: bool,
}

impl Default for TutorSettings {
    fn default() -> Self {
        TutorSettings {
            feedback_node: DEFAULT_FEEDBACK_NODE.into(),
            grade_node: DEFAULT_GRADE_NODE.into(),
            submission_input: DEFAULT_SUBMISSION_INPUT.into(),
            question_input: DEFAULT_QUESTION_INPUT.into(),
            markscheme_input: DEFAULT_MARKSCHEME_INPUT.into(),
            markscheme: GENERIC_MARKSCHEME.into(),
            completeness_model: None,
            measure_latency: true,
        }
    }
}

struct RegisteredWorkflow {
    config: DirectiveConfig,
    plan: WorkflowPlan,
}

pub struct Tutor {
    provider: Arc<dyn CompletionProvider>,
    moderator: Arc<dyn Moderator>,
    cache: Arc<dyn StepCache>,
    store: Arc<dyn KvStore>,
    limiter: RateLimiter,
    budget: Option<BudgetTracker>,
    settings: TutorSettings,
    workflows: BTreeMap<String, RegisteredWorkflow>,
    default_workflow: Option<String>,
    ingest_lock: Mutex<()>,
    trace_counter: AtomicU64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Tutor {
    pub fn new(
        provider: Arc<dyn CompletionProvider>,
        moderator: Arc<dyn Moderator>,
        cache: Arc<dyn StepCache>,
        store: Arc<dyn KvStore>,
        limiter: RateLimiter,
    ) -> Self {
        Tutor {
            provider,
            moderator,
            cache,
            store,
            limiter,
            budget: None,
            settings: TutorSettings::default(),
            workflows: BTreeMap::new(),
            default_workflow: None,
            ingest_lock: Mutex::new(()),
            trace_counter: AtomicU64::new(0),
        }
    }

    pub fn with_settings(mut self, settings: TutorSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_budget(mut self, budget: BudgetTracker) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Register a workflow under `name`. The first one registered is the
    /// default for questions that do not name one.
    pub fn with_workflow(
        mut self,
        name: impl Into<String>,
        config: DirectiveConfig,
    ) -> Result<Self, TutorError> {
        let name = name.into();
        if !is_valid_key(&name) {
            return Err(TutorError::Setup(format!("invalid workflow name `{name}`")));
        }
        let plan = build_plan(&config, &self.settings.submission_input)
            .map_err(|e| TutorError::Setup(format!("workflow `{name}`: {e}")))?;
        if plan.node(&self.settings.feedback_node).is_none() {
            return Err(TutorError::Setup(format!(
                "workflow `{name}` has no `{}` directive",
                self.settings.feedback_node
            )));
        }
        self.default_workflow.get_or_insert_with(|| name.clone());
        self.workflows.insert(name, RegisteredWorkflow { config, plan });
        Ok(self)
    }

    pub fn workflow_names(&self) -> Vec<&str> {
        self.workflows.keys().map(String::as_str).collect()
    }

    pub fn budget(&self) -> Option<&BudgetTracker> {
        self.budget.as_ref()
    }

    fn engine(&self) -> Engine<'_> {
        let engine = Engine::new(self.provider.as_ref(), self.cache.as_ref())
            .with_latency(self.settings.measure_latency);
        match &self.budget {
            Some(budget) => engine.with_budget(budget),
            None => engine,
        }
    }

    fn workflow(&self, name: &str) -> Result<&RegisteredWorkflow, TutorError> {
        self.workflows
            .get(name)
            .ok_or_else(|| TutorError::Setup(format!("workflow `{name}` is not registered")))
    }

    fn question_inputs(&self, entry: &QuestionEntry) -> BTreeMap<String, String> {
        BTreeMap::from([
            (self.settings.question_input.clone(), entry.model_text()),
            (
                self.settings.markscheme_input.clone(),
                self.settings.markscheme.clone(),
            ),
        ])
    }

    pub fn questions(&self) -> Result<Vec<QuestionEntry>, TutorError> {
        let mut out = Vec::new();
        for key in self.store.keys(QUESTIONS_NS)? {
            if let Some(entry) = get_json(self.store.as_ref(), QUESTIONS_NS, &key)? {
                out.push(entry);
            }
        }
        Ok(out)
    }

    pub fn question(&self, question_id: &str) -> Result<QuestionEntry, TutorError> {
        if !is_valid_key(question_id) {
            return Err(TutorError::UnknownQuestion(question_id.to_string()));
        }
        get_json(self.store.as_ref(), QUESTIONS_NS, question_id)?
            .ok_or_else(|| TutorError::UnknownQuestion(question_id.to_string()))
    }

    /// Parse `source`, store every question and precompute its
    /// submission-independent steps. Precompute failures mark the question
    /// `failed` and can be retried with [`Tutor::precompute_question`].
    pub fn ingest(&self, source: &str) -> Result<IngestReport, TutorError> {
        let drafts = parse_question_source(source)?;
        let mut entries = Vec::with_capacity(drafts.len());
        for draft in drafts {
            let workflow_ref = match draft.workflow_ref {
                Some(name) => name,
                None => self
                    .default_workflow
                    .clone()
                    .ok_or_else(|| TutorError::Setup("no workflow registered".into()))?,
            };
            if !self.workflows.contains_key(&workflow_ref) {
                return Err(TutorError::UnknownWorkflow {
                    question_id: draft.question_id,
                    workflow: workflow_ref,
                    line: draft.line,
                });
            }
            entries.push(QuestionEntry {
                question_id: draft.question_id,
                display_text: draft.display_text,
                model_context: draft.model_context,
                workflow_ref,
                precompute_status: PrecomputeStatus::Pending,
                precompute_error: None,
            });
        }

        let _guard = self.ingest_lock.lock().unwrap();
        for entry in &entries {
            put_json(self.store.as_ref(), QUESTIONS_NS, &entry.question_id, entry)?;
        }
        let mut report = IngestReport {
            questions: Vec::with_capacity(entries.len()),
            precompute_jobs: entries.len(),
            new_cache_entries: 0,
        };
        for entry in entries {
            let (entry, written) = self.precompute_entry(entry)?;
            report.new_cache_entries += written;
            report.questions.push(entry);
        }
        info!(
            questions = report.questions.len(),
            new_cache_entries = report.new_cache_entries,
            "ingested question set"
        );
        Ok(report)
    }

    /// (Re)run precomputation for one stored question.
    pub fn precompute_question(&self, question_id: &str) -> Result<(QuestionEntry, usize), TutorError> {
        let entry = self.question(question_id)?;
        self.precompute_entry(entry)
    }

    fn precompute_entry(&self, mut entry: QuestionEntry) -> Result<(QuestionEntry, usize), TutorError> {
        let workflow = self.workflow(&entry.workflow_ref)?;
        let inputs = self.question_inputs(&entry);
        let written = match self.engine().precompute(&workflow.plan, &workflow.config, &inputs) {
            Ok(written) => {
                entry.precompute_status = PrecomputeStatus::Ready;
                entry.precompute_error = None;
                written
            }
            Err(failure) => {
                warn!(question = %entry.question_id, error = %failure.error, "precompute failed");
                entry.precompute_status = PrecomputeStatus::Failed;
                entry.precompute_error = Some(failure.error.to_string());
                0
            }
        };
        put_json(self.store.as_ref(), QUESTIONS_NS, &entry.question_id, &entry)?;
        Ok((entry, written))
    }

    pub fn quota(&self, user_id: &str) -> QuotaStatus {
        QuotaStatus {
            user_id: user_id.to_string(),
            remaining: self.limiter.remaining(user_id),
            limit: self.limiter.limit(),
        }
    }

    pub fn trace(&self, trace_id: &str) -> Result<TraceRecord, TutorError> {
        if !is_valid_key(trace_id) {
            return Err(TutorError::UnknownTrace(trace_id.to_string()));
        }
        get_json(self.store.as_ref(), TRACES_NS, trace_id)?
            .ok_or_else(|| TutorError::UnknownTrace(trace_id.to_string()))
    }

    fn new_trace_id(&self, request: &FeedbackRequest) -> String {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let counter = self.trace_counter.fetch_add(1, Ordering::Relaxed);
        let digest = fields_digest([
            request.user_id.as_str(),
            request.question_id.as_str(),
            &nanos.to_string(),
            &counter.to_string(),
        ]);
        digest[..24].to_string()
    }

    fn validate(&self, request: &FeedbackRequest) -> Result<QuestionEntry, TutorError> {
        let user = request.user_id.trim();
        if user.is_empty() || user.len() > 128 {
            return Err(TutorError::InvalidRequest(
                "user_id must be 1 to 128 bytes".into(),
            ));
        }
        if request.submission.trim().is_empty() {
            return Err(TutorError::InvalidRequest("submission is empty".into()));
        }
        if request.submission.len() > MAX_SUBMISSION_BYTES {
            return Err(TutorError::InvalidRequest(format!(
                "submission exceeds {MAX_SUBMISSION_BYTES} bytes"
            )));
        }
        let entry = self.question(&request.question_id)?;
        if entry.precompute_status != PrecomputeStatus::Ready {
            return Err(TutorError::NotReady {
                question_id: entry.question_id,
                status: entry.precompute_status,
            });
        }
        Ok(entry)
    }

    /// Advisory only: any failure here is logged and ignored.
    fn check_completeness(&self, submission: &str) -> Option<CompletenessRecord> {
        let model = self.settings.completeness_model.as_ref()?;
        if let Some(budget) = &self.budget {
            if budget.ensure_open().is_err() {
                return None;
            }
        }
        let request = CompletionRequest::new(model.clone(), completeness_prompt(submission))
            .with_step(COMPLETENESS_STEP);
        match self.provider.complete(&request) {
            Ok(response) => {
                if let Some(budget) = &self.budget {
                    let _ = budget.charge(
                        model,
                        response.prompt_tokens,
                        response.completion_tokens,
                    );
                }
                let looks_truncated = response
                    .text
                    .trim_start()
                    .to_ascii_uppercase()
                    .starts_with("YES");
                Some(CompletenessRecord {
                    model: model.clone(),
                    raw_response: response.text,
                    looks_truncated,
                })
            }
            Err(e) => {
                warn!(error = %e, "completeness check failed; continuing without it");
                None
            }
        }
    }

    /// The gated submission path: quota, moderation, completeness check,
    /// workflow execution, trace persistence.
    pub fn submit(&self, request: &FeedbackRequest) -> Result<FeedbackResponse, TutorError> {
        let entry = self.validate(request)?;
        let user = request.user_id.trim();

        let permit = self.limiter.check(user).map_err(|refusal| TutorError::QuotaExhausted {
            retry_after_secs: refusal.retry_after.as_secs().max(1),
        })?;

        let verdict = match self.moderator.moderate(&request.submission) {
            Ok(verdict) => verdict,
            Err(e) => {
                warn!(error = %e, "moderation backend failed; rejecting submission");
                self.limiter.refund(user);
                return Err(TutorError::ModerationUnavailable(e.to_string()));
            }
        };
        let mut record = TraceRecord {
            trace_id: self.new_trace_id(request),
            user_id: user.to_string(),
            question_id: entry.question_id.clone(),
            workflow: entry.workflow_ref.clone(),
            created_unix: unix_now(),
            outcome: Outcome::Flagged,
            error: None,
            moderation: verdict,
            completeness: None,
            run: None,
        };
        if record.moderation.flagged {
            put_json(self.store.as_ref(), TRACES_NS, &record.trace_id, &record)?;
            return Err(TutorError::Flagged {
                message: POLICY_MESSAGE.into(),
                trace_id: record.trace_id,
            });
        }

        record.completeness = self.check_completeness(&request.submission);

        let workflow = self.workflow(&entry.workflow_ref)?;
        let mut inputs = self.question_inputs(&entry);
        inputs.insert(
            self.settings.submission_input.clone(),
            request.submission.clone(),
        );
        let result = self.engine().execute(&workflow.plan, &workflow.config, &inputs);
        let feedback = match result {
            Ok(trace) => {
                let feedback = trace.output(&self.settings.feedback_node).map(str::to_string);
                record.run = Some(trace);
                feedback
            }
            Err(failure) => {
                record.error = Some(failure.error.to_string());
                record.run = Some(failure.trace);
                None
            }
        };
        let Some(feedback) = feedback else {
            record.outcome = Outcome::Failed;
            if record.error.is_none() {
                record.error = Some(format!("no `{}` output", self.settings.feedback_node));
            }
            warn!(trace = %record.trace_id, error = ?record.error, "workflow failed");
            put_json(self.store.as_ref(), TRACES_NS, &record.trace_id, &record)?;
            return Err(TutorError::Engine {
                trace_id: record.trace_id,
            });
        };
        record.outcome = Outcome::Answered;
        put_json(self.store.as_ref(), TRACES_NS, &record.trace_id, &record)?;

        let warning = record
            .completeness
            .as_ref()
            .filter(|c| c.looks_truncated)
            .map(|_| INCOMPLETE_WARNING.to_string());
        Ok(FeedbackResponse {
            feedback,
            trace_id: record.trace_id,
            quota_remaining: permit.remaining,
            warning,
        })
    }
}
