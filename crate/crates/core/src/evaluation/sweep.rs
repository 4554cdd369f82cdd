//! Grading generated feedback with a panel of grading models.
//!
//! Graders see the question and the feedback, never the submission.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use super::grade::parse_grade;
use super::metrics::{agreement, AgreementReport};
use super::words::word_count;
use crate::dataset::{grade_vector, AssessmentRecord, DatasetError, GradeSource};
use crate::directive::substitute;
use crate::providers::{
    BudgetExceeded, BudgetTracker, CompletionProvider, CompletionRequest, ProviderError, GRADE_STEP,
};

pub const DEFAULT_GRADING_TEMPLATE: &str = include_str!("../../../../fixtures/prompts/grading.txt");
pub const FEEDBACK_ONLY_GRADING_TEMPLATE: &str =
    include_str!("../../../../fixtures/prompts/grading_feedback_only.txt");
pub const DEFAULT_MAX_DROP_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no grading models configured")]
    NoGraders,
    #[error("grading model `{0}` listed twice")]
    DuplicateGrader(String),
    #[error("need at least 2 records, got {0}")]
    TooFewRecords(usize),
    #[error("no feedback for record `{record}` in {workflow}/{feedback_model}")]
    MissingFeedback {
        workflow: String,
        feedback_model: String,
        record: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("grader `{grader}` on record `{record}`: {source}")]
    Provider {
        grader: String,
        record: String,
        #[source]
        source: ProviderError,
    },
    #[error("grader `{grader}`: {source}")]
    Budget {
        grader: String,
        #[source]
        source: BudgetExceeded,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComboKey {
    pub workflow: String,
    pub feedback_model: String,
}

impl ComboKey {
    pub fn new(workflow: impl Into<String>, feedback_model: impl Into<String>) -> Self {
        ComboKey {
            workflow: workflow.into(),
            feedback_model: feedback_model.into(),
        }
    }
}

/// Generated feedback per combination, keyed by record id. Iteration order
/// of the outer map is the order combos appear in results.
pub type FeedbackRuns = indexmap::IndexMap<ComboKey, BTreeMap<String, String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingConfig {
    pub graders: Vec<String>,
    /// Custom template with `{prompt}` and `{llm_feedback}` slots.
    #[serde(default)]
    pub template: Option<String>,
    /// Show the grader the question as well as the feedback. Only consulted
    /// when no custom template is set.
    #[serde(default = "yes")]
    pub include_question: bool,
    #[serde(default = "zero")]
    pub temperature: Option<f64>,
    #[serde(default = "yes")]
    pub lenient: bool,
    #[serde(default = "default_drop")]
    pub max_drop_fraction: f64,
}

fn yes() -> bool {
    true
}

fn zero() -> Option<f64> {
    Some(0.0)
}

fn default_drop() -> f64 {
    DEFAULT_MAX_DROP_FRACTION
}

impl GradingConfig {
    pub fn new(graders: impl IntoIterator<Item = impl Into<String>>) -> Self {
        GradingConfig {
            graders: graders.into_iter().map(Into::into).collect(),
            template: None,
            include_question: true,
            temperature: zero(),
            lenient: true,
            max_drop_fraction: DEFAULT_MAX_DROP_FRACTION,
        }
    }

    pub fn template(&self) -> &str {
        match &self.template {
            Some(t) => t,
            None if self.include_question => DEFAULT_GRADING_TEMPLATE,
            None => FEEDBACK_ONLY_GRADING_TEMPLATE,
        }
    }

    /// The grading prompt for one record. Only the question (with any course
    /// context) and the feedback are available to the template.
    pub fn render(&self, record: &AssessmentRecord, feedback: &str) -> String {
        let values = BTreeMap::from([
            ("prompt".to_string(), question_text(record)),
            ("llm_feedback".to_string(), feedback.to_string()),
        ]);
        substitute(self.template(), &values)
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.graders.is_empty() {
            return Err(SweepError::NoGraders);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.graders.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(SweepError::DuplicateGrader(dup.clone()));
        }
        Ok(())
    }
}

/// The question as the model sees it: the question text followed by the
/// course context, when the record has one.
pub fn question_text(record: &AssessmentRecord) -> String {
    match record.context.as_deref().map(str::trim) {
        Some(ctx) if !ctx.is_empty() => format!("{}\n\n{}", record.question, ctx),
        _ => record.question.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboResult {
    pub workflow: String,
    pub feedback_model: String,
    pub grading_model: String,
    /// `None` when fewer than two graded pairs remain.
    pub report: Option<AgreementReport>,
    pub avg_feedback_words: f64,
    /// Records whose machine grade could not be parsed.
    pub dropped: usize,
    /// Why the result must not be used for ranking, if it must not.
    pub invalid: Option<String>,
}

impl ComboResult {
    pub fn key(&self) -> ComboKey {
        ComboKey::new(&self.workflow, &self.feedback_model)
    }

    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }

    pub fn pearson(&self) -> Option<f64> {
        self.report.as_ref().and_then(|r| r.pearson_r)
    }

    pub fn kendall(&self) -> Option<f64> {
        self.report.as_ref().and_then(|r| r.kendall_tau)
    }
}

/// Optional shared state for a sweep.
#[derive(Default, Clone, Copy)]
pub struct SweepOptions<'a> {
    pub budget: Option<&'a BudgetTracker>,
    /// Record every rendered grading prompt (for auditing isolation).
    pub keep_prompts: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub results: Vec<ComboResult>,
    /// `(combo, grader, record id, prompt)` when `keep_prompts` is set.
    pub prompts: Vec<(ComboKey, String, String, String)>,
}

pub fn run_grading_sweep(
    records: &[AssessmentRecord],
    feedback_runs: &FeedbackRuns,
    grading: &GradingConfig,
    provider: &dyn CompletionProvider,
) -> Result<Vec<ComboResult>, SweepError> {
    run_grading_sweep_with(records, feedback_runs, grading, provider, SweepOptions::default())
        .map(|out| out.results)
}

pub fn run_grading_sweep_with(
    records: &[AssessmentRecord],
    feedback_runs: &FeedbackRuns,
    grading: &GradingConfig,
    provider: &dyn CompletionProvider,
    options: SweepOptions<'_>,
) -> Result<SweepOutput, SweepError> {
    grading.validate()?;
    if records.len() < 2 {
        return Err(SweepError::TooFewRecords(records.len()));
    }
    let human = grade_vector(records, GradeSource::Reconciled)?;
    for (key, feedback) in feedback_runs {
        if let Some(missing) = records.iter().find(|r| !feedback.contains_key(&r.id)) {
            return Err(SweepError::MissingFeedback {
                workflow: key.workflow.clone(),
                feedback_model: key.feedback_model.clone(),
                record: missing.id.clone(),
            });
        }
    }

    let tasks: Vec<(usize, usize)> = (0..feedback_runs.len())
        .flat_map(|c| (0..grading.graders.len()).map(move |g| (c, g)))
        .collect();
    let mut graded: Vec<(usize, usize, GradedCombo)> = tasks
        .into_par_iter()
        .map(|(c, g)| {
            let (key, feedback) = feedback_runs.get_index(c).expect("combo index");
            grade_combo(records, &human, key, feedback, &grading.graders[g], grading, provider, options)
                .map(|out| (c, g, out))
        })
        .collect::<Result<_, _>>()?;
    graded.sort_by_key(|(c, g, _)| (*c, *g));

    let mut output = SweepOutput::default();
    for (_, _, combo) in graded {
        output.results.push(combo.result);
        output.prompts.extend(combo.prompts);
    }
    Ok(output)
}

struct GradedCombo {
    result: ComboResult,
    prompts: Vec<(ComboKey, String, String, String)>,
}

#[allow(clippy::too_many_arguments)]
fn grade_combo(
    records: &[AssessmentRecord],
    human: &[i64],
    key: &ComboKey,
    feedback: &BTreeMap<String, String>,
    grader: &str,
    grading: &GradingConfig,
    provider: &dyn CompletionProvider,
    options: SweepOptions<'_>,
) -> Result<GradedCombo, SweepError> {
    let mut machine = Vec::with_capacity(records.len());
    let mut paired_human = Vec::with_capacity(records.len());
    let mut prompts = Vec::new();
    let mut words = 0usize;
    let mut dropped = 0usize;
    for (record, &human_grade) in records.iter().zip(human) {
        let text = &feedback[&record.id];
        words += word_count(text);
        let prompt = grading.render(record, text);
        if let Some(budget) = options.budget {
            budget.ensure_open().map_err(|source| SweepError::Budget {
                grader: grader.to_string(),
                source,
            })?;
        }
        let mut request = CompletionRequest::new(grader, prompt.clone()).with_step(GRADE_STEP);
        request.temperature = grading.temperature;
        let response = provider.complete(&request).map_err(|source| SweepError::Provider {
            grader: grader.to_string(),
            record: record.id.clone(),
            source,
        })?;
        if let Some(budget) = options.budget {
            budget
                .charge(grader, response.prompt_tokens, response.completion_tokens)
                .map_err(|source| SweepError::Budget {
                    grader: grader.to_string(),
                    source,
                })?;
        }
        if options.keep_prompts {
            prompts.push((key.clone(), grader.to_string(), record.id.clone(), prompt));
        }
        match parse_grade(&response.text, grading.lenient) {
            Ok(parsed) => {
                machine.push(parsed.grade);
                paired_human.push(human_grade);
            }
            Err(err) => {
                warn!(grader, record = %record.id, workflow = %key.workflow, "{err}");
                dropped += 1;
            }
        }
    }

    let report = agreement(&machine, &paired_human).ok();
    let drop_fraction = dropped as f64 / records.len() as f64;
    let invalid = if drop_fraction > grading.max_drop_fraction {
        Some(format!(
            "{dropped} of {} grades unparsable (limit {:.0}%)",
            records.len(),
            grading.max_drop_fraction * 100.0
        ))
    } else {
        match &report {
            None => Some("fewer than 2 graded records".to_string()),
            Some(r) if r.pearson_r.is_none() || r.kendall_tau.is_none() => {
                Some("correlation undefined (constant grades)".to_string())
            }
            Some(_) => None,
        }
    };
    Ok(GradedCombo {
        result: ComboResult {
            workflow: key.workflow.clone(),
            feedback_model: key.feedback_model.clone(),
            grading_model: grader.to_string(),
            report,
            avg_feedback_words: words as f64 / records.len() as f64,
            dropped,
            invalid,
        },
        prompts,
    })
}
