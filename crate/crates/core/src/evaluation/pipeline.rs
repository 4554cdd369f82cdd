//! Manifest-driven evaluation: generate feedback for every workflow and
//! feedback model, grade it with every grading model, and write reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use super::report::{emit_reports, write_combos_csv, ReportError, ReportFormat, COMBOS_CSV};
use super::robustness::robustness;
use super::sweep::{
    question_text, run_grading_sweep_with, ComboKey, ComboResult, FeedbackRuns, GradingConfig,
    SweepError, SweepOptions,
};
use crate::dataset::{load_dataset, AssessmentRecord, DatasetError};
use crate::directive::{
    build_plan, parse_config, ConfigError, DirectiveConfig, Engine, ExecutionFailure, PlanError,
    RunTrace, StepCache,
};
use crate::providers::{BudgetTracker, CompletionProvider};

pub const DEFAULT_FEEDBACK_NODE: &str = "llm_feedback";
pub const DEFAULT_QUESTION_INPUT: &str = "prompt";
pub const DEFAULT_MARKSCHEME_INPUT: &str = "human_markscheme";
pub const GENERIC_MARKSCHEME: &str = include_str!("../../../../fixtures/prompts/generic_markscheme.txt");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("workflow `{workflow}`: {source}")]
    Config {
        workflow: String,
        #[source]
        source: ConfigError,
    },
    #[error("workflow `{workflow}`: {source}")]
    Plan {
        workflow: String,
        #[source]
        source: PlanError,
    },
    #[error("workflow `{workflow}` has no feedback node `{node}`")]
    NoFeedbackNode { workflow: String, node: String },
    #[error("{workflow}/{feedback_model} on record `{record}`: {source}")]
    Feedback {
        workflow: String,
        feedback_model: String,
        record: String,
        #[source]
        source: Box<ExecutionFailure>,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn default_feedback_node() -> String {
    DEFAULT_FEEDBACK_NODE.to_string()
}

fn default_submission_input() -> String {
    crate::directive::DEFAULT_SUBMISSION_INPUT.to_string()
}

fn default_question_input() -> String {
    DEFAULT_QUESTION_INPUT.to_string()
}

/// Sweep manifest. Relative paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Directive config files; a workflow is named after its file stem.
    pub workflows: Vec<PathBuf>,
    pub feedback_models: Vec<String>,
    pub grading: GradingConfig,
    /// Text for the generic mark scheme input. Defaults to the bundled one.
    #[serde(default)]
    pub markscheme: Option<PathBuf>,
    #[serde(default = "default_feedback_node")]
    pub feedback_node: String,
    #[serde(default = "default_submission_input")]
    pub submission_input: String,
    #[serde(default = "default_question_input")]
    pub question_input: String,
}

impl SweepManifest {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: SweepManifest =
            serde_json::from_str(&raw).map_err(|e| PipelineError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        manifest.resolve_against(base);
        Ok(manifest)
    }

    pub fn resolve_against(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.dataset);
        join(&mut self.output_dir);
        self.workflows.iter_mut().for_each(join);
        if let Some(m) = self.markscheme.as_mut() {
            join(m);
        }
    }
}

/// A named, parsed workflow.
#[derive(Debug, Clone)]
pub struct Workflow {
    pub name: String,
    pub config: DirectiveConfig,
}

impl Workflow {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        // Stems like `systematic5.0` keep their version suffix.
        let name = match path.extension() {
            Some(ext) if ext != "json" => path.file_name().unwrap().to_string_lossy().into_owned(),
            _ => name,
        };
        let raw = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = parse_config(&raw).map_err(|source| PipelineError::Config {
            workflow: name.clone(),
            source,
        })?;
        Ok(Workflow { name, config })
    }
}

/// Settings shared by every feedback run.
pub struct FeedbackSettings<'a> {
    pub feedback_node: &'a str,
    pub submission_input: &'a str,
    pub question_input: &'a str,
    /// Inputs supplied to every run, such as the generic mark scheme.
    pub shared_inputs: BTreeMap<String, String>,
    pub cache: &'a dyn StepCache,
    pub budget: Option<&'a BudgetTracker>,
    pub measure_latency: bool,
}

/// One generated feedback run.
#[derive(Debug, Clone)]
pub struct FeedbackTrace {
    pub combo: ComboKey,
    pub record: String,
    pub trace: RunTrace,
}

/// Run every workflow with every feedback model over every record, stopping
/// at the feedback node. The grading node, if present, is not executed.
pub fn generate_feedback(
    workflows: &[Workflow],
    feedback_models: &[String],
    records: &[AssessmentRecord],
    provider: &dyn CompletionProvider,
    settings: &FeedbackSettings<'_>,
) -> Result<(FeedbackRuns, Vec<FeedbackTrace>), PipelineError> {
    let mut jobs = Vec::new();
    for workflow in workflows {
        if workflow.config.directive(settings.feedback_node).and_then(|d| d.template()).is_none() {
            return Err(PipelineError::NoFeedbackNode {
                workflow: workflow.name.clone(),
                node: settings.feedback_node.to_string(),
            });
        }
        for model in feedback_models {
            let config = workflow.config.with_model(model);
            let plan = build_plan(&config, settings.submission_input)
                .and_then(|p| p.restrict_to(settings.feedback_node))
                .map_err(|source| PipelineError::Plan {
                    workflow: workflow.name.clone(),
                    source,
                })?;
            jobs.push((ComboKey::new(&workflow.name, model), config, plan));
        }
    }

    let mut engine = Engine::new(provider, settings.cache).with_latency(settings.measure_latency);
    if let Some(budget) = settings.budget {
        engine = engine.with_budget(budget);
    }
    let tasks: Vec<(usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..records.len()).map(move |r| (j, r)))
        .collect();
    let mut traces: Vec<(usize, usize, RunTrace)> = tasks
        .into_par_iter()
        .map(|(j, r)| {
            let (combo, config, plan) = &jobs[j];
            let record = &records[r];
            let mut inputs = settings.shared_inputs.clone();
            inputs.insert(settings.question_input.to_string(), question_text(record));
            inputs.insert(settings.submission_input.to_string(), record.submission.clone());
            engine
                .execute(plan, config, &inputs)
                .map(|trace| (j, r, trace))
                .map_err(|failure| PipelineError::Feedback {
                    workflow: combo.workflow.clone(),
                    feedback_model: combo.feedback_model.clone(),
                    record: record.id.clone(),
                    source: Box::new(failure),
                })
        })
        .collect::<Result<_, _>>()?;
    traces.sort_by_key(|(j, r, _)| (*j, *r));

    let mut runs = FeedbackRuns::new();
    let mut out = Vec::with_capacity(traces.len());
    for (j, r, trace) in traces {
        let combo = jobs[j].0.clone();
        let text = trace
            .output(settings.feedback_node)
            .expect("restricted plan ends at the feedback node")
            .to_string();
        runs.entry(combo.clone()).or_default().insert(records[r].id.clone(), text);
        out.push(FeedbackTrace {
            combo,
            record: records[r].id.clone(),
            trace,
        });
    }
    Ok((runs, out))
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub results: Vec<ComboResult>,
    pub files: Vec<PathBuf>,
    pub provider_calls: usize,
}

fn safe_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Options for [`run_sweep`] beyond the manifest.
#[derive(Default)]
pub struct SweepRun<'a> {
    pub budget: Option<&'a BudgetTracker>,
    pub cache: Option<&'a dyn StepCache>,
    pub measure_latency: bool,
}

/// Execute a full sweep described by `manifest` and write its outputs.
pub fn run_sweep(
    manifest: &SweepManifest,
    provider: &dyn CompletionProvider,
    options: SweepRun<'_>,
) -> Result<SweepSummary, PipelineError> {
    let records = load_dataset(&manifest.dataset)?;
    let workflows = manifest
        .workflows
        .iter()
        .map(Workflow::load)
        .collect::<Result<Vec<_>, _>>()?;
    let markscheme = match &manifest.markscheme {
        Some(path) => fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?,
        None => GENERIC_MARKSCHEME.to_string(),
    };
    let fallback_cache = crate::directive::MemoryCache::new();
    let settings = FeedbackSettings {
        feedback_node: &manifest.feedback_node,
        submission_input: &manifest.submission_input,
        question_input: &manifest.question_input,
        shared_inputs: BTreeMap::from([(DEFAULT_MARKSCHEME_INPUT.to_string(), markscheme)]),
        cache: options.cache.unwrap_or(&fallback_cache),
        budget: options.budget,
        measure_latency: options.measure_latency,
    };
    info!(
        workflows = workflows.len(),
        models = manifest.feedback_models.len(),
        records = records.len(),
        "generating feedback"
    );
    let (runs, traces) = generate_feedback(&workflows, &manifest.feedback_models, &records, provider, &settings)?;
    let feedback_calls: usize = traces.iter().map(|t| t.trace.provider_calls()).sum();

    info!(graders = manifest.grading.graders.len(), "grading feedback");
    let graded = run_grading_sweep_with(
        &records,
        &runs,
        &manifest.grading,
        provider,
        SweepOptions {
            budget: options.budget,
            keep_prompts: false,
        },
    )?;
    let grading_calls = records.len() * runs.len() * manifest.grading.graders.len();

    let out = &manifest.output_dir;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    let mut files = Vec::new();
    for t in &traces {
        let dir = out
            .join("traces")
            .join(safe_component(&t.combo.workflow))
            .join(safe_component(&t.combo.feedback_model));
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let path = dir.join(format!("{}.json", safe_component(&t.record)));
        fs::write(&path, t.trace.to_json_pretty() + "\n").map_err(io(&path))?;
    }
    let combos = out.join(COMBOS_CSV);
    write_combos_csv(&combos, &graded.results)?;
    files.push(combos);

    let (rows, summaries) = robustness(&graded.results);
    if rows.is_empty() {
        warn!("no valid grader results; robustness reports skipped");
    } else {
        files.extend(emit_reports(&rows, &summaries, out, ReportFormat::Markdown)?);
        files.extend(emit_reports(&rows, &summaries, out, ReportFormat::Csv)?);
        files.sort();
        files.dedup();
    }
    Ok(SweepSummary {
        results: graded.results,
        files,
        provider_calls: feedback_calls + grading_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GradeSet;
    use crate::providers::{MockProvider, Recording};

    const LISTING: &str = include_str!("../../../../fixtures/workflows/ms_w_example_final.json");

    fn records(n: usize) -> Vec<AssessmentRecord> {
        (0..n)
            .map(|i| AssessmentRecord {
                id: format!("r{i:02}"),
                question: format!("Q{i}"),
                context: None,
                submission: format!("S{i}"),
                human_feedback: None,
                grades: GradeSet {
                    reconciled: Some((i % 6) as i64),
                    ..GradeSet::default()
                },
                tags: vec![],
            })
            .collect()
    }

    #[test]
    fn feedback_generation_skips_the_grading_node() {
        let workflows = vec![Workflow {
            name: "ms".into(),
            config: parse_config(LISTING).unwrap(),
        }];
        let cache = crate::directive::MemoryCache::new();
        let settings = FeedbackSettings {
            feedback_node: DEFAULT_FEEDBACK_NODE,
            submission_input: "output",
            question_input: "prompt",
            shared_inputs: BTreeMap::from([(DEFAULT_MARKSCHEME_INPUT.to_string(), GENERIC_MARKSCHEME.to_string())]),
            cache: &cache,
            budget: None,
            measure_latency: false,
        };
        let provider = Recording::new(MockProvider::new(1));
        let models = vec!["m1".to_string(), "m2".to_string()];
        let (runs, traces) = generate_feedback(&workflows, &models, &records(3), &provider, &settings).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(traces.len(), 6);
        // markscheme + llm_feedback per run, no grading step.
        assert_eq!(provider.calls(), 12);
        assert!(provider.requests().iter().all(|r| r.model == "m1" || r.model == "m2"));
        assert!(traces.iter().all(|t| t.trace.step("regraded").is_none()));
        assert!(runs[0]["r00"].starts_with("MOCK:llm_feedback:"));
    }

    #[test]
    fn workflow_names_keep_version_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("systematic5.0");
        fs::write(&path, LISTING).unwrap();
        assert_eq!(Workflow::load(&path).unwrap().name, "systematic5.0");
        let path = dir.path().join("baseline.json");
        fs::write(&path, LISTING).unwrap();
        assert_eq!(Workflow::load(&path).unwrap().name, "baseline");
    }
}
