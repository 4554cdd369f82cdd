//! `tutorflow` command-line interface.

mod error;

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use tutorflow::dataset::load_dataset;
use tutorflow::directive::{
    build_plan, override_cached_output, parse_config, DirCache, DirectiveConfig, Engine,
    MemoryCache, StepCache, WorkflowPlan, DEFAULT_SUBMISSION_INPUT,
};
use tutorflow::evaluation::pipeline::{
    run_sweep, SweepManifest, SweepRun, Workflow, DEFAULT_FEEDBACK_NODE, DEFAULT_MARKSCHEME_INPUT,
    DEFAULT_QUESTION_INPUT, GENERIC_MARKSCHEME,
};
use tutorflow::evaluation::report::{emit_reports, read_combos_csv, ReportFormat, COMBOS_CSV};
use tutorflow::evaluation::robustness;
use tutorflow::evaluation::sweep::question_text;
use tutorflow::providers::{
    BudgetTracker, CompletionProvider, CostTable, LiveConfig, LiveModerator, LiveProvider,
    MockModerator, MockProvider, Moderator, RateLimiter, ScriptedProvider,
};
use tutorflow_service::{
    parse_question_source, AppState, DirStore, KvStore, MemoryStore, Tutor, TutorSettings,
};

use crate::error::CliError;

/// Directive-driven feedback workflows for mathematics homework.
#[derive(Debug, Parser)]
#[command(name = "tutorflow", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Completion backend: `mock`, `scripted:<fixture.json>` or `live`.
    #[arg(long, global = true, default_value = "mock")]
    provider: String,
    /// Base URL of an OpenAI-compatible endpoint (live provider only).
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Spending cap in the currency of the cost table.
    #[arg(long, global = true)]
    budget: Option<f64>,
    /// Per-model prices as JSON: {"model": {"input_per_1k": .., "output_per_1k": ..}}.
    #[arg(long, global = true)]
    costs: Option<PathBuf>,
    /// Seed for the mock provider.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for batch and sweep.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory of the step cache.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and plan a workflow config, printing the execution order.
    Validate {
        config: PathBuf,
        #[arg(long, default_value = DEFAULT_SUBMISSION_INPUT)]
        submission_input: String,
    },
    /// Run a workflow on one question and one submission.
    Run {
        config: PathBuf,
        #[arg(long)]
        question: PathBuf,
        #[arg(long)]
        submission: PathBuf,
        /// Extra inputs as `name=file`.
        #[arg(long = "input", value_name = "NAME=FILE")]
        inputs: Vec<String>,
        /// Override the model of every step.
        #[arg(long)]
        model: Option<String>,
        /// Node whose output is printed.
        #[arg(long, default_value = DEFAULT_FEEDBACK_NODE)]
        node: String,
        /// Write the run trace as JSON to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a workflow on every record of a dataset.
    Batch {
        config: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long = "input", value_name = "NAME=FILE")]
        inputs: Vec<String>,
    },
    /// Precompute the submission-independent steps for a question set.
    Precompute {
        config: PathBuf,
        questions: PathBuf,
        #[arg(long = "input", value_name = "NAME=FILE")]
        inputs: Vec<String>,
    },
    /// Step-cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Generate, grade and score feedback as described by a sweep manifest.
    Sweep {
        manifest: PathBuf,
        /// Override the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild robustness reports from a sweep's combos.csv.
    Report {
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
    },
    /// Serve the tutoring HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Workflow configs; the first is the default.
        #[arg(long = "workflow", required = true)]
        workflows: Vec<PathBuf>,
        /// Question set to ingest at startup.
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Directory for questions, traces and the step cache. In memory when absent.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Submissions per user per window.
        #[arg(long, default_value_t = 20)]
        quota: u32,
        #[arg(long, default_value_t = 86_400)]
        window_secs: u64,
        /// Model for the advisory truncation check.
        #[arg(long)]
        completeness_model: Option<String>,
        /// Environment variable holding the admin token.
        #[arg(long, default_value = "TUTORFLOW_ADMIN_TOKEN")]
        admin_token_env: String,
    },
}

#[derive(Debug, Subcommand)]
enum CacheAction {
    /// Replace the cached output of a precomputable node.
    Set {
        config: PathBuf,
        node: String,
        /// File holding the replacement text.
        file: PathBuf,
        /// Plain-text question as the model sees it.
        #[arg(long, conflicts_with_all = ["question_set", "question_id"])]
        question: Option<PathBuf>,
        /// Question-set source to take the question from.
        #[arg(long, requires = "question_id")]
        question_set: Option<PathBuf>,
        #[arg(long, requires = "question_set")]
        question_id: Option<String>,
        #[arg(long = "input", value_name = "NAME=FILE")]
        inputs: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Markdown => ReportFormat::Markdown,
        }
    }
}

enum ProviderKind {
    Mock,
    Scripted(PathBuf),
    Live,
}

fn provider_kind(spec: &str) -> Result<ProviderKind, CliError> {
    match spec {
        "mock" => Ok(ProviderKind::Mock),
        "live" => Ok(ProviderKind::Live),
        other => match other.strip_prefix("scripted:") {
            Some(path) if !path.is_empty() => Ok(ProviderKind::Scripted(PathBuf::from(path))),
            _ => Err(CliError::Usage(format!(
                "unknown provider `{other}`; expected mock, scripted:<fixture> or live"
            ))),
        },
    }
}

impl GlobalArgs {
    fn live_config(&self) -> Result<LiveConfig, CliError> {
        Ok(LiveConfig::from_env(self.base_url.as_deref())?)
    }

    fn provider(&self) -> Result<Arc<dyn CompletionProvider>, CliError> {
        Ok(match provider_kind(&self.provider)? {
            ProviderKind::Mock => Arc::new(MockProvider::new(self.seed)),
            ProviderKind::Scripted(path) => Arc::new(ScriptedProvider::from_file(path)?),
            ProviderKind::Live => Arc::new(LiveProvider::new(self.live_config()?)?),
        })
    }

    fn moderator(&self) -> Result<Arc<dyn Moderator>, CliError> {
        Ok(match provider_kind(&self.provider)? {
            ProviderKind::Live => Arc::new(LiveModerator::new(self.live_config()?)?),
            _ => Arc::new(MockModerator::default()),
        })
    }

    /// Offline providers record zero latency so their outputs are reproducible.
    fn measure_latency(&self) -> bool {
        matches!(provider_kind(&self.provider), Ok(ProviderKind::Live))
    }

    fn budget(&self) -> Result<Option<BudgetTracker>, CliError> {
        let table = match &self.costs {
            Some(path) => CostTable::from_file(path)?,
            None => CostTable::new(),
        };
        Ok(match (self.budget, &self.costs) {
            (Some(cap), _) if !(cap >= 0.0) => {
                return Err(CliError::Usage(format!("--budget must be non-negative, got {cap}")))
            }
            (Some(cap), _) => Some(BudgetTracker::new(table, Some(cap))),
            (None, Some(_)) => Some(BudgetTracker::unlimited(table)),
            (None, None) => None,
        })
    }

    fn cache(&self) -> Result<Arc<dyn StepCache>, CliError> {
        Ok(match &self.cache_dir {
            Some(dir) => Arc::new(DirCache::open(dir).map_err(|e| CliError::Cache(e.to_string()))?),
            None => Arc::new(MemoryCache::new()),
        })
    }

    fn required_cache(&self, command: &str) -> Result<Arc<dyn StepCache>, CliError> {
        if self.cache_dir.is_none() {
            return Err(CliError::Usage(format!("`{command}` needs --cache-dir")));
        }
        self.cache()
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

fn load_config(path: &Path, model: Option<&str>) -> Result<DirectiveConfig, CliError> {
    let config = parse_config(&read(path)?).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(match model {
        Some(model) => config.with_model(model),
        None => config,
    })
}

/// `name=file` pairs, read eagerly. Later pairs win.
fn extra_inputs(pairs: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let (name, file) = pair
            .split_once('=')
            .filter(|(n, f)| !n.is_empty() && !f.is_empty())
            .ok_or_else(|| CliError::Usage(format!("--input expects NAME=FILE, got `{pair}`")))?;
        out.insert(name.to_string(), read(Path::new(file))?);
    }
    Ok(out)
}

/// Inputs every command supplies: the generic mark scheme plus `--input` overrides.
fn base_inputs(pairs: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    let mut inputs = BTreeMap::from([(
        DEFAULT_MARKSCHEME_INPUT.to_string(),
        GENERIC_MARKSCHEME.to_string(),
    )]);
    inputs.extend(extra_inputs(pairs)?);
    Ok(inputs)
}

fn engine<'a>(
    provider: &'a dyn CompletionProvider,
    cache: &'a dyn StepCache,
    budget: Option<&'a BudgetTracker>,
    global: &GlobalArgs,
) -> Engine<'a> {
    let engine = Engine::new(provider, cache).with_latency(global.measure_latency());
    match budget {
        Some(b) => engine.with_budget(b),
        None => engine,
    }
}

fn report_spend(budget: Option<&BudgetTracker>) {
    if let Some(budget) = budget {
        tracing::info!(total = budget.total(), cap = ?budget.cap(), "spend");
        for model in budget.unpriced_models() {
            tracing::warn!(%model, "no price for model; its calls were not charged");
        }
    }
}

fn validate(config: &Path, submission_input: &str) -> Result<(), CliError> {
    let config = load_config(config, None)?;
    let plan = build_plan(&config, submission_input)?;
    println!("{}", plan.order.join(" → "));
    let precomputable: Vec<&str> = plan
        .order
        .iter()
        .filter(|n| plan.is_precomputable(n))
        .map(String::as_str)
        .collect();
    println!("precomputable: {}", precomputable.join(", "));
    println!("inputs: {}", plan.external_inputs.join(", "));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    global: &GlobalArgs,
    config: &Path,
    question: &Path,
    submission: &Path,
    inputs: &[String],
    model: Option<&str>,
    node: &str,
    trace_out: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(config, model)?;
    let plan = build_plan(&config, DEFAULT_SUBMISSION_INPUT)?;
    if plan.node(node).is_none() {
        return Err(CliError::Usage(format!("workflow has no directive `{node}`")));
    }
    let mut values = base_inputs(inputs)?;
    values.insert(DEFAULT_QUESTION_INPUT.to_string(), read(question)?);
    values.insert(DEFAULT_SUBMISSION_INPUT.to_string(), read(submission)?);

    let provider = global.provider()?;
    let cache = global.cache()?;
    let budget = global.budget()?;
    let result = engine(provider.as_ref(), cache.as_ref(), budget.as_ref(), global)
        .execute(&plan, &config, &values);
    report_spend(budget.as_ref());
    let trace = match result {
        Ok(trace) => trace,
        Err(failure) => {
            if let Some(path) = trace_out {
                write(path, failure.trace.to_json_pretty() + "\n")?;
            }
            return Err(failure.into());
        }
    };
    if let Some(path) = trace_out {
        write(path, trace.to_json_pretty() + "\n")?;
    }
    println!("{}", trace.output(node).unwrap_or_default());
    Ok(())
}

fn batch(
    global: &GlobalArgs,
    config: &Path,
    dataset: &Path,
    out: &Path,
    model: Option<&str>,
    inputs: &[String],
) -> Result<(), CliError> {
    let config = load_config(config, model)?;
    let plan = build_plan(&config, DEFAULT_SUBMISSION_INPUT)?;
    let records = load_dataset(dataset)?;
    let shared = base_inputs(inputs)?;
    let provider = global.provider()?;
    let cache = global.cache()?;
    let budget = global.budget()?;
    let engine = engine(provider.as_ref(), cache.as_ref(), budget.as_ref(), global);

    let results: Vec<_> = records
        .par_iter()
        .map(|record| {
            let mut values = shared.clone();
            values.insert(DEFAULT_QUESTION_INPUT.to_string(), question_text(record));
            values.insert(DEFAULT_SUBMISSION_INPUT.to_string(), record.submission.clone());
            (record.id.clone(), engine.execute(&plan, &config, &values))
        })
        .collect();
    report_spend(budget.as_ref());

    let traces_dir = out.join("traces");
    let mut summary = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (id, result) in &results {
        let (trace, error) = match result {
            Ok(trace) => (trace, None),
            Err(failure) => {
                failed += 1;
                (&failure.trace, Some(failure.error.to_string()))
            }
        };
        write(&traces_dir.join(format!("{id}.json")), trace.to_json_pretty() + "\n")?;
        summary.push(json!({
            "id": id,
            "feedback": trace.output(DEFAULT_FEEDBACK_NODE),
            "error": error,
        }));
    }
    let summary_path = out.join("batch.json");
    write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;
    println!(
        "{}",
        json!({"records": results.len(), "failed": failed, "summary": summary_path})
    );
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: results.len(),
        });
    }
    Ok(())
}

fn question_inputs(
    shared: &BTreeMap<String, String>,
    model_text: String,
) -> BTreeMap<String, String> {
    let mut values = shared.clone();
    values.insert(DEFAULT_QUESTION_INPUT.to_string(), model_text);
    values
}

fn precompute(
    global: &GlobalArgs,
    config: &Path,
    questions: &Path,
    inputs: &[String],
) -> Result<(), CliError> {
    let config = load_config(config, None)?;
    let plan = build_plan(&config, DEFAULT_SUBMISSION_INPUT)?;
    let drafts = parse_question_source(&read(questions)?)?;
    let shared = base_inputs(inputs)?;
    let provider = global.provider()?;
    let cache = global.required_cache("precompute")?;
    let budget = global.budget()?;
    let engine = engine(provider.as_ref(), cache.as_ref(), budget.as_ref(), global);
    let mut failed = 0;
    for draft in &drafts {
        let model_text = if draft.model_context.trim().is_empty() {
            draft.display_text.clone()
        } else {
            format!("{}\n\n{}", draft.display_text, draft.model_context)
        };
        let values = question_inputs(&shared, model_text);
        let line = match engine.precompute(&plan, &config, &values) {
            Ok(written) => json!({"question_id": draft.question_id, "status": "ready", "new_cache_entries": written}),
            Err(failure) => {
                failed += 1;
                json!({"question_id": draft.question_id, "status": "failed", "error": failure.error.to_string()})
            }
        };
        println!("{line}");
    }
    report_spend(budget.as_ref());
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: drafts.len(),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cache_set(
    global: &GlobalArgs,
    config: &Path,
    node: &str,
    file: &Path,
    question: Option<&Path>,
    question_set: Option<&Path>,
    question_id: Option<&str>,
    inputs: &[String],
) -> Result<(), CliError> {
    let config = load_config(config, None)?;
    let plan: WorkflowPlan = build_plan(&config, DEFAULT_SUBMISSION_INPUT)?;
    let model_text = match (question, question_set, question_id) {
        (Some(path), _, _) => read(path)?,
        (None, Some(set), Some(id)) => {
            let drafts = parse_question_source(&read(set)?)?;
            let draft = drafts
                .into_iter()
                .find(|d| d.question_id == id)
                .ok_or_else(|| CliError::Usage(format!("no question `{id}` in {}", set.display())))?;
            if draft.model_context.trim().is_empty() {
                draft.display_text
            } else {
                format!("{}\n\n{}", draft.display_text, draft.model_context)
            }
        }
        _ => {
            return Err(CliError::Usage(
                "cache set needs --question <file> or --question-set <file> --question-id <id>".into(),
            ))
        }
    };
    let values = question_inputs(&base_inputs(inputs)?, model_text);
    let cache = global.required_cache("cache set")?;
    let text = read(file)?;
    let key = override_cached_output(&plan, &config, &values, node, &text, cache.as_ref())?;
    println!("{}", json!({"node": node, "key": key.file_stem()}));
    Ok(())
}

fn sweep(global: &GlobalArgs, manifest_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let mut manifest = SweepManifest::from_file(manifest_path)?;
    if let Some(out) = out {
        manifest.output_dir = out.to_path_buf();
    }
    let provider = global.provider()?;
    let budget = global.budget()?;
    let cache = match &global.cache_dir {
        Some(_) => Some(global.cache()?),
        None => None,
    };
    let summary = run_sweep(
        &manifest,
        provider.as_ref(),
        SweepRun {
            budget: budget.as_ref(),
            cache: cache.as_deref(),
            measure_latency: global.measure_latency(),
        },
    )?;
    report_spend(budget.as_ref());
    let invalid = summary.results.iter().filter(|r| !r.is_valid()).count();
    println!(
        "{}",
        json!({
            "combos": summary.results.len(),
            "invalid": invalid,
            "provider_calls": summary.provider_calls,
            "files": summary.files,
        })
    );
    Ok(())
}

fn report(results: &Path, format: FormatArg) -> Result<(), CliError> {
    let combos = read_combos_csv(results.join(COMBOS_CSV))?;
    let (rows, summaries) = robustness(&combos);
    let files = emit_reports(&rows, &summaries, results, format.into())?;
    println!("{}", json!({"rows": rows.len(), "files": files}));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn serve(
    global: &GlobalArgs,
    bind: SocketAddr,
    workflows: &[PathBuf],
    questions: Option<&Path>,
    data_dir: Option<&Path>,
    quota: u32,
    window_secs: u64,
    completeness_model: Option<String>,
    admin_token_env: &str,
) -> Result<(), CliError> {
    let (store, cache): (Arc<dyn KvStore>, Arc<dyn StepCache>) = match data_dir {
        Some(dir) => (
            Arc::new(DirStore::open(dir)?),
            Arc::new(DirCache::open(dir.join("cache")).map_err(|e| CliError::Cache(e.to_string()))?),
        ),
        None => (Arc::new(MemoryStore::new()), global.cache()?),
    };
    let settings = TutorSettings {
        completeness_model,
        measure_latency: global.measure_latency(),
        ..TutorSettings::default()
    };
    let mut tutor = Tutor::new(
        global.provider()?,
        global.moderator()?,
        cache,
        store,
        RateLimiter::new(quota, Duration::from_secs(window_secs)),
    )
    .with_settings(settings);
    if let Some(budget) = global.budget()? {
        tutor = tutor.with_budget(budget);
    }
    for path in workflows {
        let workflow = Workflow::load(path)?;
        tutor = tutor.with_workflow(workflow.name, workflow.config)?;
    }
    if let Some(path) = questions {
        let report = tutor.ingest(&read(path)?)?;
        tracing::info!(
            questions = report.questions.len(),
            new_cache_entries = report.new_cache_entries,
            "ingested question set"
        );
    }
    let token = std::env::var(admin_token_env).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        tracing::warn!(env = admin_token_env, "admin token not set; admin endpoints disabled");
    }
    let state = AppState::new(Arc::new(tutor), token);
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::io("tokio runtime"))?;
    runtime
        .block_on(tutorflow_service::serve(bind, state))
        .map_err(CliError::io(bind.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let global = &cli.global;
    provider_kind(&global.provider)?;
    if let Some(jobs) = global.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Validate {
            config,
            submission_input,
        } => validate(config, submission_input),
        Command::Run {
            config,
            question,
            submission,
            inputs,
            model,
            node,
            trace,
        } => run(
            global,
            config,
            question,
            submission,
            inputs,
            model.as_deref(),
            node,
            trace.as_deref(),
        ),
        Command::Batch {
            config,
            dataset,
            out,
            model,
            inputs,
        } => batch(global, config, dataset, out, model.as_deref(), inputs),
        Command::Precompute {
            config,
            questions,
            inputs,
        } => precompute(global, config, questions, inputs),
        Command::Cache {
            action:
                CacheAction::Set {
                    config,
                    node,
                    file,
                    question,
                    question_set,
                    question_id,
                    inputs,
                },
        } => cache_set(
            global,
            config,
            node,
            file,
            question.as_deref(),
            question_set.as_deref(),
            question_id.as_deref(),
            inputs,
        ),
        Command::Sweep { manifest, out } => sweep(global, manifest, out.as_deref()),
        Command::Report { results, format } => report(results, *format),
        Command::Serve {
            bind,
            workflows,
            questions,
            data_dir,
            quota,
            window_secs,
            completeness_model,
            admin_token_env,
        } => serve(
            global,
            *bind,
            workflows,
            questions.as_deref(),
            data_dir.as_deref(),
            *quota,
            *window_secs,
            completeness_model.clone(),
            admin_token_env,
        ),
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = err.print();
                std::process::exit(0);
            }
            let message = err.to_string();
            let first = message
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let first = first.trim_start_matches("error: ");
            let usage = CliError::Usage(first.to_string());
            eprintln!("{}", usage.to_json_line());
            std::process::exit(usage.exit_code());
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("{}", err.to_json_line());
        std::process::exit(err.exit_code());
    }
}
