//! Report files: per-grader results as CSV and robustness tables as
//! Markdown or CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::AgreementReport;
use super::robustness::{RobustnessRow, WorkflowSummary};
use super::sweep::ComboResult;

pub const COMBOS_CSV: &str = "combos.csv";
pub const ROBUSTNESS_MD: &str = "robustness.md";
pub const ROBUSTNESS_CSV: &str = "robustness.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const PLOT_CSV: &str = "workflow_plot.csv";
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// One line of `combos.csv`. Numbers keep full precision so the file
/// round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ComboRow {
    workflow: String,
    feedback_model: String,
    grading_model: String,
    n: Option<usize>,
    pearson: Option<f64>,
    kendall: Option<f64>,
    spearman: Option<f64>,
    exact_pct: Option<f64>,
    close_pct: Option<f64>,
    mean_diff: Option<f64>,
    mae: Option<f64>,
    mse: Option<f64>,
    avg_feedback_words: f64,
    dropped: usize,
    invalid: Option<String>,
}

impl From<&ComboResult> for ComboRow {
    fn from(r: &ComboResult) -> Self {
        let rep = r.report.as_ref();
        ComboRow {
            workflow: r.workflow.clone(),
            feedback_model: r.feedback_model.clone(),
            grading_model: r.grading_model.clone(),
            n: rep.map(|x| x.n),
            pearson: rep.and_then(|x| x.pearson_r),
            kendall: rep.and_then(|x| x.kendall_tau),
            spearman: rep.and_then(|x| x.spearman_rho),
            exact_pct: rep.map(|x| x.exact_pct),
            close_pct: rep.map(|x| x.close_pct),
            mean_diff: rep.map(|x| x.mean_diff),
            mae: rep.map(|x| x.mae),
            mse: rep.map(|x| x.mse),
            avg_feedback_words: r.avg_feedback_words,
            dropped: r.dropped,
            invalid: r.invalid.clone(),
        }
    }
}

impl From<ComboRow> for ComboResult {
    fn from(r: ComboRow) -> Self {
        let report = match (r.n, r.exact_pct, r.close_pct, r.mean_diff, r.mae, r.mse) {
            (Some(n), Some(exact_pct), Some(close_pct), Some(mean_diff), Some(mae), Some(mse)) => {
                Some(AgreementReport {
                    n,
                    pearson_r: r.pearson,
                    kendall_tau: r.kendall,
                    spearman_rho: r.spearman,
                    exact_pct,
                    close_pct,
                    mean_diff,
                    mae,
                    mse,
                })
            }
            _ => None,
        };
        ComboResult {
            workflow: r.workflow,
            feedback_model: r.feedback_model,
            grading_model: r.grading_model,
            report,
            avg_feedback_words: r.avg_feedback_words,
            dropped: r.dropped,
            invalid: r.invalid,
        }
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ReportError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_combos_csv(path: impl AsRef<Path>, results: &[ComboResult]) -> Result<(), ReportError> {
    write_rows(path.as_ref(), results.iter().map(ComboRow::from))
}

pub fn read_combos_csv(path: impl AsRef<Path>) -> Result<Vec<ComboResult>, ReportError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    reader
        .deserialize::<ComboRow>()
        .map(|row| row.map(ComboResult::from).map_err(csv_err(path)))
        .collect()
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

fn markdown_table(out: &mut String, headers: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", headers.join(" | "));
    let _ = writeln!(out, "|{}|", headers.iter().map(|_| "---").collect::<Vec<_>>().join("|"));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out.push('\n');
}

const ROW_HEADERS: [&str; 12] = [
    "Workflow",
    "Model",
    "Worst Pearson",
    "Worst Grader",
    "Best Pearson",
    "Best Grader",
    "Worst Kendall",
    "Best Kendall",
    "Avg Pearson",
    "Avg Kendall",
    "Range (r)",
    "Avg Length",
];

fn row_cells(r: &RobustnessRow) -> Vec<String> {
    vec![
        r.workflow.clone(),
        r.feedback_model.clone(),
        f3(r.worst_pearson),
        r.worst_pearson_grader.clone(),
        f3(r.best_pearson),
        r.best_pearson_grader.clone(),
        f3(r.worst_kendall),
        f3(r.best_kendall),
        f3(r.avg_pearson),
        f3(r.avg_kendall),
        f3(r.range_pearson),
        format!("{:.0}", r.avg_feedback_words),
    ]
}

const SUMMARY_HEADERS: [&str; 7] = [
    "Workflow",
    "Configs",
    "Median Worst r",
    "Best Worst r",
    "Median Range r",
    "Median Worst tau",
    "Median Avg tau",
];

fn summary_cells(s: &WorkflowSummary) -> Vec<String> {
    vec![
        s.workflow.clone(),
        s.n_configs.to_string(),
        f3(s.median_worst_pearson),
        f3(s.best_worst_pearson),
        f3(s.median_range_pearson),
        f3(s.median_worst_kendall),
        f3(s.median_avg_kendall),
    ]
}

/// Markdown report. `rows` must already be sorted best first.
pub fn render_markdown(rows: &[RobustnessRow], summaries: &[WorkflowSummary], top_k: usize) -> String {
    let mut out = String::from("# Robustness report\n\n");
    let k = top_k.min(rows.len());

    out.push_str(&format!("## Top {k} combinations by worst-case Pearson\n\n"));
    markdown_table(&mut out, &ROW_HEADERS, rows[..k].iter().map(row_cells));

    out.push_str(&format!("## Bottom {k} combinations by worst-case Pearson\n\n"));
    markdown_table(&mut out, &ROW_HEADERS, rows[rows.len() - k..].iter().map(row_cells));

    out.push_str("## Workflow summary\n\n");
    markdown_table(&mut out, &SUMMARY_HEADERS, summaries.iter().map(summary_cells));

    let mut by_model: IndexMap<&str, Vec<&RobustnessRow>> = IndexMap::new();
    for row in rows {
        by_model.entry(row.feedback_model.as_str()).or_default().push(row);
    }
    by_model.sort_keys();
    for (model, model_rows) in by_model {
        out.push_str(&format!("## Performance ranges for feedback model {model}\n\n"));
        markdown_table(&mut out, &ROW_HEADERS, model_rows.into_iter().map(row_cells));
    }
    out
}

#[derive(Serialize)]
struct RobustnessCsvRow<'a> {
    workflow: &'a str,
    feedback_model: &'a str,
    worst_pearson: String,
    worst_pearson_grader: &'a str,
    best_pearson: String,
    best_pearson_grader: &'a str,
    worst_kendall: String,
    worst_kendall_grader: &'a str,
    best_kendall: String,
    best_kendall_grader: &'a str,
    avg_pearson: String,
    avg_kendall: String,
    range_pearson: String,
    avg_feedback_words: String,
}

#[derive(Serialize)]
struct SummaryCsvRow<'a> {
    workflow: &'a str,
    n_configs: usize,
    median_worst_pearson: String,
    best_worst_pearson: String,
    median_range_pearson: String,
    median_worst_kendall: String,
    median_avg_kendall: String,
}

#[derive(Serialize)]
struct PlotCsvRow<'a> {
    workflow: &'a str,
    median_worst_pearson: String,
    median_range_pearson: String,
}

fn write_summary_csv(path: &Path, summaries: &[WorkflowSummary]) -> Result<(), ReportError> {
    write_rows(
        path,
        summaries.iter().map(|s| SummaryCsvRow {
            workflow: &s.workflow,
            n_configs: s.n_configs,
            median_worst_pearson: f3(s.median_worst_pearson),
            best_worst_pearson: f3(s.best_worst_pearson),
            median_range_pearson: f3(s.median_range_pearson),
            median_worst_kendall: f3(s.median_worst_kendall),
            median_avg_kendall: f3(s.median_avg_kendall),
        }),
    )
}

/// Write report files into `dir` and return their paths. The workflow
/// summary CSV is written in both formats.
pub fn emit_reports(
    rows: &[RobustnessRow],
    summaries: &[WorkflowSummary],
    dir: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, ReportError> {
    if rows.is_empty() || summaries.is_empty() {
        return Err(ReportError::Empty);
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Markdown => {
            let path = dir.join(ROBUSTNESS_MD);
            fs::write(&path, render_markdown(rows, summaries, DEFAULT_TOP_K)).map_err(|source| {
                ReportError::Io {
                    path: path.clone(),
                    source,
                }
            })?;
            written.push(path);
        }
        ReportFormat::Csv => {
            let path = dir.join(ROBUSTNESS_CSV);
            write_rows(
                &path,
                rows.iter().map(|r| RobustnessCsvRow {
                    workflow: &r.workflow,
                    feedback_model: &r.feedback_model,
                    worst_pearson: f3(r.worst_pearson),
                    worst_pearson_grader: &r.worst_pearson_grader,
                    best_pearson: f3(r.best_pearson),
                    best_pearson_grader: &r.best_pearson_grader,
                    worst_kendall: f3(r.worst_kendall),
                    worst_kendall_grader: &r.worst_kendall_grader,
                    best_kendall: f3(r.best_kendall),
                    best_kendall_grader: &r.best_kendall_grader,
                    avg_pearson: f3(r.avg_pearson),
                    avg_kendall: f3(r.avg_kendall),
                    range_pearson: f3(r.range_pearson),
                    avg_feedback_words: format!("{:.1}", r.avg_feedback_words),
                }),
            )?;
            written.push(path);
            let path = dir.join(PLOT_CSV);
            write_rows(
                &path,
                summaries.iter().map(|s| PlotCsvRow {
                    workflow: &s.workflow,
                    median_worst_pearson: f3(s.median_worst_pearson),
                    median_range_pearson: f3(s.median_range_pearson),
                }),
            )?;
            written.push(path);
        }
    }
    let path = dir.join(SUMMARY_CSV);
    write_summary_csv(&path, summaries)?;
    written.push(path);
    Ok(written)
}
