//! Worst-case-grader aggregation.
//!
//! A feedback model/workflow combination is scored by the grading model that
//! agrees worst with the human grades.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::sweep::{ComboKey, ComboResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub workflow: String,
    pub feedback_model: String,
    pub n_graders: usize,
    pub worst_pearson: f64,
    pub worst_pearson_grader: String,
    pub best_pearson: f64,
    pub best_pearson_grader: String,
    pub worst_kendall: f64,
    pub worst_kendall_grader: String,
    pub best_kendall: f64,
    pub best_kendall_grader: String,
    pub range_pearson: f64,
    pub avg_pearson: f64,
    pub avg_kendall: f64,
    pub avg_feedback_words: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSummary {
    pub workflow: String,
    pub n_configs: usize,
    pub median_worst_pearson: f64,
    pub best_worst_pearson: f64,
    pub median_range_pearson: f64,
    pub median_worst_kendall: f64,
    pub median_avg_kendall: f64,
}

/// Median; an even count averages the two middle values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Index of the minimum (`want_max = false`) or maximum value; ties keep the
/// earliest index.
fn extreme(values: &[f64], want_max: bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        let better = if want_max { v > values[best] } else { v < values[best] };
        if better {
            best = i;
        }
    }
    best
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregate valid grader results per combination and per workflow.
///
/// Invalid results and results with undefined correlations are skipped.
/// Grader ties resolve to the grader that appears first in `results`, so
/// passing results in configured grader order gives configured-order ties.
/// Rows are sorted by worst Pearson, best first; the sort is stable, so equal
/// rows keep their first-appearance order. Summaries follow the order in
/// which workflows first appear.
pub fn robustness(results: &[ComboResult]) -> (Vec<RobustnessRow>, Vec<WorkflowSummary>) {
    let mut grader_rank: IndexMap<&str, ()> = IndexMap::new();
    let mut combos: IndexMap<ComboKey, Vec<(&str, f64, f64, f64)>> = IndexMap::new();
    for r in results {
        grader_rank.entry(r.grading_model.as_str()).or_default();
        let (Some(p), Some(k), true) = (r.pearson(), r.kendall(), r.is_valid()) else {
            continue;
        };
        combos
            .entry(r.key())
            .or_default()
            .push((r.grading_model.as_str(), p, k, r.avg_feedback_words));
    }

    let mut rows: Vec<RobustnessRow> = combos
        .into_iter()
        .map(|(key, mut graders)| {
            graders.sort_by_key(|g| grader_rank.get_index_of(g.0));
            let pearsons: Vec<f64> = graders.iter().map(|g| g.1).collect();
            let kendalls: Vec<f64> = graders.iter().map(|g| g.2).collect();
            let (wp, bp) = (extreme(&pearsons, false), extreme(&pearsons, true));
            let (wk, bk) = (extreme(&kendalls, false), extreme(&kendalls, true));
            RobustnessRow {
                workflow: key.workflow,
                feedback_model: key.feedback_model,
                n_graders: graders.len(),
                worst_pearson: pearsons[wp],
                worst_pearson_grader: graders[wp].0.to_string(),
                best_pearson: pearsons[bp],
                best_pearson_grader: graders[bp].0.to_string(),
                worst_kendall: kendalls[wk],
                worst_kendall_grader: graders[wk].0.to_string(),
                best_kendall: kendalls[bk],
                best_kendall_grader: graders[bk].0.to_string(),
                range_pearson: pearsons[bp] - pearsons[wp],
                avg_pearson: mean(&pearsons),
                avg_kendall: mean(&kendalls),
                avg_feedback_words: graders[0].3,
            }
        })
        .collect();

    let mut by_workflow: IndexMap<&str, Vec<&RobustnessRow>> = IndexMap::new();
    for row in &rows {
        by_workflow.entry(row.workflow.as_str()).or_default().push(row);
    }
    let summaries = by_workflow
        .into_iter()
        .map(|(workflow, rows)| {
            let worst: Vec<f64> = rows.iter().map(|r| r.worst_pearson).collect();
            let range: Vec<f64> = rows.iter().map(|r| r.range_pearson).collect();
            let worst_k: Vec<f64> = rows.iter().map(|r| r.worst_kendall).collect();
            let avg_k: Vec<f64> = rows.iter().map(|r| r.avg_kendall).collect();
            WorkflowSummary {
                workflow: workflow.to_string(),
                n_configs: rows.len(),
                median_worst_pearson: median(&worst),
                best_worst_pearson: worst.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                median_range_pearson: median(&range),
                median_worst_kendall: median(&worst_k),
                median_avg_kendall: median(&avg_k),
            }
        })
        .collect();

    rows.sort_by(|a, b| b.worst_pearson.total_cmp(&a.worst_pearson));
    (rows, summaries)
}
