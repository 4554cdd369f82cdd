//! Grade extraction, agreement statistics, grading sweeps and robustness
//! reports.

pub mod grade;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod robustness;
pub mod sweep;
pub mod words;

pub use grade::{parse_grade, ParsePass, ParsedGrade, UnparsableGrade};
pub use metrics::{agreement, kendall_tau, pearson, spearman, AgreementReport, MetricError};
pub use pipeline::{run_sweep, SweepManifest, SweepRun, SweepSummary};
pub use report::{emit_reports, read_combos_csv, write_combos_csv, ReportFormat};
pub use robustness::{robustness, RobustnessRow, WorkflowSummary};
pub use sweep::{run_grading_sweep, ComboKey, ComboResult, FeedbackRuns, GradingConfig};
pub use words::word_count;
