//! Parsing, planning and execution of directive workflows.

pub mod cache;
pub mod config;
mod execute;
pub mod plan;
pub mod template;

pub use cache::{CacheEntry, CacheKey, DirCache, MemoryCache, NoCache, StepCache};
pub use config::{parse_config, ConfigError, Directive, DirectiveConfig, StepParams};
pub use execute::{
    execute, override_cached_output, precompute, Engine, EngineError, ExecutionFailure, RunTrace,
    StepRecord,
};
pub use plan::{build_plan, PlanError, WorkflowPlan, DEFAULT_SUBMISSION_INPUT};
pub use template::{extract_placeholders, substitute};
