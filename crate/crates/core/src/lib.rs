//! Directive-driven feedback generation for free-form mathematics homework.
//!
//! A workflow is a small JSON document of named prompt templates ("directives")
//! whose curly-brace placeholders reference external inputs or the outputs of
//! earlier directives. [`directive`] parses, plans and executes such workflows
//! against a [`providers::CompletionProvider`]; [`evaluation`] turns generated
//! feedback into grades with a panel of grading models and scores every
//! workflow/model combination by its worst-performing grader.

pub mod dataset;
pub mod digest;
pub mod directive;
pub mod evaluation;
pub mod providers;

pub use directive::{
    build_plan, execute, extract_placeholders, parse_config, precompute, DirectiveConfig,
    RunTrace, StepRecord, WorkflowPlan,
};
