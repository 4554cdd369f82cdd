//! Dependency planning over directives.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use super::config::DirectiveConfig;
use super::template::{candidate_placeholders, extract_placeholders};

/// Conventional name of the input marker holding the student submission.
pub const DEFAULT_SUBMISSION_INPUT: &str = "output";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("submission input `{0}` is not an input marker of this config")]
    UnknownSubmissionInput(String),
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown directive `{0}`")]
    UnknownNode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanNode {
    pub name: String,
    /// Placeholders of the node's template, in first-occurrence order.
    pub deps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkflowPlan {
    /// Executable directives in declaration order.
    pub nodes: Vec<PlanNode>,
    /// Input markers followed by referenced-but-undeclared names.
    pub external_inputs: Vec<String>,
    pub submission_input: String,
    /// Execution order: every node after all of its dependencies, ties
    /// broken by declaration order.
    pub order: Vec<String>,
    /// Nodes whose transitive dependencies exclude the submission input.
    pub precomputable: BTreeSet<String>,
}

impl WorkflowPlan {
    pub fn node(&self, name: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn is_external(&self, name: &str) -> bool {
        self.external_inputs.iter().any(|n| n == name)
    }

    pub fn is_precomputable(&self, name: &str) -> bool {
        self.precomputable.contains(name)
    }

    /// External inputs referenced by at least one node, in plan order.
    pub fn required_inputs(&self) -> Vec<&str> {
        let referenced: HashSet<&str> = self
            .nodes
            .iter()
            .flat_map(|n| n.deps.iter().map(String::as_str))
            .collect();
        self.external_inputs
            .iter()
            .map(String::as_str)
            .filter(|name| referenced.contains(name))
            .collect()
    }

    /// External inputs needed by precomputable nodes only.
    pub fn question_side_inputs(&self) -> Vec<&str> {
        let referenced: HashSet<&str> = self
            .nodes
            .iter()
            .filter(|n| self.precomputable.contains(&n.name))
            .flat_map(|n| n.deps.iter().map(String::as_str))
            .collect();
        self.external_inputs
            .iter()
            .map(String::as_str)
            .filter(|name| referenced.contains(name))
            .collect()
    }

    /// Sub-plan containing `target` and its transitive dependencies.
    pub fn restrict_to(&self, target: &str) -> Result<WorkflowPlan, PlanError> {
        if self.node(target).is_none() {
            return Err(PlanError::UnknownNode(target.to_string()));
        }
        let mut keep = HashSet::new();
        let mut stack = vec![target];
        while let Some(name) = stack.pop() {
            if let Some(node) = self.node(name) {
                if keep.insert(name) {
                    stack.extend(node.deps.iter().map(String::as_str));
                }
            }
        }
        let nodes: Vec<PlanNode> = self
            .nodes
            .iter()
            .filter(|n| keep.contains(n.name.as_str()))
            .cloned()
            .collect();
        let referenced: HashSet<&str> = nodes
            .iter()
            .flat_map(|n| n.deps.iter().map(String::as_str))
            .collect();
        Ok(WorkflowPlan {
            external_inputs: self
                .external_inputs
                .iter()
                .filter(|n| referenced.contains(n.as_str()) || **n == self.submission_input)
                .cloned()
                .collect(),
            submission_input: self.submission_input.clone(),
            order: self
                .order
                .iter()
                .filter(|n| keep.contains(n.as_str()))
                .cloned()
                .collect(),
            precomputable: self
                .precomputable
                .iter()
                .filter(|n| keep.contains(n.as_str()))
                .cloned()
                .collect(),
            nodes,
        })
    }
}

/// Build the dependency plan of `config`.
pub fn build_plan(config: &DirectiveConfig, submission_input: &str) -> Result<WorkflowPlan, PlanError> {
    match config.directive(submission_input) {
        Some(d) if d.is_input() => {}
        _ => return Err(PlanError::UnknownSubmissionInput(submission_input.to_string())),
    }

    let mut external_inputs: Vec<String> = config.input_markers().map(str::to_string).collect();
    for (_, directive) in &config.directives {
        let Some(template) = directive.template() else { continue };
        for name in candidate_placeholders(template) {
            if !config.directives.contains_key(&name) && !external_inputs.contains(&name) {
                external_inputs.push(name);
            }
        }
    }

    let known: HashSet<&str> = config
        .directives
        .keys()
        .map(String::as_str)
        .chain(external_inputs.iter().map(String::as_str))
        .collect();
    let nodes: Vec<PlanNode> = config
        .directives
        .iter()
        .filter_map(|(name, directive)| {
            directive.template().map(|template| PlanNode {
                name: name.clone(),
                deps: extract_placeholders(template, &known),
            })
        })
        .collect();

    let order = topological_order(&nodes)?;

    let external: HashSet<&str> = external_inputs.iter().map(String::as_str).collect();
    let by_name: HashMap<&str, &PlanNode> = nodes.iter().map(|n| (n.name.as_str(), n)).collect();
    let mut precomputable = BTreeSet::new();
    for name in &order {
        let ok = by_name[name.as_str()].deps.iter().all(|dep| {
            if external.contains(dep.as_str()) {
                dep != submission_input
            } else {
                precomputable.contains(dep)
            }
        });
        if ok {
            precomputable.insert(name.clone());
        }
    }

    Ok(WorkflowPlan {
        nodes,
        external_inputs,
        submission_input: submission_input.to_string(),
        order,
        precomputable,
    })
}

/// Repeatedly emit the earliest-declared node whose executable dependencies
/// have all been emitted.
fn topological_order(nodes: &[PlanNode]) -> Result<Vec<String>, PlanError> {
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.as_str(), i))
        .collect();
    let deps: Vec<Vec<usize>> = nodes
        .iter()
        .map(|n| n.deps.iter().filter_map(|d| index.get(d.as_str()).copied()).collect())
        .collect();

    let mut emitted = vec![false; nodes.len()];
    let mut order = Vec::with_capacity(nodes.len());
    while order.len() < nodes.len() {
        let ready = (0..nodes.len()).find(|&i| !emitted[i] && deps[i].iter().all(|&d| emitted[d]));
        match ready {
            Some(i) => {
                emitted[i] = true;
                order.push(nodes[i].name.clone());
            }
            None => {
                let cycle = find_cycle(&deps, &emitted);
                return Err(PlanError::Cycle(
                    cycle.into_iter().map(|i| nodes[i].name.clone()).collect(),
                ));
            }
        }
    }
    Ok(order)
}

/// A dependency cycle among the unemitted nodes. Every unemitted node has an
/// unemitted dependency, so walking dependencies must revisit a node.
fn find_cycle(deps: &[Vec<usize>], emitted: &[bool]) -> Vec<usize> {
    let start = emitted.iter().position(|e| !e).expect("cycle search on finished plan");
    let mut path = vec![start];
    let mut position = HashMap::from([(start, 0usize)]);
    let mut current = start;
    loop {
        let next = deps[current]
            .iter()
            .copied()
            .find(|&d| !emitted[d])
            .expect("unemitted node without unemitted dependency");
        if let Some(&at) = position.get(&next) {
            // Report in execution direction: dependency before dependent.
            let mut cycle = path.split_off(at);
            cycle.reverse();
            return cycle;
        }
        position.insert(next, path.len());
        path.push(next);
        current = next;
    }
}
