//! Static checks on a scenario file before anything runs.

use std::collections::BTreeSet;
use std::fmt;

use crate::workflow::{compile_workflow_value, ResourceClass};

use super::config::{ConfigError, ScenarioConfig};
use super::workload::build_workload;

/// One problem found in a scenario, anchored to where it was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// `line:column` for syntax and schema errors, a field path otherwise.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn diag(location: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic { location: location.into(), message: message.into() }
}

fn from_json_error(e: &serde_json::Error) -> Diagnostic {
    if e.line() == 0 {
        diag("scenario", e.to_string())
    } else {
        // serde_json appends " at line L column C"; keep the message bare.
        let msg = e.to_string();
        let bare = msg.rsplit_once(" at line ").map_or(msg.as_str(), |(m, _)| m).to_string();
        diag(format!("{}:{}", e.line(), e.column()), bare)
    }
}

/// Parse a scenario with overrides, reporting syntax and schema errors
/// against the original text when possible.
pub fn parse_scenario(text: &str, overrides: &[String]) -> Result<ScenarioConfig, Vec<Diagnostic>> {
    match ScenarioConfig::from_json_with_overrides(text, overrides) {
        Ok(cfg) => Ok(cfg),
        Err(ConfigError::Json(e)) => {
            // Errors without a position come from the overridden document;
            // the untouched text may still locate them.
            let located = match serde_json::from_str::<ScenarioConfig>(text) {
                Err(orig) if e.line() == 0 => orig,
                _ => e,
            };
            Err(vec![from_json_error(&located)])
        }
        Err(e) => Err(vec![diag("overrides", e.to_string())]),
    }
}

/// Semantic checks: scenario invariants, every workflow compiles, and the
/// performance table covers every (operator, class) pair the fleet could run.
pub fn diagnose(cfg: &ScenarioConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if let Err(e) = cfg.validate() {
        out.push(diag("scenario", e.to_string()));
        return out;
    }
    let resources = cfg.resources();
    let classes: BTreeSet<ResourceClass> = cfg.fleet.iter().filter(|c| c.max_count > 0).map(|c| c.class).collect();
    let mut holes = BTreeSet::new();
    let workload = build_workload(&cfg.workload, cfg.seed);
    for (i, w) in workload.workflows.iter().enumerate() {
        let id = w.document.get("workflow_id").and_then(|v| v.as_str()).unwrap_or("?");
        let dag = match compile_workflow_value(&w.document) {
            Ok(d) => d,
            Err(e) => {
                out.push(diag(format!("workload.workflows[{i}] ({id})"), e.to_string()));
                continue;
            }
        };
        for (op, spec) in &dag.nodes {
            let hosts: Vec<ResourceClass> = classes
                .iter()
                .copied()
                .filter(|c| c.vram_bytes() >= spec.resource_class.vram_bytes() && c.arch_generation() >= spec.resource_class.arch_generation())
                .collect();
            if hosts.is_empty() {
                out.push(diag(
                    format!("workload.workflows[{i}] ({id})"),
                    format!("no fleet class satisfies {} for operator `{}`", spec.resource_class, op),
                ));
            }
            for class in hosts {
                if resources.perf.get(spec.op_kind, &spec.model_ref, class).is_none() {
                    holes.insert((spec.op_kind, spec.model_ref.clone(), class));
                }
            }
        }
    }
    for (kind, model, class) in holes {
        out.push(diag("perf", format!("no entry for ({kind}, {model}) on {class}")));
    }
    out
}
