//! Workflow DAGs, operator specifications and their deterministic identities.

mod identity;
mod params;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::{ContentHash, ExecSignature, TaskIdentity};

pub use identity::{exec_signature, model_hash, task_identity};
pub use params::{canonicalize_params, params_from_json, ParamValue, Params};

pub type OpId = String;
pub type WorkflowId = String;
pub type TenantId = String;

const GIB: u64 = 1 << 30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorkflowError {
    #[error("unsupported parameter value at `{path}`: {reason}")]
    UnsupportedValue { path: String, reason: String },
    #[error("cycle detected among operators {nodes:?}")]
    CycleDetected { nodes: Vec<OpId> },
    #[error("operator `{consumer}` references missing operator `{missing}`")]
    DanglingEdge { consumer: OpId, missing: OpId },
    #[error("operator `{op}`: input slot {slot} invalid for arity {arity}")]
    ArityMismatch { op: OpId, slot: usize, arity: usize },
    #[error("schema error: {0}")]
    SchemaError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Inference,
    Sft,
    Dpo,
    Ppo,
    Eval,
    DataPrep,
    ToolCall,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 7] = [
        OperatorKind::Inference,
        OperatorKind::Sft,
        OperatorKind::Dpo,
        OperatorKind::Ppo,
        OperatorKind::Eval,
        OperatorKind::DataPrep,
        OperatorKind::ToolCall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Inference => "inference",
            OperatorKind::Sft => "sft",
            OperatorKind::Dpo => "dpo",
            OperatorKind::Ppo => "ppo",
            OperatorKind::Eval => "eval",
            OperatorKind::DataPrep => "data_prep",
            OperatorKind::ToolCall => "tool_call",
        }
    }

    pub fn is_training(self) -> bool {
        matches!(self, OperatorKind::Sft | OperatorKind::Dpo | OperatorKind::Ppo)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatorKind {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| WorkflowError::SchemaError(format!("unknown op_kind `{s}`")))
    }
}

/// Worker hardware class. Doubles as an operator's minimum requirement:
/// a worker satisfies a class when it has at least that class's VRAM and
/// architecture generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceClass {
    #[serde(rename = "class_4090_24g")]
    Rtx4090_24g,
    #[serde(rename = "class_4090_48g")]
    Rtx4090_48g,
    #[serde(rename = "class_h100_94g")]
    H100_94g,
}

impl ResourceClass {
    pub const ALL: [ResourceClass; 3] = [
        ResourceClass::Rtx4090_24g,
        ResourceClass::Rtx4090_48g,
        ResourceClass::H100_94g,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceClass::Rtx4090_24g => "class_4090_24g",
            ResourceClass::Rtx4090_48g => "class_4090_48g",
            ResourceClass::H100_94g => "class_h100_94g",
        }
    }

    pub fn vram_bytes(self) -> u64 {
        match self {
            ResourceClass::Rtx4090_24g => 24 * GIB,
            ResourceClass::Rtx4090_48g => 48 * GIB,
            ResourceClass::H100_94g => 94 * GIB,
        }
    }

    /// Ordinal GPU generation (Ada = 8, Hopper = 9).
    pub fn arch_generation(self) -> u32 {
        match self {
            ResourceClass::Rtx4090_24g | ResourceClass::Rtx4090_48g => 8,
            ResourceClass::H100_94g => 9,
        }
    }
}

impl fmt::Display for ResourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceClass {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResourceClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| WorkflowError::SchemaError(format!("unknown resource_class `{s}`")))
    }
}

/// Tenant placement rule attached to an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    /// Shared workers or workers private to the operator's tenant.
    #[default]
    Any,
    /// Only workers private to the operator's tenant.
    PrivateOnly,
    /// Only shared workers.
    SharedOnly,
}

impl FromStr for Affinity {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "any" => Ok(Affinity::Any),
            "private_only" => Ok(Affinity::PrivateOnly),
            "shared_only" => Ok(Affinity::SharedOnly),
            other => Err(WorkflowError::SchemaError(format!("unknown affinity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputRef {
    Upstream(OpId),
    External(ContentHash),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorSpec {
    pub op_kind: OperatorKind,
    pub model_ref: String,
    pub params: Params,
    /// Positional; slot `i` is `inputs[i]`.
    pub inputs: Vec<InputRef>,
    pub resource_class: ResourceClass,
    pub tenant_id: TenantId,
    pub slo_hint: Option<f64>,
    pub affinity: Affinity,
}

impl OperatorSpec {
    /// Memory hint in bytes from the `mem_gb` parameter, if the author gave one.
    pub fn memory_hint_bytes(&self) -> Option<u64> {
        self.params
            .get("mem_gb")
            .and_then(ParamValue::as_f64)
            .filter(|gb| *gb > 0.0)
            .map(|gb| (gb * GIB as f64) as u64)
    }

    pub fn model_hash(&self) -> ContentHash {
        model_hash(&self.model_ref)
    }

    pub fn exec_signature(&self) -> Result<ExecSignature, WorkflowError> {
        exec_signature(&self.model_hash(), &self.params, self.resource_class)
    }

    pub fn task_identity(&self, inputs: &[ContentHash]) -> Result<TaskIdentity, WorkflowError> {
        task_identity(&self.model_hash(), &self.params, self.resource_class, inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Edge {
    pub from: OpId,
    pub to: OpId,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkflowDag {
    pub workflow_id: WorkflowId,
    pub tenant_id: TenantId,
    pub nodes: BTreeMap<OpId, OperatorSpec>,
    pub edges: Vec<Edge>,
    pub submit_time: f64,
    #[serde(skip)]
    topo: Vec<OpId>,
}

impl WorkflowDag {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// A topological order; ties broken by ascending operator id.
    pub fn topological_order(&self) -> &[OpId] {
        &self.topo
    }

    pub fn predecessors<'a>(&'a self, op: &'a str) -> impl Iterator<Item = &'a OpId> + 'a {
        self.nodes.get(op).into_iter().flat_map(|spec| {
            spec.inputs.iter().filter_map(|input| match input {
                InputRef::Upstream(p) => Some(p),
                InputRef::External(_) => None,
            })
        })
    }

    pub fn successors<'a>(&'a self, op: &'a str) -> impl Iterator<Item = &'a OpId> + 'a {
        self.edges.iter().filter(move |e| e.from == op).map(|e| &e.to)
    }

    pub fn sources(&self) -> Vec<OpId> {
        self.ready_frontier(&BTreeSet::new())
    }

    /// Operators not in `completed` whose every upstream producer is.
    pub fn ready_frontier(&self, completed: &BTreeSet<OpId>) -> Vec<OpId> {
        self.nodes
            .keys()
            .filter(|id| !completed.contains(*id))
            .filter(|id| self.predecessors(id).all(|p| completed.contains(p)))
            .cloned()
            .collect()
    }

    pub fn external_inputs(&self) -> BTreeSet<ContentHash> {
        self.nodes
            .values()
            .flat_map(|s| s.inputs.iter())
            .filter_map(|i| match i {
                InputRef::External(h) => Some(*h),
                InputRef::Upstream(_) => None,
            })
            .collect()
    }
}

fn schema(msg: impl Into<String>) -> WorkflowError {
    WorkflowError::SchemaError(msg.into())
}

fn req_str<'a>(obj: &'a serde_json::Map<String, serde_json::Value>, key: &str, ctx: &str) -> Result<&'a str, WorkflowError> {
    obj.get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| schema(format!("{ctx}: missing string field `{key}`")))
}

/// Parse and validate a workflow document into a DAG.
pub fn compile_workflow(document: &str) -> Result<WorkflowDag, WorkflowError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| schema(format!("invalid JSON: {e}")))?;
    compile_workflow_value(&value)
}

pub fn compile_workflow_value(value: &serde_json::Value) -> Result<WorkflowDag, WorkflowError> {
    let root = value.as_object().ok_or_else(|| schema("document must be an object"))?;
    let workflow_id = req_str(root, "workflow_id", "workflow")?.to_string();
    let tenant_id = req_str(root, "tenant_id", "workflow")?.to_string();
    let nodes_obj = root
        .get("nodes")
        .and_then(|v| v.as_object())
        .ok_or_else(|| schema("workflow: missing object field `nodes`"))?;
    if nodes_obj.is_empty() {
        return Err(schema("workflow has no nodes"));
    }

    let mut nodes = BTreeMap::new();
    for (id, node) in nodes_obj {
        let ctx = format!("node `{id}`");
        let node = node.as_object().ok_or_else(|| schema(format!("{ctx}: must be an object")))?;
        let op_kind: OperatorKind = req_str(node, "op_kind", &ctx)?.parse()?;
        let model_ref = req_str(node, "model_ref", &ctx)?.to_string();
        let resource_class: ResourceClass = req_str(node, "resource_class", &ctx)?.parse()?;
        let params = match node.get("params") {
            None => Params::new(),
            Some(serde_json::Value::Object(m)) => params_from_json("", m)?,
            Some(_) => return Err(schema(format!("{ctx}: `params` must be an object"))),
        };
        let slo_hint = match node.get("slo_hint") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                v.as_f64()
                    .filter(|s| *s > 0.0)
                    .ok_or_else(|| schema(format!("{ctx}: `slo_hint` must be a positive number")))?,
            ),
        };
        let affinity = match node.get("affinity") {
            None => Affinity::Any,
            Some(v) => v
                .as_str()
                .ok_or_else(|| schema(format!("{ctx}: `affinity` must be a string")))?
                .parse()?,
        };
        let raw_inputs = match node.get("inputs") {
            None => Vec::new(),
            Some(serde_json::Value::Array(a)) => a.clone(),
            Some(_) => return Err(schema(format!("{ctx}: `inputs` must be an array"))),
        };
        let arity = raw_inputs.len();
        let mut slotted: Vec<Option<InputRef>> = vec![None; arity];
        for raw in &raw_inputs {
            let obj = raw
                .as_object()
                .ok_or_else(|| schema(format!("{ctx}: input must be an object")))?;
            let slot = obj
                .get("slot")
                .and_then(|s| s.as_u64())
                .ok_or_else(|| schema(format!("{ctx}: input missing integer `slot`")))?
                as usize;
            let input = match (obj.get("from"), obj.get("external_hash")) {
                (Some(from), None) => InputRef::Upstream(
                    from.as_str()
                        .ok_or_else(|| schema(format!("{ctx}: `from` must be a string")))?
                        .to_string(),
                ),
                (None, Some(h)) => InputRef::External(
                    h.as_str()
                        .ok_or_else(|| schema(format!("{ctx}: `external_hash` must be a string")))?
                        .parse()
                        .map_err(|e| schema(format!("{ctx}: {e}")))?,
                ),
                _ => {
                    return Err(schema(format!(
                        "{ctx}: input needs exactly one of `from` or `external_hash`"
                    )))
                }
            };
            if slot >= arity || slotted[slot].is_some() {
                return Err(WorkflowError::ArityMismatch { op: id.clone(), slot, arity });
            }
            slotted[slot] = Some(input);
        }
        let inputs = slotted.into_iter().map(|i| i.expect("all slots filled")).collect();
        nodes.insert(
            id.clone(),
            OperatorSpec {
                op_kind,
                model_ref,
                params,
                inputs,
                resource_class,
                tenant_id: tenant_id.clone(),
                slo_hint,
                affinity,
            },
        );
    }

    let mut edges = Vec::new();
    for (id, spec) in &nodes {
        for (slot, input) in spec.inputs.iter().enumerate() {
            if let InputRef::Upstream(from) = input {
                if !nodes.contains_key(from) {
                    return Err(WorkflowError::DanglingEdge { consumer: id.clone(), missing: from.clone() });
                }
                edges.push(Edge { from: from.clone(), to: id.clone(), slot });
            }
        }
    }
    edges.sort();

    let topo = topological_sort(&nodes, &edges)?;
    Ok(WorkflowDag {
        workflow_id,
        tenant_id,
        nodes,
        edges,
        submit_time: 0.0,
        topo,
    })
}

fn topological_sort(nodes: &BTreeMap<OpId, OperatorSpec>, edges: &[Edge]) -> Result<Vec<OpId>, WorkflowError> {
    let mut indegree: BTreeMap<&str, usize> = nodes.keys().map(|k| (k.as_str(), 0)).collect();
    for e in edges {
        *indegree.get_mut(e.to.as_str()).expect("validated") += 1;
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.to_string());
        for e in edges.iter().filter(|e| e.from == next) {
            let d = indegree.get_mut(e.to.as_str()).expect("validated");
            *d -= 1;
            if *d == 0 {
                ready.insert(e.to.as_str());
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(k, _)| k.to_string())
            .collect();
        return Err(WorkflowError::CycleDetected { nodes: stuck });
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn node(kind: &str, inputs: serde_json::Value) -> serde_json::Value {
        json!({"op_kind": kind, "model_ref": "llama-3.2-1b", "resource_class": "class_4090_24g", "params": {}, "inputs": inputs})
    }

    fn ext(slot: usize) -> serde_json::Value {
        json!({"external_hash": ContentHash::of(b"prompt").to_hex(), "slot": slot})
    }

    #[test]
    fn single_node() {
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {"a": node("inference", json!([ext(0)]))}});
        let dag = compile_workflow(&doc.to_string()).unwrap();
        assert_eq!((dag.node_count(), dag.edge_count()), (1, 0));
    }

    #[test]
    fn rlhf_chain_has_four_nodes_three_edges() {
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
            "generate": node("inference", json!([ext(0)])),
            "score": node("inference", json!([{"from": "generate", "slot": 0}])),
            "aggregate": node("data_prep", json!([{"from": "score", "slot": 0}])),
            "train": node("ppo", json!([{"from": "aggregate", "slot": 0}])),
        }});
        let dag = compile_workflow(&doc.to_string()).unwrap();
        assert_eq!((dag.node_count(), dag.edge_count()), (4, 3));
        assert_eq!(dag.topological_order(), ["generate", "score", "aggregate", "train"]);
    }

    #[test]
    fn cycle_detected() {
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
            "a": node("inference", json!([{"from": "b", "slot": 0}])),
            "b": node("inference", json!([{"from": "a", "slot": 0}])),
        }});
        assert_eq!(
            compile_workflow(&doc.to_string()).unwrap_err(),
            WorkflowError::CycleDetected { nodes: vec!["a".into(), "b".into()] }
        );
    }

    #[test]
    fn dangling_and_arity_errors() {
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
            "a": node("inference", json!([{"from": "ghost", "slot": 0}])),
        }});
        assert!(matches!(compile_workflow(&doc.to_string()), Err(WorkflowError::DanglingEdge { .. })));
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
            "a": node("inference", json!([ext(1)])),
        }});
        assert_eq!(
            compile_workflow(&doc.to_string()).unwrap_err(),
            WorkflowError::ArityMismatch { op: "a".into(), slot: 1, arity: 1 }
        );
    }

    #[test]
    fn unknown_kind_is_schema_error() {
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {"a": node("pretrain", json!([]))}});
        assert!(matches!(compile_workflow(&doc.to_string()), Err(WorkflowError::SchemaError(_))));
    }

    #[test]
    fn inputs_ordered_by_slot() {
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
            "a": node("inference", json!([ext(0)])),
            "b": node("inference", json!([ext(0)])),
            "c": node("inference", json!([{"from": "b", "slot": 1}, {"from": "a", "slot": 0}])),
        }});
        let dag = compile_workflow(&doc.to_string()).unwrap();
        assert_eq!(
            dag.nodes["c"].inputs,
            vec![InputRef::Upstream("a".into()), InputRef::Upstream("b".into())]
        );
    }

    fn diamond() -> WorkflowDag {
        let doc = json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
            "a": node("inference", json!([ext(0)])),
            "b": node("inference", json!([{"from": "a", "slot": 0}])),
            "c": node("inference", json!([{"from": "a", "slot": 0}])),
            "d": node("inference", json!([{"from": "b", "slot": 0}, {"from": "c", "slot": 1}])),
        }});
        compile_workflow(&doc.to_string()).unwrap()
    }

    #[test]
    fn frontier_cases() {
        let dag = diamond();
        assert_eq!(dag.ready_frontier(&BTreeSet::new()), ["a"]);
        let all: BTreeSet<OpId> = dag.nodes.keys().cloned().collect();
        assert!(dag.ready_frontier(&all).is_empty());
        let only_a: BTreeSet<OpId> = ["a".to_string()].into();
        assert_eq!(dag.ready_frontier(&only_a), naive_frontier(&dag, &only_a));
        assert_eq!(dag.ready_frontier(&only_a), ["b", "c"]);
    }

    // Independent per-node predecessor scan over the edge list.
    fn naive_frontier(dag: &WorkflowDag, completed: &BTreeSet<OpId>) -> Vec<OpId> {
        let mut out = Vec::new();
        for id in dag.nodes.keys() {
            if completed.contains(id) {
                continue;
            }
            let mut ok = true;
            for e in &dag.edges {
                if &e.to == id && !completed.contains(&e.from) {
                    ok = false;
                }
            }
            if ok {
                out.push(id.clone());
            }
        }
        out
    }

    #[test]
    fn frontier_partitions_nodes() {
        let dag = diamond();
        let order = dag.topological_order().to_vec();
        for k in 0..=order.len() {
            let completed: BTreeSet<OpId> = order[..k].iter().cloned().collect();
            let frontier = dag.ready_frontier(&completed);
            for f in &frontier {
                assert!(dag.predecessors(f).all(|p| completed.contains(p)));
                assert!(!completed.contains(f));
            }
            assert_eq!(frontier, naive_frontier(&dag, &completed));
        }
    }
}
