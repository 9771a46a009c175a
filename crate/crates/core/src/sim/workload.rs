//! Seeded workload generation: agentic inference DAGs (group A) and
//! post-training pipelines (group B), with decaying Poisson arrivals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde_json::{json, Map, Value};

use crate::digest::ContentHash;

use super::config::{Arrival, ExplicitWorkflow, Group, WorkloadSpec};

/// A workflow document and its submission time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedWorkflow {
    pub at_s: f64,
    pub document: Value,
}

/// Submissions in time order plus the external blobs they reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub workflows: Vec<TimedWorkflow>,
    pub blobs: Vec<Vec<u8>>,
}

impl Workload {
    fn blob(&mut self, content: String) -> String {
        let bytes = content.into_bytes();
        let hash = ContentHash::of(&bytes).to_hex();
        if !self.blobs.contains(&bytes) {
            self.blobs.push(bytes);
        }
        hash
    }
}

pub const GROUP_A_TEMPLATES: [&str; 5] = ["chain", "rag", "multi_agent", "reflect", "tool_chain"];
pub const GROUP_B_TEMPLATES: [&str; 4] = ["sft_eval", "dpo_eval", "ppo_eval", "lora_sft_eval"];

/// Distinct shared inputs per template; a shared workflow picks one of these.
const SHARED_POOL: u64 = 6;

/// Arrival rate in workflows per second at time `t`.
pub fn arrival_rate(arrival: &Arrival, t: f64) -> f64 {
    match *arrival {
        Arrival::Constant { qpm } => qpm / 60.0,
        Arrival::ExpDecay { start_qpm, end_qpm, over_s } => {
            let frac = (t / over_s).clamp(0.0, 1.0);
            start_qpm * (end_qpm / start_qpm).powf(frac) / 60.0
        }
    }
}

/// Arrival times of the first `count` workflows.
pub fn arrival_times(arrival: &Arrival, count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match *arrival {
        Arrival::Constant { qpm } => (0..count).map(|k| k as f64 * 60.0 / qpm).collect(),
        Arrival::ExpDecay { start_qpm, end_qpm, .. } => {
            // Thinning against the peak rate.
            let peak = start_qpm.max(end_qpm) / 60.0;
            let gap = Exp::new(peak).expect("positive rate");
            let mut out = Vec::with_capacity(count);
            let mut t = 0.0;
            while out.len() < count {
                t += gap.sample(rng);
                if rng.random::<f64>() * peak <= arrival_rate(arrival, t) {
                    out.push(t);
                }
            }
            out
        }
    }
}

fn node(kind: &str, model: &str, class: &str, params: Value, inputs: &[Value]) -> Value {
    let inputs: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(slot, i)| {
            let mut m = i.as_object().expect("input object").clone();
            m.insert("slot".into(), json!(slot));
            Value::Object(m)
        })
        .collect();
    json!({"op_kind": kind, "model_ref": model, "resource_class": class, "params": params, "inputs": inputs})
}

fn from(op: &str) -> Value {
    json!({ "from": op })
}

fn ext(hash: &str) -> Value {
    json!({ "external_hash": hash })
}

const R24: &str = "class_4090_24g";
const R48: &str = "class_4090_48g";
const H100: &str = "class_h100_94g";
const M8: &str = "llama-3.1-8b";
const M3: &str = "llama-3.2-3b";
const M1: &str = "llama-3.2-1b";

fn long() -> Value {
    json!({"max_tokens": 512, "temperature": 0.7})
}

fn short() -> Value {
    json!({"max_tokens": 256, "temperature": 0.7})
}

/// Operator graph of one template. `q` is the primary external input. Role
/// prompts are inputs rather than params, so operators that differ only in
/// prompt share an execution signature. The last operator reads the tenant's
/// instructions, so only the prefix is shareable across tenants.
fn template(w: &mut Workload, name: &str, q: &str, aux: &str, tenant: &str) -> Map<String, Value> {
    let t = ext(&w.blob(format!("tenant:{tenant}:instructions")));
    let mut p = |role: &str| ext(&w.blob(format!("prompt:{role}")));
    let mut n = Map::new();
    let mut add = |id: &str, v: Value| {
        n.insert(id.to_string(), v);
    };
    match name {
        "chain" => {
            add("a_prep", node("data_prep", "text-pipeline", R24, json!({"task": "normalize"}), &[ext(q)]));
            add("b_think", node("inference", M8, R24, long(), &[from("a_prep"), p("reason")]));
            add("c_answer", node("inference", M3, R24, short(), &[from("b_think"), p("summarize"), t]));
        }
        "rag" => {
            add("a_retrieve", node("data_prep", "text-pipeline", R24, json!({"task": "retrieve", "k": 8}), &[ext(q), ext(aux)]));
            add("b_rerank", node("inference", M1, R24, json!({"max_tokens": 64, "temperature": 0.0}), &[from("a_retrieve"), p("rerank")]));
            add("c_generate", node("inference", M8, R24, long(), &[from("b_rerank"), p("rag_answer"), t]));
        }
        "multi_agent" => {
            add("a_split", node("data_prep", "text-pipeline", R24, json!({"task": "decompose"}), &[ext(q)]));
            for i in 0..3 {
                add(&format!("b_agent_{i}"), node("inference", M3, R24, long(), &[from("a_split"), p(&format!("agent_{i}"))]));
            }
            add("c_merge", node("inference", M8, R24, long(), &[from("b_agent_0"), from("b_agent_1"), from("b_agent_2"), p("aggregate"), t]));
        }
        "reflect" => {
            add("a_draft", node("inference", M3, R24, long(), &[ext(q), p("draft")]));
            add("b_critique", node("eval", M3, R24, json!({"max_tokens": 128}), &[from("a_draft"), p("self_critique")]));
            add("c_revise", node("inference", M8, R24, long(), &[from("a_draft"), from("b_critique"), p("revise")]));
            add("d_judge", node("eval", M1, R24, json!({"max_tokens": 32}), &[from("c_revise"), p("final_judge"), t]));
        }
        "tool_chain" => {
            add("a_plan", node("inference", M3, R24, short(), &[ext(q), p("plan")]));
            add("b_search", node("tool_call", "tool-runtime", R24, json!({"tool": "search"}), &[from("a_plan")]));
            add("c_calc", node("tool_call", "tool-runtime", R24, json!({"tool": "calculator"}), &[from("b_search")]));
            add("d_answer", node("inference", M3, R24, short(), &[from("c_calc"), p("answer"), t]));
        }
        "sft_eval" => {
            add("a_tokenize", node("data_prep", "text-pipeline", R24, json!({"task": "tokenize", "seq_len": 2048}), &[ext(q)]));
            add("b_sft", node("sft", M8, H100, json!({"lr": 2e-5, "epochs": 1}), &[from("a_tokenize")]));
            add("c_eval", node("eval", M8, R24, json!({"bench": "gsm8k"}), &[from("b_sft"), ext(aux), t]));
        }
        "dpo_eval" => {
            add("a_pairs", node("data_prep", "text-pipeline", R24, json!({"task": "preference_pairs"}), &[ext(q)]));
            add("b_dpo", node("dpo", M3, R48, json!({"beta": 0.1, "lr": 5e-6}), &[from("a_pairs")]));
            add("c_eval", node("eval", M3, R24, json!({"bench": "gsm8k"}), &[from("b_dpo"), ext(aux), t]));
        }
        "ppo_eval" => {
            add("a_prompts", node("data_prep", "text-pipeline", R24, json!({"task": "prompts"}), &[ext(q)]));
            add("b_ppo", node("ppo", M1, R24, json!({"kl_coef": 0.05, "lr": 1e-6}), &[from("a_prompts")]));
            add("c_eval", node("eval", M1, R24, json!({"bench": "gsm8k"}), &[from("b_ppo"), ext(aux), t]));
        }
        "lora_sft_eval" => {
            add("a_tokenize", node("data_prep", "text-pipeline", R24, json!({"task": "tokenize", "seq_len": 1024}), &[ext(q)]));
            add("b_lora", node("sft", "llama-3.1-8b-lora", R24, json!({"rank": 16, "lr": 1e-4}), &[from("a_tokenize")]));
            add("c_eval", node("eval", M8, R24, json!({"bench": "gsm8k"}), &[from("b_lora"), ext(aux), t]));
        }
        other => unreachable!("unknown template {other}"),
    }
    n
}

/// Generate `count` workflows. Deterministic in `seed`.
pub fn generate_workload(group: Group, count: usize, arrival: &Arrival, shared_prefix_prob: f64, tenants: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = arrival_times(arrival, count, &mut rng);
    let mut w = Workload::default();
    let corpus = w.blob("corpus:reference-shard".into());
    let bench = w.blob("benchmark:gsm8k-test".into());
    for (i, at_s) in times.into_iter().enumerate() {
        let name = match group {
            Group::A => GROUP_A_TEMPLATES[rng.random_range(0..GROUP_A_TEMPLATES.len())],
            // Two thirds post-training, one third inference.
            Group::B if rng.random_bool(2.0 / 3.0) => GROUP_B_TEMPLATES[rng.random_range(0..GROUP_B_TEMPLATES.len())],
            Group::B => GROUP_A_TEMPLATES[rng.random_range(0..GROUP_A_TEMPLATES.len())],
        };
        let tenant = format!("t{}", rng.random_range(0..tenants));
        let q = if rng.random_bool(shared_prefix_prob) {
            w.blob(format!("{name}:shared:{}", rng.random_range(0..SHARED_POOL)))
        } else {
            w.blob(format!("{name}:unique:{i}"))
        };
        let aux = if GROUP_B_TEMPLATES.contains(&name) { &bench } else { &corpus };
        let aux = aux.clone();
        let nodes = template(&mut w, name, &q, &aux, &tenant);
        w.workflows.push(TimedWorkflow {
            at_s,
            document: json!({"workflow_id": format!("wf{i:04}-{name}"), "tenant_id": tenant, "nodes": nodes}),
        });
    }
    w
}

fn substitute(v: &mut Value, input: &str, shared: &str, copy: usize) {
    match v {
        Value::String(s) => match s.as_str() {
            "$input" => *s = input.to_string(),
            "$shared" => *s = shared.to_string(),
            "$copy" => *v = json!(copy),
            _ => {}
        },
        Value::Array(a) => a.iter_mut().for_each(|x| substitute(x, input, shared, copy)),
        Value::Object(m) => m.values_mut().for_each(|x| substitute(x, input, shared, copy)),
        _ => {}
    }
}

fn expand(w: &mut Workload, spec: &ExplicitWorkflow) {
    let base = spec.document.get("workflow_id").and_then(Value::as_str).unwrap_or("wf").to_string();
    let shared = w.blob(format!("{base}:shared"));
    for copy in 0..spec.copies {
        let id = if spec.copies > 1 { format!("{base}-{copy:02}") } else { base.clone() };
        let input = w.blob(format!("{id}:input"));
        let mut doc = spec.document.clone();
        substitute(&mut doc, &input, &shared, copy);
        if let Some(m) = doc.as_object_mut() {
            m.insert("workflow_id".into(), json!(id));
        }
        w.workflows.push(TimedWorkflow { at_s: spec.at_s + copy as f64 * spec.spacing_s, document: doc });
    }
}

/// Materialize a workload spec.
pub fn build_workload(spec: &WorkloadSpec, seed: u64) -> Workload {
    match spec {
        WorkloadSpec::Generated { group, count, arrival, shared_prefix_prob, tenants } => {
            generate_workload(*group, *count, arrival, *shared_prefix_prob, *tenants, seed)
        }
        WorkloadSpec::Explicit { workflows } => {
            let mut w = Workload::default();
            for spec in workflows {
                expand(&mut w, spec);
            }
            w.workflows.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
            w
        }
    }
}
