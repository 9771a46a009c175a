//! Task identity versus execution signature.
//!
//! Same model, params and class but different inputs: distinct identities
//! (no dedup), one signature (batchable).

use flowmesh::digest::ContentHash;
use flowmesh::workflow::{exec_signature, model_hash, params_from_json, task_identity, Params, ResourceClass};

fn params(text: &str) -> Params {
    params_from_json("params", &serde_json::from_str(text).unwrap()).unwrap()
}

fn main() {
    let model = model_hash("llama-3.1-8b");
    let class = ResourceClass::Rtx4090_24g;
    let a = params(r#"{"temperature": 0.7, "max_tokens": 512}"#);
    let b = params(r#"{"max_tokens": 512, "temperature": 0.7}"#);
    let q1 = ContentHash::of(b"question one");
    let q2 = ContentHash::of(b"question two");

    let t1 = task_identity(&model, &a, class, &[q1]).unwrap();
    let t1_reordered = task_identity(&model, &b, class, &[q1]).unwrap();
    let t2 = task_identity(&model, &a, class, &[q2]).unwrap();
    println!("H_task(q1)              {}", t1.to_hex());
    println!("H_task(q1), keys swapped {}", t1_reordered.to_hex());
    println!("H_task(q2)              {}", t2.to_hex());
    assert_eq!(t1, t1_reordered);
    assert_ne!(t1, t2);

    let swapped = task_identity(&model, &a, class, &[q2, q1]).unwrap();
    let ordered = task_identity(&model, &a, class, &[q1, q2]).unwrap();
    println!("inputs are positional: {}", swapped != ordered);

    let s = exec_signature(&model, &a, class).unwrap();
    println!("H_exec                  {}", s.to_hex());
    let h100 = exec_signature(&model, &a, ResourceClass::H100_94g).unwrap();
    println!("class changes H_exec: {}", s != h100);
}
