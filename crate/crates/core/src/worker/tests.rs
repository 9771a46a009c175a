use super::*;
use crate::workflow::{InputRef, Params};

fn spec(kind: OperatorKind, model: &str, class: ResourceClass) -> OperatorSpec {
    OperatorSpec {
        op_kind: kind,
        model_ref: model.into(),
        params: Params::new(),
        inputs: vec![],
        resource_class: class,
        tenant_id: "t".into(),
        slo_hint: None,
        affinity: Affinity::Any,
    }
}

fn worker(class: ResourceClass) -> Worker {
    let d = WorkerDescriptor::new("w000".into(), &ClassProfile::reference(class), 0.0, Visibility::Shared);
    let mut w = Worker::new(d, Arc::new(ResourceModel::default()), Arc::new(SimulatedBackend));
    w.mark_ready(0.0);
    w
}

fn batch(spec: OperatorSpec, n: usize, input: ContentHash) -> AdmittedBatch {
    let items = (0..n)
        .map(|i| {
            let mut s = spec.clone();
            s.inputs = vec![InputRef::External(input)];
            let ident = crate::workflow::task_identity(
                &s.model_hash(),
                &[("i".to_string(), (i as i64).into())].into_iter().collect(),
                s.resource_class,
                &[input],
            )
            .unwrap();
            BatchItem { task: i as u64, identity: ident, inputs: vec![input], replica: false }
        })
        .collect();
    AdmittedBatch {
        batch_id: 1,
        signature: spec.exec_signature().unwrap(),
        declared_footprint: 16 * GIB,
        max_batch: 24,
        items,
        dispatched_at: 0.0,
        spec,
    }
}

#[test]
fn visibility_rules() {
    let shared = Visibility::Shared;
    let mine = Visibility::Private("a".into());
    assert!(shared.admits(Affinity::Any, "a"));
    assert!(!shared.admits(Affinity::PrivateOnly, "a"));
    assert!(mine.admits(Affinity::PrivateOnly, "a"));
    assert!(!mine.admits(Affinity::Any, "b"));
    assert!(!mine.admits(Affinity::SharedOnly, "a"));
    assert_eq!("private:a".parse::<Visibility>().unwrap(), mine);
    assert_eq!(serde_json::to_string(&shared).unwrap(), "\"shared\"");
}

#[test]
fn class_is_a_minimum() {
    let h = WorkerDescriptor::new("h".into(), &ClassProfile::reference(ResourceClass::H100_94g), 0.0, Visibility::Shared);
    let r = WorkerDescriptor::new("r".into(), &ClassProfile::reference(ResourceClass::Rtx4090_48g), 0.0, Visibility::Shared);
    assert!(h.satisfies(ResourceClass::Rtx4090_24g));
    assert!(r.satisfies(ResourceClass::Rtx4090_24g));
    assert!(!r.satisfies(ResourceClass::H100_94g));
}

#[test]
fn cold_then_warm_execution() {
    let cas = CasStore::in_memory();
    let input = cas.put(b"prompt").unwrap();
    let s = spec(OperatorKind::Inference, "llama-3.1-8b", ResourceClass::Rtx4090_24g);
    let mut w = worker(ResourceClass::H100_94g);

    let (cold, result) = w.execute_batch(batch(s.clone(), 4, input), 0.0, &cas).unwrap();
    assert!(cold.load_s > 0.0 && cold.fetch_s > 0.0);
    assert_eq!(result.outputs.len(), 4);
    assert!(result.outputs.iter().all(|o| cas.has(&o.output)));

    let (warm, _) = w.execute_batch(batch(s, 4, input), cold.done_at, &cas).unwrap();
    assert_eq!((warm.load_s, warm.fetch_s), (0.0, 0.0));
    assert!((warm.exec_s - cold.exec_s).abs() < 1e-12);
}

#[test]
fn outputs_are_deterministic() {
    let cas = CasStore::in_memory();
    let input = cas.put(b"prompt").unwrap();
    let s = spec(OperatorKind::Inference, "llama-3.2-1b", ResourceClass::Rtx4090_24g);
    let (_, a) = worker(ResourceClass::Rtx4090_24g).execute_batch(batch(s.clone(), 3, input), 0.0, &cas).unwrap();
    let (_, b) = worker(ResourceClass::H100_94g).execute_batch(batch(s, 3, input), 0.0, &cas).unwrap();
    assert_eq!(a.outputs, b.outputs);
}

#[test]
fn missing_input_is_reported() {
    let cas = CasStore::in_memory();
    let ghost = ContentHash::of(b"ghost");
    let s = spec(OperatorKind::Inference, "llama-3.2-1b", ResourceClass::Rtx4090_24g);
    let err = worker(ResourceClass::Rtx4090_24g).execute_batch(batch(s, 1, ghost), 0.0, &cas).unwrap_err();
    assert!(matches!(err, WorkerError::InputUnavailable(h) if h == ghost));
}

#[test]
fn memory_shortage_is_detected_at_exec_start() {
    let cas = CasStore::in_memory();
    let input = cas.put(b"corpus").unwrap();
    // Full-parameter fine-tuning does not fit a 48 GB card.
    let s = spec(OperatorKind::Sft, "llama-3.1-8b", ResourceClass::Rtx4090_48g);
    let mut w = worker(ResourceClass::Rtx4090_48g);
    let err = w.execute_batch(batch(s, 1, input), 0.0, &cas).unwrap_err();
    match err {
        WorkerError::ResourceShortage { shortfall, required } => {
            assert_eq!(required, 70 * GIB + 1536 * (1 << 20));
            assert_eq!(shortfall, required - 48 * GIB);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(w.is_idle());
}

#[test]
fn power_and_billing() {
    let cas = CasStore::in_memory();
    let input = cas.put(b"p").unwrap();
    let s = spec(OperatorKind::Inference, "llama-3.2-1b", ResourceClass::Rtx4090_24g);
    let mut w = worker(ResourceClass::Rtx4090_24g);
    let mut b = batch(s, 24, input);
    b.max_batch = 24;
    w.admit(b).unwrap();
    let started = w.start_next(0.0, &cas).unwrap().unwrap();
    let watts = w.begin_exec(started.exec_at).unwrap();
    // A full batch runs at peak.
    assert!((watts - 450.0).abs() < 1e-9);
    w.finish(started.done_at, &cas).unwrap();
    let expected = 25.0 * started.exec_at + 450.0 * started.exec_s;
    assert!((w.energy_joules(started.done_at) - expected).abs() < 1e-6);
    assert!((w.cost(3600.0) - 0.35).abs() < 1e-12);
}

#[test]
fn failure_hands_back_admitted_work() {
    let cas = CasStore::in_memory();
    let input = cas.put(b"p").unwrap();
    let s = spec(OperatorKind::Inference, "llama-3.2-1b", ResourceClass::Rtx4090_24g);
    let mut w = worker(ResourceClass::Rtx4090_24g);
    w.admit(batch(s.clone(), 2, input)).unwrap();
    w.admit(batch(s, 3, input)).unwrap();
    w.start_next(0.0, &cas).unwrap().unwrap();
    w.crash(1.0);
    assert!(w.heartbeat(2.0).is_none());
    let lost = w.remove_failed(31.0);
    assert_eq!(lost.iter().map(|b| b.len()).sum::<usize>(), 5);
    assert!(matches!(w.admit(lost[0].clone()), Err(WorkerError::WorkerGone(_))));
}

#[test]
fn drain_retires_when_idle() {
    let mut w = worker(ResourceClass::Rtx4090_24g);
    w.drain(5.0);
    assert_eq!(w.status(), WorkerStatus::Retired);
    assert!((w.cost(100.0) - 0.35 * 5.0 / 3600.0).abs() < 1e-12);
}
