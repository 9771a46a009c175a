use crate::digest::{sha256, TaskIdentity};
use crate::workflow::OperatorSpec;

use super::perf::PerfEntry;

/// What actually runs a batch. The worker runtime owns scheduling, caching
/// and memory checks; the backend only supplies timing and output bytes.
pub trait ExecutionBackend: Send + Sync + std::fmt::Debug {
    fn execution_time(&self, entry: &PerfEntry, batch_size: usize) -> f64 {
        entry.duration(batch_size)
    }

    /// Output bytes for one task. Must be a pure function of its inputs so
    /// that replicas of the same identity produce identical artifacts.
    fn produce_output(&self, spec: &OperatorSpec, identity: &TaskIdentity) -> Vec<u8>;
}

/// Timing from the profile tables; outputs derived from the task identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedBackend;

impl ExecutionBackend for SimulatedBackend {
    fn produce_output(&self, spec: &OperatorSpec, identity: &TaskIdentity) -> Vec<u8> {
        let mut out = Vec::with_capacity(96);
        out.extend_from_slice(spec.op_kind.as_str().as_bytes());
        out.push(b':');
        out.extend_from_slice(identity.as_bytes());
        out.extend_from_slice(&sha256(identity.as_bytes()));
        out
    }
}
