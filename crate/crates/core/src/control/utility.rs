use std::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::digest::ExecSignature;
use crate::worker::{TaskId, WorkerId};
use crate::workflow::OpId;

use super::UtilityWeights;

/// FCFS position of an operator: workflow submission sequence, then operator id.
pub type OrderKey = (u64, OpId);

/// The three normalized terms of the placement utility, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityTerms {
    pub t_eff: f64,
    pub cost: f64,
    pub locality: f64,
}

impl UtilityTerms {
    pub fn score(&self, w: &UtilityWeights) -> f64 {
        w.w_t * self.t_eff - w.w_c * self.cost + w.w_l * self.locality
    }
}

/// Locality gain: resident weights dominate, then cached inputs, then model
/// files (tokenizer, adapters) already on local disk.
pub fn locality_gain(resident: bool, cached_input_fraction: f64, model_files_local: bool) -> f64 {
    0.6 * f64::from(u8::from(resident))
        + 0.3 * cached_input_fraction.clamp(0.0, 1.0)
        + 0.1 * f64::from(u8::from(model_files_local))
}

/// A scored (worker, batch) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub worker: WorkerId,
    pub signature: ExecSignature,
    /// Batch members in FCFS order.
    pub tasks: Vec<TaskId>,
    /// Order key of the earliest member.
    pub first_key: OrderKey,
    pub utility: f64,
}

fn tie_order(a: &Candidate, b: &Candidate) -> Ordering {
    (&a.worker, &a.first_key, Reverse(a.tasks.len()), &a.signature)
        .cmp(&(&b.worker, &b.first_key, Reverse(b.tasks.len()), &b.signature))
}

/// Index of the winning candidate: maximum utility, where utilities within
/// the tie tolerance of the maximum count as equal and are ordered by lowest
/// worker id, earliest member, larger batch, then signature.
pub fn select_best(candidates: &[Candidate], weights: &UtilityWeights) -> Option<usize> {
    let best = candidates.iter().map(|c| c.utility).fold(f64::NEG_INFINITY, f64::max);
    let floor = best - weights.tie_tolerance();
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.utility >= floor)
        .min_by(|(_, a), (_, b)| tie_order(a, b))
        .map(|(i, _)| i)
}

/// Candidate batch sizes for a FCFS queue of `len` with maximum batch `max`:
/// prefixes of 1, half the maximum (rounded up) and the maximum, capped at
/// the queue length, deduplicated, descending.
pub fn prefix_sizes(len: usize, max: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = [1, max.div_ceil(2), max]
        .into_iter()
        .map(|s| s.min(len))
        .filter(|s| *s > 0)
        .collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    sizes
}

/// Nearest-rank 95th percentile.
pub fn p95(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (0.95 * v.len() as f64).ceil() as usize;
    Some(v[rank.saturating_sub(1).min(v.len() - 1)])
}
