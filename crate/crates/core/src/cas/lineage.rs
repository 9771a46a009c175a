use serde::{Deserialize, Serialize};

use crate::digest::{ContentHash, TaskIdentity};

/// `executed_by` value for consumers served from an already-published output.
pub const EXECUTED_BY_CACHE: &str = "cache";

/// Provenance of one operator completion within one workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEdge {
    pub workflow_id: String,
    pub operator_id: String,
    pub task_identity: TaskIdentity,
    pub consumed: Vec<ContentHash>,
    pub produced: ContentHash,
    /// Worker id, or [`EXECUTED_BY_CACHE`].
    pub executed_by: String,
    pub completed_at: f64,
}

impl LineageEdge {
    pub fn from_cache(&self) -> bool {
        self.executed_by == EXECUTED_BY_CACHE
    }
}

/// Left behind by a completion that lost the publication race.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardNote {
    pub task_identity: TaskIdentity,
    pub output: ContentHash,
    pub executed_by: String,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LineageRecord {
    Edge(LineageEdge),
    Discard(DiscardNote),
}
