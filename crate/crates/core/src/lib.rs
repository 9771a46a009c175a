//! Workflow-aware serving for heterogeneous GPU fleets.

pub mod cas;
pub mod cli;
pub mod control;
pub mod digest;
pub mod events;
pub mod sim;
pub mod worker;
pub mod workflow;
