// SPDX-License-Identifier: Apache-2.0

//! Recursive multi-domain network slicing.
//!
//! Per-domain orchestrators coordinate through a versioned key-value
//! repository to deploy slices over segment-routed paths that cross several
//! autonomous systems. Slices can be carved into child slices recursively,
//! each managed by its own per-slice orchestrator, and a deterministic
//! fluid-traffic harness checks latency, throughput and isolation.

pub mod cli;
pub mod fixtures;
pub mod harness;
pub mod nano;
pub mod orchestration;
pub mod routing;
pub mod slicing;
pub mod snapshot;
pub mod topology;
pub mod units;
