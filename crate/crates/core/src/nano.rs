// SPDX-License-Identifier: Apache-2.0

//! Per-slice private orchestrators.
//!
//! A [`Nano`] is the owner-facing handle of one Active slice. It keeps
//! traffic metrics but no resource state: capacity is read from the slice
//! ledger on every call and every mutation goes through the [`Engine`]'s
//! transactions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestration::{Engine, EngineError, Operation};
use crate::slicing::{RejectReason, Slice, SliceId, SliceSpec};
use crate::units::{Bandwidth, Latency};

#[derive(Debug, Error)]
pub enum NanoError {
    #[error("slice {0} already has a nano")]
    Duplicate(SliceId),
    #[error("no nano for slice {0}")]
    Unknown(SliceId),
    #[error("{caller} does not own slice {slice}")]
    Unauthorized { slice: SliceId, caller: String },
    #[error("rejected: {0}")]
    Rejected(RejectReason),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl NanoError {
    pub fn reason(&self) -> Option<&RejectReason> {
        match self {
            NanoError::Rejected(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceCapacity {
    pub allocated_mbps: Bandwidth,
    pub headroom_mbps: Bandwidth,
    pub path_latency_ms: Latency,
}

impl SliceCapacity {
    pub fn of(slice: &Slice) -> Self {
        SliceCapacity {
            allocated_mbps: slice.allocated,
            headroom_mbps: slice.headroom(),
            path_latency_ms: slice.plan.total_latency,
        }
    }
}

/// Time-averaged traffic figures over the ticks that carried traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub offered_mbps: Bandwidth,
    pub delivered_mbps: Bandwidth,
    pub observed_latency_ms: Latency,
    pub violation_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct MetricTotals {
    samples: u64,
    offered_kbps: u64,
    delivered_kbps: u64,
    latency: Latency,
    violations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nano {
    pub slice_id: SliceId,
    pub owner: String,
    pub config: SliceSpec,
    pub children: Vec<SliceId>,
    totals: MetricTotals,
}

impl Nano {
    pub fn metrics(&self) -> SliceMetrics {
        let t = &self.totals;
        if t.samples == 0 {
            return SliceMetrics::default();
        }
        SliceMetrics {
            offered_mbps: Bandwidth::from_kbps(t.offered_kbps / t.samples),
            delivered_mbps: Bandwidth::from_kbps(t.delivered_kbps / t.samples),
            observed_latency_ms: t.latency,
            violation_count: t.violations,
        }
    }

    /// Adds one tick of observations.
    pub fn record_sample(&mut self, offered: Bandwidth, delivered: Bandwidth, latency: Latency, violated: bool) {
        let t = &mut self.totals;
        t.samples += 1;
        t.offered_kbps += offered.kbps();
        t.delivered_kbps += delivered.kbps();
        t.latency = latency;
        t.violations += u64::from(violated);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NanoRegistry {
    nanos: BTreeMap<SliceId, Nano>,
}

impl NanoRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the nano of a freshly activated slice.
    pub fn instantiate(&mut self, slice: &Slice) -> Result<&Nano, NanoError> {
        if self.nanos.contains_key(&slice.id) {
            return Err(NanoError::Duplicate(slice.id.clone()));
        }
        if let Some(p) = slice.parent.as_ref().and_then(|p| self.nanos.get_mut(p)) {
            p.children.push(slice.id.clone());
            p.children.sort();
        }
        let nano = Nano {
            slice_id: slice.id.clone(),
            owner: slice.spec.owner.clone(),
            config: slice.spec.clone(),
            children: Vec::new(),
            totals: MetricTotals::default(),
        };
        Ok(self.nanos.entry(slice.id.clone()).or_insert(nano))
    }

    pub fn destroy(&mut self, id: &SliceId) -> Option<Nano> {
        let n = self.nanos.remove(id)?;
        if let Some(p) = id.parent().and_then(|p| self.nanos.get_mut(&p)) {
            p.children.retain(|c| c != id);
        }
        Some(n)
    }

    pub fn get(&self, id: &SliceId) -> Option<&Nano> {
        self.nanos.get(id)
    }

    pub fn get_mut(&mut self, id: &SliceId) -> Option<&mut Nano> {
        self.nanos.get_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Nano> {
        self.nanos.values()
    }

    pub fn len(&self) -> usize {
        self.nanos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nanos.is_empty()
    }
}

fn authorize<'a>(engine: &'a Engine, slice: &SliceId, caller: &str) -> Result<&'a Nano, NanoError> {
    let nano = engine
        .nanos()
        .get(slice)
        .ok_or_else(|| NanoError::Unknown(slice.clone()))?;
    if nano.owner != caller {
        return Err(NanoError::Unauthorized {
            slice: slice.clone(),
            caller: caller.to_owned(),
        });
    }
    Ok(nano)
}

pub fn nano_capacity(engine: &Engine, slice: &SliceId) -> Result<SliceCapacity, NanoError> {
    engine
        .nanos()
        .get(slice)
        .ok_or_else(|| NanoError::Unknown(slice.clone()))?;
    let s = engine.slice(slice).ok_or_else(|| NanoError::Unknown(slice.clone()))?;
    Ok(SliceCapacity::of(&s))
}

pub fn nano_metrics(engine: &Engine, slice: &SliceId) -> Result<SliceMetrics, NanoError> {
    engine
        .nanos()
        .get(slice)
        .map(Nano::metrics)
        .ok_or_else(|| NanoError::Unknown(slice.clone()))
}

/// Resizes the caller's slice through a transaction.
pub fn nano_resize(
    engine: &mut Engine,
    slice: &SliceId,
    caller: &str,
    bandwidth: Bandwidth,
) -> Result<SliceCapacity, NanoError> {
    authorize(engine, slice, caller)?;
    let report = engine.execute(Operation::Resize {
        slice_id: slice.clone(),
        bandwidth,
    })?;
    if let Some(r) = report.failure() {
        return Err(NanoError::Rejected(r.clone()));
    }
    nano_capacity(engine, slice)
}

/// Deploys a child of the caller's slice and returns the child's id.
pub fn nano_create_subslice(
    engine: &mut Engine,
    slice: &SliceId,
    caller: &str,
    spec: SliceSpec,
) -> Result<SliceId, NanoError> {
    authorize(engine, slice, caller)?;
    let report = engine.execute(Operation::Deploy {
        spec,
        parent: Some(slice.clone()),
    })?;
    if let Some(r) = report.failure() {
        return Err(NanoError::Rejected(r.clone()));
    }
    let id = report.status.slice_id.clone().expect("done deployments carry an id");
    Ok(id)
}

/// Changes the latency bound. Tightening is only accepted when the current
/// plan already meets the new bound.
pub fn nano_set_latency_bound(
    engine: &mut Engine,
    slice: &SliceId,
    caller: &str,
    bound: Latency,
) -> Result<(), NanoError> {
    authorize(engine, slice, caller)?;
    let s = engine.slice(slice).ok_or_else(|| NanoError::Unknown(slice.clone()))?;
    if bound == Latency::ZERO {
        return Err(NanoError::Rejected(RejectReason::InvalidSpec {
            detail: "latency_bound_ms must be positive".into(),
        }));
    }
    if s.plan.total_latency > bound {
        return Err(NanoError::Rejected(RejectReason::Latency {
            plan_ms: s.plan.total_latency,
            bound_ms: bound,
        }));
    }
    engine.set_latency_bound(slice, bound)?;
    if let Some(n) = engine.nanos_mut().get_mut(slice) {
        n.config.latency_bound = bound;
    }
    Ok(())
}
