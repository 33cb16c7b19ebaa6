// SPDX-License-Identifier: Apache-2.0

//! Recursive slice tree, admission rules and resource ledgers.
//!
//! Root slices reserve bandwidth on substrate links. Child slices never touch
//! links: they draw from their parent's allocation and must follow a
//! contiguous piece of the parent's route. [`SliceTree`] holds the ledger
//! primitives; [`SliceNetwork`] combines a tree with a topology and forwarding
//! tables for single-writer use.

mod sft;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::routing::{assemble_route_plan, HopRecord, RoutePlan};
use crate::topology::{DomainId, LinkId, NodeId, Topology, TopologyError};
use crate::units::{Bandwidth, Latency};

pub use sft::{plan_entries, walk_sft, OutLink, SftEntry, SftError, SftTables, SliceForwardingTable};

pub const DEFAULT_DEPTH_CAP: usize = 16;

/// Hierarchical slice identifier such as `1`, `1.2` or `1.2.1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SliceId(Vec<u32>);

impl SliceId {
    pub fn root(ordinal: u32) -> SliceId {
        SliceId(vec![ordinal])
    }

    pub fn child(&self, ordinal: u32) -> SliceId {
        let mut v = self.0.clone();
        v.push(ordinal);
        SliceId(v)
    }

    pub fn parent(&self) -> Option<SliceId> {
        (self.0.len() > 1).then(|| SliceId(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn root_ordinal(&self) -> u32 {
        self.0[0]
    }

    pub fn root_id(&self) -> SliceId {
        SliceId::root(self.0[0])
    }

    pub fn is_root(&self) -> bool {
        self.0.len() == 1
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_ancestor_of(&self, other: &SliceId) -> bool {
        other.0.len() > self.0.len() && other.0.starts_with(&self.0)
    }
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join("."))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid slice id {0:?}")]
pub struct SliceIdParseError(String);

impl FromStr for SliceId {
    type Err = SliceIdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Result<Vec<u32>, _> = s.split('.').map(str::parse::<u32>).collect();
        match parts {
            Ok(v) if !v.is_empty() && v.iter().all(|&p| p > 0) => Ok(SliceId(v)),
            _ => Err(SliceIdParseError(s.to_owned())),
        }
    }
}

impl Serialize for SliceId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SliceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Requested slice parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub src_node: NodeId,
    pub dst_node: NodeId,
    #[serde(rename = "bandwidth_mbps")]
    pub bandwidth: Bandwidth,
    #[serde(rename = "latency_bound_ms")]
    pub latency_bound: Latency,
    pub owner: String,
}

impl SliceSpec {
    pub fn validate(&self) -> Result<(), RejectReason> {
        let mut problems = Vec::new();
        if self.bandwidth.is_zero() {
            problems.push("bandwidth_mbps must be positive");
        }
        if self.latency_bound == Latency::ZERO {
            problems.push("latency_bound_ms must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(RejectReason::InvalidSpec {
                detail: problems.join("; "),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceState {
    Pending,
    Reserved,
    Active,
    Deleting,
    Failed,
}

impl SliceState {
    pub const ALL: [SliceState; 5] = [
        SliceState::Pending,
        SliceState::Reserved,
        SliceState::Active,
        SliceState::Deleting,
        SliceState::Failed,
    ];

    pub fn can_transition(self, to: SliceState) -> bool {
        use SliceState::*;
        matches!(
            (self, to),
            (Pending, Reserved) | (Reserved, Active) | (Active, Deleting)
        ) || (to == Failed && self != Failed)
    }
}

impl fmt::Display for SliceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SliceState::Pending => "pending",
            SliceState::Reserved => "reserved",
            SliceState::Active => "active",
            SliceState::Deleting => "deleting",
            SliceState::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// Why a request was not admitted. Rejections are values, not errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum RejectReason {
    InvalidSpec {
        detail: String,
    },
    UnknownNode {
        node: NodeId,
    },
    NoRoute {
        detail: String,
    },
    Latency {
        plan_ms: Latency,
        bound_ms: Latency,
    },
    LinkCapacity {
        link: LinkId,
        residual_mbps: Bandwidth,
        requested_mbps: Bandwidth,
    },
    ParentCapacity {
        headroom_mbps: Bandwidth,
        requested_mbps: Bandwidth,
    },
    OffPath,
    Depth {
        cap: usize,
    },
    UnknownParent {
        parent: SliceId,
    },
    UnknownSlice {
        slice: SliceId,
    },
    NotActive {
        slice: SliceId,
        state: SliceState,
    },
    ChildrenHold {
        committed_mbps: Bandwidth,
    },
    Busy {
        slice: SliceId,
    },
    CapacityAdvertisement {
        domain: DomainId,
        advertised_mbps: Bandwidth,
    },
    Deadline,
    Refused {
        domain: DomainId,
    },
    KvContention {
        key: String,
    },
}

impl RejectReason {
    /// Short stable tag.
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::InvalidSpec { .. } => "invalid spec",
            RejectReason::UnknownNode { .. } => "unknown node",
            RejectReason::NoRoute { .. } => "no route",
            RejectReason::Latency { .. } => "latency",
            RejectReason::LinkCapacity { .. } => "link",
            RejectReason::ParentCapacity { .. } => "parent capacity",
            RejectReason::OffPath => "off-path",
            RejectReason::Depth { .. } => "depth",
            RejectReason::UnknownParent { .. } => "unknown parent",
            RejectReason::UnknownSlice { .. } => "unknown slice",
            RejectReason::NotActive { .. } => "not active",
            RejectReason::ChildrenHold { .. } => "children hold",
            RejectReason::Busy { .. } => "busy",
            RejectReason::CapacityAdvertisement { .. } => "capacity advertisement",
            RejectReason::Deadline => "deadline",
            RejectReason::Refused { .. } => "refused",
            RejectReason::KvContention { .. } => "kv contention",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::InvalidSpec { detail } => write!(f, "invalid spec: {detail}"),
            RejectReason::UnknownNode { node } => write!(f, "unknown node {node}"),
            RejectReason::NoRoute { detail } => write!(f, "no route: {detail}"),
            RejectReason::Latency { plan_ms, bound_ms } => {
                write!(f, "latency: path {plan_ms} ms exceeds bound {bound_ms} ms")
            }
            RejectReason::LinkCapacity {
                link,
                residual_mbps,
                requested_mbps,
            } => write!(
                f,
                "link {link}: residual {residual_mbps} Mbps below requested {requested_mbps} Mbps"
            ),
            RejectReason::ParentCapacity {
                headroom_mbps,
                requested_mbps,
            } => write!(
                f,
                "parent capacity: headroom {headroom_mbps} Mbps below requested {requested_mbps} Mbps"
            ),
            RejectReason::OffPath => f.write_str("off-path"),
            RejectReason::Depth { cap } => write!(f, "depth: nesting limit {cap} reached"),
            RejectReason::UnknownParent { parent } => write!(f, "unknown parent {parent}"),
            RejectReason::UnknownSlice { slice } => write!(f, "unknown slice {slice}"),
            RejectReason::NotActive { slice, state } => {
                write!(f, "not active: slice {slice} is {state}")
            }
            RejectReason::ChildrenHold { committed_mbps } => {
                write!(f, "children hold {committed_mbps}")
            }
            RejectReason::Busy { slice } => write!(f, "busy: slice {slice} has a transaction in flight"),
            RejectReason::CapacityAdvertisement {
                domain,
                advertised_mbps,
            } => write!(
                f,
                "capacity advertisement: domain {domain} offers at most {advertised_mbps} Mbps transit"
            ),
            RejectReason::Deadline => f.write_str("deadline passed"),
            RejectReason::Refused { domain } => write!(f, "refused by domain {domain}"),
            RejectReason::KvContention { key } => write!(f, "kv contention on {key}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdmissionDecision {
    Accepted { plan: RoutePlan, parent: Option<SliceId> },
    Rejected(RejectReason),
}

impl AdmissionDecision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AdmissionDecision::Accepted { .. })
    }
}

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("unknown slice {0}")]
    UnknownSlice(SliceId),
    #[error("rejected: {0}")]
    Rejected(RejectReason),
    #[error("stale admission decision: {0}")]
    StaleDecision(String),
    #[error("illegal state transition for {id}: {from} -> {to}")]
    IllegalTransition {
        id: SliceId,
        from: SliceState,
        to: SliceState,
    },
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

impl SliceError {
    /// The admission reason, when this error is a rejection.
    pub fn reason(&self) -> Option<&RejectReason> {
        match self {
            SliceError::Rejected(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub id: SliceId,
    pub spec: SliceSpec,
    pub plan: RoutePlan,
    pub state: SliceState,
    pub parent: Option<SliceId>,
    pub children: Vec<SliceId>,
    #[serde(rename = "allocated_mbps")]
    pub allocated: Bandwidth,
    #[serde(rename = "child_committed_mbps")]
    pub child_committed: Bandwidth,
    next_child: u32,
}

impl Slice {
    /// Allocation not yet promised to children.
    pub fn headroom(&self) -> Bandwidth {
        self.allocated.saturating_sub(self.child_committed)
    }
}

/// Effect of a validated resize on the substrate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResizeEffect {
    pub previous: Bandwidth,
    pub new: Bandwidth,
    /// Plan links of a root slice; children never touch links.
    pub root_links: Option<Vec<LinkId>>,
}

impl ResizeEffect {
    pub fn grows(&self) -> bool {
        self.new > self.previous
    }

    pub fn delta(&self) -> Bandwidth {
        if self.grows() {
            self.new.saturating_sub(self.previous)
        } else {
            self.previous.saturating_sub(self.new)
        }
    }
}

/// Forest of slices with the hierarchical bandwidth ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceTree {
    slices: BTreeMap<SliceId, Slice>,
    roots: Vec<SliceId>,
    next_root: u32,
    depth_cap: usize,
}

impl Default for SliceTree {
    fn default() -> Self {
        SliceTree::new(DEFAULT_DEPTH_CAP)
    }
}

impl SliceTree {
    pub fn new(depth_cap: usize) -> SliceTree {
        SliceTree {
            slices: BTreeMap::new(),
            roots: Vec::new(),
            next_root: 1,
            depth_cap,
        }
    }

    pub fn get(&self, id: &SliceId) -> Option<&Slice> {
        self.slices.get(id)
    }

    pub fn contains(&self, id: &SliceId) -> bool {
        self.slices.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Slice> {
        self.slices.values()
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn roots(&self) -> &[SliceId] {
        &self.roots
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    /// Admission check. Residuals are read from `t`.
    pub fn admit(&self, t: &Topology, spec: &SliceSpec, parent: Option<&SliceId>) -> AdmissionDecision {
        match self.try_admit(t, spec, parent) {
            Ok(plan) => AdmissionDecision::Accepted {
                plan,
                parent: parent.cloned(),
            },
            Err(r) => AdmissionDecision::Rejected(r),
        }
    }

    fn try_admit(&self, t: &Topology, spec: &SliceSpec, parent: Option<&SliceId>) -> Result<RoutePlan, RejectReason> {
        spec.validate()?;
        for n in [&spec.src_node, &spec.dst_node] {
            if t.router(n).is_none() {
                return Err(RejectReason::UnknownNode { node: n.clone() });
            }
        }
        let plan = match parent {
            None => {
                let plan = assemble_route_plan(t, &spec.src_node, &spec.dst_node)
                    .map_err(|e| RejectReason::NoRoute { detail: e.to_string() })?;
                if plan.total_latency > spec.latency_bound {
                    return Err(RejectReason::Latency {
                        plan_ms: plan.total_latency,
                        bound_ms: spec.latency_bound,
                    });
                }
                for h in &plan.hops {
                    let residual = t.residual_bandwidth(&h.link_id).unwrap_or(Bandwidth::ZERO);
                    if residual < spec.bandwidth {
                        return Err(RejectReason::LinkCapacity {
                            link: h.link_id.clone(),
                            residual_mbps: residual,
                            requested_mbps: spec.bandwidth,
                        });
                    }
                }
                plan
            }
            Some(pid) => {
                let p = self
                    .slices
                    .get(pid)
                    .ok_or_else(|| RejectReason::UnknownParent { parent: pid.clone() })?;
                if p.state != SliceState::Active {
                    return Err(RejectReason::NotActive {
                        slice: pid.clone(),
                        state: p.state,
                    });
                }
                if pid.depth() + 1 > self.depth_cap {
                    return Err(RejectReason::Depth { cap: self.depth_cap });
                }
                let plan = sub_plan(t, &p.plan, &spec.src_node, &spec.dst_node)?;
                if p.headroom() < spec.bandwidth {
                    return Err(RejectReason::ParentCapacity {
                        headroom_mbps: p.headroom(),
                        requested_mbps: spec.bandwidth,
                    });
                }
                if plan.total_latency > spec.latency_bound {
                    return Err(RejectReason::Latency {
                        plan_ms: plan.total_latency,
                        bound_ms: spec.latency_bound,
                    });
                }
                plan
            }
        };
        Ok(plan)
    }

    /// Records an admitted slice in state `Pending`. A child immediately
    /// commits its bandwidth against the parent; a root's links are the
    /// caller's business. `root_ordinal` overrides the local root counter.
    pub fn record(
        &mut self,
        spec: SliceSpec,
        plan: RoutePlan,
        parent: Option<&SliceId>,
        root_ordinal: Option<u32>,
    ) -> Result<SliceId, SliceError> {
        let id = match parent {
            None => {
                let ord = root_ordinal.unwrap_or(self.next_root);
                self.next_root = self.next_root.max(ord + 1);
                let id = SliceId::root(ord);
                if self.slices.contains_key(&id) {
                    return Err(SliceError::StaleDecision(format!("slice {id} already exists")));
                }
                self.roots.push(id.clone());
                id
            }
            Some(pid) => {
                let p = self
                    .slices
                    .get_mut(pid)
                    .ok_or_else(|| SliceError::StaleDecision(format!("parent {pid} is gone")))?;
                if p.state != SliceState::Active || p.headroom() < spec.bandwidth {
                    return Err(SliceError::StaleDecision(format!(
                        "parent {pid} can no longer host {} Mbps",
                        spec.bandwidth
                    )));
                }
                p.next_child += 1;
                p.child_committed = p.child_committed + spec.bandwidth;
                let id = pid.child(p.next_child);
                p.children.push(id.clone());
                id
            }
        };
        let slice = Slice {
            id: id.clone(),
            allocated: spec.bandwidth,
            spec,
            plan,
            state: SliceState::Pending,
            parent: parent.cloned(),
            children: Vec::new(),
            child_committed: Bandwidth::ZERO,
            next_child: 0,
        };
        self.slices.insert(id.clone(), slice);
        Ok(id)
    }

    pub fn set_state(&mut self, id: &SliceId, to: SliceState) -> Result<(), SliceError> {
        let s = self
            .slices
            .get_mut(id)
            .ok_or_else(|| SliceError::UnknownSlice(id.clone()))?;
        if !s.state.can_transition(to) {
            return Err(SliceError::IllegalTransition {
                id: id.clone(),
                from: s.state,
                to,
            });
        }
        s.state = to;
        Ok(())
    }

    /// Validates a resize against the tree ledger. Link residuals for root
    /// growth are checked by the caller.
    pub fn check_resize(&self, id: &SliceId, new: Bandwidth) -> Result<ResizeEffect, RejectReason> {
        let s = self
            .slices
            .get(id)
            .ok_or_else(|| RejectReason::UnknownSlice { slice: id.clone() })?;
        if s.state != SliceState::Active {
            return Err(RejectReason::NotActive {
                slice: id.clone(),
                state: s.state,
            });
        }
        if new.is_zero() {
            return Err(RejectReason::InvalidSpec {
                detail: "bandwidth_mbps must be positive".into(),
            });
        }
        if new < s.child_committed {
            return Err(RejectReason::ChildrenHold {
                committed_mbps: s.child_committed,
            });
        }
        if new > s.allocated {
            if let Some(pid) = &s.parent {
                let p = &self.slices[pid];
                let delta = new.saturating_sub(s.allocated);
                if p.headroom() < delta {
                    return Err(RejectReason::ParentCapacity {
                        headroom_mbps: p.headroom(),
                        requested_mbps: delta,
                    });
                }
            }
        }
        Ok(ResizeEffect {
            previous: s.allocated,
            new,
            root_links: s.parent.is_none().then(|| s.plan.link_ids()),
        })
    }

    /// Applies a resize to the ledger without checks beyond existence.
    /// Returns the previous allocation.
    pub fn apply_resize(&mut self, id: &SliceId, new: Bandwidth) -> Result<Bandwidth, SliceError> {
        let s = self
            .slices
            .get_mut(id)
            .ok_or_else(|| SliceError::UnknownSlice(id.clone()))?;
        let previous = s.allocated;
        s.allocated = new;
        s.spec.bandwidth = new;
        if let Some(pid) = s.parent.clone() {
            let p = self.slices.get_mut(&pid).expect("forest");
            p.child_committed = p.child_committed.saturating_sub(previous) + new;
        }
        Ok(previous)
    }

    pub fn set_latency_bound(&mut self, id: &SliceId, bound: Latency) -> Result<(), SliceError> {
        let s = self
            .slices
            .get_mut(id)
            .ok_or_else(|| SliceError::UnknownSlice(id.clone()))?;
        s.spec.latency_bound = bound;
        Ok(())
    }

    /// Ids of `id` and all its descendants, descendants first.
    pub fn subtree(&self, id: &SliceId) -> Vec<SliceId> {
        let mut out = Vec::new();
        fn visit(tree: &SliceTree, id: &SliceId, out: &mut Vec<SliceId>) {
            if let Some(s) = tree.slices.get(id) {
                for c in &s.children {
                    visit(tree, c, out);
                }
                out.push(id.clone());
            }
        }
        visit(self, id, &mut out);
        out
    }

    /// Removes `id` and its descendants depth-first, returning parent
    /// headroom. Returns the removed slices in removal order, or `None` if
    /// the id is unknown.
    pub fn remove_subtree(&mut self, id: &SliceId) -> Option<Vec<Slice>> {
        if !self.slices.contains_key(id) {
            return None;
        }
        let mut removed = Vec::new();
        for sid in self.subtree(id) {
            let s = self.slices.remove(&sid).expect("subtree");
            match &s.parent {
                Some(pid) => {
                    if let Some(p) = self.slices.get_mut(pid) {
                        p.child_committed = p.child_committed.saturating_sub(s.allocated);
                        p.children.retain(|c| c != &sid);
                    }
                }
                None => self.roots.retain(|r| r != &sid),
            }
            removed.push(s);
        }
        Some(removed)
    }

    /// Copies another tree's slices into this one; used to assemble a view
    /// over per-domain trees.
    pub fn absorb(&mut self, other: &SliceTree) {
        for s in other.slices.values() {
            if s.parent.is_none() && !self.roots.contains(&s.id) {
                self.roots.push(s.id.clone());
            }
            self.slices.insert(s.id.clone(), s.clone());
        }
        self.roots.sort();
        self.next_root = self.next_root.max(other.next_root);
    }

    /// Forest shape and ledger equalities; empty when consistent.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut v = Vec::new();
        for s in self.slices.values() {
            let sum: Bandwidth = s
                .children
                .iter()
                .filter_map(|c| self.slices.get(c))
                .map(|c| c.allocated)
                .sum();
            if sum != s.child_committed {
                v.push(format!(
                    "slice {}: children allocate {} Mbps but child_committed is {} Mbps",
                    s.id, sum, s.child_committed
                ));
            }
            if s.child_committed > s.allocated {
                v.push(format!(
                    "slice {}: child_committed {} Mbps exceeds allocation {} Mbps",
                    s.id, s.child_committed, s.allocated
                ));
            }
            for c in &s.children {
                match self.slices.get(c) {
                    Some(cs) if cs.parent.as_ref() == Some(&s.id) => {
                        if !is_contiguous_subsequence(&s.plan.hops, &cs.plan.hops) {
                            v.push(format!("slice {c}: route is not a sub-path of {}", s.id));
                        }
                    }
                    _ => v.push(format!("slice {}: child {c} missing or mislinked", s.id)),
                }
            }
            match &s.parent {
                Some(p) => {
                    if s.id.parent().as_ref() != Some(p) || !self.slices.contains_key(p) {
                        v.push(format!("slice {}: parent {p} missing or inconsistent", s.id));
                    }
                }
                None => {
                    if !s.id.is_root() || !self.roots.contains(&s.id) {
                        v.push(format!("slice {}: not registered as root", s.id));
                    }
                }
            }
        }
        v
    }

    /// Σ root allocations per link.
    pub fn link_demand(&self) -> BTreeMap<LinkId, Bandwidth> {
        let mut m: BTreeMap<LinkId, Bandwidth> = BTreeMap::new();
        for r in &self.roots {
            if let Some(s) = self.slices.get(r) {
                for l in s.plan.link_ids() {
                    let e = m.entry(l).or_default();
                    *e = *e + s.allocated;
                }
            }
        }
        m
    }

    /// Test hook: overwrites an allocation without touching any ledger.
    #[doc(hidden)]
    pub fn corrupt_allocation(&mut self, id: &SliceId, amount: Bandwidth) -> bool {
        match self.slices.get_mut(id) {
            Some(s) => {
                s.allocated = amount;
                true
            }
            None => false,
        }
    }
}

fn is_contiguous_subsequence(outer: &[HopRecord], inner: &[HopRecord]) -> bool {
    inner.is_empty() || outer.windows(inner.len()).any(|w| w == inner)
}

/// Plan covering the part of `parent` between `src` and `dst`.
pub fn sub_plan(t: &Topology, parent: &RoutePlan, src: &NodeId, dst: &NodeId) -> Result<RoutePlan, RejectReason> {
    let nodes = parent.nodes();
    let i = nodes.iter().position(|n| n == src);
    let j = nodes.iter().position(|n| n == dst);
    match (i, j) {
        (Some(i), Some(j)) if i <= j => RoutePlan::from_hops(t, src.clone(), dst.clone(), parent.hops[i..j].to_vec())
            .map_err(|e| RejectReason::NoRoute { detail: e.to_string() }),
        _ => Err(RejectReason::OffPath),
    }
}

/// Domains visited by `plan`.
pub fn domains_of(t: &Topology, plan: &RoutePlan) -> BTreeSet<DomainId> {
    plan.nodes()
        .iter()
        .filter_map(|n| t.router(n).map(|r| r.domain))
        .collect()
}

/// Outcome of [`SliceNetwork::release`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseOutcome {
    pub removed: Vec<SliceId>,
    pub notice: Option<String>,
}

/// A topology, a slice tree and forwarding tables under a single writer.
#[derive(Debug, Clone)]
pub struct SliceNetwork {
    topology: Topology,
    tree: SliceTree,
    sfts: SftTables,
}

impl SliceNetwork {
    pub fn new(topology: Topology) -> Self {
        SliceNetwork {
            topology,
            tree: SliceTree::default(),
            sfts: SftTables::new(),
        }
    }

    pub fn with_depth_cap(topology: Topology, cap: usize) -> Self {
        SliceNetwork {
            topology,
            tree: SliceTree::new(cap),
            sfts: SftTables::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn tree(&self) -> &SliceTree {
        &self.tree
    }

    pub fn sfts(&self) -> &SftTables {
        &self.sfts
    }

    pub fn slice(&self, id: &SliceId) -> Option<&Slice> {
        self.tree.get(id)
    }

    pub fn admit(&self, spec: &SliceSpec, parent: Option<&SliceId>) -> AdmissionDecision {
        self.tree.admit(&self.topology, spec, parent)
    }

    /// Commits an accepted decision: roots reserve every plan link, children
    /// draw on the parent. The new slice is `Reserved`.
    pub fn allocate(&mut self, spec: SliceSpec, decision: AdmissionDecision) -> Result<SliceId, SliceError> {
        let (plan, parent) = match decision {
            AdmissionDecision::Accepted { plan, parent } => (plan, parent),
            AdmissionDecision::Rejected(r) => return Err(SliceError::Rejected(r)),
        };
        if parent.is_none() {
            self.topology
                .reserve_all(&plan.link_ids(), spec.bandwidth)
                .map_err(|e| SliceError::StaleDecision(e.to_string()))?;
        }
        let links = plan.link_ids();
        let bw = spec.bandwidth;
        match self.tree.record(spec, plan, parent.as_ref(), None) {
            Ok(id) => {
                self.tree.set_state(&id, SliceState::Reserved)?;
                Ok(id)
            }
            Err(e) => {
                if parent.is_none() {
                    self.topology.release_all(&links, bw)?;
                }
                Err(e)
            }
        }
    }

    /// Admits and allocates a child of an `Active` parent.
    pub fn create_subslice(&mut self, parent: &SliceId, spec: SliceSpec) -> Result<SliceId, SliceError> {
        let p = self
            .tree
            .get(parent)
            .ok_or_else(|| SliceError::Rejected(RejectReason::UnknownParent { parent: parent.clone() }))?;
        if p.state != SliceState::Active {
            return Err(SliceError::Rejected(RejectReason::NotActive {
                slice: parent.clone(),
                state: p.state,
            }));
        }
        let decision = self.admit(&spec, Some(parent));
        self.allocate(spec, decision)
    }

    /// Admit, allocate and program in one go. Returns the `Active` slice id.
    pub fn deploy(&mut self, spec: SliceSpec, parent: Option<&SliceId>) -> Result<SliceId, SliceError> {
        let id = match parent {
            Some(p) => self.create_subslice(p, spec)?,
            None => {
                let d = self.admit(&spec, None);
                self.allocate(spec, d)?
            }
        };
        self.program_sft(&id)?;
        Ok(id)
    }

    pub fn resize(&mut self, id: &SliceId, new: Bandwidth) -> Result<&Slice, SliceError> {
        let effect = self.tree.check_resize(id, new).map_err(SliceError::Rejected)?;
        if let Some(links) = &effect.root_links {
            if effect.grows() {
                self.topology.reserve_all(links, effect.delta()).map_err(|e| match e {
                    TopologyError::InsufficientCapacity {
                        link,
                        requested,
                        residual,
                    } => SliceError::Rejected(RejectReason::LinkCapacity {
                        link,
                        residual_mbps: residual,
                        requested_mbps: requested,
                    }),
                    other => SliceError::Topology(other),
                })?;
            } else if !effect.delta().is_zero() {
                self.topology.release_all(links, effect.delta())?;
            }
        }
        self.tree.apply_resize(id, new)?;
        Ok(&self.tree.slices[id])
    }

    /// Releases `id` and every descendant. Unknown ids are a no-op with a notice.
    pub fn release(&mut self, id: &SliceId) -> Result<ReleaseOutcome, SliceError> {
        let Some(removed) = self.tree.remove_subtree(id) else {
            return Ok(ReleaseOutcome {
                removed: Vec::new(),
                notice: Some(format!("slice {id} does not exist")),
            });
        };
        for s in &removed {
            self.sfts.remove_slice(&s.id);
            if s.parent.is_none() && !s.plan.hops.is_empty() {
                self.topology.release_all(&s.plan.link_ids(), s.allocated)?;
            }
        }
        Ok(ReleaseOutcome {
            removed: removed.into_iter().map(|s| s.id).collect(),
            notice: None,
        })
    }

    /// Installs the slice's forwarding entries and activates it.
    pub fn program_sft(&mut self, id: &SliceId) -> Result<Vec<(NodeId, SftEntry)>, SliceError> {
        let s = self.tree.get(id).ok_or_else(|| SliceError::UnknownSlice(id.clone()))?;
        if s.state != SliceState::Reserved {
            return Err(SliceError::IllegalTransition {
                id: id.clone(),
                from: s.state,
                to: SliceState::Active,
            });
        }
        let entries = plan_entries(&self.topology, id, &s.plan).map_err(SftError::from)?;
        for (router, _) in &entries {
            if self.sfts.entry(router, id).is_some() {
                return Err(SftError::Duplicate {
                    router: router.clone(),
                    slice: id.clone(),
                }
                .into());
            }
        }
        for (router, e) in &entries {
            self.sfts.install(router, e.clone())?;
        }
        self.tree.set_state(id, SliceState::Active)?;
        Ok(entries)
    }

    pub fn walk_sft(&self, id: &SliceId) -> Result<Vec<HopRecord>, SliceError> {
        let s = self.tree.get(id).ok_or_else(|| SliceError::UnknownSlice(id.clone()))?;
        Ok(walk_sft(&self.topology, &self.sfts, id, &s.spec.src_node)?)
    }

    /// Test hook for fault injection.
    #[doc(hidden)]
    pub fn sfts_mut(&mut self) -> &mut SftTables {
        &mut self.sfts
    }

    /// Every slice invariant that can be checked from this state.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut v = self.tree.check_invariants();
        v.extend(link_conservation(&self.topology, &self.tree));
        for s in self.tree.iter().filter(|s| s.state == SliceState::Active) {
            match walk_sft(&self.topology, &self.sfts, &s.id, &s.spec.src_node) {
                Ok(h) if h == s.plan.hops => {}
                Ok(_) => v.push(format!("slice {}: forwarding walk diverges from plan", s.id)),
                Err(e) => v.push(format!("slice {}: {e}", s.id)),
            }
        }
        v
    }
}

/// Each link's reservation must equal the sum of root allocations riding it.
pub fn link_conservation(t: &Topology, tree: &SliceTree) -> Vec<String> {
    let demand = tree.link_demand();
    let mut v = Vec::new();
    for l in t.links() {
        let want = demand.get(&l.id).copied().unwrap_or_default();
        if l.reserved() != want {
            v.push(format!(
                "link {}: reserved {} Mbps but root slices account for {} Mbps",
                l.id,
                l.reserved(),
                want
            ));
        }
        if l.reserved() > l.capacity {
            v.push(format!("link {}: reserved above capacity", l.id));
        }
    }
    v
}

#[cfg(test)]
mod tests;
