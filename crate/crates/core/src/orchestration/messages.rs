// SPDX-License-Identifier: Apache-2.0

//! Payloads stored in the repository and the key schema that locates them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::routing::RoutePlan;
use crate::slicing::{RejectReason, SliceId, SliceSpec};
use crate::topology::{DomainId, LinkId};
use crate::units::{Bandwidth, Bottleneck, Latency};

pub const CAPACITY_PREFIX: &str = "capacity/";
pub const TX_PREFIX: &str = "tx/";
/// Counter handing out engine-wide root slice ordinals.
pub const ROOT_COUNTER_KEY: &str = "slice-ids/next-root";

pub fn capacity_key(d: DomainId) -> String {
    format!("{CAPACITY_PREFIX}{}", d.0)
}

pub fn request_key(txid: &str) -> String {
    format!("{TX_PREFIX}{txid}/request")
}

pub fn phase_key(txid: &str) -> String {
    format!("{TX_PREFIX}{txid}/phase")
}

pub fn domain_key(txid: &str, d: DomainId) -> String {
    format!("{TX_PREFIX}{txid}/domain/{}", d.0)
}

/// Splits `tx/<txid>/<rest>` into `(txid, rest)`.
pub fn parse_tx_key(key: &str) -> Option<(&str, &str)> {
    key.strip_prefix(TX_PREFIX)?.split_once('/')
}

/// Ordering position of a txid (`tx-<revision>`).
pub fn tx_ordinal(txid: &str) -> Option<u64> {
    txid.strip_prefix("tx-")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityAdvertisement {
    pub domain: DomainId,
    pub max_transit_bandwidth_mbps: Bottleneck,
    pub min_transit_latency_ms: Latency,
    pub border_count: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    Deploy {
        spec: SliceSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<SliceId>,
    },
    Resize {
        slice_id: SliceId,
        #[serde(rename = "bandwidth_mbps")]
        bandwidth: Bandwidth,
    },
    Release {
        slice_id: SliceId,
    },
}

impl Operation {
    pub fn kind(&self) -> &'static str {
        match self {
            Operation::Deploy { parent: None, .. } => "deploy",
            Operation::Deploy { parent: Some(_), .. } => "subslice",
            Operation::Resize { .. } => "resize",
            Operation::Release { .. } => "release",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRequest {
    pub txid: String,
    pub operation: Operation,
    pub submitted_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Reserving,
    Committing,
    Aborting,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Reserving => "reserving",
            Phase::Committing => "committing",
            Phase::Aborting => "aborting",
            Phase::Done => "done",
            Phase::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// What each involved domain has to do; every domain applies it to the
/// links it owns and the routers it hosts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainWork {
    /// Install a slice. Roots reserve `reserve` on their plan links first.
    Deploy {
        slice_id: SliceId,
        plan: RoutePlan,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reserve: Option<Bandwidth>,
    },
    /// Reserve `amount` more on the listed links.
    Grow {
        links: Vec<LinkId>,
        amount: Bandwidth,
    },
    /// Return `amount` on the listed links at commit.
    Shrink {
        links: Vec<LinkId>,
        amount: Bandwidth,
    },
    /// Remove forwarding entries of `slices` and return `amount` on `links`.
    Release {
        links: Vec<LinkId>,
        amount: Bandwidth,
        slices: Vec<SliceId>,
    },
    Noop,
}

impl DomainWork {
    /// Whether a participant may refuse during the reserve step.
    pub fn refusable(&self) -> bool {
        matches!(
            self,
            DomainWork::Deploy { .. } | DomainWork::Grow { .. } | DomainWork::Shrink { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub coordinator: DomainId,
    pub involved: Vec<DomainId>,
    pub deadline_tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_id: Option<SliceId>,
    pub work: DomainWork,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainState {
    Waiting,
    Reserved,
    Committed,
    Aborted,
    Refused,
}

impl fmt::Display for DomainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainState::Waiting => "waiting",
            DomainState::Reserved => "reserved",
            DomainState::Committed => "committed",
            DomainState::Aborted => "aborted",
            DomainState::Refused => "refused",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub state: DomainState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}
