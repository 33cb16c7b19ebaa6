// SPDX-License-Identifier: Apache-2.0

//! Slice Forwarding Tables: per-router maps from slice id to the next hop and
//! the segments still to be traversed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SliceId;
use crate::routing::{encode_segment_list, HopRecord, RoutePlan, RoutingError, SegmentList};
use crate::topology::{DomainId, LinkId, LinkScope, NodeId, Sid, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SftError {
    #[error("router {router} already has an entry for slice {slice}")]
    Duplicate { router: NodeId, slice: SliceId },
    #[error("router {router} has no entry for slice {slice}")]
    MissingEntry { router: NodeId, slice: SliceId },
    #[error("forwarding loop for slice {slice}")]
    Loop { slice: SliceId },
    #[error("router {router}: out link {link} is not incident")]
    BadLink { router: NodeId, link: LinkId },
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutLink {
    Link(LinkId),
    /// The slice terminates at this router.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftEntry {
    pub slice_id: SliceId,
    pub remaining_segments: Vec<SegmentList>,
    pub out_link: OutLink,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceForwardingTable {
    pub router: NodeId,
    pub entries: BTreeMap<SliceId, SftEntry>,
}

/// All forwarding tables known to one owner, keyed by router.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SftTables(BTreeMap<NodeId, SliceForwardingTable>);

impl SftTables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install(&mut self, router: &NodeId, entry: SftEntry) -> Result<(), SftError> {
        let table = self.0.entry(router.clone()).or_insert_with(|| SliceForwardingTable {
            router: router.clone(),
            entries: BTreeMap::new(),
        });
        if table.entries.contains_key(&entry.slice_id) {
            return Err(SftError::Duplicate {
                router: router.clone(),
                slice: entry.slice_id,
            });
        }
        table.entries.insert(entry.slice_id.clone(), entry);
        Ok(())
    }

    pub fn remove(&mut self, router: &NodeId, slice: &SliceId) -> Option<SftEntry> {
        let table = self.0.get_mut(router)?;
        let e = table.entries.remove(slice);
        if table.entries.is_empty() {
            self.0.remove(router);
        }
        e
    }

    /// Removes every entry of `slice`; returns how many were removed.
    pub fn remove_slice(&mut self, slice: &SliceId) -> usize {
        let mut n = 0;
        for t in self.0.values_mut() {
            n += usize::from(t.entries.remove(slice).is_some());
        }
        self.0.retain(|_, t| !t.entries.is_empty());
        n
    }

    pub fn entry(&self, router: &NodeId, slice: &SliceId) -> Option<&SftEntry> {
        self.0.get(router)?.entries.get(slice)
    }

    pub fn table(&self, router: &NodeId) -> Option<&SliceForwardingTable> {
        self.0.get(router)
    }

    pub fn tables(&self) -> impl Iterator<Item = &SliceForwardingTable> {
        self.0.values()
    }

    /// (router, entry) pairs for one slice, sorted by router.
    pub fn entries_for(&self, slice: &SliceId) -> Vec<(NodeId, SftEntry)> {
        self.0
            .values()
            .filter_map(|t| t.entries.get(slice).map(|e| (t.router.clone(), e.clone())))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.values().map(|t| t.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Merges another owner's tables into this one.
    pub fn absorb(&mut self, other: &SftTables) -> Result<(), SftError> {
        for t in other.tables() {
            for e in t.entries.values() {
                self.install(&t.router, e.clone())?;
            }
        }
        Ok(())
    }
}

fn regroup(tokens: &[(DomainId, Sid)]) -> Vec<SegmentList> {
    let mut out: Vec<SegmentList> = Vec::new();
    for &(d, s) in tokens {
        match out.last_mut() {
            Some(l) if l.domain == d => l.sids.push(s),
            _ => out.push(SegmentList {
                domain: d,
                sids: vec![s],
            }),
        }
    }
    out
}

/// One entry per router on `plan`, each carrying the segments after that
/// router and the link towards the next hop.
pub fn plan_entries(
    t: &Topology,
    slice_id: &SliceId,
    plan: &RoutePlan,
) -> Result<Vec<(NodeId, SftEntry)>, RoutingError> {
    let lists = encode_segment_list(t, plan)?;
    let tokens: Vec<(DomainId, Sid)> = lists
        .iter()
        .flat_map(|l| l.sids.iter().map(move |s| (l.domain, *s)))
        .collect();

    // Token index of each visited router's node SID.
    let mut positions = vec![0usize];
    let mut cursor = 0usize;
    for h in &plan.hops {
        let link = t
            .link(&h.link_id)
            .ok_or_else(|| RoutingError::StalePlan(h.link_id.clone()))?;
        cursor += if link.scope == LinkScope::InterDomain { 2 } else { 1 };
        positions.push(cursor);
    }

    let nodes = plan.nodes();
    Ok(nodes
        .into_iter()
        .enumerate()
        .map(|(k, router)| {
            let out_link = plan
                .hops
                .get(k)
                .map(|h| OutLink::Link(h.link_id.clone()))
                .unwrap_or(OutLink::Terminal);
            let entry = SftEntry {
                slice_id: slice_id.clone(),
                remaining_segments: regroup(&tokens[positions[k] + 1..]),
                out_link,
            };
            (router, entry)
        })
        .collect())
}

/// Follows `slice`'s entries from `start` until a terminal entry, returning
/// the traversed hops.
pub fn walk_sft(t: &Topology, tables: &SftTables, slice: &SliceId, start: &NodeId) -> Result<Vec<HopRecord>, SftError> {
    let mut hops = Vec::new();
    let mut at = start.clone();
    loop {
        let entry = tables.entry(&at, slice).ok_or_else(|| SftError::MissingEntry {
            router: at.clone(),
            slice: slice.clone(),
        })?;
        let link_id = match &entry.out_link {
            OutLink::Terminal => return Ok(hops),
            OutLink::Link(l) => l,
        };
        let link = t
            .link(link_id)
            .filter(|l| l.touches(&at))
            .ok_or_else(|| SftError::BadLink {
                router: at.clone(),
                link: link_id.clone(),
            })?;
        let next = link.other_end(&at).expect("incident").clone();
        hops.push(HopRecord {
            link_id: link.id.clone(),
            from_node: at.clone(),
            to_node: next.clone(),
            domain_of_link: match link.scope {
                LinkScope::IntraDomain => crate::routing::HopDomain::Intra(t.router(&at).expect("known").domain),
                LinkScope::InterDomain => crate::routing::HopDomain::InterDomain,
            },
        });
        if hops.len() > t.router_count() {
            return Err(SftError::Loop { slice: slice.clone() });
        }
        at = next;
    }
}
