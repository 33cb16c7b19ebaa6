// SPDX-License-Identifier: Apache-2.0

//! Default-route computation and segment-list encoding.
//!
//! Slices ride the route the substrate would pick anyway: shortest AS path
//! across domains, minimum-latency legs inside each domain. All tie-breaks are
//! total orders so that identical topology state always yields identical plans.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{DomainId, Link, LinkId, LinkScope, NodeId, Sid, Topology};
use crate::units::{Bottleneck, Latency};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("unknown domain {0}")]
    UnknownDomain(DomainId),
    #[error("unknown router {0}")]
    UnknownNode(NodeId),
    #[error("router {node} is not in domain {domain}")]
    NotInDomain { node: NodeId, domain: DomainId },
    #[error("no AS path from {src} to {dst}")]
    NoAsPath { src: DomainId, dst: DomainId },
    #[error("routers {from} and {to} are not connected inside domain {domain}")]
    Disconnected { domain: DomainId, from: NodeId, to: NodeId },
    #[error("no usable border pair between {from} and {to}")]
    NoBorderPair { from: DomainId, to: DomainId },
    #[error("sid {sid} does not resolve in domain {domain}")]
    SidResolution { domain: DomainId, sid: Sid },
    #[error("malformed segment lists: {0}")]
    MalformedSegments(String),
    #[error("stale plan: link {0} no longer exists")]
    StalePlan(LinkId),
}

/// Loop-free sequence of domains from source to destination.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AsPath(pub Vec<DomainId>);

impl AsPath {
    pub fn domains(&self) -> &[DomainId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for AsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentList {
    pub domain: DomainId,
    pub sids: Vec<Sid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopDomain {
    Intra(DomainId),
    InterDomain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopRecord {
    pub link_id: LinkId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub domain_of_link: HopDomain,
}

impl HopRecord {
    fn across(t: &Topology, link: &Link, from: &NodeId) -> HopRecord {
        let to = link.other_end(from).expect("link touches from").clone();
        let domain_of_link = match link.scope {
            LinkScope::IntraDomain => HopDomain::Intra(t.router(from).expect("known").domain),
            LinkScope::InterDomain => HopDomain::InterDomain,
        };
        HopRecord {
            link_id: link.id.clone(),
            from_node: from.clone(),
            to_node: to,
            domain_of_link,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub src: NodeId,
    pub dst: NodeId,
    pub as_path: AsPath,
    pub hops: Vec<HopRecord>,
    #[serde(rename = "total_latency_ms")]
    pub total_latency: Latency,
    #[serde(rename = "bottleneck_mbps")]
    pub bottleneck: Bottleneck,
}

impl RoutePlan {
    /// Routers visited, source first.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut nodes = vec![self.src.clone()];
        nodes.extend(self.hops.iter().map(|h| h.to_node.clone()));
        nodes
    }

    pub fn link_ids(&self) -> Vec<LinkId> {
        self.hops.iter().map(|h| h.link_id.clone()).collect()
    }

    /// Builds the plan for a contiguous run of hops, recomputing metrics
    /// from `t`.
    pub fn from_hops(t: &Topology, src: NodeId, dst: NodeId, hops: Vec<HopRecord>) -> Result<RoutePlan, RoutingError> {
        let mut domains: Vec<DomainId> = Vec::new();
        let src_dom = t
            .router(&src)
            .ok_or_else(|| RoutingError::UnknownNode(src.clone()))?
            .domain;
        domains.push(src_dom);
        for h in &hops {
            let d = t
                .router(&h.to_node)
                .ok_or_else(|| RoutingError::UnknownNode(h.to_node.clone()))?
                .domain;
            if domains.last() != Some(&d) {
                domains.push(d);
            }
        }
        let mut plan = RoutePlan {
            src,
            dst,
            as_path: AsPath(domains),
            hops,
            total_latency: Latency::ZERO,
            bottleneck: Bottleneck::Unconstrained,
        };
        let (lat, bn) = route_metrics(t, &plan)?;
        plan.total_latency = lat;
        plan.bottleneck = bn;
        Ok(plan)
    }
}

/// Shortest AS path: fewest domains, then lowest summed peering latency, then
/// lexicographically smallest ASN sequence.
pub fn compute_as_path(t: &Topology, src: DomainId, dst: DomainId) -> Result<AsPath, RoutingError> {
    for d in [src, dst] {
        if !t.has_domain(d) {
            return Err(RoutingError::UnknownDomain(d));
        }
    }
    let mut adjacency: BTreeMap<DomainId, BTreeMap<DomainId, Latency>> = BTreeMap::new();
    for l in t.links().filter(|l| l.scope == LinkScope::InterDomain) {
        let da = t.router(&l.a).expect("valid").domain;
        let db = t.router(&l.b).expect("valid").domain;
        for (x, y) in [(da, db), (db, da)] {
            let e = adjacency.entry(x).or_default().entry(y).or_insert(l.latency);
            *e = (*e).min(l.latency);
        }
    }

    // Labels extend isotonically under the (hops, latency, sequence) order,
    // so label-setting search returns the optimum.
    let mut heap = BinaryHeap::new();
    let mut settled = BTreeSet::new();
    heap.push(Reverse((1usize, Latency::ZERO, vec![src])));
    while let Some(Reverse((hops, lat, path))) = heap.pop() {
        let last = *path.last().expect("non-empty");
        if !settled.insert(last) {
            continue;
        }
        if last == dst {
            return Ok(AsPath(path));
        }
        for (next, w) in adjacency.get(&last).into_iter().flatten() {
            if settled.contains(next) || path.contains(next) {
                continue;
            }
            let mut p = path.clone();
            p.push(*next);
            heap.push(Reverse((hops + 1, lat + *w, p)));
        }
    }
    Err(RoutingError::NoAsPath { src, dst })
}

/// Minimum-latency path inside one domain, ties broken by fewer hops and then
/// the smallest node-id sequence.
pub fn compute_intra_path(
    t: &Topology,
    domain: DomainId,
    ingress: &NodeId,
    egress: &NodeId,
) -> Result<(Vec<NodeId>, Latency), RoutingError> {
    for n in [ingress, egress] {
        let r = t.router(n).ok_or_else(|| RoutingError::UnknownNode(n.clone()))?;
        if r.domain != domain {
            return Err(RoutingError::NotInDomain {
                node: n.clone(),
                domain,
            });
        }
    }
    let mut heap = BinaryHeap::new();
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    heap.push(Reverse((Latency::ZERO, 0usize, vec![ingress.clone()])));
    while let Some(Reverse((lat, hops, path))) = heap.pop() {
        let last = path.last().expect("non-empty").clone();
        if !settled.insert(last.clone()) {
            continue;
        }
        if &last == egress {
            return Ok((path, lat));
        }
        for l in t.incident_links(&last) {
            if l.scope != LinkScope::IntraDomain {
                continue;
            }
            let next = l.other_end(&last).expect("incident");
            if settled.contains(next) || path.contains(next) {
                continue;
            }
            let mut p = path.clone();
            p.push(next.clone());
            heap.push(Reverse((lat + l.latency, hops + 1, p)));
        }
    }
    Err(RoutingError::Disconnected {
        domain,
        from: ingress.clone(),
        to: egress.clone(),
    })
}

fn intra_hops(t: &Topology, nodes: &[NodeId]) -> Vec<HopRecord> {
    nodes
        .windows(2)
        .map(|w| {
            let link = t
                .canonical_intra_link(&w[0], &w[1])
                .expect("intra path follows existing links");
            HopRecord::across(t, link, &w[0])
        })
        .collect()
}

/// End-to-end plan along [`compute_as_path`].
///
/// Each domain crossing picks the peering minimizing intra-leg latency plus
/// crossing latency, ties broken by (upstream border, downstream border, link
/// id). The choice is greedy per crossing and can miss the global optimum
/// when a cheap crossing lands far from the next one.
pub fn assemble_route_plan(t: &Topology, src: &NodeId, dst: &NodeId) -> Result<RoutePlan, RoutingError> {
    let src_dom = t
        .router(src)
        .ok_or_else(|| RoutingError::UnknownNode(src.clone()))?
        .domain;
    let dst_dom = t
        .router(dst)
        .ok_or_else(|| RoutingError::UnknownNode(dst.clone()))?
        .domain;
    let as_path = compute_as_path(t, src_dom, dst_dom)?;

    let mut hops = Vec::new();
    let mut current = src.clone();
    for pair in as_path.domains().windows(2) {
        let (here, next) = (pair[0], pair[1]);
        let mut legs: BTreeMap<NodeId, Option<(Vec<NodeId>, Latency)>> = BTreeMap::new();
        type Candidate<'a> = ((Latency, NodeId, NodeId, LinkId), &'a Link);
        let mut best: Option<Candidate> = None;
        for link in t.peerings_between(here, next) {
            let (up, down) = if t.router(&link.a).expect("valid").domain == here {
                (&link.a, &link.b)
            } else {
                (&link.b, &link.a)
            };
            let leg = legs
                .entry(up.clone())
                .or_insert_with(|| compute_intra_path(t, here, &current, up).ok());
            let Some((_, leg_lat)) = leg else { continue };
            let key = (*leg_lat + link.latency, up.clone(), down.clone(), link.id.clone());
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, link));
            }
        }
        let Some(((_, up, _, _), link)) = best else {
            return Err(RoutingError::NoBorderPair { from: here, to: next });
        };
        let (nodes, _) = legs.remove(&up).flatten().expect("chosen leg was computed");
        hops.extend(intra_hops(t, &nodes));
        hops.push(HopRecord::across(t, link, &up));
        current = link.other_end(&up).expect("touches").clone();
    }
    let (nodes, _) = compute_intra_path(t, dst_dom, &current, dst)?;
    hops.extend(intra_hops(t, &nodes));

    let mut plan = RoutePlan {
        src: src.clone(),
        dst: dst.clone(),
        as_path,
        hops,
        total_latency: Latency::ZERO,
        bottleneck: Bottleneck::Unconstrained,
    };
    let (lat, bn) = route_metrics(t, &plan)?;
    plan.total_latency = lat;
    plan.bottleneck = bn;
    Ok(plan)
}

/// Latency sum and residual bottleneck of `plan` against the current state of `t`.
pub fn route_metrics(t: &Topology, plan: &RoutePlan) -> Result<(Latency, Bottleneck), RoutingError> {
    let mut lat = Latency::ZERO;
    let mut bn = Bottleneck::Unconstrained;
    for h in &plan.hops {
        let l = t
            .link(&h.link_id)
            .ok_or_else(|| RoutingError::StalePlan(h.link_id.clone()))?;
        lat = lat + l.latency;
        bn = bn.with(l.residual());
    }
    Ok((lat, bn))
}

/// One segment list per traversed domain: node SIDs of visited routers in
/// order, with each crossing's adjacency SID appended to the upstream list.
pub fn encode_segment_list(t: &Topology, plan: &RoutePlan) -> Result<Vec<SegmentList>, RoutingError> {
    let mut lists: Vec<SegmentList> = Vec::new();
    let mut push = |domain: DomainId, sid: Sid| match lists.last_mut() {
        Some(last) if last.domain == domain => last.sids.push(sid),
        _ => lists.push(SegmentList {
            domain,
            sids: vec![sid],
        }),
    };
    let node_sid = |n: &NodeId| {
        t.router(n)
            .map(|r| (r.domain, r.node_sid))
            .ok_or_else(|| RoutingError::UnknownNode(n.clone()))
    };

    let (d, s) = node_sid(&plan.src)?;
    push(d, s);
    for h in &plan.hops {
        let link = t
            .link(&h.link_id)
            .ok_or_else(|| RoutingError::StalePlan(h.link_id.clone()))?;
        if link.scope == LinkScope::InterDomain {
            let (d, _) = node_sid(&h.from_node)?;
            push(d, link.adjacency_sid);
        }
        let (d, s) = node_sid(&h.to_node)?;
        push(d, s);
    }
    Ok(lists)
}

enum Resolved<'a> {
    Node(&'a NodeId),
    Adjacency(&'a Link),
}

fn resolve<'a>(t: &'a Topology, domain: DomainId, sid: Sid) -> Result<Resolved<'a>, RoutingError> {
    if let Some(r) = t.domain_routers(domain).find(|r| r.node_sid == sid) {
        return Ok(Resolved::Node(&r.id));
    }
    t.links()
        .find(|l| {
            l.adjacency_sid == sid
                && (t.router(&l.a).map(|r| r.domain) == Some(domain)
                    || t.router(&l.b).map(|r| r.domain) == Some(domain))
        })
        .map(Resolved::Adjacency)
        .ok_or(RoutingError::SidResolution { domain, sid })
}

/// Inverse of [`encode_segment_list`].
pub fn decode_segment_lists(t: &Topology, lists: &[SegmentList]) -> Result<Vec<HopRecord>, RoutingError> {
    let mut hops = Vec::new();
    let mut prev: Option<NodeId> = None;
    let mut crossing: Option<&Link> = None;
    for list in lists {
        if list.sids.is_empty() {
            return Err(RoutingError::MalformedSegments(format!(
                "empty list for domain {}",
                list.domain
            )));
        }
        for &sid in &list.sids {
            match resolve(t, list.domain, sid)? {
                Resolved::Node(n) => {
                    if let Some(link) = crossing.take() {
                        let from = prev.as_ref().expect("crossing follows a node");
                        if link.other_end(from) != Some(n) {
                            return Err(RoutingError::MalformedSegments(format!(
                                "crossing {} does not land on {n}",
                                link.id
                            )));
                        }
                        hops.push(HopRecord::across(t, link, from));
                    } else if let Some(p) = &prev {
                        if p != n {
                            let link = t
                                .canonical_intra_link(p, n)
                                .ok_or_else(|| RoutingError::MalformedSegments(format!("no link {p} -> {n}")))?;
                            hops.push(HopRecord::across(t, link, p));
                        }
                    }
                    prev = Some(n.clone());
                }
                Resolved::Adjacency(link) => {
                    let from = prev
                        .clone()
                        .ok_or_else(|| RoutingError::MalformedSegments("adjacency before any node".into()))?;
                    if crossing.is_some() || !link.touches(&from) {
                        return Err(RoutingError::MalformedSegments(format!(
                            "adjacency {} not incident to {from}",
                            link.id
                        )));
                    }
                    match link.scope {
                        LinkScope::InterDomain => crossing = Some(link),
                        LinkScope::IntraDomain => {
                            hops.push(HopRecord::across(t, link, &from));
                            prev = link.other_end(&from).cloned();
                        }
                    }
                }
            }
        }
    }
    if crossing.is_some() {
        return Err(RoutingError::MalformedSegments(
            "trailing inter-domain adjacency".into(),
        ));
    }
    Ok(hops)
}
