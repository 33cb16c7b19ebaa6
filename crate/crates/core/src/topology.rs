// SPDX-License-Identifier: Apache-2.0

//! Multi-AS substrate: routers, links, domains and link bandwidth accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{Bandwidth, Latency};

/// Segment identifier, unique per domain.
pub type Sid = u32;

/// Autonomous system number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainId(pub u32);

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(String);

impl LinkId {
    pub fn new(id: impl Into<String>) -> Self {
        LinkId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LinkId {
    fn from(s: &str) -> Self {
        LinkId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterRole {
    Border,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkScope {
    IntraDomain,
    InterDomain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterNode {
    pub id: NodeId,
    pub domain: DomainId,
    pub node_sid: Sid,
    pub role: RouterRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub capacity: Bandwidth,
    pub latency: Latency,
    pub adjacency_sid: Sid,
    pub scope: LinkScope,
    /// Domain whose orchestrator accounts this link's reservations. Intra
    /// links belong to their domain, peerings to `domain_a`.
    pub owner: DomainId,
    reserved: Bandwidth,
}

impl Link {
    pub fn reserved(&self) -> Bandwidth {
        self.reserved
    }

    pub fn residual(&self) -> Bandwidth {
        self.capacity.saturating_sub(self.reserved)
    }

    pub fn touches(&self, node: &NodeId) -> bool {
        &self.a == node || &self.b == node
    }

    pub fn other_end(&self, node: &NodeId) -> Option<&NodeId> {
        if &self.a == node {
            Some(&self.b)
        } else if &self.b == node {
            Some(&self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid topology: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("insufficient capacity on link {link}: requested {requested} Mbps, residual {residual} Mbps")]
    InsufficientCapacity {
        link: LinkId,
        requested: Bandwidth,
        residual: Bandwidth,
    },
    #[error("over-release on link {link}: releasing {requested} Mbps, reserved {reserved} Mbps")]
    OverRelease {
        link: LinkId,
        requested: Bandwidth,
        reserved: Bandwidth,
    },
    #[error("reservation amount must be positive")]
    ZeroAmount,
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub domains: Vec<DomainDocument>,
    #[serde(default)]
    pub peerings: Vec<PeeringDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDocument {
    pub asn: u32,
    pub routers: Vec<RouterDocument>,
    #[serde(default)]
    pub links: Vec<LinkDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterDocument {
    pub id: String,
    pub sid: Sid,
    pub role: RouterRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDocument {
    pub id: String,
    pub a: String,
    pub b: String,
    pub capacity_mbps: f64,
    pub latency_ms: f64,
    pub adj_sid: Sid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeeringDocument {
    pub id: String,
    pub a: String,
    pub b: String,
    pub capacity_mbps: f64,
    pub latency_ms: f64,
    pub adj_sid: Sid,
    pub domain_a: u32,
    pub domain_b: u32,
}

// ---------------------------------------------------------------------------

/// Validated multi-domain substrate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    domains: BTreeSet<DomainId>,
    routers: BTreeMap<NodeId, RouterNode>,
    links: BTreeMap<LinkId, Link>,
    incident: BTreeMap<NodeId, Vec<LinkId>>,
}

/// Parses and validates a topology document.
pub fn load_topology(document: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDocument = serde_json::from_str(document)?;
    Topology::from_document(&doc)
}

impl Topology {
    pub fn from_document(doc: &TopologyDocument) -> Result<Topology, TopologyError> {
        let mut errors = Vec::new();
        let mut domains = BTreeSet::new();
        let mut routers: BTreeMap<NodeId, RouterNode> = BTreeMap::new();
        let mut links: BTreeMap<LinkId, Link> = BTreeMap::new();

        if doc.domains.is_empty() {
            errors.push("no domains".to_owned());
        }

        for d in &doc.domains {
            if d.asn == 0 {
                errors.push("domain asn must be positive".to_owned());
            }
            if !domains.insert(DomainId(d.asn)) {
                errors.push(format!("duplicate domain {}", d.asn));
            }
            if d.routers.is_empty() {
                errors.push(format!("domain {} has no routers", d.asn));
            }
            for r in &d.routers {
                if r.sid == 0 {
                    errors.push(format!("router {} has sid 0", r.id));
                }
                let node = RouterNode {
                    id: NodeId::new(&r.id),
                    domain: DomainId(d.asn),
                    node_sid: r.sid,
                    role: r.role,
                };
                if routers.insert(node.id.clone(), node).is_some() {
                    errors.push(format!("duplicate router id {}", r.id));
                }
            }
        }

        let mut add_link = |errors: &mut Vec<String>,
                            raw: (&str, &str, &str, f64, f64, Sid),
                            expect: (DomainId, DomainId),
                            scope: LinkScope| {
            let (id, a, b, cap, lat, adj) = raw;
            let mut ok = true;
            let capacity = Bandwidth::from_mbps(cap).unwrap_or_else(|e| {
                errors.push(format!("link {id}: capacity_mbps {e}"));
                ok = false;
                Bandwidth::ZERO
            });
            let latency = Latency::from_ms(lat).unwrap_or_else(|e| {
                errors.push(format!("link {id}: latency_ms {e}"));
                ok = false;
                Latency::ZERO
            });
            if adj == 0 {
                errors.push(format!("link {id} has adj_sid 0"));
            }
            if a == b {
                errors.push(format!("link {id} is a self-loop on {a}"));
                ok = false;
            }
            for (end, dom) in [(a, expect.0), (b, expect.1)] {
                match routers.get(&NodeId::new(end)) {
                    None => {
                        errors.push(format!("link {id} references unknown router {end}"));
                        ok = false;
                    }
                    Some(r) if r.domain != dom => {
                        errors.push(format!(
                            "link {id}: router {end} is in domain {}, expected {dom}",
                            r.domain
                        ));
                        ok = false;
                    }
                    Some(r) if scope == LinkScope::InterDomain && r.role != RouterRole::Border => {
                        errors.push(format!("peering {id}: router {end} is not a border router"));
                    }
                    Some(_) => {}
                }
            }
            if scope == LinkScope::InterDomain && expect.0 == expect.1 {
                errors.push(format!("peering {id} connects domain {} to itself", expect.0));
                ok = false;
            }
            let link = Link {
                id: LinkId::new(id),
                a: NodeId::new(a),
                b: NodeId::new(b),
                capacity,
                latency,
                adjacency_sid: adj,
                scope,
                owner: expect.0,
                reserved: Bandwidth::ZERO,
            };
            if links.contains_key(&link.id) {
                errors.push(format!("duplicate link id {id}"));
            } else if ok {
                links.insert(link.id.clone(), link);
            }
        };

        for d in &doc.domains {
            let dom = DomainId(d.asn);
            for l in &d.links {
                add_link(
                    &mut errors,
                    (&l.id, &l.a, &l.b, l.capacity_mbps, l.latency_ms, l.adj_sid),
                    (dom, dom),
                    LinkScope::IntraDomain,
                );
            }
        }
        for p in &doc.peerings {
            for asn in [p.domain_a, p.domain_b] {
                if !domains.contains(&DomainId(asn)) {
                    errors.push(format!("peering {} references unknown domain {asn}", p.id));
                }
            }
            add_link(
                &mut errors,
                (&p.id, &p.a, &p.b, p.capacity_mbps, p.latency_ms, p.adj_sid),
                (DomainId(p.domain_a), DomainId(p.domain_b)),
                LinkScope::InterDomain,
            );
        }

        let mut topo = Topology {
            domains,
            routers,
            links,
            incident: BTreeMap::new(),
        };
        topo.rebuild_index();

        // SID uniqueness per domain across node and adjacency SIDs.
        for d in &topo.domains {
            let mut seen: BTreeMap<Sid, String> = BTreeMap::new();
            let mut claim = |sid: Sid, owner: String, errors: &mut Vec<String>| {
                if let Some(prev) = seen.get(&sid) {
                    errors.push(format!("duplicate sid {sid} in domain {d}: {prev} and {owner}"));
                } else {
                    seen.insert(sid, owner);
                }
            };
            for r in topo.routers.values().filter(|r| r.domain == *d) {
                claim(r.node_sid, format!("router {}", r.id), &mut errors);
            }
            for l in topo.links.values() {
                let touches = l.owner == *d
                    || (l.scope == LinkScope::InterDomain && topo.routers.get(&l.b).map(|r| r.domain) == Some(*d));
                if touches {
                    claim(l.adjacency_sid, format!("link {}", l.id), &mut errors);
                }
            }
        }

        for d in &topo.domains {
            let members: Vec<&NodeId> = topo.domain_routers(*d).map(|r| &r.id).collect();
            let Some(first) = members.first() else { continue };
            let mut seen = BTreeSet::from([(*first).clone()]);
            let mut stack = vec![(*first).clone()];
            while let Some(n) = stack.pop() {
                for l in topo.incident_links(&n) {
                    if l.scope != LinkScope::IntraDomain {
                        continue;
                    }
                    let next = l.other_end(&n).expect("incident");
                    if seen.insert(next.clone()) {
                        stack.push(next.clone());
                    }
                }
            }
            if seen.len() != members.len() {
                let missing: Vec<String> = members
                    .iter()
                    .filter(|m| !seen.contains(**m))
                    .map(|m| m.to_string())
                    .collect();
                errors.push(format!(
                    "domain {d} is not connected: {} unreachable from {first}",
                    missing.join(",")
                ));
            }
        }

        if errors.is_empty() {
            Ok(topo)
        } else {
            Err(TopologyError::Validation(errors))
        }
    }

    fn rebuild_index(&mut self) {
        self.incident.clear();
        for r in self.routers.keys() {
            self.incident.insert(r.clone(), Vec::new());
        }
        for l in self.links.values() {
            for end in [&l.a, &l.b] {
                if let Some(v) = self.incident.get_mut(end) {
                    v.push(l.id.clone());
                }
            }
        }
    }

    /// Renders the structure back to a document. Reservations are not part of
    /// the document.
    pub fn to_document(&self) -> TopologyDocument {
        let link_doc = |l: &Link| LinkDocument {
            id: l.id.to_string(),
            a: l.a.to_string(),
            b: l.b.to_string(),
            capacity_mbps: l.capacity.mbps(),
            latency_ms: l.latency.ms(),
            adj_sid: l.adjacency_sid,
        };
        let domains = self
            .domains
            .iter()
            .map(|d| DomainDocument {
                asn: d.0,
                routers: self
                    .domain_routers(*d)
                    .map(|r| RouterDocument {
                        id: r.id.to_string(),
                        sid: r.node_sid,
                        role: r.role,
                    })
                    .collect(),
                links: self
                    .links
                    .values()
                    .filter(|l| l.scope == LinkScope::IntraDomain && l.owner == *d)
                    .map(link_doc)
                    .collect(),
            })
            .collect();
        let peerings = self
            .links
            .values()
            .filter(|l| l.scope == LinkScope::InterDomain)
            .map(|l| {
                let ld = link_doc(l);
                PeeringDocument {
                    id: ld.id,
                    a: ld.a,
                    b: ld.b,
                    capacity_mbps: ld.capacity_mbps,
                    latency_ms: ld.latency_ms,
                    adj_sid: ld.adj_sid,
                    domain_a: l.owner.0,
                    domain_b: self.routers[&l.b].domain.0,
                }
            })
            .collect();
        TopologyDocument { domains, peerings }
    }

    pub fn domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        self.domains.iter().copied()
    }

    pub fn has_domain(&self, d: DomainId) -> bool {
        self.domains.contains(&d)
    }

    pub fn routers(&self) -> impl Iterator<Item = &RouterNode> {
        self.routers.values()
    }

    pub fn router(&self, id: &NodeId) -> Option<&RouterNode> {
        self.routers.get(id)
    }

    pub fn router_count(&self) -> usize {
        self.routers.len()
    }

    pub fn domain_routers(&self, d: DomainId) -> impl Iterator<Item = &RouterNode> {
        self.routers.values().filter(move |r| r.domain == d)
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn link(&self, id: &LinkId) -> Option<&Link> {
        self.links.get(id)
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn incident_links<'a>(&'a self, node: &NodeId) -> impl Iterator<Item = &'a Link> + 'a {
        self.incident
            .get(node)
            .into_iter()
            .flatten()
            .map(move |id| &self.links[id])
    }

    /// Peering links with one end in `from` and the other in `to`.
    pub fn peerings_between(&self, from: DomainId, to: DomainId) -> impl Iterator<Item = &Link> {
        self.links.values().filter(move |l| {
            l.scope == LinkScope::InterDomain && {
                let da = self.routers[&l.a].domain;
                let db = self.routers[&l.b].domain;
                (da == from && db == to) || (da == to && db == from)
            }
        })
    }

    /// Lowest-latency intra-domain link between two routers, ties broken by link id.
    pub fn canonical_intra_link(&self, a: &NodeId, b: &NodeId) -> Option<&Link> {
        self.incident_links(a)
            .filter(|l| l.scope == LinkScope::IntraDomain && l.other_end(a) == Some(b))
            .min_by(|x, y| (x.latency, &x.id).cmp(&(y.latency, &y.id)))
    }

    pub fn residual_bandwidth(&self, link: &LinkId) -> Result<Bandwidth, TopologyError> {
        self.links
            .get(link)
            .map(Link::residual)
            .ok_or_else(|| TopologyError::UnknownLink(link.clone()))
    }

    pub fn reserve(&mut self, link: &LinkId, amount: Bandwidth) -> Result<(), TopologyError> {
        self.reserve_all(std::slice::from_ref(link), amount)
    }

    pub fn release(&mut self, link: &LinkId, amount: Bandwidth) -> Result<(), TopologyError> {
        self.release_all(std::slice::from_ref(link), amount)
    }

    /// Reserves `amount` on every listed link, or on none of them.
    pub fn reserve_all(&mut self, links: &[LinkId], amount: Bandwidth) -> Result<(), TopologyError> {
        if amount.is_zero() {
            return Err(TopologyError::ZeroAmount);
        }
        let demand = Self::aggregate(links, amount);
        for (id, need) in &demand {
            let link = self
                .links
                .get(*id)
                .ok_or_else(|| TopologyError::UnknownLink((*id).clone()))?;
            if link.residual() < *need {
                return Err(TopologyError::InsufficientCapacity {
                    link: (*id).clone(),
                    requested: *need,
                    residual: link.residual(),
                });
            }
        }
        for (id, need) in demand {
            let link = self.links.get_mut(id).expect("checked");
            link.reserved = link.reserved + need;
        }
        Ok(())
    }

    /// Releases `amount` on every listed link, or on none of them.
    pub fn release_all(&mut self, links: &[LinkId], amount: Bandwidth) -> Result<(), TopologyError> {
        if amount.is_zero() {
            return Err(TopologyError::ZeroAmount);
        }
        let demand = Self::aggregate(links, amount);
        for (id, need) in &demand {
            let link = self
                .links
                .get(*id)
                .ok_or_else(|| TopologyError::UnknownLink((*id).clone()))?;
            if link.reserved < *need {
                return Err(TopologyError::OverRelease {
                    link: (*id).clone(),
                    requested: *need,
                    reserved: link.reserved,
                });
            }
        }
        for (id, need) in demand {
            let link = self.links.get_mut(id).expect("checked");
            link.reserved = link.reserved.saturating_sub(need);
        }
        Ok(())
    }

    fn aggregate(links: &[LinkId], amount: Bandwidth) -> BTreeMap<&LinkId, Bandwidth> {
        let mut demand: BTreeMap<&LinkId, Bandwidth> = BTreeMap::new();
        for l in links {
            let e = demand.entry(l).or_default();
            *e = *e + amount;
        }
        demand
    }

    /// Current reservation of every link.
    pub fn reservations(&self) -> BTreeMap<LinkId, Bandwidth> {
        self.links.values().map(|l| (l.id.clone(), l.reserved)).collect()
    }

    /// Overwrites a link's reservation. Used when assembling views from
    /// per-domain ledgers and when restoring snapshots.
    pub(crate) fn set_reserved(&mut self, link: &LinkId, amount: Bandwidth) -> Result<(), TopologyError> {
        let l = self
            .links
            .get_mut(link)
            .ok_or_else(|| TopologyError::UnknownLink(link.clone()))?;
        if amount > l.capacity {
            return Err(TopologyError::InsufficientCapacity {
                link: link.clone(),
                requested: amount,
                residual: l.capacity,
            });
        }
        l.reserved = amount;
        Ok(())
    }

    /// Copy of the structure with every reservation cleared.
    pub fn pristine(&self) -> Topology {
        let mut t = self.clone();
        for l in t.links.values_mut() {
            l.reserved = Bandwidth::ZERO;
        }
        t
    }

    /// Test hook: shrinks a link's capacity without touching reservations.
    #[doc(hidden)]
    pub fn corrupt_capacity(&mut self, link: &LinkId, capacity: Bandwidth) {
        if let Some(l) = self.links.get_mut(link) {
            l.capacity = capacity;
        }
    }
}
