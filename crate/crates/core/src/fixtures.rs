// SPDX-License-Identifier: Apache-2.0

//! Small reference topologies used by tests, examples and the CLI docs.

use crate::topology::{
    DomainDocument, LinkDocument, PeeringDocument, RouterDocument, RouterRole, Topology, TopologyDocument,
};

fn router(id: &str, sid: u32, role: RouterRole) -> RouterDocument {
    RouterDocument {
        id: id.into(),
        sid,
        role,
    }
}

fn intra(id: &str, a: &str, b: &str, adj_sid: u32) -> LinkDocument {
    LinkDocument {
        id: id.into(),
        a: a.into(),
        b: b.into(),
        capacity_mbps: 10_000.0,
        latency_ms: 1.0,
        adj_sid,
    }
}

fn peering(id: &str, a: &str, b: &str, domains: (u32, u32), adj_sid: u32) -> PeeringDocument {
    PeeringDocument {
        id: id.into(),
        a: a.into(),
        b: b.into(),
        capacity_mbps: 1000.0,
        latency_ms: 5.0,
        adj_sid,
        domain_a: domains.0,
        domain_b: domains.1,
    }
}

/// Three-domain chain 65001 - 65002 - 65003.
///
/// Each domain has two routers joined by a 1 ms / 10000 Mbps link. Adjacent
/// domains are joined by a pair of parallel 5 ms / 1000 Mbps peerings, giving
/// 6 routers and 7 links. Routers are `r1`..`r6`; `r1` and `r6` are the
/// chain ends and `r2`, `r6` are interior.
pub fn t3_document() -> TopologyDocument {
    use RouterRole::*;
    TopologyDocument {
        domains: vec![
            DomainDocument {
                asn: 65001,
                routers: vec![router("r1", 100, Border), router("r2", 101, Interior)],
                links: vec![intra("a-1", "r1", "r2", 1001)],
            },
            DomainDocument {
                asn: 65002,
                routers: vec![router("r3", 200, Border), router("r4", 201, Border)],
                links: vec![intra("b-1", "r3", "r4", 2001)],
            },
            DomainDocument {
                asn: 65003,
                routers: vec![router("r5", 300, Border), router("r6", 301, Interior)],
                links: vec![intra("c-1", "r5", "r6", 3001)],
            },
        ],
        peerings: vec![
            peering("p-ab-1", "r1", "r3", (65001, 65002), 5001),
            peering("p-ab-2", "r1", "r3", (65001, 65002), 5002),
            peering("p-bc-1", "r4", "r5", (65002, 65003), 5003),
            peering("p-bc-2", "r4", "r5", (65002, 65003), 5004),
        ],
    }
}

/// Validated [`t3_document`].
pub fn t3() -> Topology {
    Topology::from_document(&t3_document()).expect("fixture is valid")
}

pub fn t3_json() -> String {
    serde_json::to_string_pretty(&t3_document()).expect("serializable")
}

/// Linear chain of `n` domains with ASNs 65001.. and routers `d<i>a`, `d<i>b`.
/// Every router is a border router; adjacent domains share one 2 ms peering
/// between `d<i>b` and `d<i+1>a`.
pub fn chain_document(n: usize) -> TopologyDocument {
    let mut domains = Vec::new();
    let mut peerings = Vec::new();
    for i in 0..n {
        let asn = 65001 + i as u32;
        let a = format!("d{i}a");
        let b = format!("d{i}b");
        domains.push(DomainDocument {
            asn,
            routers: vec![router(&a, 10, RouterRole::Border), router(&b, 11, RouterRole::Border)],
            links: vec![LinkDocument {
                id: format!("d{i}-ab"),
                a: a.clone(),
                b: b.clone(),
                capacity_mbps: 1000.0,
                latency_ms: 1.0,
                adj_sid: 20,
            }],
        });
        if i + 1 < n {
            peerings.push(PeeringDocument {
                id: format!("p{i}"),
                a: b,
                b: format!("d{}a", i + 1),
                capacity_mbps: 1000.0,
                latency_ms: 2.0,
                adj_sid: 30 + i as u32,
                domain_a: asn,
                domain_b: asn + 1,
            });
        }
    }
    TopologyDocument { domains, peerings }
}

pub fn chain(n: usize) -> Topology {
    Topology::from_document(&chain_document(n)).expect("fixture is valid")
}
