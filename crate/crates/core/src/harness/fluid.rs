// SPDX-License-Identifier: Apache-2.0

//! Fluid traffic model.
//!
//! Rates are continuous and there is no queueing. A slice first carries its
//! children's traffic, each child capped by its own allocation, and its own
//! flows share whatever allocation is left.

use std::collections::BTreeMap;

use crate::slicing::{SliceId, SliceState, SliceTree};
use crate::topology::{LinkId, Topology};
use crate::units::Bandwidth;

/// Shares `cap` among `offered` rates. Below the cap every flow gets what
/// it offers; above it each flow gets `cap * offered / total`, rounded down.
pub fn delivered_rate(cap: Bandwidth, offered: &[Bandwidth]) -> Vec<Bandwidth> {
    let total: Bandwidth = offered.iter().copied().sum();
    if total <= cap {
        return offered.to_vec();
    }
    offered.iter().map(|o| cap.scale(*o, total)).collect()
}

/// Per-slice outcome of one tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceRate {
    pub offered: Bandwidth,
    /// Traffic of the slice's own flows.
    pub delivered: Bandwidth,
    /// Own traffic plus everything carried for descendants.
    pub usage: Bandwidth,
    /// Allocation left for the slice's own flows.
    pub own_cap: Bandwidth,
    pub per_flow: Vec<Bandwidth>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickRates {
    pub slices: BTreeMap<SliceId, SliceRate>,
    pub links: BTreeMap<LinkId, Bandwidth>,
}

/// Rates for every Active slice given each slice's offered flow rates.
pub fn compute_rates(tree: &SliceTree, topology: &Topology, offered: &BTreeMap<SliceId, Vec<Bandwidth>>) -> TickRates {
    let mut out = TickRates::default();
    for r in tree.roots() {
        visit(tree, r, offered, &mut out);
    }
    for (id, rate) in &out.slices {
        if rate.delivered.is_zero() {
            continue;
        }
        let s = tree.get(id).expect("visited");
        for l in s.plan.link_ids() {
            let e = out.links.entry(l).or_default();
            *e = *e + rate.delivered;
        }
    }
    out.links.retain(|l, _| topology.link(l).is_some());
    out
}

fn visit(
    tree: &SliceTree,
    id: &SliceId,
    offered: &BTreeMap<SliceId, Vec<Bandwidth>>,
    out: &mut TickRates,
) -> Bandwidth {
    let Some(s) = tree.get(id) else {
        return Bandwidth::ZERO;
    };
    if s.state != SliceState::Active {
        return Bandwidth::ZERO;
    }
    let children: Bandwidth = s.children.iter().map(|c| visit(tree, c, offered, out)).sum();
    let own_cap = s.allocated.saturating_sub(children);
    let flows = offered.get(id).cloned().unwrap_or_default();
    let per_flow = delivered_rate(own_cap, &flows);
    let delivered: Bandwidth = per_flow.iter().copied().sum();
    let usage = delivered + children;
    out.slices.insert(
        id.clone(),
        SliceRate {
            offered: flows.iter().copied().sum(),
            delivered,
            usage,
            own_cap,
            per_flow,
        },
    );
    usage
}

/// Slices sharing a parent with `id`; roots are siblings of each other.
pub fn siblings(tree: &SliceTree, id: &SliceId) -> Vec<SliceId> {
    let pool: Vec<SliceId> = match tree.get(id).and_then(|s| s.parent.clone()) {
        Some(p) => tree.get(&p).map(|p| p.children.clone()).unwrap_or_default(),
        None => tree.roots().to_vec(),
    };
    pool.into_iter().filter(|s| s != id).collect()
}

/// Violations of the isolation properties for one tick.
///
/// Every slice must stay within its allocation and every link within its
/// capacity. For each overloaded slice the tick is recomputed with that
/// slice offering only its allocation; no sibling may see a different rate.
pub fn check_tick(
    tree: &SliceTree,
    topology: &Topology,
    offered: &BTreeMap<SliceId, Vec<Bandwidth>>,
    rates: &TickRates,
) -> Vec<String> {
    let mut v = Vec::new();
    for (id, r) in &rates.slices {
        let alloc = tree.get(id).map(|s| s.allocated).unwrap_or_default();
        if r.delivered > alloc || r.usage > alloc {
            v.push(format!(
                "slice {id} delivered {} Mbps above its allocation {alloc} Mbps",
                r.usage
            ));
        }
    }
    for (l, load) in &rates.links {
        let cap = topology.link(l).map(|l| l.capacity).unwrap_or_default();
        if *load > cap {
            v.push(format!("link {l} carries {load} Mbps above capacity {cap} Mbps"));
        }
    }
    for (id, r) in &rates.slices {
        let alloc = tree.get(id).map(|s| s.allocated).unwrap_or_default();
        if r.offered <= alloc {
            continue;
        }
        let mut calm = offered.clone();
        calm.insert(id.clone(), delivered_rate(alloc, &offered[id]));
        let reference = compute_rates(tree, topology, &calm);
        for sib in siblings(tree, id) {
            let a = rates.slices.get(&sib).map(|r| r.delivered);
            let b = reference.slices.get(&sib).map(|r| r.delivered);
            if a != b {
                v.push(format!(
                    "overloading slice {id} changed sibling {sib} from {} to {} Mbps",
                    b.unwrap_or_default(),
                    a.unwrap_or_default()
                ));
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mbps(m: u64) -> Bandwidth {
        Bandwidth::from_whole_mbps(m)
    }

    #[test]
    fn cap_and_proportional_shares() {
        assert_eq!(delivered_rate(mbps(100), &[mbps(150)]), [mbps(100)]);
        assert_eq!(delivered_rate(mbps(100), &[mbps(30), mbps(90)]), [mbps(25), mbps(75)]);
        assert_eq!(delivered_rate(mbps(100), &[mbps(50)]), [mbps(50)]);
        assert!(delivered_rate(mbps(100), &[]).is_empty());
    }

    #[test]
    fn shares_never_exceed_cap() {
        let out = delivered_rate(Bandwidth::from_kbps(100), &[Bandwidth::from_kbps(7); 33]);
        let sum: Bandwidth = out.iter().copied().sum();
        assert!(sum <= Bandwidth::from_kbps(100));
    }
}
