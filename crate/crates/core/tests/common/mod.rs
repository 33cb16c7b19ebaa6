// SPDX-License-Identifier: Apache-2.0

//! Random instance generators and brute-force oracles shared by the
//! integration tests. Nothing here calls the routing or ledger code under
//! test; every expected value is recomputed by exhaustive enumeration.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use recslice::harness::{ScriptAction, ScriptEvent, SimulationScript};
use recslice::orchestration::{Engine, EngineConfig, Fault, Operation, Phase, SchedulerKind};
use recslice::slicing::{SliceId, SliceNetwork, SliceSpec, SliceState, SliceTree};
use recslice::topology::{
    DomainDocument, DomainId, LinkDocument, LinkId, LinkScope, NodeId, PeeringDocument, RouterDocument, RouterRole,
    Topology, TopologyDocument,
};
use recslice::units::{Bandwidth, Latency};

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chain,
    Tree,
    /// A tree plus extra inter-domain edges.
    Mesh,
}

#[derive(Debug, Clone, Copy)]
pub struct GenParams {
    pub shape: Shape,
    pub domains: (usize, usize),
    pub routers: (usize, usize),
    pub extra_intra: usize,
    /// Parallel peerings per adjacent pair, all between the same two routers.
    pub parallel: (usize, usize),
}

impl GenParams {
    pub fn small(shape: Shape) -> Self {
        GenParams {
            shape,
            domains: (2, 5),
            routers: (1, 4),
            extra_intra: 2,
            parallel: (1, 3),
        }
    }
}

fn ms(rng: &mut TestRng) -> f64 {
    // tenths of a millisecond keep ties likely but not universal
    f64::from(rng.gen_range(5u32..=60)) / 10.0
}

pub fn router_name(domain: usize, idx: usize) -> String {
    format!("d{domain}r{idx}")
}

pub fn asn(domain: usize) -> u32 {
    64600 + domain as u32
}

/// Random multi-domain topology. Domains are joined along a chain, a random
/// tree or a tree with extra edges; adjacent domains share 1..n parallel
/// peerings between one fixed pair of border routers.
pub fn random_topology(rng: &mut TestRng, p: GenParams) -> TopologyDocument {
    let nd = rng.gen_range(p.domains.0..=p.domains.1);
    let sizes: Vec<usize> = (0..nd).map(|_| rng.gen_range(p.routers.0..=p.routers.1)).collect();
    let mut adj_sid = 10_000;
    let mut domains: Vec<DomainDocument> = Vec::new();
    for (d, &n) in sizes.iter().enumerate() {
        let routers = (0..n)
            .map(|j| RouterDocument {
                id: router_name(d, j),
                sid: 100 + j as u32,
                role: RouterRole::Interior,
            })
            .collect();
        let mut edges = BTreeSet::new();
        for j in 1..n {
            edges.insert((rng.gen_range(0..j), j));
        }
        for _ in 0..p.extra_intra {
            if n < 3 {
                break;
            }
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let links = edges
            .into_iter()
            .map(|(a, b)| {
                adj_sid += 1;
                LinkDocument {
                    id: format!("d{d}-{a}-{b}"),
                    a: router_name(d, a),
                    b: router_name(d, b),
                    capacity_mbps: f64::from(rng.gen_range(5u32..=20) * 100),
                    latency_ms: ms(rng),
                    adj_sid,
                }
            })
            .collect();
        domains.push(DomainDocument {
            asn: asn(d),
            routers,
            links,
        });
    }

    let mut pairs = BTreeSet::new();
    for i in 1..nd {
        let parent = match p.shape {
            Shape::Chain => i - 1,
            Shape::Tree | Shape::Mesh => rng.gen_range(0..i),
        };
        pairs.insert((parent, i));
    }
    if p.shape == Shape::Mesh && nd > 2 {
        for _ in 0..rng.gen_range(1..=nd) {
            let a = rng.gen_range(0..nd);
            let b = rng.gen_range(0..nd);
            if a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    let mut peerings = Vec::new();
    for (a, b) in pairs {
        let ra = rng.gen_range(0..sizes[a]);
        let rb = rng.gen_range(0..sizes[b]);
        domains[a].routers[ra].role = RouterRole::Border;
        domains[b].routers[rb].role = RouterRole::Border;
        for k in 0..rng.gen_range(p.parallel.0..=p.parallel.1) {
            adj_sid += 1;
            peerings.push(PeeringDocument {
                id: format!("p{a}-{b}-{k}"),
                a: router_name(a, ra),
                b: router_name(b, rb),
                capacity_mbps: f64::from(rng.gen_range(3u32..=10) * 100),
                latency_ms: ms(rng),
                adj_sid,
                domain_a: asn(a),
                domain_b: asn(b),
            });
        }
    }
    TopologyDocument { domains, peerings }
}

pub fn build(doc: &TopologyDocument) -> Topology {
    Topology::from_document(doc).expect("generated topologies are valid")
}

// ---------------------------------------------------------------------------
// Routing oracles

fn domain_graph(t: &Topology) -> BTreeMap<DomainId, BTreeMap<DomainId, Latency>> {
    let mut g: BTreeMap<DomainId, BTreeMap<DomainId, Latency>> = BTreeMap::new();
    for l in t.links().filter(|l| l.scope == LinkScope::InterDomain) {
        let da = t.router(&l.a).unwrap().domain;
        let db = t.router(&l.b).unwrap().domain;
        for (x, y) in [(da, db), (db, da)] {
            let w = g.entry(x).or_default().entry(y).or_insert(l.latency);
            if l.latency < *w {
                *w = l.latency;
            }
        }
    }
    g
}

/// Every simple AS path, ranked by (length, summed cheapest-peering latency,
/// ASN sequence); returns the first.
pub fn brute_as_path(t: &Topology, src: DomainId, dst: DomainId) -> Option<Vec<DomainId>> {
    let g = domain_graph(t);
    let mut all: Vec<(usize, Latency, Vec<DomainId>)> = Vec::new();
    fn dfs(
        g: &BTreeMap<DomainId, BTreeMap<DomainId, Latency>>,
        dst: DomainId,
        path: &mut Vec<DomainId>,
        lat: Latency,
        out: &mut Vec<(usize, Latency, Vec<DomainId>)>,
    ) {
        let last = *path.last().unwrap();
        if last == dst {
            out.push((path.len(), lat, path.clone()));
            return;
        }
        for (n, w) in g.get(&last).into_iter().flatten() {
            if path.contains(n) {
                continue;
            }
            path.push(*n);
            dfs(g, dst, path, lat + *w, out);
            path.pop();
        }
    }
    dfs(&g, dst, &mut vec![src], Latency::ZERO, &mut all);
    all.into_iter().min().map(|(_, _, p)| p)
}

/// Every simple intra-domain path, ranked by (latency, hops, node sequence).
pub fn brute_intra(t: &Topology, domain: DomainId, a: &NodeId, b: &NodeId) -> Option<(Vec<NodeId>, Latency)> {
    let mut best: Option<(Latency, usize, Vec<NodeId>)> = None;
    fn dfs(
        t: &Topology,
        domain: DomainId,
        b: &NodeId,
        path: &mut Vec<NodeId>,
        lat: Latency,
        best: &mut Option<(Latency, usize, Vec<NodeId>)>,
    ) {
        let last = path.last().unwrap().clone();
        if &last == b {
            let cand = (lat, path.len() - 1, path.clone());
            if best.as_ref().is_none_or(|x| cand < *x) {
                *best = Some(cand);
            }
            return;
        }
        for l in t.links() {
            if l.scope != LinkScope::IntraDomain {
                continue;
            }
            let Some(next) = l.other_end(&last) else { continue };
            if t.router(next).unwrap().domain != domain || path.contains(next) {
                continue;
            }
            path.push(next.clone());
            dfs(t, domain, b, path, lat + l.latency, best);
            path.pop();
        }
    }
    dfs(t, domain, b, &mut vec![a.clone()], Latency::ZERO, &mut best);
    best.map(|(l, _, p)| (p, l))
}

/// Minimum latency over every simple router-level path from `src` to `dst`
/// whose sequence of visited domains is exactly `as_path`.
pub fn brute_end_to_end(t: &Topology, src: &NodeId, dst: &NodeId, as_path: &[DomainId]) -> Option<Latency> {
    let mut best: Option<Latency> = None;
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        t: &Topology,
        dst: &NodeId,
        as_path: &[DomainId],
        stage: usize,
        at: &NodeId,
        visited: &mut BTreeSet<NodeId>,
        lat: Latency,
        best: &mut Option<Latency>,
    ) {
        if best.is_some_and(|b| lat >= b) {
            return;
        }
        if at == dst {
            *best = Some(lat);
            return;
        }
        for l in t.links() {
            let Some(next) = l.other_end(at) else { continue };
            if visited.contains(next) {
                continue;
            }
            let nd = t.router(next).unwrap().domain;
            let next_stage = if nd == as_path[stage] {
                stage
            } else if stage + 1 < as_path.len() && nd == as_path[stage + 1] {
                stage + 1
            } else {
                continue;
            };
            visited.insert(next.clone());
            dfs(t, dst, as_path, next_stage, next, visited, lat + l.latency, best);
            visited.remove(next);
        }
    }
    if t.router(src)?.domain != as_path[0] {
        return None;
    }
    let mut visited = BTreeSet::from([src.clone()]);
    dfs(t, dst, as_path, 0, src, &mut visited, Latency::ZERO, &mut best);
    best
}

// ---------------------------------------------------------------------------
// Ledger oracles

/// Per-link reservations implied by the root slices of `tree`.
pub fn replay_reservations(tree: &SliceTree) -> BTreeMap<LinkId, Bandwidth> {
    let mut out: BTreeMap<LinkId, Bandwidth> = BTreeMap::new();
    for s in tree.iter().filter(|s| s.parent.is_none()) {
        for h in &s.plan.hops {
            let e = out.entry(h.link_id.clone()).or_default();
            *e = *e + s.allocated;
        }
    }
    out
}

pub fn nonzero(m: BTreeMap<LinkId, Bandwidth>) -> BTreeMap<LinkId, Bandwidth> {
    m.into_iter().filter(|(_, v)| !v.is_zero()).collect()
}

/// Forest and sub-path checks recomputed from scratch.
pub fn ledger_faults(tree: &SliceTree) -> Vec<String> {
    let mut v = Vec::new();
    for s in tree.iter() {
        let sum: Bandwidth = s
            .children
            .iter()
            .map(|c| tree.get(c).map(|c| c.allocated).unwrap_or_default())
            .sum();
        if sum != s.child_committed {
            v.push(format!(
                "{}: children sum {} != committed {}",
                s.id, sum, s.child_committed
            ));
        }
        if s.child_committed > s.allocated {
            v.push(format!(
                "{}: committed {} > allocated {}",
                s.id, s.child_committed, s.allocated
            ));
        }
        if let Some(p) = &s.parent {
            let Some(parent) = tree.get(p) else {
                v.push(format!("{}: missing parent {p}", s.id));
                continue;
            };
            if !parent.children.contains(&s.id) {
                v.push(format!("{}: not listed under {p}", s.id));
            }
            let ph: Vec<&LinkId> = parent.plan.hops.iter().map(|h| &h.link_id).collect();
            let ch: Vec<&LinkId> = s.plan.hops.iter().map(|h| &h.link_id).collect();
            if !ch.is_empty() && !ph.windows(ch.len()).any(|w| w == ch.as_slice()) {
                v.push(format!("{}: hops are not a contiguous run of {p}", s.id));
            }
        }
    }
    v
}

pub fn max_depth(tree: &SliceTree) -> usize {
    tree.iter().map(|s| s.id.depth()).max().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Workload helpers

pub fn spec(src: &NodeId, dst: &NodeId, mbps: u64, owner: &str) -> SliceSpec {
    SliceSpec {
        src_node: src.clone(),
        dst_node: dst.clone(),
        bandwidth: Bandwidth::from_whole_mbps(mbps),
        latency_bound: Latency::from_whole_ms(1000),
        owner: owner.into(),
    }
}

/// Endpoints of a random contiguous sub-path (at least one hop) of `plan`.
pub fn sub_path_endpoints(rng: &mut TestRng, nodes: &[NodeId]) -> Option<(NodeId, NodeId)> {
    if nodes.len() < 2 {
        return None;
    }
    let i = rng.gen_range(0..nodes.len() - 1);
    let j = rng.gen_range(i + 1..nodes.len());
    Some((nodes[i].clone(), nodes[j].clone()))
}

pub fn random_router_pair(rng: &mut TestRng, t: &Topology) -> (NodeId, NodeId) {
    let routers: Vec<NodeId> = t.routers().map(|r| r.id.clone()).collect();
    loop {
        let a = routers.choose(rng).unwrap().clone();
        let b = routers.choose(rng).unwrap().clone();
        if a != b {
            return (a, b);
        }
    }
}

pub fn active_ids(tree: &SliceTree) -> Vec<SliceId> {
    tree.iter()
        .filter(|s| s.state == SliceState::Active)
        .map(|s| s.id.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Storms

#[derive(Debug, Default)]
pub struct StormOutcome {
    pub ops: usize,
    pub accepted: usize,
    pub max_depth: usize,
    pub faults: Vec<String>,
    pub teardown_exact: bool,
}

/// Picks an Active slice, favouring the deepest ones so storms recurse.
pub fn pick_parent(rng: &mut TestRng, tree: &SliceTree) -> Option<SliceId> {
    let ids = active_ids(tree);
    if ids.is_empty() {
        return None;
    }
    if rng.gen_bool(0.5) {
        let deepest = ids.iter().map(SliceId::depth).max().unwrap();
        let deep: Vec<&SliceId> = ids.iter().filter(|i| i.depth() == deepest).collect();
        return Some((*deep.choose(rng).unwrap()).clone());
    }
    ids.choose(rng).cloned()
}

/// Random operation against the current tree: roots, children, resizes and
/// releases in roughly 15/45/25/15 proportions.
pub fn random_operation(rng: &mut TestRng, t: &Topology, tree: &SliceTree) -> Operation {
    let roll = rng.gen_range(0..100);
    let ids = active_ids(tree);
    if ids.is_empty() || roll < 15 {
        let (a, b) = random_router_pair(rng, t);
        return Operation::Deploy {
            spec: spec(&a, &b, rng.gen_range(20..=150), "storm"),
            parent: None,
        };
    }
    if roll < 60 {
        let p = pick_parent(rng, tree).unwrap();
        let ps = tree.get(&p).unwrap();
        if let Some((a, b)) = sub_path_endpoints(rng, &ps.plan.nodes()) {
            let room = ps.headroom().kbps() / 1000;
            let mbps = if rng.gen_bool(0.85) {
                rng.gen_range(1..=(room / 2).max(1))
            } else {
                room + rng.gen_range(1..=20)
            };
            return Operation::Deploy {
                spec: spec(&a, &b, mbps, "storm"),
                parent: Some(p),
            };
        }
    }
    let id = ids.choose(rng).unwrap().clone();
    if roll < 85 {
        let cur = tree.get(&id).unwrap().allocated.kbps() / 1000;
        let mbps = (cur * rng.gen_range(50..=160) / 100).max(1);
        return Operation::Resize {
            slice_id: id,
            bandwidth: Bandwidth::from_whole_mbps(mbps),
        };
    }
    Operation::Release { slice_id: id }
}

fn network_apply(net: &mut SliceNetwork, op: &Operation) -> bool {
    match op {
        Operation::Deploy { spec, parent } => net.deploy(spec.clone(), parent.as_ref()).is_ok(),
        Operation::Resize { slice_id, bandwidth } => net.resize(slice_id, *bandwidth).is_ok(),
        Operation::Release { slice_id } => net.release(slice_id).is_ok(),
    }
}

/// Random allocate/resize/release storm on a single-writer network, checked
/// against the replay oracles after every operation and torn down at the end.
pub fn network_storm(seed: u64, ops: usize) -> StormOutcome {
    let mut r = rng(seed);
    let params = GenParams {
        shape: Shape::Chain,
        domains: (3, 5),
        routers: (2, 4),
        extra_intra: 1,
        parallel: (1, 2),
    };
    let t = build(&random_topology(&mut r, params));
    let initial = nonzero(t.reservations());
    let mut net = SliceNetwork::new(t);
    let mut out = StormOutcome::default();
    for step in 0..ops {
        let op = random_operation(&mut r, net.topology(), net.tree());
        let before = (net.tree().clone(), net.sfts().clone(), net.topology().reservations());
        let ok = network_apply(&mut net, &op);
        out.ops += 1;
        out.accepted += usize::from(ok);
        if !ok && (net.tree(), net.sfts(), &net.topology().reservations()) != (&before.0, &before.1, &before.2) {
            out.faults.push(format!("step {step}: rejected {op:?} changed state"));
        }
        for f in ledger_faults(net.tree()) {
            out.faults.push(format!("step {step}: {f}"));
        }
        if nonzero(replay_reservations(net.tree())) != nonzero(net.topology().reservations()) {
            out.faults.push(format!("step {step}: reservations differ from replay"));
        }
        for id in active_ids(net.tree()) {
            let plan = &net.slice(&id).unwrap().plan.hops;
            if net.walk_sft(&id).ok().as_ref() != Some(plan) {
                out.faults.push(format!("step {step}: walk of {id} differs from plan"));
            }
        }
        out.max_depth = out.max_depth.max(max_depth(net.tree()));
    }
    let roots: Vec<SliceId> = net.tree().roots().to_vec();
    for id in roots {
        net.release(&id).unwrap();
    }
    out.teardown_exact = net.tree().is_empty()
        && net.sfts().is_empty()
        && nonzero(net.topology().reservations()) == initial
        && *net.topology() == net.topology().pristine();
    out
}

pub type Fingerprint = (
    BTreeMap<LinkId, Bandwidth>,
    Vec<(SliceId, Bandwidth, Bandwidth, SliceState)>,
);

/// Reservations, allocations and states, for before/after comparisons.
pub fn ledger_fingerprint(e: &Engine) -> Fingerprint {
    let tree = e.slice_view();
    let slices = tree
        .iter()
        .map(|s| (s.id.clone(), s.allocated, s.child_committed, s.state))
        .collect();
    (nonzero(e.reservations()), slices)
}

// ---------------------------------------------------------------------------
// Transactions

#[derive(Debug, Default)]
pub struct AtomicityOutcome {
    pub done: usize,
    pub failed: usize,
    pub deadline_failures: usize,
    pub faults: Vec<String>,
}

/// Runs `count` random transactions with refusal probability `p` and
/// occasional stalls longer than the deadline, checking each outcome.
pub fn atomicity_run(seed: u64, count: usize, p: f64) -> AtomicityOutcome {
    let mut r = rng(seed);
    let t = build(&random_topology(&mut r, GenParams::small(Shape::Tree)));
    let config = EngineConfig {
        deadline_ticks: 12,
        ..EngineConfig::seeded(seed)
    };
    let mut e = Engine::new(&t, config);
    e.run_until_quiescent().unwrap();
    e.inject(&Fault::RefuseProbability {
        domain: None,
        probability: p,
    })
    .unwrap();
    let domains: Vec<u32> = t.domains().map(|d| d.0).collect();
    let mut out = AtomicityOutcome::default();
    for i in 0..count {
        if r.gen_bool(0.1) {
            let d = *domains.choose(&mut r).unwrap();
            e.inject(&Fault::Stall { domain: d, ticks: 40 }).unwrap();
        }
        let op = random_operation(&mut r, &t, &e.slice_view());
        let before = ledger_fingerprint(&e);
        let report = match e.execute(op.clone()) {
            Ok(rep) => rep,
            Err(err) => {
                out.faults.push(format!("tx {i}: {err}"));
                continue;
            }
        };
        let st = &report.status;
        match st.phase {
            Some(Phase::Done) => {
                out.done += 1;
                let check = match &op {
                    Operation::Deploy { .. } => {
                        let id = st.slice_id.clone().expect("done deploy has an id");
                        let s = e.slice(&id);
                        s.as_ref().is_some_and(|s| s.state == SliceState::Active)
                            && e.walk(&id).ok() == s.map(|s| s.plan.hops)
                    }
                    Operation::Resize { slice_id, bandwidth } => {
                        e.slice(slice_id).is_some_and(|s| s.allocated == *bandwidth)
                    }
                    Operation::Release { slice_id } => e.slice(slice_id).is_none(),
                };
                if !check {
                    out.faults.push(format!("tx {i}: done {op:?} not reflected in state"));
                }
            }
            Some(Phase::Failed) => {
                out.failed += 1;
                if st.reason.as_ref().is_some_and(|r| r.code() == "deadline") {
                    out.deadline_failures += 1;
                }
                if ledger_fingerprint(&e) != before {
                    out.faults.push(format!("tx {i}: failed {op:?} changed the ledger"));
                }
            }
            other => out.faults.push(format!("tx {i}: settled in {other:?}")),
        }
        for a in e.audit() {
            out.faults.push(format!("tx {i}: {a}"));
        }
    }
    out
}

/// Rounds from submission to Done for a fault-free deploy across `n` domains.
pub fn progress_rounds(n: usize) -> Vec<(String, u64)> {
    let t = recslice::fixtures::chain(n);
    let mut e = Engine::new(
        &t,
        EngineConfig {
            scheduler: SchedulerKind::RoundRobin,
            ..EngineConfig::default()
        },
    );
    e.run_until_quiescent().unwrap();
    let a = NodeId::new("d0a");
    let b = NodeId::new(format!("d{}b", n - 1));
    let mut rounds = Vec::new();
    let mut run = |e: &mut Engine, label: &str, op: Operation| {
        let rep = e.execute(op).unwrap();
        assert!(rep.is_done(), "{label} failed: {:?}", rep.status.reason);
        rounds.push((label.to_owned(), rep.rounds));
        rep.status.slice_id
    };
    let root = run(
        &mut e,
        "deploy",
        Operation::Deploy {
            spec: spec(&a, &b, 100, "p"),
            parent: None,
        },
    )
    .unwrap();
    let child = run(
        &mut e,
        "subslice",
        Operation::Deploy {
            spec: spec(&a, &b, 40, "p"),
            parent: Some(root.clone()),
        },
    )
    .unwrap();
    run(
        &mut e,
        "resize",
        Operation::Resize {
            slice_id: root.clone(),
            bandwidth: Bandwidth::from_whole_mbps(150),
        },
    );
    run(&mut e, "release child", Operation::Release { slice_id: child });
    run(&mut e, "release", Operation::Release { slice_id: root });
    // coordinator last in the round-robin order
    let back = run(
        &mut e,
        "reverse deploy",
        Operation::Deploy {
            spec: spec(&b, &a, 100, "p"),
            parent: None,
        },
    )
    .unwrap();
    run(&mut e, "reverse release", Operation::Release { slice_id: back });
    rounds
}

/// Deploys random roots and subslices on random topologies until `want`
/// Active slices exist; returns how many walks matched their plans.
pub fn sft_walks(seed: u64, want: usize) -> (usize, usize, usize) {
    let mut r = rng(seed);
    let (mut checked, mut matched, mut children) = (0, 0, 0);
    while checked < want {
        let t = build(&random_topology(&mut r, GenParams::small(Shape::Tree)));
        let mut e = Engine::new(&t, EngineConfig::seeded(r.gen()));
        e.run_until_quiescent().unwrap();
        for _ in 0..12 {
            let tree = e.slice_view();
            let op = match pick_parent(&mut r, &tree) {
                Some(p) if r.gen_bool(0.6) => {
                    let nodes = tree.get(&p).unwrap().plan.nodes();
                    match sub_path_endpoints(&mut r, &nodes) {
                        Some((a, b)) => Operation::Deploy {
                            spec: spec(&a, &b, 1, "w"),
                            parent: Some(p),
                        },
                        None => continue,
                    }
                }
                _ => {
                    let (a, b) = random_router_pair(&mut r, &t);
                    Operation::Deploy {
                        spec: spec(&a, &b, 10, "w"),
                        parent: None,
                    }
                }
            };
            let _ = e.execute(op).unwrap();
        }
        for s in e.slice_view().iter().filter(|s| s.state == SliceState::Active) {
            if checked == want {
                break;
            }
            checked += 1;
            children += usize::from(s.parent.is_some());
            if e.walk(&s.id).ok().as_ref() == Some(&s.plan.hops) {
                matched += 1;
            }
        }
    }
    (checked, matched, children)
}

// ---------------------------------------------------------------------------
// Scripts

/// Random script on the T3 fixture: roots, nested children, resizes, flows
/// and (optionally) faults, all at fixed ticks.
pub fn random_script(seed: u64, faults: bool) -> SimulationScript {
    let mut r = rng(seed);
    let routers = ["r1", "r2", "r3", "r4", "r5", "r6"];
    let mut events = Vec::new();
    let req = |r: &mut TestRng, mbps: u64| {
        let a = rng_pick(r, &routers);
        let mut b = rng_pick(r, &routers);
        while b == a {
            b = rng_pick(r, &routers);
        }
        spec(&NodeId::new(a), &NodeId::new(b), mbps, "script")
    };
    for tick in 0..3 {
        let mbps = r.gen_range(50..=200);
        events.push(ScriptEvent {
            tick,
            action: ScriptAction::Deploy {
                request: req(&mut r, mbps),
            },
        });
    }
    let t3: Vec<NodeId> = routers.iter().map(|n| NodeId::new(*n)).collect();
    for tick in 3..6 {
        let parent = SliceId::root(r.gen_range(1..=3));
        let (a, b) = sub_path_endpoints(&mut r, &t3).unwrap();
        events.push(ScriptEvent {
            tick,
            action: ScriptAction::Subslice {
                parent,
                request: spec(&a, &b, r.gen_range(5..=40), "script"),
            },
        });
    }
    for tick in 6..14 {
        let id = if r.gen_bool(0.5) {
            SliceId::root(r.gen_range(1..=3))
        } else {
            SliceId::root(r.gen_range(1..=3)).child(1)
        };
        let action = match r.gen_range(0..4) {
            0 => ScriptAction::Resize {
                slice: id,
                bandwidth: Bandwidth::from_whole_mbps(r.gen_range(10..=250)),
            },
            _ => ScriptAction::Flow {
                slice: id,
                offered: Bandwidth::from_whole_mbps(r.gen_range(1..=300)),
                duration_ticks: r.gen_range(1..=5),
            },
        };
        events.push(ScriptEvent { tick, action });
    }
    if faults {
        events.push(ScriptEvent {
            tick: 14,
            action: ScriptAction::Fault {
                fault: Fault::RefuseProbability {
                    domain: None,
                    probability: 0.3,
                },
            },
        });
        events.push(ScriptEvent {
            tick: 15,
            action: ScriptAction::Deploy {
                request: req(&mut r, 20),
            },
        });
    }
    events.push(ScriptEvent {
        tick: 16,
        action: ScriptAction::Release {
            slice: SliceId::root(1),
        },
    });
    SimulationScript { seed, events }
}

fn rng_pick<'a>(r: &mut TestRng, xs: &[&'a str]) -> &'a str {
    xs.choose(r).unwrap()
}

// ---------------------------------------------------------------------------
// Isolation

#[derive(Debug, Default)]
pub struct IsolationOutcome {
    pub sibling_comparisons: usize,
    pub link_checks: usize,
    pub faults: Vec<String>,
}

fn split(r: &mut TestRng, total: u64) -> Vec<u64> {
    let n = r.gen_range(1..=3).min(total as usize).max(1);
    let mut parts = vec![1u64; n];
    let mut left = total - n as u64;
    for (i, part) in parts.iter_mut().enumerate() {
        let take = if i + 1 == n { left } else { r.gen_range(0..=left) };
        *part += take;
        left -= take;
    }
    parts
}

fn rates_by_tick(log: &recslice::harness::EventLog) -> BTreeMap<(u64, String), f64> {
    log.of_kind("slice_rate")
        .map(|e| {
            let id = e.payload["slice"].as_str().unwrap().to_owned();
            ((e.tick, id), e.payload["delivered_mbps"].as_f64().unwrap())
        })
        .collect()
}

/// One random workload: overload a random slice to three times its
/// allocation, rerun with it at exactly its allocation, and compare.
pub fn isolation_workload(seed: u64) -> IsolationOutcome {
    let mut r = rng(seed);
    let t = build(&random_topology(&mut r, GenParams::small(Shape::Tree)));
    let mut e = Engine::new(&t, EngineConfig::seeded(seed));
    e.run_until_quiescent().unwrap();
    for _ in 0..r.gen_range(4..=10) {
        let tree = e.slice_view();
        let op = match pick_parent(&mut r, &tree) {
            Some(p) if r.gen_bool(0.6) => {
                let ps = tree.get(&p).unwrap();
                match sub_path_endpoints(&mut r, &ps.plan.nodes()) {
                    Some((a, b)) => {
                        let room = ps.headroom().kbps() / 1000;
                        if room < 2 {
                            continue;
                        }
                        Operation::Deploy {
                            spec: spec(&a, &b, r.gen_range(1..=room / 2), "iso"),
                            parent: Some(p),
                        }
                    }
                    None => continue,
                }
            }
            _ => {
                let (a, b) = random_router_pair(&mut r, &t);
                Operation::Deploy {
                    spec: spec(&a, &b, r.gen_range(20..=120), "iso"),
                    parent: None,
                }
            }
        };
        e.execute(op).unwrap();
    }
    let tree = e.slice_view();
    let active = active_ids(&tree);
    let mut out = IsolationOutcome::default();
    let Some(victim) = active.choose(&mut r).cloned() else {
        return out;
    };
    let alloc = tree.get(&victim).unwrap().allocated.kbps() / 1000;
    let ticks = 4u64;
    let mut base = Vec::new();
    for id in active.iter().filter(|i| **i != victim) {
        let a = tree.get(id).unwrap().allocated.kbps() / 1000;
        let total = r.gen_range(1..=a.max(1));
        for f in split(&mut r, total) {
            base.push((id.clone(), f, r.gen_range(0..ticks)));
        }
    }
    let victim_parts = split(&mut r, alloc.max(1));
    let script = |factor: u64| {
        let mut events: Vec<ScriptEvent> = base
            .iter()
            .map(|(id, f, start)| (id.clone(), *f, *start))
            .chain(victim_parts.iter().map(|p| (victim.clone(), p * factor, 0)))
            .map(|(slice, f, start)| ScriptEvent {
                tick: start,
                action: ScriptAction::Flow {
                    slice,
                    offered: Bandwidth::from_whole_mbps(f),
                    duration_ticks: ticks - start,
                },
            })
            .collect();
        events.sort_by_key(|e| e.tick);
        SimulationScript { seed, events }
    };
    let run = |s: &SimulationScript| {
        let mut sim = recslice::harness::Simulator::new(e.clone());
        sim.run(s, None).unwrap()
    };
    let loud = run(&script(3));
    let calm = run(&script(1));
    out.faults.extend(
        loud.of_kind("violation")
            .map(|v| format!("logged: {}", v.payload["detail"])),
    );

    let siblings: Vec<&SliceId> = active
        .iter()
        .filter(|s| **s != victim && s.parent() == victim.parent())
        .collect();
    let (a, b) = (rates_by_tick(&loud), rates_by_tick(&calm));
    for tick in 0..ticks {
        for s in &siblings {
            let key = (tick, s.to_string());
            out.sibling_comparisons += 1;
            if a.get(&key) != b.get(&key) {
                out.faults.push(format!(
                    "tick {tick}: sibling {s} {:?} vs {:?}",
                    a.get(&key),
                    b.get(&key)
                ));
            }
        }
        let mut load: BTreeMap<LinkId, f64> = BTreeMap::new();
        for ((tk, id), d) in &a {
            if *tk != tick {
                continue;
            }
            let s = tree.get(&id.parse().unwrap()).unwrap();
            for h in &s.plan.hops {
                *load.entry(h.link_id.clone()).or_default() += d;
            }
        }
        for (l, v) in load {
            out.link_checks += 1;
            let cap = t.link(&l).unwrap().capacity.kbps() as f64 / 1000.0;
            if v > cap + 1e-9 {
                out.faults
                    .push(format!("tick {tick}: link {l} carries {v} above {cap}"));
            }
        }
    }
    let victim_rates: Vec<f64> = a
        .iter()
        .filter(|((_, id), _)| *id == victim.to_string())
        .map(|(_, d)| *d)
        .collect();
    if victim_rates.iter().any(|d| *d > alloc as f64 + 1e-9) {
        out.faults.push(format!("victim {victim} exceeded {alloc}"));
    }
    out
}
