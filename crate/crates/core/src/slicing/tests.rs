// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::fixtures::t3;

fn spec(src: &str, dst: &str, mbps: u64, bound_ms: u64) -> SliceSpec {
    SliceSpec {
        src_node: src.into(),
        dst_node: dst.into(),
        bandwidth: Bandwidth::from_whole_mbps(mbps),
        latency_bound: Latency::from_whole_ms(bound_ms),
        owner: "tenant".into(),
    }
}

fn mbps(m: u64) -> Bandwidth {
    Bandwidth::from_whole_mbps(m)
}

fn reason(r: Result<impl fmt::Debug, SliceError>) -> RejectReason {
    r.unwrap_err().reason().expect("rejection").clone()
}

#[test]
fn slice_id_roundtrip() {
    let id: SliceId = "1.2.10".parse().unwrap();
    assert_eq!(id.to_string(), "1.2.10");
    assert_eq!(id.parent().unwrap().to_string(), "1.2");
    assert_eq!(id.depth(), 3);
    assert!(SliceId::root(1).is_ancestor_of(&id));
    assert!(!id.is_ancestor_of(&id));
    assert!("1..2".parse::<SliceId>().is_err());
    assert!("0".parse::<SliceId>().is_err());
    assert!("".parse::<SliceId>().is_err());
    assert_eq!(serde_json::to_string(&id).unwrap(), "\"1.2.10\"");
    // numeric, not lexical, order
    assert!("1.9".parse::<SliceId>().unwrap() < "1.10".parse::<SliceId>().unwrap());
}

#[test]
fn state_transitions_exhaustive() {
    use SliceState::*;
    let allowed = [
        (Pending, Reserved),
        (Reserved, Active),
        (Active, Deleting),
        (Pending, Failed),
        (Reserved, Failed),
        (Active, Failed),
        (Deleting, Failed),
    ];
    for from in SliceState::ALL {
        for to in SliceState::ALL {
            assert_eq!(from.can_transition(to), allowed.contains(&(from, to)), "{from} -> {to}");
        }
    }
}

#[test]
fn root_admission() {
    let net = SliceNetwork::new(t3());
    match net.admit(&spec("r1", "r6", 100, 50), None) {
        AdmissionDecision::Accepted { plan, .. } => {
            assert_eq!(plan.total_latency, Latency::from_whole_ms(12))
        }
        other => panic!("{other:?}"),
    }
    match net.admit(&spec("r1", "r6", 100, 1), None) {
        AdmissionDecision::Rejected(r) => assert_eq!(r.code(), "latency"),
        other => panic!("{other:?}"),
    }
    match net.admit(&spec("r1", "r6", 1001, 50), None) {
        AdmissionDecision::Rejected(r) => assert_eq!(r.code(), "link"),
        other => panic!("{other:?}"),
    }
    match net.admit(&spec("r1", "nowhere", 1, 50), None) {
        AdmissionDecision::Rejected(r) => assert_eq!(r.code(), "unknown node"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn allocate_reserves_every_plan_link() {
    let mut net = SliceNetwork::new(t3());
    let s = spec("r1", "r6", 100, 50);
    let d = net.admit(&s, None);
    let id = net.allocate(s, d).unwrap();
    assert_eq!(id.to_string(), "1");
    assert_eq!(net.slice(&id).unwrap().state, SliceState::Reserved);
    for l in net.topology().links() {
        let on_plan = net.slice(&id).unwrap().plan.link_ids().contains(&l.id);
        let want = if on_plan {
            l.capacity.saturating_sub(mbps(100))
        } else {
            l.capacity
        };
        assert_eq!(l.residual(), want, "{}", l.id);
    }
}

#[test]
fn stale_decision_leaves_state_untouched() {
    let mut net = SliceNetwork::new(t3());
    let a = spec("r1", "r6", 600, 50);
    let da = net.admit(&a, None);
    let db = net.admit(&a, None);
    net.allocate(a.clone(), da).unwrap();
    let before = net.topology().reservations();
    let err = net.allocate(a, db).unwrap_err();
    assert!(matches!(err, SliceError::StaleDecision(_)));
    assert_eq!(net.topology().reservations(), before);
    assert_eq!(net.tree().len(), 1);
}

#[test]
fn children_share_parent_allocation() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    let c1 = net.deploy(spec("r1", "r6", 60, 50), Some(&root)).unwrap();
    let c2 = net.deploy(spec("r3", "r5", 40, 50), Some(&root)).unwrap();
    assert_eq!(c1.to_string(), "1.1");
    assert_eq!(c2.to_string(), "1.2");
    let r = reason(net.deploy(spec("r1", "r6", 1, 50), Some(&root)));
    assert_eq!(r.code(), "parent capacity");
    assert!(net.check_invariants().is_empty());
}

#[test]
fn sibling_holding_one_blocks_full_child() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    net.deploy(spec("r1", "r3", 1, 50), Some(&root)).unwrap();
    let r = reason(net.deploy(spec("r1", "r6", 100, 50), Some(&root)));
    assert_eq!(r.code(), "parent capacity");
}

#[test]
fn subslice_takes_contiguous_sub_path() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    let child = net.deploy(spec("r1", "r4", 10, 50), Some(&root)).unwrap();
    let c = net.slice(&child).unwrap();
    assert_eq!(child.to_string(), "1.1");
    let links: Vec<_> = c.plan.link_ids().iter().map(|l| l.to_string()).collect();
    assert_eq!(links, ["p-ab-1", "b-1"]);
    assert_eq!(c.plan.total_latency, Latency::from_whole_ms(6));
    // children never touch links
    assert_eq!(net.topology().link(&"b-1".into()).unwrap().reserved(), mbps(100));
    let sft_routers: Vec<_> = net
        .sfts()
        .entries_for(&child)
        .into_iter()
        .map(|(r, _)| r.to_string())
        .collect();
    assert_eq!(sft_routers, ["r1", "r3", "r4"]);
}

#[test]
fn off_path_and_reversed_children_rejected() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    assert_eq!(
        reason(net.deploy(spec("r1", "r2", 1, 50), Some(&root))).code(),
        "off-path"
    );
    assert_eq!(
        reason(net.deploy(spec("r6", "r1", 1, 50), Some(&root))).code(),
        "off-path"
    );
    assert_eq!(
        reason(net.deploy(spec("r1", "r4", 1, 5), Some(&root))).code(),
        "latency"
    );
}

#[test]
fn nested_children_and_depth_cap() {
    let mut net = SliceNetwork::with_depth_cap(t3(), 3);
    let a = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    let b = net.deploy(spec("r1", "r6", 50, 50), Some(&a)).unwrap();
    let c = net.deploy(spec("r3", "r6", 20, 50), Some(&b)).unwrap();
    assert_eq!(c.to_string(), "1.1.1");
    assert_eq!(reason(net.deploy(spec("r3", "r6", 1, 50), Some(&c))).code(), "depth");
    assert!(net.check_invariants().is_empty());
}

#[test]
fn parent_must_be_active() {
    let mut net = SliceNetwork::new(t3());
    let s = spec("r1", "r6", 100, 50);
    let d = net.admit(&s, None);
    let root = net.allocate(s, d).unwrap();
    assert_eq!(
        reason(net.create_subslice(&root, spec("r1", "r6", 1, 50))).code(),
        "not active"
    );
    let ghost: SliceId = "9".parse().unwrap();
    assert_eq!(
        reason(net.create_subslice(&ghost, spec("r1", "r6", 1, 50))).code(),
        "unknown parent"
    );
}

#[test]
fn shrink_below_children_refused() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    net.deploy(spec("r1", "r6", 60, 50), Some(&root)).unwrap();
    let r = reason(net.resize(&root, mbps(50)));
    assert_eq!(r.to_string(), "children hold 60");
    assert_eq!(net.slice(&root).unwrap().allocated, mbps(100));
}

#[test]
fn child_growth_bounded_by_parent_headroom() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 15, 50), None).unwrap();
    let child = net.deploy(spec("r1", "r6", 10, 50), Some(&root)).unwrap();
    let before = net.tree().clone();
    assert_eq!(reason(net.resize(&child, mbps(20))).code(), "parent capacity");
    assert_eq!(net.tree(), &before);
    net.resize(&child, mbps(15)).unwrap();
    assert_eq!(net.slice(&root).unwrap().child_committed, mbps(15));
}

#[test]
fn root_resize_moves_link_reservations() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    net.resize(&root, mbps(900)).unwrap();
    assert_eq!(net.topology().link(&"p-ab-1".into()).unwrap().reserved(), mbps(900));
    assert_eq!(reason(net.resize(&root, mbps(1001))).code(), "link");
    net.resize(&root, mbps(1)).unwrap();
    assert_eq!(net.topology().link(&"c-1".into()).unwrap().reserved(), mbps(1));
    assert!(net.check_invariants().is_empty());
}

#[test]
fn release_is_depth_first_and_exact() {
    let mut net = SliceNetwork::new(t3());
    let initial = net.topology().reservations();
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    let c1 = net.deploy(spec("r1", "r6", 30, 50), Some(&root)).unwrap();
    let c2 = net.deploy(spec("r3", "r6", 30, 50), Some(&root)).unwrap();
    let leaf = net.deploy(spec("r3", "r4", 10, 50), Some(&c2)).unwrap();

    net.release(&leaf).unwrap();
    assert_eq!(net.slice(&c2).unwrap().child_committed, Bandwidth::ZERO);

    let out = net.release(&root).unwrap();
    assert_eq!(out.removed, vec![c1, c2, root.clone()]);
    assert!(net.tree().is_empty());
    assert!(net.sfts().is_empty());
    assert_eq!(net.topology().reservations(), initial);

    let again = net.release(&root).unwrap();
    assert!(again.removed.is_empty());
    assert!(again.notice.is_some());
}

#[test]
fn sft_entries_and_walk() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    let entries = net.sfts().entries_for(&root);
    assert_eq!(entries.len(), 5);
    let (last_router, last) = entries.last().unwrap();
    assert_eq!(last_router.as_str(), "r6");
    assert_eq!(last.out_link, OutLink::Terminal);
    assert!(last.remaining_segments.is_empty());
    assert_eq!(net.walk_sft(&root).unwrap(), net.slice(&root).unwrap().plan.hops);

    let d = net.admit(&spec("r1", "r6", 1, 50), None);
    let other = net.allocate(spec("r1", "r6", 1, 50), d).unwrap();
    net.program_sft(&other).unwrap();
    assert!(matches!(
        net.program_sft(&other),
        Err(SliceError::IllegalTransition { .. })
    ));

    net.sfts_mut().remove(&"r4".into(), &root);
    match net.walk_sft(&root) {
        Err(SliceError::Sft(SftError::MissingEntry { router, .. })) => assert_eq!(router.as_str(), "r4"),
        other => panic!("{other:?}"),
    }
    assert!(!net.check_invariants().is_empty());
}

#[test]
fn invariants_detect_corruption() {
    let mut net = SliceNetwork::new(t3());
    let root = net.deploy(spec("r1", "r6", 100, 50), None).unwrap();
    net.deploy(spec("r1", "r6", 60, 50), Some(&root)).unwrap();
    let mut tree = net.tree().clone();
    tree.corrupt_allocation(&"1.1".parse().unwrap(), mbps(70));
    assert!(!tree.check_invariants().is_empty());
}
