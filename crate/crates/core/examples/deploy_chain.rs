// SPDX-License-Identifier: Apache-2.0

//! Deploys one slice across the three-domain reference topology and prints
//! the plan, the per-domain outcome and the remaining link capacity.

use recslice::fixtures;
use recslice::orchestration::{Engine, EngineConfig};
use recslice::slicing::SliceSpec;
use recslice::topology::NodeId;
use recslice::units::{Bandwidth, Latency};

fn main() {
    let topology = fixtures::t3();
    let mut engine = Engine::new(&topology, EngineConfig::default());

    let spec = SliceSpec {
        src_node: NodeId::new("r1"),
        dst_node: NodeId::new("r6"),
        bandwidth: Bandwidth::from_whole_mbps(100),
        latency_bound: Latency::from_whole_ms(20),
        owner: "operator".into(),
    };
    let report = engine.deploy(spec, None).expect("engine runs");
    let st = &report.status;
    println!("{} finished in {} rounds: {:?}", st.txid, report.rounds, st.phase);
    for (domain, state) in &st.per_domain {
        println!("  domain {domain}: {state}");
    }

    let id = st.slice_id.clone().expect("deployed");
    let slice = engine.slice(&id).unwrap();
    println!(
        "slice {id} via AS path {} ({} ms)",
        slice.plan.as_path, slice.plan.total_latency
    );
    for h in &slice.plan.hops {
        println!("  {} -> {} over {}", h.from_node, h.to_node, h.link_id);
    }
    for l in engine.topology_view().links() {
        println!("  {:8} residual {} Mbps", l.id.to_string(), l.residual());
    }
}
