// SPDX-License-Identifier: Apache-2.0

//! Route computation and segment-list encoding on the reference topology.

use recslice::fixtures;
use recslice::routing::{assemble_route_plan, decode_segment_lists, encode_segment_list, route_metrics};
use recslice::topology::NodeId;

fn main() {
    let t = fixtures::t3();
    let plan = assemble_route_plan(&t, &NodeId::new("r2"), &NodeId::new("r6")).unwrap();
    let (latency, bottleneck) = route_metrics(&t, &plan).unwrap();
    println!(
        "AS path {}: {} hops, {latency} ms, bottleneck {bottleneck}",
        plan.as_path,
        plan.hops.len()
    );

    let lists = encode_segment_list(&t, &plan).unwrap();
    for l in &lists {
        println!("  domain {}: {:?}", l.domain, l.sids);
    }
    let hops = decode_segment_lists(&t, &lists).unwrap();
    assert_eq!(hops, plan.hops);
    println!("decoded back to the same {} hops", hops.len());
}
