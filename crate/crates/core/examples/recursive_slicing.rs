// SPDX-License-Identifier: Apache-2.0

//! A tenant slice inside an operator slice, grown until the parent runs out.

use recslice::fixtures;
use recslice::nano::{nano_capacity, nano_create_subslice, nano_resize};
use recslice::orchestration::{Engine, EngineConfig};
use recslice::slicing::SliceSpec;
use recslice::topology::NodeId;
use recslice::units::{Bandwidth, Latency};

fn spec(mbps: u64, owner: &str) -> SliceSpec {
    SliceSpec {
        src_node: NodeId::new("r1"),
        dst_node: NodeId::new("r6"),
        bandwidth: Bandwidth::from_whole_mbps(mbps),
        latency_bound: Latency::from_whole_ms(20),
        owner: owner.into(),
    }
}

fn main() {
    let mut engine = Engine::new(&fixtures::t3(), EngineConfig::default());
    let parent = engine
        .deploy(spec(100, "operator"), None)
        .unwrap()
        .into_result()
        .expect("root fits");
    let parent = parent.unwrap();

    // the operator's nano carves out a tenant slice
    let child = nano_create_subslice(&mut engine, &parent, "operator", spec(40, "tenant")).unwrap();
    println!("created {child} inside {parent}");

    for mbps in [60, 80, 100, 120] {
        match nano_resize(&mut engine, &child, "tenant", Bandwidth::from_whole_mbps(mbps)) {
            Ok(cap) => println!("{child} now {} Mbps", cap.allocated_mbps),
            Err(e) => {
                println!("{child} to {mbps} Mbps refused: {e}");
                break;
            }
        }
    }
    let cap = nano_capacity(&engine, &parent).unwrap();
    println!(
        "{parent}: allocated {} Mbps, headroom {} Mbps",
        cap.allocated_mbps, cap.headroom_mbps
    );
}
