// SPDX-License-Identifier: Apache-2.0

//! Runs every domain orchestrator on its own thread against the shared
//! repository while several deployments compete for one peering.

use std::time::Duration;

use recslice::fixtures;
use recslice::orchestration::{Engine, EngineConfig, Operation};
use recslice::slicing::SliceSpec;
use recslice::topology::NodeId;
use recslice::units::{Bandwidth, Latency};

fn main() {
    let t = fixtures::chain(4);
    let mut engine = Engine::new(&t, EngineConfig::seeded(7));
    engine.run_until_quiescent().unwrap();
    let ops = (0..6)
        .map(|i| Operation::Deploy {
            spec: SliceSpec {
                src_node: NodeId::new("d0a"),
                dst_node: NodeId::new("d3b"),
                bandwidth: Bandwidth::from_whole_mbps(300),
                latency_bound: Latency::from_whole_ms(20),
                owner: format!("tenant-{i}"),
            },
            parent: None,
        })
        .collect();
    let statuses = engine.run_free_running(ops, Duration::from_secs(10)).unwrap();
    for st in &statuses {
        let outcome = match (&st.slice_id, &st.reason) {
            (Some(id), None) => format!("slice {id}"),
            (_, Some(r)) => r.to_string(),
            _ => "?".into(),
        };
        println!("{} {:?}: {outcome}", st.txid, st.phase);
    }
    println!("audit findings: {}", engine.audit().len());
}
