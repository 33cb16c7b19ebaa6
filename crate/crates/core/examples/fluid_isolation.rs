// SPDX-License-Identifier: Apache-2.0

//! Two sibling subslices share a parent; one of them offers three times its
//! allocation and the other is unaffected.

use recslice::fixtures;
use recslice::harness::{isolation_report, run_script, SimulationScript};

const SCRIPT: &str = r#"{
  "seed": 1,
  "events": [
    {"tick": 0, "action": {"type": "deploy", "request": {"src_node": "r1", "dst_node": "r6", "bandwidth_mbps": 100, "latency_bound_ms": 20, "owner": "op"}}},
    {"tick": 1, "action": {"type": "subslice", "parent": "1", "request": {"src_node": "r1", "dst_node": "r6", "bandwidth_mbps": 30, "latency_bound_ms": 20, "owner": "a"}}},
    {"tick": 1, "action": {"type": "subslice", "parent": "1", "request": {"src_node": "r3", "dst_node": "r6", "bandwidth_mbps": 50, "latency_bound_ms": 20, "owner": "b"}}},
    {"tick": 2, "action": {"type": "flow", "slice": "1.1", "offered_mbps": 90, "duration_ticks": 3}},
    {"tick": 2, "action": {"type": "flow", "slice": "1.2", "offered_mbps": 45, "duration_ticks": 3}},
    {"tick": 2, "action": {"type": "flow", "slice": "1", "offered_mbps": 40, "duration_ticks": 3}}
  ]
}"#;

fn main() {
    let script = SimulationScript::parse(SCRIPT).unwrap();
    let (log, sim) = run_script(&fixtures::t3(), &script).unwrap();
    for e in log.of_kind("slice_rate").filter(|e| e.tick == 2) {
        let p = &e.payload;
        println!(
            "slice {:4} offered {:>5} delivered {:>5} (allocated {})",
            p["slice"].as_str().unwrap(),
            p["offered_mbps"],
            p["delivered_mbps"],
            p["allocated_mbps"]
        );
    }
    println!("violations: {}", isolation_report(&log, sim.engine()).len());
}
