// SPDX-License-Identifier: Apache-2.0

//! Stops a simulation halfway, snapshots it, restores the snapshot and
//! finishes; the combined log equals an uninterrupted run.

use recslice::fixtures;
use recslice::harness::{run_script, SimulationScript, Simulator};
use recslice::snapshot::{self, Snapshot};

const SCRIPT: &str = r#"{
  "seed": 9,
  "events": [
    {"tick": 0, "action": {"type": "deploy", "request": {"src_node": "r1", "dst_node": "r6", "bandwidth_mbps": 200, "latency_bound_ms": 20, "owner": "op"}}},
    {"tick": 2, "action": {"type": "flow", "slice": "1", "offered_mbps": 250, "duration_ticks": 6}},
    {"tick": 4, "action": {"type": "resize", "slice": "1", "bandwidth_mbps": 300}},
    {"tick": 8, "action": {"type": "release", "slice": "1"}}
  ]
}"#;

fn main() {
    let t = fixtures::t3();
    let script = SimulationScript::parse(SCRIPT).unwrap();
    let (whole, _) = run_script(&t, &script).unwrap();

    let mut sim = Simulator::for_script(&t, &script).unwrap();
    let mut log = sim.run(&script, Some(3)).unwrap();
    let text = Snapshot::capture(sim.engine(), Some(sim.state())).to_json();
    println!("snapshot after tick 3: {} bytes", text.len());

    let restored = snapshot::load(&text).unwrap();
    let again = Snapshot::capture(&restored.engine, restored.harness.as_ref()).to_json();
    println!("re-dump identical: {}", again == text);

    let mut sim = Simulator::resume(restored.engine, restored.harness.unwrap());
    log.extend(sim.run(&script, None).unwrap());
    println!(
        "{} log entries, identical to uninterrupted run: {}",
        log.entries.len(),
        log == whole
    );
}
