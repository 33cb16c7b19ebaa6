// SPDX-License-Identifier: Apache-2.0

//! Watches the shared repository while a refused deployment aborts and a
//! second attempt commits.

use recslice::fixtures;
use recslice::orchestration::{Engine, EngineConfig, EngineEvent, Fault, Operation};
use recslice::slicing::SliceSpec;
use recslice::topology::NodeId;
use recslice::units::{Bandwidth, Latency};

fn main() {
    let mut engine = Engine::new(&fixtures::t3(), EngineConfig::default());
    engine.run_until_quiescent().unwrap();
    engine
        .inject(&Fault::Refuse {
            domain: 65002,
            count: 1,
        })
        .unwrap();

    let spec = SliceSpec {
        src_node: NodeId::new("r1"),
        dst_node: NodeId::new("r6"),
        bandwidth: Bandwidth::from_whole_mbps(250),
        latency_bound: Latency::from_whole_ms(30),
        owner: "demo".into(),
    };
    for attempt in 1..=2 {
        let txid = engine
            .submit(Operation::Deploy {
                spec: spec.clone(),
                parent: None,
            })
            .unwrap();
        println!("attempt {attempt}: {txid}");
        for event in engine.run_until_quiescent().unwrap() {
            if let EngineEvent::Domain { domain, action } = event {
                println!("  {domain}: {}", serde_json::to_string(&action).unwrap());
            }
        }
        let st = engine.transaction_status(&txid).unwrap();
        println!("  -> {:?} {:?}", st.phase, st.reason.map(|r| r.to_string()));
    }
    for rec in engine.repo().scan_prefix("tx/") {
        println!("{} v{}", rec.key, rec.version);
    }
}
