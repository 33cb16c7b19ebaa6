// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use recslice::fixtures;
use recslice::harness::{isolation_report, run_script, ScriptAction, ScriptEvent, SimulationScript, Simulator};
use recslice::orchestration::Fault;
use recslice::slicing::SliceId;
use recslice::snapshot::{self, Snapshot};
use recslice::topology::NodeId;
use recslice::units::Bandwidth;

#[test]
fn restore_then_continue_matches_an_uninterrupted_run() {
    let t = fixtures::t3();
    for seed in 0..6 {
        let script = random_script(seed, seed % 2 == 0);
        let (whole, _) = run_script(&t, &script).unwrap();

        let mut sim = Simulator::for_script(&t, &script).unwrap();
        let mut log = sim.run(&script, Some(7)).unwrap();
        let text = Snapshot::capture(sim.engine(), Some(sim.state())).to_json();
        drop(sim);

        let restored = snapshot::load(&text).unwrap();
        let mut sim = Simulator::resume(restored.engine, restored.harness.unwrap());
        log.extend(sim.run(&script, None).unwrap());
        assert_eq!(whole.to_json_lines(), log.to_json_lines(), "seed {seed}");
    }
}

#[test]
fn snapshots_of_random_states_round_trip_byte_for_byte() {
    let t = fixtures::t3();
    for seed in 0..6 {
        let (_, sim) = run_script(&t, &random_script(seed, true)).unwrap();
        let first = Snapshot::capture(sim.engine(), Some(sim.state())).to_json();
        let r = snapshot::load(&first).unwrap();
        let second = Snapshot::capture(&r.engine, r.harness.as_ref()).to_json();
        assert_eq!(first, second, "seed {seed}");
    }
}

#[test]
fn isolation_holds_on_more_workloads() {
    for seed in 0..40 {
        let out = isolation_workload(9000 + seed);
        assert!(out.faults.is_empty(), "seed {seed}: {:?}", out.faults);
    }
}

fn deploy_and_break(fault: Fault) -> SimulationScript {
    let request = spec(&NodeId::new("r1"), &NodeId::new("r6"), 100, "a");
    SimulationScript {
        seed: 4,
        events: vec![
            ScriptEvent {
                tick: 0,
                action: ScriptAction::Deploy { request },
            },
            ScriptEvent {
                tick: 1,
                action: ScriptAction::Fault { fault },
            },
        ],
    }
}

#[test]
fn deleted_forwarding_entry_is_reported() {
    let script = deploy_and_break(Fault::DeleteSft {
        router: NodeId::new("r3"),
        slice: SliceId::root(1),
    });
    let (log, sim) = run_script(&fixtures::t3(), &script).unwrap();
    let report = isolation_report(&log, sim.engine());
    assert!(report.iter().any(|v| v.detail.contains("r3")), "{report:?}");
}

#[test]
fn corrupted_ledger_is_reported() {
    let script = deploy_and_break(Fault::CorruptLedger {
        slice: SliceId::root(1),
        bandwidth: Bandwidth::from_whole_mbps(5),
    });
    let (log, sim) = run_script(&fixtures::t3(), &script).unwrap();
    assert!(!isolation_report(&log, sim.engine()).is_empty());
}

#[test]
fn flows_on_unknown_slices_are_rejected_in_the_log() {
    let script = SimulationScript {
        seed: 0,
        events: vec![ScriptEvent {
            tick: 0,
            action: ScriptAction::Flow {
                slice: SliceId::root(9),
                offered: Bandwidth::from_whole_mbps(5),
                duration_ticks: 2,
            },
        }],
    };
    let (log, _) = run_script(&fixtures::t3(), &script).unwrap();
    assert_eq!(log.of_kind("rejected").count(), 1);
    assert_eq!(log.of_kind("slice_rate").count(), 0);
}
