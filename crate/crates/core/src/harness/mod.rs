// SPDX-License-Identifier: Apache-2.0

//! Deterministic scripted simulation.
//!
//! A script is a list of timed actions. Each tick applies that tick's
//! actions, steps the orchestrators to quiescence, pushes the active flows
//! through the fluid model and audits the result. Everything that happens is
//! appended to an [`EventLog`]; the same script and seed always produce the
//! same bytes.

pub mod fluid;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::orchestration::{Engine, EngineConfig, EngineError, EngineEvent, Fault, Operation, Phase};
use crate::slicing::{SliceId, SliceSpec, SliceState};
use crate::topology::Topology;
use crate::units::Bandwidth;

pub use fluid::{check_tick, compute_rates, delivered_rate, SliceRate, TickRates};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("malformed script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("script ticks must be non-decreasing (event {index} at tick {tick})")]
    Unordered { index: usize, tick: u64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptAction {
    Deploy {
        request: SliceSpec,
    },
    Subslice {
        parent: SliceId,
        request: SliceSpec,
    },
    Resize {
        slice: SliceId,
        #[serde(rename = "bandwidth_mbps")]
        bandwidth: Bandwidth,
    },
    Release {
        slice: SliceId,
    },
    Flow {
        slice: SliceId,
        #[serde(rename = "offered_mbps")]
        offered: Bandwidth,
        duration_ticks: u64,
    },
    Fault {
        fault: Fault,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub tick: u64,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationScript {
    pub seed: u64,
    pub events: Vec<ScriptEvent>,
}

impl SimulationScript {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let s: SimulationScript = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].tick < w[0].tick {
                return Err(HarnessError::Unordered {
                    index: i + 1,
                    tick: w[1].tick,
                });
            }
        }
        Ok(())
    }

    /// Last tick with anything to do, or `None` for an empty script.
    pub fn last_tick(&self) -> Option<u64> {
        self.events
            .iter()
            .map(|e| match &e.action {
                ScriptAction::Flow { duration_ticks, .. } => e.tick + duration_ticks.saturating_sub(1),
                _ => e.tick,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub seq: u64,
    pub actor: String,
    pub event: String,
    pub payload: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}", serde_json::to_string(e).expect("log entries serialize"));
        }
        s
    }

    pub fn extend(&mut self, other: EventLog) {
        self.entries.extend(other.entries);
    }

    pub fn of_kind<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a LogEntry> + 'a {
        self.entries.iter().filter(move |e| e.event == event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ActiveFlow {
    slice: SliceId,
    offered: Bandwidth,
    until: u64,
}

/// Progress through a script, kept separately so a run can be resumed
/// from a snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessState {
    next_tick: u64,
    seq: u64,
    cursor: usize,
    flows: Vec<ActiveFlow>,
    started: bool,
    finished: bool,
}

/// Violation found while running.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub tick: u64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    engine: Engine,
    state: HarnessState,
}

impl Simulator {
    /// Fresh engine over `topology` seeded from the script.
    pub fn for_script(topology: &Topology, script: &SimulationScript) -> Result<Self, HarnessError> {
        let mut engine = Engine::new(topology, EngineConfig::seeded(script.seed));
        engine.run_until_quiescent()?;
        Ok(Simulator::new(engine))
    }

    pub fn new(engine: Engine) -> Self {
        Simulator {
            engine,
            state: HarnessState::default(),
        }
    }

    pub fn resume(engine: Engine, state: HarnessState) -> Self {
        Simulator { engine, state }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn state(&self) -> &HarnessState {
        &self.state
    }

    pub fn into_parts(self) -> (Engine, HarnessState) {
        (self.engine, self.state)
    }

    fn log(&mut self, out: &mut EventLog, tick: u64, actor: &str, event: &str, payload: Value) {
        out.entries.push(LogEntry {
            tick,
            seq: self.state.seq,
            actor: actor.to_owned(),
            event: event.to_owned(),
            payload,
        });
        self.state.seq += 1;
    }

    /// Runs the script through tick `until` (inclusive), or to the end.
    pub fn run(&mut self, script: &SimulationScript, until: Option<u64>) -> Result<EventLog, HarnessError> {
        script.validate()?;
        let mut out = EventLog::default();
        if !self.state.started {
            self.state.started = true;
            let payload = json!({
                "seed": script.seed,
                "events": script.events.len(),
                "slices": self.engine.slice_view().len(),
            });
            self.log(&mut out, 0, "harness", "init", payload);
        }
        let last = script.last_tick();
        let stop = match (last, until) {
            (Some(l), Some(u)) => Some(l.min(u)),
            (l, None) => l,
            (None, Some(_)) => None,
        };
        if let Some(stop) = stop {
            while self.state.next_tick <= stop {
                let tick = self.state.next_tick;
                self.tick(script, tick, &mut out)?;
                self.state.next_tick += 1;
            }
        }
        let done = last.is_none_or(|l| self.state.next_tick > l);
        if done && !self.state.finished {
            self.state.finished = true;
            let payload = json!({
                "ticks": self.state.next_tick,
                "slices": self.engine.slice_view().len(),
                "rounds": self.engine.rounds(),
            });
            let tick = self.state.next_tick.saturating_sub(1);
            self.log(&mut out, tick, "harness", "quiesce", payload);
        }
        Ok(out)
    }

    fn tick(&mut self, script: &SimulationScript, tick: u64, out: &mut EventLog) -> Result<(), HarnessError> {
        let mut submitted = Vec::new();
        while let Some(ev) = script.events.get(self.state.cursor).filter(|e| e.tick <= tick) {
            self.state.cursor += 1;
            let ev = ev.clone();
            self.apply(tick, &ev.action, &mut submitted, out)?;
        }

        for e in self.engine.run_until_quiescent()? {
            let (actor, payload) = match &e {
                EngineEvent::Domain { domain, action } => (format!("domain {domain}"), serde_json::to_value(action)),
                other => ("engine".to_owned(), serde_json::to_value(other)),
            };
            self.log(out, tick, &actor, "step", payload.expect("events serialize"));
        }
        for txid in submitted {
            let st = self.engine.transaction_status(&txid)?;
            let event = match st.phase {
                Some(Phase::Done) => "tx_done",
                _ => "tx_failed",
            };
            let payload = json!({
                "txid": st.txid,
                "op": st.request.operation.kind(),
                "slice": st.slice_id,
                "reason": st.reason.as_ref().map(|r| r.code()),
                "detail": st.reason.as_ref().map(|r| r.to_string()),
                "notice": st.notice,
            });
            self.log(out, tick, "harness", event, payload);
        }

        self.traffic(tick, out);

        for v in self.engine.audit() {
            self.log(out, tick, "audit", "violation", json!({ "detail": v }));
        }
        self.state.flows.retain(|f| f.until > tick + 1);
        Ok(())
    }

    fn apply(
        &mut self,
        tick: u64,
        action: &ScriptAction,
        submitted: &mut Vec<String>,
        out: &mut EventLog,
    ) -> Result<(), HarnessError> {
        let op = match action {
            ScriptAction::Deploy { request } => Operation::Deploy {
                spec: request.clone(),
                parent: None,
            },
            ScriptAction::Subslice { parent, request } => Operation::Deploy {
                spec: request.clone(),
                parent: Some(parent.clone()),
            },
            ScriptAction::Resize { slice, bandwidth } => Operation::Resize {
                slice_id: slice.clone(),
                bandwidth: *bandwidth,
            },
            ScriptAction::Release { slice } => Operation::Release {
                slice_id: slice.clone(),
            },
            ScriptAction::Flow {
                slice,
                offered,
                duration_ticks,
            } => {
                let active = self.engine.slice(slice).is_some_and(|s| s.state == SliceState::Active);
                if !active || *duration_ticks == 0 || offered.is_zero() {
                    let payload = json!({ "slice": slice, "reason": "slice is not active or flow is empty" });
                    self.log(out, tick, "harness", "rejected", payload);
                } else {
                    self.state.flows.push(ActiveFlow {
                        slice: slice.clone(),
                        offered: *offered,
                        until: tick + duration_ticks,
                    });
                    let payload = json!({ "slice": slice, "offered_mbps": offered, "until": tick + duration_ticks });
                    self.log(out, tick, "harness", "flow", payload);
                }
                return Ok(());
            }
            ScriptAction::Fault { fault } => {
                match self.engine.inject(fault) {
                    Ok(()) => {
                        let payload = serde_json::to_value(fault).expect("faults serialize");
                        self.log(out, tick, "harness", "fault", payload);
                    }
                    Err(e) => {
                        let payload = json!({ "reason": e.to_string() });
                        self.log(out, tick, "harness", "rejected", payload);
                    }
                }
                return Ok(());
            }
        };
        let kind = op.kind();
        match self.engine.submit(op) {
            Ok(txid) => {
                self.log(out, tick, "harness", "submit", json!({ "txid": txid, "op": kind }));
                submitted.push(txid);
            }
            Err(EngineError::InvalidRequest(r)) => {
                let payload = json!({ "op": kind, "reason": r.code(), "detail": r.to_string() });
                self.log(out, tick, "harness", "rejected", payload);
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn traffic(&mut self, tick: u64, out: &mut EventLog) {
        let tree = self.engine.slice_view();
        let topo = self.engine.topology_view();
        // flows on slices that went away stop with them
        self.state
            .flows
            .retain(|f| tree.get(&f.slice).is_some_and(|s| s.state == SliceState::Active));
        if self.state.flows.is_empty() {
            return;
        }
        let mut offered: BTreeMap<SliceId, Vec<Bandwidth>> = BTreeMap::new();
        for f in &self.state.flows {
            offered.entry(f.slice.clone()).or_default().push(f.offered);
        }
        let rates = compute_rates(&tree, &topo, &offered);
        for (id, r) in &rates.slices {
            if !offered.contains_key(id) {
                continue;
            }
            let s = tree.get(id).expect("rated slices exist");
            let latency = s.plan.total_latency;
            let violated = latency > s.spec.latency_bound;
            if let Some(n) = self.engine.nanos_mut().get_mut(id) {
                n.record_sample(r.offered, r.delivered, latency, violated);
            }
            let payload = json!({
                "slice": id,
                "offered_mbps": r.offered,
                "delivered_mbps": r.delivered,
                "allocated_mbps": s.allocated,
                "latency_ms": latency,
            });
            self.log(out, tick, "harness", "slice_rate", payload);
        }
        for (l, load) in &rates.links {
            let cap = topo.link(l).map(|l| l.capacity).unwrap_or_default();
            self.log(
                out,
                tick,
                "harness",
                "link_load",
                json!({ "link": l, "load_mbps": load, "capacity_mbps": cap }),
            );
        }
        for v in check_tick(&tree, &topo, &offered, &rates) {
            self.log(out, tick, "harness", "violation", json!({ "detail": v }));
        }
    }
}

/// Every violation in `log`, plus whatever the final state still fails.
pub fn isolation_report(log: &EventLog, engine: &Engine) -> Vec<Violation> {
    let mut v: Vec<Violation> = log
        .of_kind("violation")
        .map(|e| Violation {
            tick: e.tick,
            detail: e.payload["detail"].as_str().unwrap_or_default().to_owned(),
        })
        .collect();
    let end = log.entries.last().map_or(0, |e| e.tick);
    v.extend(engine.audit().into_iter().map(|detail| Violation { tick: end, detail }));
    v.dedup();
    v
}

/// Runs a whole script on a fresh engine.
pub fn run_script(topology: &Topology, script: &SimulationScript) -> Result<(EventLog, Simulator), HarnessError> {
    let mut sim = Simulator::for_script(topology, script)?;
    let log = sim.run(script, None)?;
    Ok((log, sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn script() -> SimulationScript {
        SimulationScript::parse(
            r#"{"seed": 7, "events": [
                {"tick": 0, "action": {"type": "deploy", "request": {"src_node": "r1", "dst_node": "r6", "bandwidth_mbps": 100, "latency_bound_ms": 20, "owner": "alice"}}},
                {"tick": 1, "action": {"type": "subslice", "parent": "1", "request": {"src_node": "r1", "dst_node": "r6", "bandwidth_mbps": 40, "latency_bound_ms": 20, "owner": "bob"}}},
                {"tick": 2, "action": {"type": "flow", "slice": "1.1", "offered_mbps": 120, "duration_ticks": 2}},
                {"tick": 2, "action": {"type": "flow", "slice": "1", "offered_mbps": 50, "duration_ticks": 2}}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_script_logs_two_markers() {
        let (log, _) = run_script(&fixtures::t3(), &SimulationScript::default()).unwrap();
        let kinds: Vec<_> = log.entries.iter().map(|e| e.event.as_str()).collect();
        assert_eq!(kinds, ["init", "quiesce"]);
    }

    #[test]
    fn overloaded_child_is_capped() {
        let (log, sim) = run_script(&fixtures::t3(), &script()).unwrap();
        let rates: Vec<_> = log.of_kind("slice_rate").collect();
        assert_eq!(rates.len(), 4);
        let child = rates.iter().find(|e| e.payload["slice"] == "1.1").unwrap();
        assert_eq!(child.payload["delivered_mbps"], 40.0);
        let parent = rates.iter().find(|e| e.payload["slice"] == "1").unwrap();
        assert_eq!(parent.payload["delivered_mbps"], 50.0);
        assert!(isolation_report(&log, sim.engine()).is_empty());
        let m = crate::nano::nano_metrics(sim.engine(), &"1.1".parse().unwrap()).unwrap();
        assert_eq!(m.delivered_mbps, Bandwidth::from_whole_mbps(40));
    }

    #[test]
    fn split_run_matches_single_run() {
        let s = script();
        let (whole, _) = run_script(&fixtures::t3(), &s).unwrap();
        let mut sim = Simulator::for_script(&fixtures::t3(), &s).unwrap();
        let mut parts = sim.run(&s, Some(1)).unwrap();
        parts.extend(sim.run(&s, None).unwrap());
        assert_eq!(whole.to_json_lines(), parts.to_json_lines());
    }

    #[test]
    fn unordered_script_is_rejected() {
        let text = r#"{"seed": 1, "events": [
            {"tick": 3, "action": {"type": "release", "slice": "1"}},
            {"tick": 2, "action": {"type": "release", "slice": "1"}}]}"#;
        assert!(matches!(
            SimulationScript::parse(text),
            Err(HarnessError::Unordered { index: 1, tick: 2 })
        ));
    }
}
