// SPDX-License-Identifier: Apache-2.0

//! Drives a set of domain orchestrators over one repository.
//!
//! The engine is a client like any other: it submits requests, steps the
//! orchestrators in scheduler order and watches `tx/` to keep one nano per
//! Active slice. Views merge the per-domain state for inspection.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kv::{KvError, KvRepository, SubscriberId};
use super::messages::*;
use super::orchestrator::{Action, DomainOrchestrator, LocalState, OrchestrationError};
use crate::nano::NanoRegistry;
use crate::slicing::{
    link_conservation, walk_sft, RejectReason, SftTables, Slice, SliceError, SliceId, SliceSpec, SliceState, SliceTree,
    DEFAULT_DEPTH_CAP,
};
use crate::topology::{DomainId, LinkId, NodeId, Topology};
use crate::units::{Bandwidth, Latency};

pub const DEFAULT_DEADLINE_TICKS: u64 = 50;
const DEFAULT_MAX_ROUNDS: u64 = 100_000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid request: {0}")]
    InvalidRequest(RejectReason),
    #[error("unknown transaction {0}")]
    UnknownTx(String),
    #[error("no quiescence after {0} rounds")]
    NotQuiescent(u64),
    #[error("unknown domain {0}")]
    UnknownDomain(DomainId),
    #[error("unknown router {0}")]
    UnknownRouter(NodeId),
    #[error("free-running actors did not settle within {0:?}")]
    Timeout(Duration),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Orchestration(#[from] OrchestrationError),
    #[error(transparent)]
    Slice(#[from] SliceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Ascending ASN every round.
    #[default]
    RoundRobin,
    /// A fresh seeded permutation every round.
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub seed: u64,
    pub deadline_ticks: u64,
    pub depth_cap: usize,
    pub scheduler: SchedulerKind,
    pub max_rounds: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 0,
            deadline_ticks: DEFAULT_DEADLINE_TICKS,
            depth_cap: DEFAULT_DEPTH_CAP,
            scheduler: SchedulerKind::RoundRobin,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

impl EngineConfig {
    pub fn seeded(seed: u64) -> Self {
        EngineConfig {
            seed,
            scheduler: SchedulerKind::Seeded,
            ..Self::default()
        }
    }
}

/// Injectable faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// The domain refuses its next `count` deploy or resize reservations.
    Refuse { domain: u32, count: u32 },
    /// Every domain (or just `domain`) refuses with this probability.
    RefuseProbability {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<u32>,
        probability: f64,
    },
    /// The domain does nothing for `ticks` scheduler ticks.
    Stall { domain: u32, ticks: u64 },
    /// Drops one forwarding entry.
    DeleteSft { router: NodeId, slice: SliceId },
    /// The next `count` CAS calls under `prefix` lose to a competing write.
    CasContention { prefix: String, count: u32 },
    /// Overwrites a slice's allocation behind the ledger's back.
    CorruptLedger {
        slice: SliceId,
        #[serde(rename = "bandwidth_mbps")]
        bandwidth: Bandwidth,
    },
}

/// Something that happened during a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EngineEvent {
    Domain { domain: DomainId, action: Action },
    NanoUp { slice_id: SliceId },
    NanoDown { slice_id: SliceId },
}

/// Read-only view of one transaction assembled from its keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxStatus {
    pub txid: String,
    pub request: TxRequest,
    /// `None` until a coordinator has opened the transaction.
    pub phase: Option<Phase>,
    pub coordinator: Option<DomainId>,
    pub per_domain: BTreeMap<DomainId, DomainState>,
    pub slice_id: Option<SliceId>,
    pub reason: Option<RejectReason>,
    pub notice: Option<String>,
    pub deadline_tick: Option<u64>,
}

/// Outcome of a blocking operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxReport {
    pub status: TxStatus,
    /// Scheduler rounds from submission until the phase became terminal.
    pub rounds: u64,
}

impl TxReport {
    pub fn is_done(&self) -> bool {
        self.status.phase == Some(Phase::Done)
    }

    /// The rejection reason of a failed transaction.
    pub fn failure(&self) -> Option<&RejectReason> {
        match self.status.phase {
            Some(Phase::Done) => None,
            _ => Some(self.status.reason.as_ref().unwrap_or(&RejectReason::Deadline)),
        }
    }

    /// The slice id on success, the reason otherwise.
    pub fn into_result(self) -> Result<Option<SliceId>, RejectReason> {
        match self.failure() {
            None => Ok(self.status.slice_id),
            Some(r) => Err(r.clone()),
        }
    }
}

/// Serializable engine state without the topology structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub config: EngineConfig,
    repo: KvRepository,
    orchestrators: Vec<LocalState>,
    nanos: NanoRegistry,
    scheduler_rng: ChaCha8Rng,
    watch: SubscriberId,
    rounds: u64,
}

#[derive(Debug, Clone)]
pub struct Engine {
    topology: Topology,
    repo: KvRepository,
    orchestrators: BTreeMap<DomainId, DomainOrchestrator>,
    nanos: NanoRegistry,
    config: EngineConfig,
    scheduler_rng: ChaCha8Rng,
    watch: SubscriberId,
    rounds: u64,
}

impl Engine {
    pub fn new(topology: &Topology, config: EngineConfig) -> Self {
        let mut repo = KvRepository::new();
        let watch = repo.watch(TX_PREFIX);
        let orchestrators = topology
            .domains()
            .map(|d| {
                let o = DomainOrchestrator::new(
                    d,
                    topology,
                    &mut repo,
                    config.seed,
                    config.deadline_ticks,
                    config.depth_cap,
                );
                (d, o)
            })
            .collect();
        Engine {
            topology: topology.pristine(),
            repo,
            orchestrators,
            nanos: NanoRegistry::new(),
            scheduler_rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            watch,
            rounds: 0,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn repo(&self) -> &KvRepository {
        &self.repo
    }

    pub fn orchestrator(&self, d: DomainId) -> Option<&DomainOrchestrator> {
        self.orchestrators.get(&d)
    }

    pub fn orchestrators(&self) -> impl Iterator<Item = &DomainOrchestrator> {
        self.orchestrators.values()
    }

    pub fn nanos(&self) -> &NanoRegistry {
        &self.nanos
    }

    pub fn nanos_mut(&mut self) -> &mut NanoRegistry {
        &mut self.nanos
    }

    /// Scheduler rounds executed so far.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn now(&self) -> u64 {
        self.repo.now()
    }

    // -- requests -----------------------------------------------------------

    /// Writes a request and returns its txid without running anything.
    pub fn submit(&mut self, operation: Operation) -> Result<String, EngineError> {
        match &operation {
            Operation::Deploy { spec, .. } => spec.validate().map_err(EngineError::InvalidRequest)?,
            Operation::Resize { bandwidth, .. } if bandwidth.is_zero() => {
                return Err(EngineError::InvalidRequest(RejectReason::InvalidSpec {
                    detail: "bandwidth_mbps must be positive".into(),
                }))
            }
            _ => {}
        }
        let txid = format!("tx-{}", self.repo.revision() + 1);
        let req = TxRequest {
            txid: txid.clone(),
            operation,
            submitted_tick: self.repo.now(),
        };
        self.repo.put_json(&request_key(&txid), &req);
        Ok(txid)
    }

    /// Submits `operation` and steps until everything has settled.
    pub fn execute(&mut self, operation: Operation) -> Result<TxReport, EngineError> {
        let txid = self.submit(operation)?;
        let start = self.rounds;
        let mut settled_at = None;
        let mut quiet = false;
        while !quiet || settled_at.is_none() {
            if self.rounds - start > self.config.max_rounds {
                return Err(EngineError::NotQuiescent(self.config.max_rounds));
            }
            let events = self.round()?;
            if settled_at.is_none() && self.phase_of(&txid)?.is_some_and(Phase::is_terminal) {
                settled_at = Some(self.rounds - start);
            }
            quiet = events.is_empty() && self.idle();
        }
        Ok(TxReport {
            status: self.transaction_status(&txid)?,
            rounds: settled_at.expect("loop exits once settled"),
        })
    }

    pub fn deploy(&mut self, spec: SliceSpec, parent: Option<SliceId>) -> Result<TxReport, EngineError> {
        self.execute(Operation::Deploy { spec, parent })
    }

    pub fn resize(&mut self, slice_id: SliceId, bandwidth: Bandwidth) -> Result<TxReport, EngineError> {
        self.execute(Operation::Resize { slice_id, bandwidth })
    }

    pub fn release(&mut self, slice_id: SliceId) -> Result<TxReport, EngineError> {
        self.execute(Operation::Release { slice_id })
    }

    fn phase_of(&self, txid: &str) -> Result<Option<Phase>, EngineError> {
        Ok(self.repo.get_json::<PhaseRecord>(&phase_key(txid))?.map(|r| r.phase))
    }

    pub fn transaction_status(&self, txid: &str) -> Result<TxStatus, EngineError> {
        let request: TxRequest = self
            .repo
            .get_json(&request_key(txid))?
            .ok_or_else(|| EngineError::UnknownTx(txid.to_owned()))?;
        let rec: Option<PhaseRecord> = self.repo.get_json(&phase_key(txid))?;
        let mut per_domain = BTreeMap::new();
        if let Some(rec) = &rec {
            for d in &rec.involved {
                let st = self
                    .repo
                    .get_json::<DomainRecord>(&domain_key(txid, *d))?
                    .map_or(DomainState::Waiting, |r| r.state);
                per_domain.insert(*d, st);
            }
        }
        Ok(TxStatus {
            txid: txid.to_owned(),
            request,
            phase: rec.as_ref().map(|r| r.phase),
            coordinator: rec.as_ref().map(|r| r.coordinator),
            per_domain,
            slice_id: rec.as_ref().and_then(|r| r.slice_id.clone()),
            reason: rec.as_ref().and_then(|r| r.reason.clone()),
            notice: rec.as_ref().and_then(|r| r.notice.clone()),
            deadline_tick: rec.as_ref().map(|r| r.deadline_tick),
        })
    }

    /// Every txid in submission order.
    pub fn transactions(&self) -> Vec<String> {
        let mut ids: Vec<(u64, String)> = self
            .repo
            .scan_prefix(TX_PREFIX)
            .filter_map(|r| parse_tx_key(&r.key))
            .filter(|(_, rest)| *rest == "request")
            .filter_map(|(id, _)| tx_ordinal(id).map(|o| (o, id.to_owned())))
            .collect();
        ids.sort();
        ids.into_iter().map(|(_, id)| id).collect()
    }

    // -- scheduling ---------------------------------------------------------

    fn order(&mut self) -> Vec<DomainId> {
        let mut ds: Vec<DomainId> = self.orchestrators.keys().copied().collect();
        if self.config.scheduler == SchedulerKind::Seeded {
            ds.shuffle(&mut self.scheduler_rng);
        }
        ds
    }

    /// One scheduler round: every orchestrator steps once, then the engine
    /// processes its own watch. One step is one clock tick.
    pub fn round(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        let mut events = Vec::new();
        for d in self.order() {
            self.repo.advance_clock();
            let o = self.orchestrators.get_mut(&d).expect("scheduled domain exists");
            for action in o.step(&mut self.repo)? {
                events.push(EngineEvent::Domain { domain: d, action });
            }
        }
        self.rounds += 1;
        events.extend(self.observe()?);
        Ok(events)
    }

    /// True when no orchestrator has unread events or open transactions.
    fn idle(&self) -> bool {
        self.orchestrators.values().all(|o| o.in_flight() == 0)
            && self
                .orchestrators
                .values()
                .all(|o| self.repo.pending(o.watch_id()) == 0)
    }

    /// Steps until a round changes nothing and no work is pending.
    pub fn run_until_quiescent(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        let mut all = Vec::new();
        let start = self.rounds;
        loop {
            if self.rounds - start > self.config.max_rounds {
                return Err(EngineError::NotQuiescent(self.config.max_rounds));
            }
            let events = self.round()?;
            let quiet = events.is_empty() && self.idle();
            all.extend(events);
            if quiet {
                return Ok(all);
            }
        }
    }

    fn observe(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        let mut out = Vec::new();
        for ev in self.repo.drain(self.watch)? {
            let Some((_, "phase")) = parse_tx_key(&ev.key) else {
                continue;
            };
            let rec: PhaseRecord = ev.decode()?;
            if rec.phase != Phase::Done {
                continue;
            }
            match &rec.work {
                DomainWork::Deploy { slice_id, .. } => {
                    if let Some(s) = self.slice(slice_id).filter(|s| s.state == SliceState::Active) {
                        if self.nanos.instantiate(&s).is_ok() {
                            out.push(EngineEvent::NanoUp {
                                slice_id: slice_id.clone(),
                            });
                        }
                    }
                }
                DomainWork::Release { slices, .. } => {
                    for s in slices {
                        if self.nanos.destroy(s).is_some() {
                            out.push(EngineEvent::NanoDown { slice_id: s.clone() });
                        }
                    }
                }
                _ => {
                    if let Some(id) = &rec.slice_id {
                        if let (Some(s), Some(n)) = (self.slice(id), self.nanos.get_mut(id)) {
                            n.config = s.spec.clone();
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    // -- faults -------------------------------------------------------------

    fn orch_mut(&mut self, asn: u32) -> Result<&mut DomainOrchestrator, EngineError> {
        self.orchestrators
            .get_mut(&DomainId(asn))
            .ok_or(EngineError::UnknownDomain(DomainId(asn)))
    }

    pub fn inject(&mut self, fault: &Fault) -> Result<(), EngineError> {
        match fault {
            Fault::Refuse { domain, count } => self.orch_mut(*domain)?.refuse_next(*count),
            Fault::RefuseProbability {
                domain: Some(d),
                probability,
            } => self.orch_mut(*d)?.set_refuse_probability(*probability),
            Fault::RefuseProbability {
                domain: None,
                probability,
            } => {
                for o in self.orchestrators.values_mut() {
                    o.set_refuse_probability(*probability);
                }
            }
            Fault::Stall { domain, ticks } => {
                let until = self.repo.now() + ticks;
                self.orch_mut(*domain)?.stall_until(until);
            }
            Fault::DeleteSft { router, slice } => {
                let d = self
                    .topology
                    .router(router)
                    .ok_or_else(|| EngineError::UnknownRouter(router.clone()))?
                    .domain;
                self.orch_mut(d.0)?.sfts_mut().remove(router, slice);
            }
            Fault::CasContention { prefix, count } => self.repo.inject_contention(prefix, *count),
            Fault::CorruptLedger { slice, bandwidth } => {
                let id = slice.clone();
                let mut hit = false;
                for o in self.orchestrators.values_mut() {
                    hit |= o.tree_mut().corrupt_allocation(&id, *bandwidth);
                }
                if !hit {
                    return Err(SliceError::UnknownSlice(id).into());
                }
            }
        }
        Ok(())
    }

    /// Configuration change routed to the slice's home domain.
    pub fn set_latency_bound(&mut self, id: &SliceId, bound: Latency) -> Result<(), EngineError> {
        let home = self
            .orchestrators
            .values_mut()
            .find(|o| o.tree().contains(id))
            .ok_or_else(|| SliceError::UnknownSlice(id.clone()))?;
        home.set_latency_bound(id, bound)?;
        Ok(())
    }

    // -- views --------------------------------------------------------------

    /// The substrate with every link's reservation taken from its owner.
    pub fn topology_view(&self) -> Topology {
        let mut t = self.topology.clone();
        for o in self.orchestrators.values() {
            for l in o.owned_links() {
                t.set_reserved(&l.id, l.reserved()).expect("owner ledger fits capacity");
            }
        }
        t
    }

    /// All slice trees merged.
    pub fn slice_view(&self) -> SliceTree {
        let mut tree = SliceTree::new(self.config.depth_cap);
        for o in self.orchestrators.values() {
            tree.absorb(o.tree());
        }
        tree
    }

    pub fn slice(&self, id: &SliceId) -> Option<Slice> {
        self.orchestrators.values().find_map(|o| o.tree().get(id).cloned())
    }

    /// All forwarding tables merged.
    pub fn sft_view(&self) -> SftTables {
        let mut t = SftTables::new();
        for o in self.orchestrators.values() {
            t.absorb(o.sfts()).expect("routers belong to one domain");
        }
        t
    }

    pub fn reservations(&self) -> BTreeMap<LinkId, Bandwidth> {
        self.topology_view().reservations()
    }

    pub fn walk(&self, id: &SliceId) -> Result<Vec<crate::routing::HopRecord>, EngineError> {
        let s = self.slice(id).ok_or_else(|| SliceError::UnknownSlice(id.clone()))?;
        Ok(walk_sft(&self.topology, &self.sft_view(), id, &s.spec.src_node).map_err(SliceError::from)?)
    }

    /// Cross-domain consistency checks; empty when everything agrees.
    /// Only meaningful at quiescence.
    pub fn audit(&self) -> Vec<String> {
        let tree = self.slice_view();
        let topo = self.topology_view();
        let sfts = self.sft_view();
        let mut v = tree.check_invariants();
        v.extend(link_conservation(&topo, &tree));
        let active: BTreeSet<&SliceId> = tree
            .iter()
            .filter(|s| s.state == SliceState::Active)
            .map(|s| &s.id)
            .collect();
        for s in tree.iter() {
            if s.state != SliceState::Active {
                v.push(format!("slice {}: left in state {} at quiescence", s.id, s.state));
                continue;
            }
            match walk_sft(&topo, &sfts, &s.id, &s.spec.src_node) {
                Ok(h) if h == s.plan.hops => {}
                Ok(_) => v.push(format!("slice {}: forwarding walk diverges from plan", s.id)),
                Err(e) => v.push(format!("slice {}: {e}", s.id)),
            }
        }
        for t in sfts.tables() {
            for id in t.entries.keys() {
                if !active.contains(id) {
                    v.push(format!("router {}: stray entry for slice {id}", t.router));
                }
            }
        }
        for n in self.nanos.iter() {
            if !active.contains(&n.slice_id) {
                v.push(format!("nano {}: slice is not active", n.slice_id));
            }
        }
        for id in &active {
            if self.nanos.get(id).is_none() {
                v.push(format!("slice {id}: active without a nano"));
            }
        }
        for o in self.orchestrators.values() {
            if o.in_flight() == 0 {
                for txid in o.holds().keys() {
                    v.push(format!("domain {}: stray hold for {txid}", o.domain()));
                }
            }
            for a in o.alarms() {
                v.push(format!("domain {}: {a}", o.domain()));
            }
        }
        v
    }

    // -- free-running -------------------------------------------------------

    /// Submits every operation, then lets each orchestrator run on its own
    /// thread until all of them have settled. The repository is the only
    /// shared state.
    pub fn run_free_running(
        &mut self,
        operations: Vec<Operation>,
        timeout: Duration,
    ) -> Result<Vec<TxStatus>, EngineError> {
        let txids = operations
            .into_iter()
            .map(|op| self.submit(op))
            .collect::<Result<Vec<_>, _>>()?;
        let repo = Mutex::new(std::mem::take(&mut self.repo));
        let stop = AtomicBool::new(false);
        let actors: Vec<DomainOrchestrator> = std::mem::take(&mut self.orchestrators).into_values().collect();
        let started = Instant::now();

        let settled = |repo: &KvRepository| {
            txids.iter().all(|id| {
                repo.get_json::<PhaseRecord>(&phase_key(id))
                    .ok()
                    .flatten()
                    .is_some_and(|r| r.phase.is_terminal())
            })
        };

        let (results, timed_out) = std::thread::scope(|s| {
            let handles: Vec<_> = actors
                .into_iter()
                .map(|mut o| {
                    let repo = &repo;
                    let stop = &stop;
                    s.spawn(move || {
                        let mut err = None;
                        while !stop.load(Ordering::Relaxed) {
                            let mut r = repo.lock().expect("repository lock");
                            r.advance_clock();
                            if let Err(e) = o.step(&mut r) {
                                err = Some(e);
                                stop.store(true, Ordering::Relaxed);
                            }
                            drop(r);
                            std::thread::yield_now();
                        }
                        (o, err)
                    })
                })
                .collect();
            let mut timed_out = false;
            while !stop.load(Ordering::Relaxed) {
                if settled(&repo.lock().expect("repository lock")) {
                    break;
                }
                if started.elapsed() > timeout {
                    timed_out = true;
                    break;
                }
                std::thread::sleep(Duration::from_millis(1));
            }
            stop.store(true, Ordering::Relaxed);
            let results: Vec<_> = handles.into_iter().map(|h| h.join().expect("actor panicked")).collect();
            (results, timed_out)
        });

        self.repo = repo.into_inner().expect("repository lock");
        let mut first_err = None;
        for (o, err) in results {
            first_err = first_err.or(err);
            self.orchestrators.insert(o.domain(), o);
        }
        if let Some(e) = first_err {
            return Err(e.into());
        }
        if timed_out {
            return Err(EngineError::Timeout(timeout));
        }
        self.run_until_quiescent()?;
        txids.iter().map(|id| self.transaction_status(id)).collect()
    }

    // -- persistence --------------------------------------------------------

    pub fn export_state(&self) -> EngineState {
        EngineState {
            config: self.config.clone(),
            repo: self.repo.clone(),
            orchestrators: self.orchestrators.values().map(DomainOrchestrator::export).collect(),
            nanos: self.nanos.clone(),
            scheduler_rng: self.scheduler_rng.clone(),
            watch: self.watch,
            rounds: self.rounds,
        }
    }

    pub fn from_state(topology: &Topology, state: EngineState) -> Result<Self, EngineError> {
        let mut orchestrators = BTreeMap::new();
        for st in state.orchestrators {
            let o = DomainOrchestrator::restore(topology, st)?;
            if !topology.has_domain(o.domain()) {
                return Err(EngineError::UnknownDomain(o.domain()));
            }
            orchestrators.insert(o.domain(), o);
        }
        if let Some(d) = topology.domains().find(|d| !orchestrators.contains_key(d)) {
            return Err(EngineError::UnknownDomain(d));
        }
        Ok(Engine {
            topology: topology.pristine(),
            repo: state.repo,
            orchestrators,
            nanos: state.nanos,
            config: state.config,
            scheduler_rng: state.scheduler_rng,
            watch: state.watch,
            rounds: state.rounds,
        })
    }
}
