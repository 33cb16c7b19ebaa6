// SPDX-License-Identifier: Apache-2.0

//! Per-domain orchestrator.
//!
//! Each orchestrator owns the reservations of its links, the forwarding
//! tables of its routers and the slice trees whose root was deployed from
//! it. Everything else it learns from the repository. A call to
//! [`DomainOrchestrator::step`] drains watch events and then advances each
//! tracked transaction by at most one action.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kv::{KvError, KvRepository, SubscriberId};
use super::messages::*;
use crate::routing::{compute_intra_path, RoutePlan};
use crate::slicing::{
    plan_entries, AdmissionDecision, RejectReason, SftTables, SliceError, SliceId, SliceState, SliceTree,
};
use crate::topology::{DomainId, LinkId, NodeId, RouterRole, Topology, TopologyError};
use crate::units::{Bandwidth, Bottleneck, Latency};

const CAS_RETRIES: usize = 3;

#[derive(Debug, Error)]
pub enum OrchestrationError {
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("protocol violation in {txid}: {detail}")]
    ProtocolViolation { txid: String, detail: String },
    #[error("capacity advertisement for domain {0} lost {CAS_RETRIES} CAS races")]
    PublishContention(DomainId),
    #[error("state belongs to domain {found}, expected {expected}")]
    WrongDomain { expected: DomainId, found: DomainId },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Something a step did; used for logging and progress accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Published { epoch: u64 },
    Opened { txid: String, phase: Phase },
    Reserved { txid: String },
    Refused { txid: String, reason: RejectReason },
    Committed { txid: String },
    Aborted { txid: String },
    Decided { txid: String, phase: Phase },
    Finalized { txid: String, phase: Phase },
}

/// Links reserved on behalf of a transaction that has not committed yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hold {
    pub links: Vec<LinkId>,
    pub amount: Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TreeUndo {
    None,
    Remove { slice_id: SliceId },
    Resize { slice_id: SliceId, previous: Bandwidth },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum Role {
    Coordinator {
        request: TxRequest,
        opened: bool,
        undo: TreeUndo,
        lock: Option<SliceId>,
    },
    Participant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Tracked {
    txid: String,
    role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Faults {
    refuse_next: u32,
    refuse_probability: f64,
    rng: ChaCha8Rng,
    stalled_until: u64,
}

/// Serializable part of an orchestrator. The topology is rebuilt from the
/// shared structure plus `reservations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    domain: DomainId,
    reservations: BTreeMap<LinkId, Bandwidth>,
    sfts: SftTables,
    tree: SliceTree,
    holds: BTreeMap<String, Hold>,
    homes: BTreeMap<u32, DomainId>,
    tracked: BTreeMap<u64, Tracked>,
    locks: BTreeSet<SliceId>,
    adverts: BTreeMap<DomainId, CapacityAdvertisement>,
    epoch: u64,
    capacity_dirty: bool,
    faults: Faults,
    watch: SubscriberId,
    deadline_ticks: u64,
    alarms: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DomainOrchestrator {
    topology: Topology,
    st: LocalState,
}

/// Result of preparing a transaction at its coordinator.
struct Prepared {
    work: DomainWork,
    involved: BTreeSet<DomainId>,
    slice_id: Option<SliceId>,
    undo: TreeUndo,
    lock: Option<SliceId>,
    /// Set when nothing has to happen at all.
    notice: Option<String>,
}

impl DomainOrchestrator {
    /// Creates the orchestrator of `domain` and subscribes it to the repository.
    pub fn new(
        domain: DomainId,
        topology: &Topology,
        repo: &mut KvRepository,
        seed: u64,
        deadline_ticks: u64,
        depth_cap: usize,
    ) -> Self {
        let watch = repo.watch("");
        DomainOrchestrator {
            topology: topology.pristine(),
            st: LocalState {
                domain,
                reservations: BTreeMap::new(),
                sfts: SftTables::new(),
                tree: SliceTree::new(depth_cap),
                holds: BTreeMap::new(),
                homes: BTreeMap::new(),
                tracked: BTreeMap::new(),
                locks: BTreeSet::new(),
                adverts: BTreeMap::new(),
                epoch: 0,
                capacity_dirty: true,
                faults: Faults {
                    refuse_next: 0,
                    refuse_probability: 0.0,
                    rng: ChaCha8Rng::seed_from_u64(seed ^ u64::from(domain.0).rotate_left(32)),
                    stalled_until: 0,
                },
                watch,
                deadline_ticks,
                alarms: Vec::new(),
            },
        }
    }

    pub fn domain(&self) -> DomainId {
        self.st.domain
    }

    /// This domain's view of the substrate; only owned links carry
    /// meaningful reservations.
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn sfts(&self) -> &SftTables {
        &self.st.sfts
    }

    /// Slice trees homed at this domain.
    pub fn tree(&self) -> &SliceTree {
        &self.st.tree
    }

    pub fn holds(&self) -> &BTreeMap<String, Hold> {
        &self.st.holds
    }

    pub fn advertisements(&self) -> &BTreeMap<DomainId, CapacityAdvertisement> {
        &self.st.adverts
    }

    pub fn alarms(&self) -> &[String] {
        &self.st.alarms
    }

    pub fn watch_id(&self) -> SubscriberId {
        self.st.watch
    }

    pub fn in_flight(&self) -> usize {
        self.st.tracked.len()
    }

    pub fn is_stalled(&self, now: u64) -> bool {
        now < self.st.faults.stalled_until
    }

    pub fn owned_links(&self) -> impl Iterator<Item = &crate::topology::Link> {
        let d = self.st.domain;
        self.topology.links().filter(move |l| l.owner == d)
    }

    pub fn export(&self) -> LocalState {
        let mut st = self.st.clone();
        st.reservations = self
            .owned_links()
            .filter(|l| !l.reserved().is_zero())
            .map(|l| (l.id.clone(), l.reserved()))
            .collect();
        st
    }

    pub fn restore(topology: &Topology, st: LocalState) -> Result<Self, OrchestrationError> {
        let mut t = topology.pristine();
        for (l, amount) in &st.reservations {
            match t.link(l) {
                Some(link) if link.owner == st.domain => t.set_reserved(l, *amount)?,
                Some(_) => {
                    return Err(OrchestrationError::ProtocolViolation {
                        txid: String::new(),
                        detail: format!("domain {} holds a reservation on foreign link {l}", st.domain),
                    })
                }
                None => return Err(TopologyError::UnknownLink(l.clone()).into()),
            }
        }
        let mut st = st;
        st.reservations.clear();
        Ok(DomainOrchestrator { topology: t, st })
    }

    /// Configuration change on a slice homed here; no resources move.
    pub fn set_latency_bound(&mut self, id: &SliceId, bound: Latency) -> Result<(), SliceError> {
        self.st.tree.set_latency_bound(id, bound)
    }

    // -- fault injection ---------------------------------------------------

    /// Refuses the next `n` refusable reserve requests.
    pub fn refuse_next(&mut self, n: u32) {
        self.st.faults.refuse_next = n;
    }

    pub fn set_refuse_probability(&mut self, p: f64) {
        self.st.faults.refuse_probability = p.clamp(0.0, 1.0);
    }

    /// Makes every step before `tick` a no-op.
    pub fn stall_until(&mut self, tick: u64) {
        self.st.faults.stalled_until = self.st.faults.stalled_until.max(tick);
    }

    #[doc(hidden)]
    pub fn sfts_mut(&mut self) -> &mut SftTables {
        &mut self.st.sfts
    }

    #[doc(hidden)]
    pub fn tree_mut(&mut self) -> &mut SliceTree {
        &mut self.st.tree
    }

    // -- capacity ------------------------------------------------------------

    /// Transit figures between every pair of this domain's border routers.
    pub fn advertisement(&self) -> CapacityAdvertisement {
        advertise(&self.topology, self.st.domain, self.st.epoch)
    }

    /// Publishes the current advertisement under the next epoch.
    pub fn publish_capacity(&mut self, repo: &mut KvRepository) -> Result<CapacityAdvertisement, OrchestrationError> {
        let key = capacity_key(self.st.domain);
        let mut adv = self.advertisement();
        adv.epoch = self.st.epoch + 1;
        for _ in 0..CAS_RETRIES {
            let v = repo.version(&key);
            if repo.cas_json(&key, v, &adv).is_ok() {
                self.st.epoch = adv.epoch;
                self.st.capacity_dirty = false;
                return Ok(adv);
            }
        }
        Err(OrchestrationError::PublishContention(self.st.domain))
    }

    // -- driving ------------------------------------------------------------

    pub fn step(&mut self, repo: &mut KvRepository) -> Result<Vec<Action>, OrchestrationError> {
        if self.is_stalled(repo.now()) {
            return Ok(Vec::new());
        }
        for ev in repo.drain(self.st.watch)? {
            self.observe(&ev.key, &ev)?;
        }
        let mut actions = Vec::new();
        if self.st.capacity_dirty {
            match self.publish_capacity(repo) {
                Ok(a) => actions.push(Action::Published { epoch: a.epoch }),
                Err(OrchestrationError::PublishContention(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let keys: Vec<u64> = self.st.tracked.keys().copied().collect();
        for k in keys {
            if let Some(a) = self.advance(k, repo)? {
                actions.push(a);
            }
        }
        Ok(actions)
    }

    fn observe(&mut self, key: &str, ev: &super::kv::WatchEvent) -> Result<(), OrchestrationError> {
        if let Some(asn) = key.strip_prefix(CAPACITY_PREFIX) {
            if asn.parse::<u32>().is_ok() {
                let adv: CapacityAdvertisement = ev.decode()?;
                self.st.adverts.insert(adv.domain, adv);
            }
            return Ok(());
        }
        let Some((txid, rest)) = parse_tx_key(key) else {
            return Ok(());
        };
        let Some(ord) = tx_ordinal(txid) else {
            return Ok(());
        };
        match rest {
            "request" => {
                let req: TxRequest = ev.decode()?;
                if self.coordinator_for(&req.operation) == self.st.domain {
                    self.st.tracked.insert(
                        ord,
                        Tracked {
                            txid: txid.to_owned(),
                            role: Role::Coordinator {
                                request: req,
                                opened: false,
                                undo: TreeUndo::None,
                                lock: None,
                            },
                        },
                    );
                }
            }
            "phase" => {
                let rec: PhaseRecord = ev.decode()?;
                if rec.phase == Phase::Done {
                    if let DomainWork::Deploy { slice_id, .. } = &rec.work {
                        if slice_id.is_root() {
                            self.st.homes.insert(slice_id.root_ordinal(), rec.coordinator);
                        }
                    }
                }
                if !rec.phase.is_terminal()
                    && rec.coordinator != self.st.domain
                    && rec.involved.contains(&self.st.domain)
                {
                    self.st.tracked.entry(ord).or_insert_with(|| Tracked {
                        txid: txid.to_owned(),
                        role: Role::Participant,
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Domain that coordinates `op`, decided only from state every
    /// orchestrator has observed in the same order.
    fn coordinator_for(&self, op: &Operation) -> DomainId {
        let lowest = self.topology.domains().min().expect("topology has domains");
        let domain_of = |n: &NodeId| self.topology.router(n).map(|r| r.domain);
        match op {
            Operation::Deploy { spec, parent: None } => domain_of(&spec.src_node).unwrap_or(lowest),
            Operation::Deploy { spec, parent: Some(p) } => self
                .st
                .homes
                .get(&p.root_ordinal())
                .copied()
                .or_else(|| domain_of(&spec.src_node))
                .unwrap_or(lowest),
            Operation::Resize { slice_id, .. } | Operation::Release { slice_id } => {
                self.st.homes.get(&slice_id.root_ordinal()).copied().unwrap_or(lowest)
            }
        }
    }

    fn advance(&mut self, key: u64, repo: &mut KvRepository) -> Result<Option<Action>, OrchestrationError> {
        let tracked = self.st.tracked[&key].clone();
        let txid = tracked.txid.clone();
        if let Role::Coordinator {
            opened: false, request, ..
        } = &tracked.role
        {
            return self.open(key, request, repo).map(Some);
        }
        let Some(rec) = repo.get_json::<PhaseRecord>(&phase_key(&txid))? else {
            return Ok(None);
        };
        if rec.phase.is_terminal() {
            self.st.tracked.remove(&key);
            if let Some(h) = self.st.holds.remove(&txid) {
                // should not happen; keep the ledger exact anyway
                self.topology.release_all(&h.links, h.amount)?;
                self.st.capacity_dirty = true;
                self.st.alarms.push(format!("{txid}: hold outlived the transaction"));
            }
            return Ok(None);
        }
        match tracked.role {
            Role::Coordinator { .. } => self.coordinate(key, &txid, rec, repo),
            Role::Participant => self.participate(&txid, &rec, repo),
        }
    }

    fn participate(
        &mut self,
        txid: &str,
        rec: &PhaseRecord,
        repo: &mut KvRepository,
    ) -> Result<Option<Action>, OrchestrationError> {
        let dkey = domain_key(txid, self.st.domain);
        let mine = repo
            .get_json::<DomainRecord>(&dkey)?
            .map_or(DomainState::Waiting, |r| r.state);
        let action = match (rec.phase, mine) {
            (Phase::Reserving, DomainState::Waiting) => match self.reserve_local(txid, &rec.work) {
                Ok(()) => {
                    write_domain(repo, &dkey, DomainState::Reserved, None)?;
                    Action::Reserved { txid: txid.into() }
                }
                Err(reason) => {
                    write_domain(repo, &dkey, DomainState::Refused, Some(reason.clone()))?;
                    Action::Refused {
                        txid: txid.into(),
                        reason,
                    }
                }
            },
            (Phase::Committing, DomainState::Reserved) => {
                if let Err(e) = self.commit_local(txid, &rec.work) {
                    self.st.alarms.push(e.to_string());
                    return Ok(None);
                }
                write_domain(repo, &dkey, DomainState::Committed, None)?;
                Action::Committed { txid: txid.into() }
            }
            (Phase::Aborting, DomainState::Waiting | DomainState::Reserved) => {
                self.abort_local(txid)?;
                write_domain(repo, &dkey, DomainState::Aborted, None)?;
                Action::Aborted { txid: txid.into() }
            }
            _ => return Ok(None),
        };
        Ok(Some(action))
    }

    fn coordinate(
        &mut self,
        key: u64,
        txid: &str,
        mut rec: PhaseRecord,
        repo: &mut KvRepository,
    ) -> Result<Option<Action>, OrchestrationError> {
        let states = collect_states(repo, txid, &rec.involved)?;
        let own_key = domain_key(txid, self.st.domain);
        match rec.phase {
            Phase::Reserving => {
                let refused = states
                    .iter()
                    .find_map(|(_, s, r)| (*s == DomainState::Refused).then(|| r.clone()));
                let late = repo.now() > rec.deadline_tick;
                if refused.is_some() || late {
                    self.abort_local(txid)?;
                    write_domain(repo, &own_key, DomainState::Aborted, None)?;
                    rec.phase = Phase::Aborting;
                    rec.reason = Some(refused.flatten().unwrap_or(RejectReason::Deadline));
                } else if states.iter().all(|(_, s, _)| *s == DomainState::Reserved) {
                    self.commit_local(txid, &rec.work)?;
                    write_domain(repo, &own_key, DomainState::Committed, None)?;
                    self.tree_on_commit(&rec)?;
                    rec.phase = Phase::Committing;
                } else {
                    return Ok(None);
                }
                write_phase(repo, txid, &rec)?;
                Ok(Some(Action::Decided {
                    txid: txid.into(),
                    phase: rec.phase,
                }))
            }
            Phase::Committing => {
                if !states.iter().all(|(_, s, _)| *s == DomainState::Committed) {
                    return Ok(None);
                }
                self.tree_on_done(&rec)?;
                self.unlock(key);
                rec.phase = Phase::Done;
                write_phase(repo, txid, &rec)?;
                Ok(Some(Action::Finalized {
                    txid: txid.into(),
                    phase: Phase::Done,
                }))
            }
            Phase::Aborting => {
                let settled = states
                    .iter()
                    .all(|(_, s, _)| matches!(s, DomainState::Aborted | DomainState::Refused));
                if !settled {
                    return Ok(None);
                }
                self.undo(key)?;
                rec.phase = Phase::Failed;
                write_phase(repo, txid, &rec)?;
                Ok(Some(Action::Finalized {
                    txid: txid.into(),
                    phase: Phase::Failed,
                }))
            }
            Phase::Done | Phase::Failed => Ok(None),
        }
    }

    fn open(&mut self, key: u64, request: &TxRequest, repo: &mut KvRepository) -> Result<Action, OrchestrationError> {
        let txid = request.txid.clone();
        let own_key = domain_key(&txid, self.st.domain);
        let deadline_tick = repo.now() + self.st.deadline_ticks;
        let prepared = self.prepare(&request.operation, repo);
        let (phase, rec) = match prepared {
            Err(reason) => {
                write_domain(repo, &own_key, DomainState::Refused, Some(reason.clone()))?;
                let rec = PhaseRecord {
                    phase: Phase::Failed,
                    coordinator: self.st.domain,
                    involved: vec![self.st.domain],
                    deadline_tick,
                    slice_id: None,
                    work: DomainWork::Noop,
                    reason: Some(reason),
                    notice: None,
                };
                (Phase::Failed, rec)
            }
            Ok(p) => {
                let mut rec = PhaseRecord {
                    phase: Phase::Reserving,
                    coordinator: self.st.domain,
                    involved: p.involved.iter().copied().collect(),
                    deadline_tick,
                    slice_id: p.slice_id.clone(),
                    work: p.work.clone(),
                    reason: None,
                    notice: p.notice.clone(),
                };
                if let Some(Tracked {
                    role: Role::Coordinator { undo, lock, opened, .. },
                    ..
                }) = self.st.tracked.get_mut(&key)
                {
                    *undo = p.undo;
                    *lock = p.lock.clone();
                    *opened = true;
                }
                if let Some(l) = p.lock {
                    self.st.locks.insert(l);
                }
                if p.notice.is_some() {
                    write_domain(repo, &own_key, DomainState::Committed, None)?;
                    rec.phase = Phase::Done;
                } else {
                    match self.reserve_local(&txid, &p.work) {
                        Ok(()) => write_domain(repo, &own_key, DomainState::Reserved, None)?,
                        Err(reason) => {
                            self.undo(key)?;
                            write_domain(repo, &own_key, DomainState::Refused, Some(reason.clone()))?;
                            rec.phase = Phase::Failed;
                            rec.reason = Some(reason);
                        }
                    }
                }
                (rec.phase, rec)
            }
        };
        if let Some(Tracked {
            role: Role::Coordinator { opened, .. },
            ..
        }) = self.st.tracked.get_mut(&key)
        {
            *opened = true;
        }
        if phase.is_terminal() {
            self.st.tracked.remove(&key);
        }
        write_phase(repo, &txid, &rec)?;
        Ok(Action::Opened { txid, phase })
    }

    fn prepare(&mut self, op: &Operation, repo: &mut KvRepository) -> Result<Prepared, RejectReason> {
        let me = self.st.domain;
        match op {
            Operation::Deploy { spec, parent: None } => {
                let plan = match self.st.tree.admit(&self.topology, spec, None) {
                    AdmissionDecision::Accepted { plan, .. } => plan,
                    AdmissionDecision::Rejected(r) => return Err(r),
                };
                self.check_advertisements(&plan, spec.bandwidth)?;
                let ordinal = allocate_root_ordinal(repo)?;
                let id = self
                    .st
                    .tree
                    .record(spec.clone(), plan.clone(), None, Some(ordinal))
                    .map_err(reject_of)?;
                let mut involved = involved_for(&self.topology, &plan);
                involved.insert(me);
                Ok(Prepared {
                    work: DomainWork::Deploy {
                        slice_id: id.clone(),
                        plan,
                        reserve: Some(spec.bandwidth),
                    },
                    involved,
                    slice_id: Some(id.clone()),
                    undo: TreeUndo::Remove { slice_id: id },
                    lock: None,
                    notice: None,
                })
            }
            Operation::Deploy {
                spec,
                parent: Some(parent),
            } => {
                if !self.st.tree.contains(parent) {
                    return Err(RejectReason::UnknownParent { parent: parent.clone() });
                }
                if self.conflicts(parent, false) {
                    return Err(RejectReason::Busy { slice: parent.clone() });
                }
                let plan = match self.st.tree.admit(&self.topology, spec, Some(parent)) {
                    AdmissionDecision::Accepted { plan, .. } => plan,
                    AdmissionDecision::Rejected(r) => return Err(r),
                };
                let id = self
                    .st
                    .tree
                    .record(spec.clone(), plan.clone(), Some(parent), None)
                    .map_err(reject_of)?;
                let mut involved = node_domains(&self.topology, &plan);
                involved.insert(me);
                Ok(Prepared {
                    work: DomainWork::Deploy {
                        slice_id: id.clone(),
                        plan,
                        reserve: None,
                    },
                    involved,
                    slice_id: Some(id.clone()),
                    undo: TreeUndo::Remove { slice_id: id },
                    lock: None,
                    notice: None,
                })
            }
            Operation::Resize { slice_id, bandwidth } => {
                if !self.st.tree.contains(slice_id) {
                    return Err(RejectReason::UnknownSlice {
                        slice: slice_id.clone(),
                    });
                }
                if self.conflicts(slice_id, false) {
                    return Err(RejectReason::Busy {
                        slice: slice_id.clone(),
                    });
                }
                let effect = self.st.tree.check_resize(slice_id, *bandwidth)?;
                self.st.tree.apply_resize(slice_id, *bandwidth).map_err(reject_of)?;
                let mut involved = BTreeSet::from([me]);
                let work = match &effect.root_links {
                    Some(links) if !effect.delta().is_zero() => {
                        involved.extend(links.iter().filter_map(|l| self.topology.link(l).map(|l| l.owner)));
                        if effect.grows() {
                            DomainWork::Grow {
                                links: links.clone(),
                                amount: effect.delta(),
                            }
                        } else {
                            DomainWork::Shrink {
                                links: links.clone(),
                                amount: effect.delta(),
                            }
                        }
                    }
                    _ => DomainWork::Noop,
                };
                Ok(Prepared {
                    work,
                    involved,
                    slice_id: Some(slice_id.clone()),
                    undo: TreeUndo::Resize {
                        slice_id: slice_id.clone(),
                        previous: effect.previous,
                    },
                    lock: Some(slice_id.clone()),
                    notice: None,
                })
            }
            Operation::Release { slice_id } => {
                let Some(s) = self.st.tree.get(slice_id) else {
                    return Ok(Prepared {
                        work: DomainWork::Noop,
                        involved: BTreeSet::from([me]),
                        slice_id: Some(slice_id.clone()),
                        undo: TreeUndo::None,
                        lock: None,
                        notice: Some(format!("slice {slice_id} does not exist")),
                    });
                };
                if self.conflicts(slice_id, true) {
                    return Err(RejectReason::Busy {
                        slice: slice_id.clone(),
                    });
                }
                let (links, amount) = if s.parent.is_none() {
                    (s.plan.link_ids(), s.allocated)
                } else {
                    (Vec::new(), Bandwidth::ZERO)
                };
                let mut involved = involved_for(&self.topology, &s.plan);
                involved.insert(me);
                Ok(Prepared {
                    work: DomainWork::Release {
                        links,
                        amount,
                        slices: self.st.tree.subtree(slice_id),
                    },
                    involved,
                    slice_id: Some(slice_id.clone()),
                    undo: TreeUndo::None,
                    lock: Some(slice_id.clone()),
                    notice: None,
                })
            }
        }
    }

    /// Whether an operation on `id` would race an in-flight resize or release.
    fn conflicts(&self, id: &SliceId, release: bool) -> bool {
        let locked = self
            .st
            .locks
            .iter()
            .any(|l| l == id || l.is_ancestor_of(id) || (release && id.is_ancestor_of(l)));
        let pending_below = release
            && self
                .st
                .tree
                .subtree(id)
                .iter()
                .any(|s| self.st.tree.get(s).is_some_and(|s| s.state != SliceState::Active));
        locked || pending_below
    }

    /// Rejects a root deployment early when a transit domain advertises
    /// less than the requested bandwidth.
    fn check_advertisements(&self, plan: &RoutePlan, amount: Bandwidth) -> Result<(), RejectReason> {
        let path = plan.as_path.domains();
        if path.len() < 3 {
            return Ok(());
        }
        for d in &path[1..path.len() - 1] {
            let has_hops = plan
                .hops
                .iter()
                .any(|h| h.domain_of_link == crate::routing::HopDomain::Intra(*d));
            if !has_hops || *d == self.st.domain {
                continue;
            }
            if let Some(adv) = self.st.adverts.get(d) {
                if let Bottleneck::Limited(b) = adv.max_transit_bandwidth_mbps {
                    if b < amount {
                        return Err(RejectReason::CapacityAdvertisement {
                            domain: *d,
                            advertised_mbps: b,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn own_subset(&self, links: &[LinkId]) -> Vec<LinkId> {
        links
            .iter()
            .filter(|l| self.topology.link(l).is_some_and(|l| l.owner == self.st.domain))
            .cloned()
            .collect()
    }

    /// Reserve step of a participant. Refusal leaves no local change.
    pub fn reserve_local(&mut self, txid: &str, work: &DomainWork) -> Result<(), RejectReason> {
        if work.refusable() {
            let f = &mut self.st.faults;
            if f.refuse_next > 0 {
                f.refuse_next -= 1;
                return Err(RejectReason::Refused { domain: self.st.domain });
            }
            if f.refuse_probability > 0.0 && f.rng.gen_bool(f.refuse_probability) {
                return Err(RejectReason::Refused { domain: self.st.domain });
            }
        }
        let (links, amount) = match work {
            DomainWork::Deploy {
                plan,
                reserve: Some(amount),
                ..
            } => (self.own_subset(&plan.link_ids()), *amount),
            DomainWork::Grow { links, amount } => (self.own_subset(links), *amount),
            _ => return Ok(()),
        };
        if links.is_empty() {
            return Ok(());
        }
        self.topology.reserve_all(&links, amount).map_err(|e| match e {
            TopologyError::InsufficientCapacity {
                link,
                requested,
                residual,
            } => RejectReason::LinkCapacity {
                link,
                residual_mbps: residual,
                requested_mbps: requested,
            },
            other => RejectReason::InvalidSpec {
                detail: other.to_string(),
            },
        })?;
        self.st.holds.insert(txid.to_owned(), Hold { links, amount });
        self.st.capacity_dirty = true;
        Ok(())
    }

    /// Commit step: turns holds into allocations and programs this domain's
    /// routers.
    pub fn commit_local(&mut self, txid: &str, work: &DomainWork) -> Result<(), OrchestrationError> {
        let violation = |detail: &str| OrchestrationError::ProtocolViolation {
            txid: txid.to_owned(),
            detail: detail.to_owned(),
        };
        match work {
            DomainWork::Deploy {
                slice_id,
                plan,
                reserve,
            } => {
                let needs_hold = reserve.is_some() && !self.own_subset(&plan.link_ids()).is_empty();
                if needs_hold && !self.st.holds.contains_key(txid) {
                    return Err(violation("commit without a hold"));
                }
                let entries: Vec<_> = plan_entries(&self.topology, slice_id, plan)
                    .map_err(|e| violation(&e.to_string()))?
                    .into_iter()
                    .filter(|(r, _)| self.topology.router(r).is_some_and(|r| r.domain == self.st.domain))
                    .collect();
                if entries.iter().any(|(r, _)| self.st.sfts.entry(r, slice_id).is_some()) {
                    return Err(violation("duplicate forwarding entry"));
                }
                for (r, e) in entries {
                    self.st.sfts.install(&r, e).expect("checked for duplicates");
                }
                self.st.holds.remove(txid);
            }
            DomainWork::Grow { links, .. } => {
                if !self.own_subset(links).is_empty() && self.st.holds.remove(txid).is_none() {
                    return Err(violation("commit without a hold"));
                }
            }
            DomainWork::Shrink { links, amount } => {
                let own = self.own_subset(links);
                if !own.is_empty() {
                    self.topology.release_all(&own, *amount)?;
                    self.st.capacity_dirty = true;
                }
            }
            DomainWork::Release { links, amount, slices } => {
                for s in slices {
                    self.st.sfts.remove_slice(s);
                }
                let own = self.own_subset(links);
                if !own.is_empty() && !amount.is_zero() {
                    self.topology.release_all(&own, *amount)?;
                    self.st.capacity_dirty = true;
                }
            }
            DomainWork::Noop => {}
        }
        Ok(())
    }

    /// Returns whatever `txid` holds. Calling it again does nothing.
    pub fn abort_local(&mut self, txid: &str) -> Result<(), OrchestrationError> {
        if let Some(h) = self.st.holds.remove(txid) {
            self.topology.release_all(&h.links, h.amount)?;
            self.st.capacity_dirty = true;
        }
        Ok(())
    }

    fn tree_on_commit(&mut self, rec: &PhaseRecord) -> Result<(), OrchestrationError> {
        match &rec.work {
            DomainWork::Deploy { slice_id, .. } => self.set_tree_state(slice_id, SliceState::Reserved),
            DomainWork::Release { slices, .. } => {
                for s in slices {
                    self.set_tree_state(s, SliceState::Deleting)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn tree_on_done(&mut self, rec: &PhaseRecord) -> Result<(), OrchestrationError> {
        match (&rec.work, &rec.slice_id) {
            (DomainWork::Deploy { slice_id, .. }, _) => self.set_tree_state(slice_id, SliceState::Active),
            (DomainWork::Release { .. }, Some(id)) => {
                self.st.tree.remove_subtree(id);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn set_tree_state(&mut self, id: &SliceId, to: SliceState) -> Result<(), OrchestrationError> {
        self.st
            .tree
            .set_state(id, to)
            .map_err(|e| OrchestrationError::ProtocolViolation {
                txid: String::new(),
                detail: e.to_string(),
            })
    }

    fn unlock(&mut self, key: u64) {
        if let Some(Tracked {
            role: Role::Coordinator { lock, .. },
            ..
        }) = self.st.tracked.get_mut(&key)
        {
            if let Some(l) = lock.take() {
                self.st.locks.remove(&l);
            }
        }
    }

    fn undo(&mut self, key: u64) -> Result<(), OrchestrationError> {
        self.unlock(key);
        let Some(Tracked {
            role: Role::Coordinator { undo, .. },
            ..
        }) = self.st.tracked.get_mut(&key)
        else {
            return Ok(());
        };
        match std::mem::replace(undo, TreeUndo::None) {
            TreeUndo::None => {}
            TreeUndo::Remove { slice_id } => {
                self.st.tree.remove_subtree(&slice_id);
            }
            TreeUndo::Resize { slice_id, previous } => {
                self.st
                    .tree
                    .apply_resize(&slice_id, previous)
                    .map_err(|e| OrchestrationError::ProtocolViolation {
                        txid: String::new(),
                        detail: e.to_string(),
                    })?;
            }
        }
        Ok(())
    }
}

fn reject_of(e: SliceError) -> RejectReason {
    match e {
        SliceError::Rejected(r) => r,
        other => RejectReason::InvalidSpec {
            detail: other.to_string(),
        },
    }
}

/// Domains owning a plan link or hosting a plan router.
pub fn involved_for(t: &Topology, plan: &RoutePlan) -> BTreeSet<DomainId> {
    let mut s = node_domains(t, plan);
    s.extend(plan.hops.iter().filter_map(|h| t.link(&h.link_id).map(|l| l.owner)));
    s
}

fn node_domains(t: &Topology, plan: &RoutePlan) -> BTreeSet<DomainId> {
    plan.nodes()
        .iter()
        .filter_map(|n| t.router(n).map(|r| r.domain))
        .collect()
}

fn allocate_root_ordinal(repo: &mut KvRepository) -> Result<u32, RejectReason> {
    for _ in 0..CAS_RETRIES {
        let v = repo.version(ROOT_COUNTER_KEY);
        let next: u32 = repo.get_json(ROOT_COUNTER_KEY).ok().flatten().unwrap_or(1);
        if repo.cas_json(ROOT_COUNTER_KEY, v, &(next + 1)).is_ok() {
            return Ok(next);
        }
    }
    Err(RejectReason::KvContention {
        key: ROOT_COUNTER_KEY.into(),
    })
}

type StateRow = (DomainId, DomainState, Option<RejectReason>);

fn collect_states(repo: &KvRepository, txid: &str, involved: &[DomainId]) -> Result<Vec<StateRow>, KvError> {
    involved
        .iter()
        .map(|d| {
            let r = repo.get_json::<DomainRecord>(&domain_key(txid, *d))?;
            Ok(match r {
                Some(r) => (*d, r.state, r.reason),
                None => (*d, DomainState::Waiting, None),
            })
        })
        .collect()
}

fn write_domain(
    repo: &mut KvRepository,
    key: &str,
    state: DomainState,
    reason: Option<RejectReason>,
) -> Result<(), KvError> {
    let v = repo.version(key);
    repo.cas_json(key, v, &DomainRecord { state, reason })?;
    Ok(())
}

fn write_phase(repo: &mut KvRepository, txid: &str, rec: &PhaseRecord) -> Result<(), KvError> {
    let key = phase_key(txid);
    let v = repo.version(&key);
    repo.cas_json(&key, v, rec)?;
    Ok(())
}

/// Transit figures of `domain` as seen in `t`.
pub fn advertise(t: &Topology, domain: DomainId, epoch: u64) -> CapacityAdvertisement {
    let borders: Vec<NodeId> = t
        .domain_routers(domain)
        .filter(|r| r.role == RouterRole::Border)
        .map(|r| r.id.clone())
        .collect();
    let mut best = Bottleneck::Unconstrained;
    let mut min_latency: Option<Latency> = None;
    let mut any_pair = false;
    for (i, a) in borders.iter().enumerate() {
        for b in &borders[i + 1..] {
            let Ok((nodes, lat)) = compute_intra_path(t, domain, a, b) else {
                continue;
            };
            let mut bn = Bottleneck::Unconstrained;
            for w in nodes.windows(2) {
                if let Some(l) = t.canonical_intra_link(&w[0], &w[1]) {
                    bn = bn.with(l.residual());
                }
            }
            best = if any_pair {
                match (best, bn) {
                    (Bottleneck::Limited(x), Bottleneck::Limited(y)) => Bottleneck::Limited(x.max(y)),
                    _ => Bottleneck::Unconstrained,
                }
            } else {
                bn
            };
            any_pair = true;
            min_latency = Some(min_latency.map_or(lat, |m| m.min(lat)));
        }
    }
    CapacityAdvertisement {
        domain,
        max_transit_bandwidth_mbps: best,
        min_transit_latency_ms: min_latency.unwrap_or(Latency::ZERO),
        border_count: borders.len(),
        epoch,
    }
}
