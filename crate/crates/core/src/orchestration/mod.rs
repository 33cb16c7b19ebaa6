// SPDX-License-Identifier: Apache-2.0

//! Multi-domain deployment as reserve/commit transactions over a shared
//! key-value repository.
//!
//! A request lands under `tx/<txid>/request`. The coordinating domain plans
//! it, reserves its own share and publishes `tx/<txid>/phase`; every other
//! involved domain answers under `tx/<txid>/domain/<asn>`. The coordinator
//! commits once all domains reserved, or aborts on the first refusal or when
//! the deadline passes.

mod engine;
mod kv;
mod messages;
mod orchestrator;

pub use engine::{
    Engine, EngineConfig, EngineError, EngineEvent, EngineState, Fault, SchedulerKind, TxReport, TxStatus,
    DEFAULT_DEADLINE_TICKS,
};
pub use kv::{KvError, KvRecord, KvRepository, SubscriberId, WatchEvent};
pub use messages::*;
pub use orchestrator::{advertise, involved_for, Action, DomainOrchestrator, Hold, LocalState, OrchestrationError};
