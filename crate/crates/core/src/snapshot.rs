// SPDX-License-Identifier: Apache-2.0

//! Versioned JSON snapshots of a whole engine.
//!
//! A snapshot carries the topology, the engine's private state and three
//! redundant views (slice tree, forwarding tables, link reservations). On
//! restore the views are recomputed from the engine state and must match,
//! which catches hand-edited or truncated files. Restoring never mutates
//! anything until every check has passed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::harness::HarnessState;
use crate::orchestration::{Engine, EngineError, EngineState};
use crate::slicing::{SftTables, SliceTree};
use crate::topology::{LinkId, Topology, TopologyDocument, TopologyError};
use crate::units::Bandwidth;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("corrupt snapshot: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("unsupported snapshot format_version {found:?} (expected {FORMAT_VERSION})")]
    Version { found: Option<Value> },
    #[error("snapshot topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("snapshot engine state: {0}")]
    Engine(#[from] EngineError),
    #[error("snapshot {view} view does not match its engine state")]
    Mismatch { view: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotViews {
    pub slices: SliceTree,
    pub sft: SftTables,
    pub reservations: BTreeMap<LinkId, Bandwidth>,
}

impl SnapshotViews {
    pub fn of(engine: &Engine) -> Self {
        SnapshotViews {
            slices: engine.slice_view(),
            sft: engine.sft_view(),
            reservations: engine.reservations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u64,
    pub topology: TopologyDocument,
    pub views: SnapshotViews,
    pub engine: EngineState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harness: Option<HarnessState>,
}

/// A successfully restored snapshot.
#[derive(Debug, Clone)]
pub struct Restored {
    pub topology: Topology,
    pub engine: Engine,
    pub harness: Option<HarnessState>,
}

impl Snapshot {
    pub fn capture(engine: &Engine, harness: Option<&HarnessState>) -> Self {
        Snapshot {
            format_version: FORMAT_VERSION,
            topology: engine.topology_view().pristine().to_document(),
            views: SnapshotViews::of(engine),
            engine: engine.export_state(),
            harness: harness.cloned(),
        }
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("snapshots serialize");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, SnapshotError> {
        let raw: Value = serde_json::from_str(text)?;
        let version = raw.get("format_version");
        if version.and_then(Value::as_u64) != Some(FORMAT_VERSION) {
            return Err(SnapshotError::Version {
                found: version.cloned(),
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Rebuilds the engine and checks it against the stored views.
    pub fn restore(self) -> Result<Restored, SnapshotError> {
        let topology = Topology::from_document(&self.topology)?;
        let engine = Engine::from_state(&topology, self.engine)?;
        let views = SnapshotViews::of(&engine);
        if views.slices != self.views.slices {
            return Err(SnapshotError::Mismatch { view: "slices" });
        }
        if views.sft != self.views.sft {
            return Err(SnapshotError::Mismatch { view: "sft" });
        }
        if views.reservations != self.views.reservations {
            return Err(SnapshotError::Mismatch { view: "reservations" });
        }
        Ok(Restored {
            topology,
            engine,
            harness: self.harness,
        })
    }
}

/// Parses and restores in one go.
pub fn load(text: &str) -> Result<Restored, SnapshotError> {
    Snapshot::parse(text)?.restore()
}
