// SPDX-License-Identifier: Apache-2.0

//! Command-line front end.
//!
//! Every invocation loads an engine (from `--state` when the file exists,
//! otherwise fresh from `--topology`), runs one command and, for mutating
//! commands, writes the engine back to `--state`.
//!
//! Exit codes: 0 ok, 1 rejected by a domain, 2 bad input, 3 violations found.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{isolation_report, HarnessError, HarnessState, SimulationScript, Simulator};
use crate::orchestration::{Engine, EngineConfig, EngineError, Operation, Phase, TxStatus};
use crate::slicing::{domains_of, OutLink, SliceId, SliceSpec};
use crate::snapshot::{self, Snapshot, SnapshotError};
use crate::topology::{load_topology, NodeId, TopologyError};
use crate::units::{Bandwidth, Latency};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "recslice", version, about = "Recursive multi-domain network slicing")]
pub struct Cli {
    /// Topology file used when no saved state exists.
    #[arg(long, global = true)]
    pub topology: Option<PathBuf>,
    /// Seed for a new engine.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Snapshot file to load from and save to.
    #[arg(long, global = true)]
    pub state: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deploy a slice described by a request file.
    Deploy {
        file: PathBuf,
        /// Print the txid and return without running the transaction.
        #[arg(long)]
        no_wait: bool,
    },
    /// Deploy a child slice inside PARENT.
    Subslice { parent: SliceId, file: PathBuf },
    /// Change a slice's bandwidth.
    Resize {
        slice: SliceId,
        #[arg(value_parser = parse_mbps)]
        mbps: Bandwidth,
    },
    /// Release a slice and everything below it.
    Delete { slice: SliceId },
    /// Print part of the current state.
    Show {
        #[command(subcommand)]
        what: ShowCommand,
    },
    /// Run a simulation script.
    Run {
        script: PathBuf,
        /// Event log destination (default: the script path with `.log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Stop after this tick; a later `run` of the same script resumes.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Write the current state to FILE.
    Snapshot { file: PathBuf },
    /// Validate FILE and make it the saved state.
    Restore { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ShowCommand {
    Slices,
    Sft { router: String },
    Capacity,
    Tx { txid: String },
}

fn parse_mbps(s: &str) -> Result<Bandwidth, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    Bandwidth::from_mbps(v).map_err(|e| e.to_string())
}

/// Request file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceRequestDocument {
    pub src_node: NodeId,
    pub dst_node: NodeId,
    pub bandwidth_mbps: Bandwidth,
    pub latency_bound_ms: Latency,
    pub owner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_slice: Option<SliceId>,
}

impl SliceRequestDocument {
    pub fn into_parts(self) -> (SliceSpec, Option<SliceId>) {
        let spec = SliceSpec {
            src_node: self.src_node,
            dst_node: self.dst_node,
            bandwidth: self.bandwidth_mbps,
            latency_bound: self.latency_bound_ms,
            owner: self.owner,
        };
        (spec, self.parent_slice)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Script(#[from] HarnessError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Writes through a sibling temp file so readers never see half a file.
fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let io_err = |source| CliError::Io {
        path: path.to_owned(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

struct Session {
    engine: Engine,
    harness: Option<HarnessState>,
}

fn load_session(cli: &Cli) -> Result<Session, CliError> {
    if let Some(path) = cli.state.as_deref().filter(|p| p.exists()) {
        let restored = snapshot::load(&read(path)?)?;
        if let Some(t) = &cli.topology {
            let given = load_topology(&read(t)?)?;
            if given.to_document() != restored.topology.to_document() {
                return Err(CliError::Input(format!(
                    "{} differs from the topology saved in {}",
                    t.display(),
                    path.display()
                )));
            }
        }
        if let Some(seed) = cli.seed.filter(|s| *s != restored.engine.config().seed) {
            return Err(CliError::Input(format!(
                "--seed {seed} conflicts with seed {} saved in {}",
                restored.engine.config().seed,
                path.display()
            )));
        }
        return Ok(Session {
            engine: restored.engine,
            harness: restored.harness,
        });
    }
    let Some(t) = &cli.topology else {
        return Err(CliError::Input(
            "no --topology given and no --state file to load".into(),
        ));
    };
    let topology = load_topology(&read(t)?)?;
    let mut engine = Engine::new(&topology, EngineConfig::seeded(cli.seed.unwrap_or(0)));
    engine.run_until_quiescent()?;
    Ok(Session { engine, harness: None })
}

fn save_session(cli: &Cli, s: &Session) -> Result<(), CliError> {
    match &cli.state {
        Some(p) => write_atomic(p, &Snapshot::capture(&s.engine, s.harness.as_ref()).to_json()),
        None => Ok(()),
    }
}

fn load_request(path: &Path) -> Result<SliceRequestDocument, CliError> {
    serde_json::from_str(&read(path)?).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Parses arguments from the process and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    run(&cli, out, err)
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut text = String::new();
    let result = execute(cli, &mut text);
    let _ = out.write_all(text.as_bytes());
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn execute(cli: &Cli, out: &mut String) -> Result<i32, CliError> {
    if let Command::Restore { file } = &cli.command {
        let Some(state) = &cli.state else {
            return Err(CliError::Input("restore needs --state to write to".into()));
        };
        let text = read(file)?;
        let restored = snapshot::load(&text)?;
        let _ = writeln!(
            out,
            "restored {} slices from {}",
            restored.engine.slice_view().len(),
            file.display()
        );
        write_atomic(
            state,
            &Snapshot::capture(&restored.engine, restored.harness.as_ref()).to_json(),
        )?;
        return Ok(EXIT_OK);
    }

    let mut s = load_session(cli)?;
    let code = match &cli.command {
        Command::Deploy { file, no_wait } => {
            let (spec, parent) = load_request(file)?.into_parts();
            let op = Operation::Deploy { spec, parent };
            if *no_wait {
                let txid = s.engine.submit(op).map_err(invalid)?;
                let _ = writeln!(out, "txid: {txid}");
                EXIT_OK
            } else {
                transact(&mut s.engine, op, out)?
            }
        }
        Command::Subslice { parent, file } => {
            let (spec, p) = load_request(file)?.into_parts();
            if p.as_ref().is_some_and(|p| p != parent) {
                return Err(CliError::Input(format!(
                    "{}: parent_slice disagrees with the command line parent {parent}",
                    file.display()
                )));
            }
            let op = Operation::Deploy {
                spec,
                parent: Some(parent.clone()),
            };
            transact(&mut s.engine, op, out)?
        }
        Command::Resize { slice, mbps } => {
            let op = Operation::Resize {
                slice_id: slice.clone(),
                bandwidth: *mbps,
            };
            transact(&mut s.engine, op, out)?
        }
        Command::Delete { slice } => {
            let op = Operation::Release {
                slice_id: slice.clone(),
            };
            transact(&mut s.engine, op, out)?
        }
        Command::Show { what } => {
            show(&s.engine, what, out)?;
            return Ok(EXIT_OK);
        }
        Command::Run { script, log, until } => run_script(cli, &mut s, script, log.as_deref(), *until, out)?,
        Command::Snapshot { file } => {
            write_atomic(file, &Snapshot::capture(&s.engine, s.harness.as_ref()).to_json())?;
            let _ = writeln!(out, "snapshot written to {}", file.display());
            return Ok(EXIT_OK);
        }
        Command::Restore { .. } => unreachable!("handled above"),
    };
    save_session(cli, &s)?;
    Ok(code)
}

fn invalid(e: EngineError) -> CliError {
    match e {
        EngineError::InvalidRequest(r) => CliError::Input(r.to_string()),
        other => other.into(),
    }
}

fn transact(engine: &mut Engine, op: Operation, out: &mut String) -> Result<i32, CliError> {
    let report = engine.execute(op).map_err(invalid)?;
    render_tx(&report.status, out);
    Ok(match report.status.phase {
        Some(Phase::Done) => EXIT_OK,
        _ => EXIT_REJECTED,
    })
}

fn render_tx(st: &TxStatus, out: &mut String) {
    let _ = writeln!(out, "txid: {}", st.txid);
    let _ = writeln!(out, "op: {}", st.request.operation.kind());
    match st.phase {
        Some(p) => {
            let _ = writeln!(out, "phase: {p}");
        }
        None => {
            let _ = writeln!(out, "phase: pending");
        }
    }
    if let Some(c) = st.coordinator {
        let _ = writeln!(out, "coordinator: {c}");
    }
    for (d, state) in &st.per_domain {
        let _ = writeln!(out, "domain {d}: {state}");
    }
    if let Some(id) = &st.slice_id {
        let _ = writeln!(out, "slice: {id}");
    }
    if let Some(r) = &st.reason {
        let _ = writeln!(out, "reason: {}", r.code());
        let _ = writeln!(out, "detail: {r}");
    }
    if let Some(n) = &st.notice {
        let _ = writeln!(out, "notice: {n}");
    }
}

fn show(engine: &Engine, what: &ShowCommand, out: &mut String) -> Result<(), CliError> {
    match what {
        ShowCommand::Slices => {
            let tree = engine.slice_view();
            let topo = engine.topology_view();
            let _ = writeln!(
                out,
                "id\tparent\tstate\towner\tsrc\tdst\tallocated_mbps\theadroom_mbps\tlatency_ms\tbound_ms\tdomains"
            );
            for s in tree.iter() {
                let parent = s.parent.as_ref().map_or("-".to_owned(), SliceId::to_string);
                let domains: Vec<String> = domains_of(&topo, &s.plan).iter().map(|d| d.to_string()).collect();
                let _ = writeln!(
                    out,
                    "{}\t{parent}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    s.id,
                    s.state,
                    s.spec.owner,
                    s.spec.src_node,
                    s.spec.dst_node,
                    s.allocated,
                    s.headroom(),
                    s.plan.total_latency,
                    s.spec.latency_bound,
                    domains.join(",")
                );
            }
        }
        ShowCommand::Sft { router } => {
            let id = NodeId::new(router.as_str());
            if engine.topology_view().router(&id).is_none() {
                return Err(CliError::Input(format!("unknown router {router}")));
            }
            let _ = writeln!(out, "slice\tout_link\tremaining_segments");
            let sfts = engine.sft_view();
            for e in sfts.table(&id).into_iter().flat_map(|t| t.entries.values()) {
                let link = match &e.out_link {
                    OutLink::Link(l) => l.to_string(),
                    OutLink::Terminal => "terminal".to_owned(),
                };
                let segs: Vec<String> = e
                    .remaining_segments
                    .iter()
                    .map(|s| {
                        let sids: Vec<String> = s.sids.iter().map(u32::to_string).collect();
                        format!("{}:[{}]", s.domain, sids.join(","))
                    })
                    .collect();
                let _ = writeln!(out, "{}\t{link}\t{}", e.slice_id, segs.join(" "));
            }
        }
        ShowCommand::Capacity => {
            let _ = writeln!(
                out,
                "domain\tmax_transit_bandwidth_mbps\tmin_transit_latency_ms\tborder_count\tepoch"
            );
            for o in engine.orchestrators() {
                let a = o.advertisement();
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    a.domain, a.max_transit_bandwidth_mbps, a.min_transit_latency_ms, a.border_count, a.epoch
                );
            }
        }
        ShowCommand::Tx { txid } => render_tx(&engine.transaction_status(txid)?, out),
    }
    Ok(())
}

fn run_script(
    cli: &Cli,
    s: &mut Session,
    path: &Path,
    log: Option<&Path>,
    until: Option<u64>,
    out: &mut String,
) -> Result<i32, CliError> {
    let mut script = SimulationScript::parse(&read(path)?)?;
    if let Some(seed) = cli.seed {
        script.seed = seed;
    }
    let resuming = s.harness.is_some();
    let mut sim = match s.harness.take() {
        Some(h) => Simulator::resume(s.engine.clone(), h),
        None => Simulator::new(s.engine.clone()),
    };
    let events = sim.run(&script, until)?;
    let report = isolation_report(&events, sim.engine());
    let finished = script.last_tick().is_none_or(|l| until.is_none_or(|u| u >= l));
    let (engine, state) = sim.into_parts();
    s.engine = engine;
    s.harness = (!finished).then_some(state);

    let log_path = log
        .map(Path::to_owned)
        .unwrap_or_else(|| path.with_extension("log.jsonl"));
    let lines = events.to_json_lines();
    if resuming {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|source| CliError::Io {
                path: log_path.clone(),
                source,
            })?;
        f.write_all(lines.as_bytes()).map_err(|source| CliError::Io {
            path: log_path.clone(),
            source,
        })?;
    } else {
        write_atomic(&log_path, &lines)?;
    }

    let tx_done = events.of_kind("tx_done").count();
    let tx_failed = events.of_kind("tx_failed").count();
    let _ = writeln!(out, "log: {}", log_path.display());
    let _ = writeln!(out, "entries: {}", events.entries.len());
    let _ = writeln!(out, "transactions: {tx_done} done, {tx_failed} failed");
    let _ = writeln!(out, "slices: {}", s.engine.slice_view().len());
    let _ = writeln!(out, "violations: {}", report.len());
    for v in &report {
        let _ = writeln!(out, "violation at tick {}: {}", v.tick, v.detail);
    }
    Ok(if report.is_empty() { EXIT_OK } else { EXIT_VIOLATION })
}
