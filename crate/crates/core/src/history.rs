//! Concurrent history recording.
//!
//! A history is the ordered log of operation invocation and response
//! events produced by one run, together with the derived event orders:
//! process order (same process, earlier first), operation order (response
//! strictly before a later invocation in time) and program order (the
//! transitive closure of both). Event ids are assigned in recording order,
//! which refines program order and is the total order every consumer uses
//! when the partial orders leave concurrent events unrelated.

use crate::block::{Block, ProcessId};
use crate::blocktree::{Chain, PayloadRule};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EventKind {
    AppendInv { block: Arc<Block> },
    AppendRsp { ack: bool },
    ReadInv,
    ReadRsp { chain: Chain },
}

impl EventKind {
    pub fn is_response(&self) -> bool {
        matches!(self, EventKind::AppendRsp { .. } | EventKind::ReadRsp { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub eid: u64,
    pub process: ProcessId,
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Run configuration captured in the trace header so a trace is
/// self-describing for the checker and for replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub protocol: String,
    pub n: u32,
    pub seed: u64,
    pub delta: u64,
    pub gst: u64,
    pub horizon: u64,
    pub payload_rule: PayloadRule,
    /// Read selection tag: "lowest-id", "longest" or "finalized".
    pub read_selection: String,
    /// Byzantine assignment, behavior tag per process id.
    #[serde(default)]
    pub byzantine: BTreeMap<u32, String>,
}

impl RunMeta {
    pub fn bare(protocol: &str, n: u32, seed: u64, horizon: u64) -> RunMeta {
        RunMeta {
            protocol: protocol.to_string(),
            n,
            seed,
            delta: 1,
            gst: 0,
            horizon,
            payload_rule: PayloadRule::AcceptAll,
            read_selection: "lowest-id".to_string(),
            byzantine: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HistoryError {
    #[error("response on {process} has no open invocation")]
    OrphanResponse { process: ProcessId },
    #[error("invocation on {process} while another operation is open")]
    PendingInvocation { process: ProcessId },
    #[error("response kind does not match the open invocation on {process}")]
    MismatchedResponse { process: ProcessId },
    #[error("response tick {tick} precedes its invocation tick {inv_tick}")]
    ResponseBeforeInvocation { tick: u64, inv_tick: u64 },
    #[error("event tick {tick} is below an earlier tick {prev} on the same process")]
    NonMonotonicTick { tick: u64, prev: u64 },
}

/// An event log with well-formedness enforced at append time: every
/// response closes a matching invocation on the same process and ticks
/// never run backwards within a process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub meta: RunMeta,
    events: Vec<Event>,
    #[serde(skip)]
    open: BTreeMap<ProcessId, (usize, u64)>,
}

impl History {
    pub fn new(meta: RunMeta) -> History {
        History {
            meta,
            events: Vec::new(),
            open: BTreeMap::new(),
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends one event, assigning the next event id.
    pub fn record(
        &mut self,
        process: ProcessId,
        tick: u64,
        kind: EventKind,
    ) -> Result<u64, HistoryError> {
        if kind.is_response() {
            let (inv_idx, inv_tick) = *self
                .open
                .get(&process)
                .ok_or(HistoryError::OrphanResponse { process })?;
            let matches = matches!(
                (&self.events[inv_idx].kind, &kind),
                (EventKind::AppendInv { .. }, EventKind::AppendRsp { .. })
                    | (EventKind::ReadInv, EventKind::ReadRsp { .. })
            );
            if !matches {
                return Err(HistoryError::MismatchedResponse { process });
            }
            if tick < inv_tick {
                return Err(HistoryError::ResponseBeforeInvocation { tick, inv_tick });
            }
            self.open.remove(&process);
        } else {
            if self.open.contains_key(&process) {
                return Err(HistoryError::PendingInvocation { process });
            }
            if let Some(last) = self.events.iter().rev().find(|e| e.process == process) {
                if tick < last.tick {
                    return Err(HistoryError::NonMonotonicTick {
                        tick,
                        prev: last.tick,
                    });
                }
            }
            self.open.insert(process, (self.events.len(), tick));
        }
        let eid = self.events.len() as u64;
        self.events.push(Event {
            eid,
            process,
            tick,
            kind,
        });
        Ok(eid)
    }

    /// Convenience: an invocation/response pair at one tick.
    pub fn record_read(&mut self, process: ProcessId, tick: u64, chain: Chain) {
        self.record(process, tick, EventKind::ReadInv).unwrap();
        self.record(process, tick, EventKind::ReadRsp { chain })
            .unwrap();
    }

    pub fn record_append(&mut self, process: ProcessId, tick: u64, block: Arc<Block>, ack: bool) {
        self.record(process, tick, EventKind::AppendInv { block })
            .unwrap();
        self.record(process, tick, EventKind::AppendRsp { ack })
            .unwrap();
    }

    /// Read responses in program order, refined to the total event-id
    /// order; optionally restricted to one process.
    pub fn reads_in_program_order(&self, process: Option<ProcessId>) -> Vec<(&Event, &Chain)> {
        self.events
            .iter()
            .filter(|e| process.map_or(true, |p| e.process == p))
            .filter_map(|e| match &e.kind {
                EventKind::ReadRsp { chain } => Some((e, chain)),
                _ => None,
            })
            .collect()
    }

    /// Process order: same process, strictly earlier event id.
    pub fn process_order(&self, a: &Event, b: &Event) -> bool {
        a.process == b.process && a.eid < b.eid
    }

    /// Operation order: `a` is a response that occurred strictly before
    /// the invocation `b` in tick time.
    pub fn operation_order(&self, a: &Event, b: &Event) -> bool {
        a.kind.is_response() && !b.kind.is_response() && a.tick < b.tick
    }

    /// Program order: transitive closure of process and operation order.
    /// Breadth-first over event ids; intended for audits on small
    /// histories, not for hot paths.
    pub fn program_order(&self, a: &Event, b: &Event) -> bool {
        let step = |x: &Event, y: &Event| self.process_order(x, y) || self.operation_order(x, y);
        let mut reached = vec![false; self.events.len()];
        let mut frontier = vec![a];
        while let Some(cur) = frontier.pop() {
            for next in &self.events {
                if !reached[next.eid as usize] && step(cur, next) {
                    if next.eid == b.eid {
                        return true;
                    }
                    reached[next.eid as usize] = true;
                    frontier.push(next);
                }
            }
        }
        false
    }

    pub fn max_tick(&self) -> u64 {
        self.events.iter().map(|e| e.tick).max().unwrap_or(0)
    }

    /// The run horizon used for windowed checks: the configured horizon,
    /// or the last event tick when the header carries none.
    pub fn horizon(&self) -> u64 {
        if self.meta.horizon > 0 {
            self.meta.horizon
        } else {
            self.max_tick()
        }
    }

    /// Serializes as JSON lines: a header line with the run config
    /// followed by one event per line. This is the trace-file contract
    /// between the run subcommands and `check`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        for event in &self.events {
            serde_json::to_writer(&mut w, event)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> std::io::Result<History> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "empty trace"))??;
        let meta: RunMeta = serde_json::from_str(&header)?;
        let mut history = History::new(meta);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&line)?;
            history.events.push(event);
        }
        Ok(history)
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    /// A copy of the history with every returned chain transformed,
    /// keeping event ids and ticks. This is how pruning layers derive
    /// their histories from a base run.
    pub fn map_read_chains(&self, f: impl Fn(&Chain) -> Chain) -> History {
        let mut mapped = self.clone();
        for event in &mut mapped.events {
            if let EventKind::ReadRsp { chain } = &mut event.kind {
                *chain = f(chain);
            }
        }
        mapped
    }
}
