//! Asynchronous appender with lowest-id selection.
//!
//! Append: refresh the view, select a chain with the lowest-id rule, ask
//! the oracle to validate the candidate under the selected tip, apply it
//! on a grant. Read: refresh the view and return the lowest-id selection.
//! Consistency of the resulting histories does not depend on how many
//! processes misbehave: the oracle admits only valid blocks, identity
//! cannot be forged, and the per-creator child filter bounds how much any
//! single process can widen a fork.

use crate::block::{Block, BlockRegistry, ProcessId};
use crate::blocktree::{Chain, ValidityPredicate};
use crate::history::History;
use crate::oracle::{Oracle, OracleError};
use crate::protocol::Behavior;
use crate::sim::{AdversaryPolicy, NetConfig, RunArtifacts, RunStats};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use std::sync::Arc;

/// Picks the view version the scheduler serves: fresh under fifo, bounded
/// staleness after the stabilization tick, anything at or above the
/// process floor before it.
fn draw_version(
    oracle: &Oracle,
    rng: &mut ChaCha12Rng,
    config: &NetConfig,
    pid: ProcessId,
    now: u64,
) -> u64 {
    match config.adversary {
        AdversaryPolicy::Fifo => oracle.current_version(),
        AdversaryPolicy::RandomDelay | AdversaryPolicy::TargetedRace => {
            let lo = if now >= config.gst {
                oracle
                    .version_at_tick(now.saturating_sub(config.delta))
                    .max(oracle.floor(pid))
            } else {
                oracle.floor(pid)
            };
            let hi = oracle.current_version();
            rng.gen_range(lo..=hi)
        }
    }
}

/// One append operation: returns the acknowledged candidate block and ack.
/// On a stale-parent error the view is refreshed once and the append
/// retried; a second failure returns a negative ack.
pub fn ep_append(
    oracle: &mut Oracle,
    registry: &mut BlockRegistry,
    pid: ProcessId,
    payload: Vec<u8>,
    view_version: u64,
    tick: u64,
) -> (Arc<Block>, bool) {
    let snap = oracle.update_view(pid, view_version);
    let selected = snap.tree.select_lowest_id();
    let tip = selected.tip().clone();
    let candidate = Block::child(&tip, pid, 0, payload.clone());
    registry.register(&candidate).expect("id collision");
    match oracle.get_valid_block(pid, tip.id, &candidate) {
        Ok(true) => {
            oracle
                .set_valid_block(pid, tip.id, Arc::clone(&candidate), tick)
                .expect("granted append must apply");
            (candidate, true)
        }
        Ok(false) => (candidate, false),
        Err(OracleError::UnknownParent(_)) => {
            // Stale view; refresh and retry once.
            let snap = oracle.update_view_fresh(pid);
            let tip = snap.tree.select_lowest_id().tip().clone();
            let candidate = Block::child(&tip, pid, 0, payload);
            registry.register(&candidate).expect("id collision");
            match oracle.get_valid_block(pid, tip.id, &candidate) {
                Ok(true) => {
                    oracle
                        .set_valid_block(pid, tip.id, Arc::clone(&candidate), tick)
                        .expect("granted append must apply");
                    (candidate, true)
                }
                _ => (candidate, false),
            }
        }
        Err(e) => panic!("unexpected oracle error: {e}"),
    }
}

/// One read operation: refresh the view, return the lowest-id selection.
pub fn ep_read(oracle: &mut Oracle, pid: ProcessId, view_version: u64) -> Chain {
    let snap = oracle.update_view(pid, view_version);
    snap.tree.select_lowest_id()
}

fn payload_for(pid: ProcessId, seq: u32, marker: Option<u8>) -> Vec<u8> {
    let mut p = Vec::with_capacity(9);
    if let Some(m) = marker {
        p.push(m);
    }
    p.extend_from_slice(&pid.0.to_le_bytes());
    p.extend_from_slice(&seq.to_le_bytes());
    p
}

/// Drives the appender to the horizon under the configured adversary.
pub fn run_ep(
    config: &NetConfig,
    appends_per_process: u32,
    append_every: u64,
    read_every: u64,
) -> RunArtifacts {
    let mut meta = crate::history::RunMeta::bare("ep-async", config.n, config.seed, config.horizon);
    meta.delta = config.delta;
    meta.gst = config.gst;
    meta.payload_rule = config.payload_rule;
    meta.byzantine = config
        .byzantine
        .iter()
        .map(|(p, b)| (*p, format!("{b:?}")))
        .collect();

    let mut history = History::new(meta);
    let mut oracle = Oracle::unbounded(ValidityPredicate {
        payload_rule: config.payload_rule,
    });
    let mut registry = BlockRegistry::new();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut budget: Vec<u32> = vec![appends_per_process; config.n as usize];
    let mut seq: Vec<u32> = vec![0; config.n as usize];

    let append_every = append_every.max(1);
    let read_every = read_every.max(1);

    for tick in 1..=config.horizon {
        for p in 0..config.n {
            let pid = ProcessId(p);
            let behavior = config.behavior_of(pid);
            let append_due =
                (tick + u64::from(p) * 7) % append_every == 0 && budget[p as usize] > 0;
            let read_due = (tick + u64::from(p) * 11) % read_every == 0;

            match behavior {
                None => {
                    if append_due {
                        let version = draw_version(&oracle, &mut rng, config, pid, tick);
                        let payload = payload_for(pid, seq[p as usize], None);
                        seq[p as usize] += 1;
                        budget[p as usize] -= 1;
                        let (block, ack) =
                            ep_append(&mut oracle, &mut registry, pid, payload, version, tick);
                        history.record_append(pid, tick, block, ack);
                    }
                    if read_due {
                        let version = draw_version(&oracle, &mut rng, config, pid, tick);
                        let chain = ep_read(&mut oracle, pid, version);
                        history.record_read(pid, tick, chain);
                    }
                }
                Some(Behavior::Silent) => {}
                Some(Behavior::InvalidPayload) => {
                    if append_due {
                        let version = draw_version(&oracle, &mut rng, config, pid, tick);
                        let payload = payload_for(pid, seq[p as usize], Some(0xFF));
                        seq[p as usize] += 1;
                        budget[p as usize] -= 1;
                        let (block, ack) =
                            ep_append(&mut oracle, &mut registry, pid, payload, version, tick);
                        history.record_append(pid, tick, block, ack);
                    }
                }
                Some(Behavior::DuplicateChild) => {
                    if append_due {
                        let version = draw_version(&oracle, &mut rng, config, pid, tick);
                        let snap = oracle.update_view(pid, version);
                        let tip = snap.tree.select_lowest_id().tip().clone();
                        let duplicate = seq[p as usize] % 4 == 3 && budget[p as usize] >= 2;
                        let copies = if duplicate { 2 } else { 1 };
                        for c in 0..copies {
                            let payload = payload_for(pid, seq[p as usize], Some(0xD0 + c));
                            seq[p as usize] += 1;
                            budget[p as usize] -= 1;
                            let candidate = Block::child(&tip, pid, 0, payload);
                            registry.register(&candidate).expect("id collision");
                            let ack = match oracle.get_valid_block(pid, tip.id, &candidate) {
                                Ok(true) => {
                                    oracle
                                        .set_valid_block(pid, tip.id, Arc::clone(&candidate), tick)
                                        .is_ok()
                                }
                                _ => false,
                            };
                            history.record_append(pid, tick, candidate, ack);
                        }
                    }
                }
                Some(Behavior::RandomFork) => {
                    if append_due {
                        let snap = oracle.update_view_fresh(pid);
                        let ids: Vec<_> = snap.tree.blocks().map(|b| b.id).collect();
                        let parent_id = ids[rng.gen_range(0..ids.len())];
                        let parent = snap.tree.block(&parent_id).unwrap().clone();
                        let payload = payload_for(pid, seq[p as usize], Some(0xAF));
                        seq[p as usize] += 1;
                        budget[p as usize] -= 1;
                        let candidate = Block::child(&parent, pid, 0, payload);
                        registry.register(&candidate).expect("id collision");
                        let ack = match oracle.get_valid_block(pid, parent.id, &candidate) {
                            Ok(true) => oracle
                                .set_valid_block(pid, parent.id, Arc::clone(&candidate), tick)
                                .is_ok(),
                            _ => false,
                        };
                        history.record_append(pid, tick, candidate, ack);
                    }
                }
                // Notarization-protocol behaviors act honestly here.
                Some(_) => {
                    if append_due {
                        let version = draw_version(&oracle, &mut rng, config, pid, tick);
                        let payload = payload_for(pid, seq[p as usize], None);
                        seq[p as usize] += 1;
                        budget[p as usize] -= 1;
                        let (block, ack) =
                            ep_append(&mut oracle, &mut registry, pid, payload, version, tick);
                        history.record_append(pid, tick, block, ack);
                    }
                }
            }
        }
    }

    let tree = oracle.current_tree().clone();
    let max_width = tree
        .blocks()
        .map(|b| tree.effective_children(&b.id).len())
        .max()
        .unwrap_or(0);
    oracle.audit_invariants().expect("oracle invariants");

    RunArtifacts {
        history,
        audit: oracle.audit_log().to_vec(),
        stats: RunStats {
            tree_blocks: Some(tree.len()),
            max_effective_fork_width: Some(max_width),
            ..RunStats::default()
        },
    }
}
