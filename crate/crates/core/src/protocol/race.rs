//! Scripted longest-chain race.
//!
//! Two appenders extend disjoint branches under a fork bound of two, with
//! the scheduler serving each one stale views in which its own branch is
//! still selected. Under block-count length a branch overtakes the other
//! by first forcing a length tie whose tie-break it wins (the tying
//! block's payload is searched so its id sorts below the rival leaf) and
//! then appending once more from a fresh view. Sustained alternation
//! therefore crosses over by exactly one block per lead change; only the
//! final phase may overshoot. Fresh reads after each phase return the new
//! leader, so the common prefix of the read sequence never grows past
//! genesis.

use crate::block::{Block, BlockRegistry, ProcessId};
use crate::blocktree::ValidityPredicate;
use crate::history::{History, RunMeta};
use crate::oracle::Oracle;
use crate::sim::{ConfigError, NetConfig, RunArtifacts, RunStats};
use std::sync::Arc;

const BRANCH_A: usize = 0;
const BRANCH_B: usize = 1;
const READER: ProcessId = ProcessId(2);

/// Expands and validates per-phase branch-length targets. Phase 0 builds
/// the first branch; each later phase must cross over by exactly one
/// block, except the last which may overshoot.
fn resolve_targets(rounds: u32, targets: &[u64]) -> Result<Vec<u64>, ConfigError> {
    if rounds < 1 {
        return Err(ConfigError::NoRounds);
    }
    let phases = rounds as usize + 1;
    if targets.is_empty() {
        return Ok((1..=phases as u64).collect());
    }
    let mut resolved = Vec::with_capacity(phases);
    for phase in 0..phases {
        let expected = phase as u64 + 1;
        let got = targets.get(phase).copied().unwrap_or(expected);
        let last = phase == phases - 1;
        if (!last && got != expected) || (last && got < expected) {
            return Err(ConfigError::BadRaceTarget {
                phase,
                expected,
                got,
            });
        }
        resolved.push(got);
    }
    Ok(resolved)
}

struct RaceRun {
    oracle: Oracle,
    registry: BlockRegistry,
    history: History,
    tick: u64,
    tips: [Arc<Block>; 2],
    lengths: [u64; 2],
    /// Version to serve a branch's process so that its own branch is still
    /// the longest-chain selection: the state right after its last append.
    leader_version: [u64; 2],
}

impl RaceRun {
    /// Builds a candidate whose id sorts below `below` under the total
    /// order, by searching payload nonces. Two attempts are expected; the
    /// bound exists to fail loudly rather than spin.
    fn ground_child(
        tip: &Block,
        pid: ProcessId,
        phase: u64,
        below: &Block,
    ) -> Arc<Block> {
        for nonce in 0u32..4096 {
            let mut payload = vec![0x0A];
            payload.extend_from_slice(&phase.to_le_bytes());
            payload.extend_from_slice(&nonce.to_le_bytes());
            let candidate = Block::child(tip, pid, 0, payload);
            if candidate.id < below.id {
                return candidate;
            }
        }
        panic!("no payload nonce produced an id below the rival leaf");
    }

    fn plain_child(tip: &Block, pid: ProcessId, phase: u64, seq: u64) -> Arc<Block> {
        let mut payload = vec![0x0B];
        payload.extend_from_slice(&phase.to_le_bytes());
        payload.extend_from_slice(&seq.to_le_bytes());
        Block::child(tip, pid, 0, payload)
    }

    /// Runs one append through the oracle at the given view version,
    /// asserting that the view selects the intended branch.
    fn append(&mut self, branch: usize, view_version: u64, candidate_below: Option<&Block>, phase: u64) {
        let pid = ProcessId(branch as u32);
        self.tick += 1;
        let snap = self.oracle.update_view(pid, view_version);
        let selected = snap.tree.select_longest();
        assert_eq!(
            selected.tip().id,
            self.tips[branch].id,
            "schedule error: view does not select the intended branch"
        );
        let tip = self.tips[branch].clone();
        let candidate = match candidate_below {
            Some(rival) => Self::ground_child(&tip, pid, phase, rival),
            None => Self::plain_child(&tip, pid, phase, self.lengths[branch]),
        };
        self.registry.register(&candidate).expect("id collision");
        let granted = self
            .oracle
            .get_valid_block(pid, tip.id, &candidate)
            .expect("parent is always in the tree");
        assert!(granted, "race appends are always valid");
        self.tick += 1;
        self.oracle
            .set_valid_block(pid, tip.id, Arc::clone(&candidate), self.tick)
            .expect("granted");
        self.history
            .record(pid, self.tick - 1, crate::history::EventKind::AppendInv {
                block: Arc::clone(&candidate),
            })
            .unwrap();
        self.history
            .record(pid, self.tick, crate::history::EventKind::AppendRsp { ack: true })
            .unwrap();
        self.tips[branch] = candidate;
        self.lengths[branch] += 1;
        self.leader_version[branch] = self.oracle.current_version();
    }

    fn read(&mut self) {
        self.tick += 1;
        let snap = self.oracle.update_view_fresh(READER);
        let chain = snap.tree.select_longest();
        self.history.record_read(READER, self.tick, chain);
    }
}

/// Runs the race schedule for `rounds` lead changes and returns the
/// history, audit log and the branch lengths at each crossover.
pub fn run_race(config: &NetConfig, rounds: u32, targets: &[u64]) -> Result<RunArtifacts, ConfigError> {
    let targets = resolve_targets(rounds, targets)?;
    let mut meta = RunMeta::bare("longest-chain-race", 3, config.seed, 0);
    meta.read_selection = "longest".to_string();
    let mut run = RaceRun {
        oracle: Oracle::fork_bounded(ValidityPredicate::accept_all(), 2),
        registry: BlockRegistry::new(),
        history: History::new(meta),
        tick: 0,
        tips: [Block::genesis(), Block::genesis()],
        lengths: [0, 0],
        leader_version: [0, 0],
    };
    let mut stats = RunStats::default();

    // Phase 0: the first branch grows unopposed.
    for _ in 0..targets[0] {
        let version = run.leader_version[BRANCH_A];
        run.append(BRANCH_A, version, None, 0);
    }
    run.read();

    for round in 1..=rounds as usize {
        let active = if round % 2 == 1 { BRANCH_B } else { BRANCH_A };
        let passive = 1 - active;
        let rival_len = run.lengths[passive];
        debug_assert_eq!(run.lengths[active] + 1, rival_len, "crossover ladder");

        // Catch up to a tie from a view in which this branch is still the
        // longest, winning the coming tie-break by id order.
        let stale = run.leader_version[active];
        let rival_tip = run.tips[passive].clone();
        run.append(active, stale, Some(&rival_tip), round as u64);

        // Fresh view: the tie resolves to this branch; overtake.
        let fresh = run.oracle.current_version();
        run.append(active, fresh, None, round as u64);
        stats.lead_changes.push((rival_len, run.lengths[active]));

        // Only the final phase may overshoot the minimal crossover.
        while run.lengths[active] < targets[round] {
            let fresh = run.oracle.current_version();
            run.append(active, fresh, None, round as u64);
        }
        run.read();
    }

    run.oracle.audit_invariants().expect("oracle invariants");
    let tree = run.oracle.current_tree().clone();
    stats.tree_blocks = Some(tree.len());
    stats.max_effective_fork_width = Some(
        tree.blocks()
            .map(|b| tree.effective_children(&b.id).len())
            .max()
            .unwrap_or(0),
    );
    run.history.meta.horizon = run.tick;

    Ok(RunArtifacts {
        history: run.history,
        audit: run.oracle.audit_log().to_vec(),
        stats,
    })
}
