//! Majority-notarization Streamlet variant with Byzantine exclusion.
//!
//! Epochs last `2 * delta` ticks and have a publicly computable leader.
//! The leader proposes a block extending a longest notarized chain; every
//! process votes for the first proposal it sees from the epoch's leader,
//! provided the proposal extends one of the longest notarized chains in
//! its view. A block is notarized once a strict majority of non-excluded
//! processes voted for it (the classic two-thirds threshold remains
//! available for differential runs). Three adjacent notarized blocks with
//! consecutive epochs finalize the chain up to the middle block.
//!
//! Lowering the threshold to a majority admits forks. The compensation:
//! when two conflicting chains finalize, every correct process scans its
//! notarized blocks for inconsistent pairs (same epoch, or higher epoch at
//! strictly lower height), marks everyone who voted for both sides of
//! such a pair as Byzantine, ignores their votes retroactively, and
//! recomputes notarization and finality. Two majorities intersect, so a
//! finalized fork always exposes at least one Byzantine voter.

use crate::block::{Block, BlockId, ProcessId};
use crate::blocktree::{Blocktree, Chain};
use crate::history::{History, RunMeta};
use crate::protocol::{Behavior, Message, MessageKind};
use crate::sim::{schedule_delivery, MessageQueue, NetConfig, PendingMessage, RunArtifacts, RunStats};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

/// Notarization vote threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threshold {
    /// Strict majority of all processes; the modified rule.
    Majority,
    /// At least two thirds; the original rule, kept for differential runs.
    TwoThirds,
}

impl Threshold {
    pub fn votes_needed(&self, n: u32) -> u32 {
        match self {
            Threshold::Majority => n / 2 + 1,
            Threshold::TwoThirds => (2 * n).div_ceil(3),
        }
    }
}

/// Vote bookkeeping: who voted for which block, and whose votes are
/// ignored after detection.
#[derive(Clone, Debug)]
pub struct NotarizationState {
    pub n: u32,
    pub threshold: Threshold,
    pub votes: BTreeMap<BlockId, BTreeSet<ProcessId>>,
    pub excluded: BTreeSet<ProcessId>,
}

impl NotarizationState {
    pub fn new(n: u32, threshold: Threshold) -> Self {
        NotarizationState {
            n,
            threshold,
            votes: BTreeMap::new(),
            excluded: BTreeSet::new(),
        }
    }

    pub fn record_vote(&mut self, block: BlockId, voter: ProcessId) {
        self.votes.entry(block).or_default().insert(voter);
    }

    /// Votes from non-excluded processes reach the threshold. Genesis is
    /// notarized by definition.
    pub fn is_notarized(&self, block: &Block) -> bool {
        if block.is_genesis() {
            return true;
        }
        let Some(voters) = self.votes.get(&block.id) else {
            return false;
        };
        let live = voters.iter().filter(|v| !self.excluded.contains(v)).count();
        live as u32 >= self.threshold.votes_needed(self.n)
    }
}

/// Two notarized blocks contradict each other if they share an epoch, or
/// if the one from the strictly later epoch sits at a strictly smaller
/// height (either orientation).
pub fn inconsistent(a: &Block, b: &Block) -> bool {
    if a.epoch == b.epoch {
        return a.id != b.id;
    }
    (a.epoch > b.epoch && a.height < b.height) || (b.epoch > a.epoch && b.height < a.height)
}

/// Every process that voted for both sides of some inconsistent pair of
/// notarized blocks. Callers exclude the result and recompute
/// notarization. Empty when no conflict exists.
pub fn detect_byzantine(state: &NotarizationState, tree: &Blocktree) -> BTreeSet<ProcessId> {
    let notarized: Vec<&Arc<Block>> = tree
        .blocks()
        .filter(|b| !b.is_genesis() && state.is_notarized(b))
        .collect();
    let mut detected = BTreeSet::new();
    for (i, a) in notarized.iter().enumerate() {
        for b in notarized.iter().skip(i + 1) {
            if !inconsistent(a, b) {
                continue;
            }
            let va = state.votes.get(&a.id);
            let vb = state.votes.get(&b.id);
            if let (Some(va), Some(vb)) = (va, vb) {
                for voter in va.intersection(vb) {
                    detected.insert(*voter);
                }
            }
        }
    }
    detected
}

/// The epoch leader, a public seeded function every process computes
/// identically.
pub fn leader_of(seed: u64, epoch: u64, n: u32) -> ProcessId {
    let mut h = Sha256::new();
    h.update(b"epoch-leader");
    h.update(seed.to_le_bytes());
    h.update(epoch.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
    ProcessId((x % u64::from(n)) as u32)
}

/// Searches for a seed whose leader schedule satisfies the given
/// per-epoch constraints. Used to script partition scenarios.
pub fn find_seed_for_leaders(n: u32, constraints: &[(u64, &[u32])]) -> u64 {
    'seed: for seed in 0..1_000_000u64 {
        for (epoch, allowed) in constraints {
            if !allowed.contains(&leader_of(seed, *epoch, n).0) {
                continue 'seed;
            }
        }
        return seed;
    }
    panic!("no seed satisfies the leader constraints");
}

/// One protocol node: local blocktree, vote bookkeeping, exclusion set and
/// finalized chain.
pub struct StreamletNode {
    pub pid: ProcessId,
    n: u32,
    delta: u64,
    seed: u64,
    behavior: Option<Behavior>,
    tree: Blocktree,
    pub notarization: NotarizationState,
    orphans: Vec<Arc<Block>>,
    voted_epochs: BTreeSet<u64>,
    first_proposal: BTreeMap<u64, BlockId>,
    seen: BTreeSet<(u8, BlockId, ProcessId)>,
    finalized: Chain,
    /// Conflicting-finalization events this node observed.
    pub fork_events: u64,
    /// Votes this node emitted, per epoch; correct nodes stay at one.
    pub votes_emitted: BTreeMap<u64, u32>,
    /// Payloads queued for the node's next turns as leader.
    pub pending_payloads: VecDeque<Vec<u8>>,
    dirty: bool,
}

/// What a node wants delivered: to one process or to everyone else.
pub struct Outgoing {
    pub to: Option<ProcessId>,
    pub msg: Message,
}

#[derive(Default)]
pub struct StepOutput {
    pub outgoing: Vec<Outgoing>,
    /// Blocks created by this node during this step.
    pub proposed: Vec<Arc<Block>>,
    /// Processes newly excluded by detection during this step.
    pub new_exclusions: Vec<ProcessId>,
}

impl StreamletNode {
    pub fn new(
        pid: ProcessId,
        n: u32,
        delta: u64,
        seed: u64,
        threshold: Threshold,
        behavior: Option<Behavior>,
    ) -> Self {
        StreamletNode {
            pid,
            n,
            delta,
            seed,
            behavior,
            tree: Blocktree::new(),
            notarization: NotarizationState::new(n, threshold),
            orphans: Vec::new(),
            voted_epochs: BTreeSet::new(),
            first_proposal: BTreeMap::new(),
            seen: BTreeSet::new(),
            finalized: Chain::genesis_only(),
            fork_events: 0,
            votes_emitted: BTreeMap::new(),
            pending_payloads: VecDeque::new(),
            dirty: false,
        }
    }

    pub fn epoch_of(&self, tick: u64) -> u64 {
        tick / (2 * self.delta)
    }

    pub fn tree(&self) -> &Blocktree {
        &self.tree
    }

    pub fn finalized(&self) -> &Chain {
        &self.finalized
    }

    /// Blocks whose whole prefix is notarized, keyed for selection.
    fn fully_notarized(&self) -> BTreeMap<BlockId, u64> {
        let mut by_height: Vec<&Arc<Block>> = self.tree.blocks().collect();
        by_height.sort_by_key(|b| (b.height, b.id));
        let mut ok: BTreeMap<BlockId, u64> = BTreeMap::new();
        for block in by_height {
            if block.is_genesis() {
                ok.insert(block.id, 0);
            } else if self.notarization.is_notarized(block) && ok.contains_key(&block.parent) {
                ok.insert(block.id, block.height);
            }
        }
        ok
    }

    /// Tip of a longest fully-notarized chain; ties resolved by lowest id.
    fn longest_notarized_tip(&self) -> Arc<Block> {
        let ok = self.fully_notarized();
        let max_h = ok.values().copied().max().unwrap_or(0);
        let tip_id = ok
            .iter()
            .filter(|(_, h)| **h == max_h)
            .map(|(id, _)| *id)
            .min()
            .expect("genesis is always fully notarized");
        self.tree.block(&tip_id).unwrap().clone()
    }

    fn extends_longest_notarized(&self, block: &Block) -> bool {
        let ok = self.fully_notarized();
        let max_h = ok.values().copied().max().unwrap_or(0);
        ok.get(&block.parent).is_some_and(|h| *h == max_h)
    }

    /// Finalize-eligible prefix tips: for every window of three adjacent
    /// fully-notarized blocks with consecutive epochs, the middle block.
    /// Genesis (epoch 0) may head a window but never sits inside one.
    fn eligible_tips(&self) -> Vec<Arc<Block>> {
        let ok = self.fully_notarized();
        let mut tips = Vec::new();
        for block in self.tree.blocks() {
            if block.is_genesis() || !ok.contains_key(&block.id) {
                continue;
            }
            let Some(parent) = self.tree.block(&block.parent) else {
                continue;
            };
            if parent.is_genesis() {
                continue; // a window needs three distinct blocks
            }
            let Some(grand) = self.tree.block(&parent.parent) else {
                continue;
            };
            if grand.epoch + 1 == parent.epoch && parent.epoch + 1 == block.epoch {
                tips.push(parent.clone());
            }
        }
        tips
    }

    /// Recomputes finality; on conflicting finalized chains runs detection
    /// and exclusion until a single finalized chain remains. Eligible tips
    /// conflict exactly when one of them is not an ancestor of the deepest
    /// tip, since ancestors of a single block are mutually comparable.
    fn refinalize(&mut self, out: &mut StepOutput) {
        loop {
            let tips = self.eligible_tips();
            let deepest = tips
                .iter()
                .max_by_key(|b| (b.height, std::cmp::Reverse(b.id)))
                .cloned();
            let Some(deepest) = deepest else {
                self.finalized = Chain::genesis_only();
                break;
            };
            let mut ancestors = BTreeSet::new();
            let mut cur = deepest.id;
            loop {
                ancestors.insert(cur);
                let block = self.tree.block(&cur).expect("tip chain in tree");
                if block.is_genesis() {
                    break;
                }
                cur = block.parent;
            }
            let conflict = tips.iter().any(|t| !ancestors.contains(&t.id));
            if conflict {
                let detected: Vec<ProcessId> = detect_byzantine(&self.notarization, &self.tree)
                    .into_iter()
                    .filter(|p| !self.notarization.excluded.contains(p))
                    .collect();
                debug_assert!(
                    !detected.is_empty(),
                    "a finalized fork must expose a Byzantine voter"
                );
                if detected.is_empty() {
                    break;
                }
                self.fork_events += 1;
                for p in &detected {
                    self.notarization.excluded.insert(*p);
                }
                out.new_exclusions.extend(detected);
                continue; // re-evaluate with the votes ignored
            }
            self.finalized = self.tree.chain_to(&deepest.id).expect("tip in tree");
            break;
        }
    }

    fn learn_block(&mut self, block: &Arc<Block>, tick: u64) {
        if self.tree.contains(&block.id) {
            return;
        }
        if self.tree.contains(&block.parent) {
            self.tree.attach(Arc::clone(block), tick).expect("new block");
            self.dirty = true;
            // Orphans may become attachable now.
            let mut progress = true;
            while progress {
                progress = false;
                let mut rest = Vec::new();
                for orphan in std::mem::take(&mut self.orphans) {
                    if self.tree.contains(&orphan.id) {
                        continue;
                    }
                    if self.tree.contains(&orphan.parent) {
                        self.tree.attach(orphan, tick).expect("orphan attach");
                        progress = true;
                    } else {
                        rest.push(orphan);
                    }
                }
                self.orphans = rest;
            }
        } else {
            self.orphans.push(Arc::clone(block));
        }
    }

    fn emit_vote(&mut self, epoch: u64, block: Arc<Block>, out: &mut StepOutput) {
        let key = (1u8, block.id, self.pid);
        if self.seen.contains(&key) {
            return;
        }
        self.seen.insert(key);
        *self.votes_emitted.entry(epoch).or_insert(0) += 1;
        self.notarization.record_vote(block.id, self.pid);
        self.dirty = true;
        out.outgoing.push(Outgoing {
            to: None,
            msg: Message::vote(self.pid, epoch, block),
        });
    }

    fn consider_vote(&mut self, msg: &Message, now: u64, out: &mut StepOutput) {
        let MessageKind::Propose { block } = &msg.kind else {
            return;
        };
        let epoch = self.epoch_of(now);
        if msg.epoch != epoch || leader_of(self.seed, msg.epoch, self.n) != msg.sender {
            return;
        }
        let first = *self.first_proposal.entry(epoch).or_insert(block.id);
        match self.behavior {
            None => {
                if first == block.id
                    && !self.voted_epochs.contains(&epoch)
                    && self.tree.contains(&block.parent)
                    && self.extends_longest_notarized(block)
                {
                    self.voted_epochs.insert(epoch);
                    self.emit_vote(epoch, Arc::clone(block), out);
                }
            }
            Some(Behavior::VoteLow) => {
                // Skips the longest-notarized extension rule.
                if first == block.id
                    && !self.voted_epochs.contains(&epoch)
                    && self.tree.contains(&block.parent)
                {
                    self.voted_epochs.insert(epoch);
                    self.emit_vote(epoch, Arc::clone(block), out);
                }
            }
            Some(Behavior::DoubleVote) | Some(Behavior::EquivocatingLeader) => {
                // Votes for every proposal of the epoch.
                self.emit_vote(epoch, Arc::clone(block), out);
            }
            Some(Behavior::Silent) => {}
            // Appender behaviors act honestly in this protocol.
            Some(_) => {
                if first == block.id
                    && !self.voted_epochs.contains(&epoch)
                    && self.tree.contains(&block.parent)
                    && self.extends_longest_notarized(block)
                {
                    self.voted_epochs.insert(epoch);
                    self.emit_vote(epoch, Arc::clone(block), out);
                }
            }
        }
    }

    fn ingest(&mut self, msg: &Message, now: u64, out: &mut StepOutput) {
        let kind_tag = match msg.kind {
            MessageKind::Propose { .. } => 0u8,
            MessageKind::Vote { .. } => 1u8,
        };
        let key = (kind_tag, msg.block().id, msg.sender);
        if !self.seen.insert(key) {
            return;
        }
        self.learn_block(&Arc::clone(msg.block()), now);
        if let MessageKind::Vote { block } = &msg.kind {
            self.notarization.record_vote(block.id, msg.sender);
            self.dirty = true;
        }
        self.consider_vote(msg, now, out);
        // Correct processes flood what they learn; Byzantine ones do not
        // relay for others.
        if self.behavior.is_none() {
            out.outgoing.push(Outgoing {
                to: None,
                msg: msg.clone(),
            });
        }
    }

    fn propose(&mut self, epoch: u64, now: u64, out: &mut StepOutput) {
        match self.behavior {
            Some(Behavior::Silent) => return,
            Some(Behavior::EquivocatingLeader) => {
                let parent = self.longest_notarized_tip();
                let mut blocks = Vec::new();
                for variant in 0..2u8 {
                    let mut payload = vec![0xE0 + variant];
                    payload.extend_from_slice(&epoch.to_le_bytes());
                    payload.extend_from_slice(&self.pid.0.to_le_bytes());
                    blocks.push(Block::child(&parent, self.pid, epoch, payload));
                }
                // One block per half of the network.
                let half = self.n / 2;
                for target in 0..self.n {
                    let block = if target < half { &blocks[0] } else { &blocks[1] };
                    if target == self.pid.0 {
                        continue;
                    }
                    out.outgoing.push(Outgoing {
                        to: Some(ProcessId(target)),
                        msg: Message::propose(self.pid, epoch, Arc::clone(block)),
                    });
                }
                for block in blocks {
                    out.proposed.push(Arc::clone(&block));
                    let own = Message::propose(self.pid, epoch, Arc::clone(&block));
                    self.ingest(&own, now, out);
                }
            }
            _ => {
                let parent = self.longest_notarized_tip();
                let payload = self.pending_payloads.pop_front().unwrap_or_else(|| {
                    let mut p = vec![0x51];
                    p.extend_from_slice(&epoch.to_le_bytes());
                    p.extend_from_slice(&self.pid.0.to_le_bytes());
                    p
                });
                let block = Block::child(&parent, self.pid, epoch, payload);
                out.proposed.push(Arc::clone(&block));
                let msg = Message::propose(self.pid, epoch, Arc::clone(&block));
                if self.behavior.is_some() {
                    // Byzantine nodes do not flood, so the proposal must
                    // go out explicitly; correct nodes broadcast through
                    // the flooding path in ingest.
                    out.outgoing.push(Outgoing {
                        to: None,
                        msg: msg.clone(),
                    });
                }
                self.ingest(&msg, now, out);
            }
        }
    }

    /// Advances the node one tick: ingest deliveries, propose at epoch
    /// boundaries when leader, vote, and refinalize.
    pub fn step(&mut self, now: u64, inbox: Vec<Message>) -> StepOutput {
        let mut out = StepOutput::default();
        for msg in &inbox {
            self.ingest(msg, now, &mut out);
        }
        let epoch = self.epoch_of(now);
        if now % (2 * self.delta) == 0 && leader_of(self.seed, epoch, self.n) == self.pid {
            self.propose(epoch, now, &mut out);
        }
        if self.dirty {
            self.dirty = false;
            self.refinalize(&mut out);
        }
        out
    }

    /// Current finalized chain after recomputation; the public read of
    /// this protocol.
    pub fn try_finalize(&mut self) -> Chain {
        let mut out = StepOutput::default();
        self.refinalize(&mut out);
        self.finalized.clone()
    }
}

/// Drives `n` nodes to the horizon, sampling reads and recording proposals
/// as appends.
pub fn run_streamlet(
    config: &NetConfig,
    original_threshold: bool,
    ec_instances: Option<u32>,
) -> RunArtifacts {
    let threshold = if original_threshold {
        Threshold::TwoThirds
    } else {
        Threshold::Majority
    };
    let mut meta = RunMeta::bare("streamlet-mod", config.n, config.seed, config.horizon);
    meta.delta = config.delta;
    meta.gst = config.gst;
    meta.payload_rule = config.payload_rule;
    meta.read_selection = "finalized".to_string();
    meta.byzantine = config
        .byzantine
        .iter()
        .map(|(p, b)| (*p, format!("{b:?}")))
        .collect();

    let mut history = History::new(meta);
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x5747);
    let mut queue = MessageQueue::new();
    let mut nodes: Vec<StreamletNode> = (0..config.n)
        .map(|p| {
            StreamletNode::new(
                ProcessId(p),
                config.n,
                config.delta,
                config.seed,
                threshold,
                config.behavior_of(ProcessId(p)),
            )
        })
        .collect();
    let mut stats = RunStats::default();

    // Repeated-proposal driver state per node.
    let mut ec_next: Vec<u32> = vec![1; config.n as usize];
    let mut ec_queued: Vec<bool> = vec![false; config.n as usize];

    for tick in 0..config.horizon {
        let mut inboxes: BTreeMap<u32, Vec<Message>> = BTreeMap::new();
        for pm in queue.due(tick) {
            inboxes.entry(pm.to.0).or_default().push(pm.msg);
        }
        for p in 0..config.n {
            let node = &mut nodes[p as usize];
            let pid = ProcessId(p);

            if let Some(max) = ec_instances {
                let j = ec_next[p as usize];
                if j <= max && !ec_queued[p as usize] && node.behavior.is_none() {
                    let mut payload = vec![0xEC, p as u8];
                    payload.extend_from_slice(&j.to_le_bytes());
                    node.pending_payloads.push_back(payload);
                    ec_queued[p as usize] = true;
                }
            }

            let before_len = node.finalized().len();
            let out = node.step(tick, inboxes.remove(&p).unwrap_or_default());
            let after_len = node.finalized().len();
            if after_len < before_len {
                stats.finalized_resets.push(tick);
                assert!(
                    !out.new_exclusions.is_empty(),
                    "finalized chain shrank without a detection event"
                );
            }
            for block in &out.proposed {
                history.record_append(pid, tick, Arc::clone(block), true);
            }
            for outgoing in out.outgoing {
                let targets: Vec<u32> = match outgoing.to {
                    Some(t) => vec![t.0],
                    None => (0..config.n).filter(|t| *t != p).collect(),
                };
                for t in targets {
                    let deliver_at =
                        schedule_delivery(config, &mut rng, pid, ProcessId(t), tick);
                    queue.push(PendingMessage {
                        msg: outgoing.msg.clone(),
                        from: pid,
                        to: ProcessId(t),
                        sent: tick,
                        deliver_at,
                    });
                }
            }

            // Reads: every tick in instance-driver mode, else at epoch
            // end. Finality was already recomputed inside step, so the
            // read returns the node's current finalized chain.
            let epoch_end = tick % (2 * config.delta) == 2 * config.delta - 1;
            if ec_instances.is_some() || epoch_end {
                let chain = nodes[p as usize].finalized().clone();
                if let Some(max) = ec_instances {
                    let j = ec_next[p as usize];
                    if j <= max && chain.len() > j as usize {
                        ec_next[p as usize] += 1;
                        ec_queued[p as usize] = false;
                    }
                }
                history.record_read(ProcessId(p), tick, chain);
            }
        }
    }

    for node in &nodes {
        stats.fork_events.insert(node.pid.0, node.fork_events);
        stats.exclusions.insert(
            node.pid.0,
            node.notarization.excluded.iter().map(|p| p.0).collect(),
        );
    }

    // Delivery audit: no silent drops, and every correct-sender message
    // was scheduled within the synchrony bound.
    for (from, sent, deliver_at) in &queue.log {
        if !config.is_byzantine(*from) {
            assert!(
                *deliver_at <= (sent + config.delta).max(config.gst),
                "correct-sender delivery violated the synchrony bound"
            );
        }
    }

    RunArtifacts {
        history,
        audit: Vec::new(),
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocktree::PayloadRule;
    use crate::sim::AdversaryPolicy;

    fn pid(n: u32) -> ProcessId {
        ProcessId(n)
    }

    fn chain_blocks(epochs: &[u64]) -> Vec<Arc<Block>> {
        let mut blocks = vec![Block::genesis()];
        for (i, e) in epochs.iter().enumerate() {
            let b = Block::child(blocks.last().unwrap(), pid(0), *e, vec![i as u8]);
            blocks.push(b);
        }
        blocks
    }

    #[test]
    fn threshold_counts() {
        assert_eq!(Threshold::Majority.votes_needed(4), 3);
        assert_eq!(Threshold::Majority.votes_needed(5), 3);
        assert_eq!(Threshold::Majority.votes_needed(7), 4);
        assert_eq!(Threshold::TwoThirds.votes_needed(4), 3);
        assert_eq!(Threshold::TwoThirds.votes_needed(6), 4);
        assert_eq!(Threshold::TwoThirds.votes_needed(7), 5);
    }

    #[test]
    fn inconsistency_conditions() {
        let g = Block::genesis();
        let a = Block::child(&g, pid(1), 4, vec![1]);
        let b = Block::child(&g, pid(2), 4, vec![2]);
        // Same epoch, distinct blocks.
        assert!(inconsistent(&a, &b));
        assert!(!inconsistent(&a, &a));

        // Higher epoch at strictly smaller height, both orientations.
        let chain = chain_blocks(&[1, 2, 3]);
        let high = &chain[3]; // epoch 3, height 3
        let late_low = Block::child(&g, pid(3), 6, vec![9]); // epoch 6, height 1
        assert!(inconsistent(high, &late_low));
        assert!(inconsistent(&late_low, high));

        // Normal growth: increasing epoch and height.
        let next = Block::child(high, pid(1), 4, vec![4]);
        assert!(!inconsistent(high, &next));
    }

    #[test]
    fn leader_function_is_deterministic_and_in_range() {
        for epoch in 0..50 {
            let a = leader_of(9, epoch, 5);
            let b = leader_of(9, epoch, 5);
            assert_eq!(a, b);
            assert!(a.0 < 5);
        }
    }

    #[test]
    fn detection_returns_intersection_voters() {
        // Two same-epoch blocks notarized by majorities of five processes.
        let mut tree = Blocktree::new();
        let g = Block::genesis();
        let a = Block::child(&g, pid(0), 3, vec![1]);
        let b = Block::child(&g, pid(1), 3, vec![2]);
        tree.attach(Arc::clone(&a), 0).unwrap();
        tree.attach(Arc::clone(&b), 1).unwrap();
        let mut st = NotarizationState::new(5, Threshold::Majority);
        for v in [0, 1, 4] {
            st.record_vote(a.id, pid(v));
        }
        for v in [2, 3, 4] {
            st.record_vote(b.id, pid(v));
        }
        let detected = detect_byzantine(&st, &tree);
        assert_eq!(detected, BTreeSet::from([pid(4)]));
    }

    #[test]
    fn detection_empty_without_conflict() {
        let mut tree = Blocktree::new();
        let g = Block::genesis();
        let a = Block::child(&g, pid(0), 1, vec![1]);
        tree.attach(Arc::clone(&a), 0).unwrap();
        let mut st = NotarizationState::new(4, Threshold::Majority);
        for v in 0..3 {
            st.record_vote(a.id, pid(v));
        }
        assert!(detect_byzantine(&st, &tree).is_empty());
    }

    #[test]
    fn detection_applies_second_condition_across_branches() {
        // Branch one: epochs 1,2,3 at heights 1,2,3. Branch two: epoch 4
        // at height 1. The epoch-3/height-3 vs epoch-4/height-1 pair is
        // inconsistent; the shared voter is exposed.
        let mut tree = Blocktree::new();
        let blocks = chain_blocks(&[1, 2, 3]);
        for b in &blocks[1..] {
            tree.attach(Arc::clone(b), 0).unwrap();
        }
        let g = Block::genesis();
        let other = Block::child(&g, pid(1), 4, vec![7]);
        tree.attach(Arc::clone(&other), 1).unwrap();

        let mut st = NotarizationState::new(5, Threshold::Majority);
        for b in &blocks[1..] {
            for v in [0, 1, 4] {
                st.record_vote(b.id, pid(v));
            }
        }
        for v in [2, 3, 4] {
            st.record_vote(other.id, pid(v));
        }
        let detected = detect_byzantine(&st, &tree);
        assert_eq!(detected, BTreeSet::from([pid(4)]));
    }

    fn quiet_config(n: u32, horizon: u64) -> NetConfig {
        NetConfig {
            n,
            byzantine: BTreeMap::new(),
            gst: 0,
            delta: 3,
            horizon,
            seed: 11,
            adversary: AdversaryPolicy::Fifo,
            payload_rule: PayloadRule::AcceptAll,
        }
    }

    #[test]
    fn clean_run_notarizes_and_finalizes_a_single_chain() {
        let artifacts = run_streamlet(&quiet_config(4, 600), false, None);
        let reads = artifacts.history.reads_in_program_order(None);
        assert!(!reads.is_empty());
        let longest = reads.iter().map(|(_, c)| c.len()).max().unwrap();
        assert!(longest > 3, "finalization must make progress");
        // All finalized chains along one branch.
        let v = crate::checker::check_strong_prefix(&artifacts.history);
        assert!(v.passed(), "{}", v.detail);
        assert_eq!(artifacts.stats.max_fork_events(), 0);
        assert!(artifacts.stats.finalized_resets.is_empty());
    }

    #[test]
    fn original_threshold_differential_run_also_finalizes() {
        let majority = run_streamlet(&quiet_config(4, 600), false, None);
        let two_thirds = run_streamlet(&quiet_config(4, 600), true, None);
        for artifacts in [&majority, &two_thirds] {
            let v = crate::checker::check_strong_prefix(&artifacts.history);
            assert!(v.passed());
        }
        // With four processes both thresholds are three votes, so the
        // finalized prefixes coincide.
        let last = |a: &RunArtifacts| {
            a.history
                .reads_in_program_order(None)
                .last()
                .map(|(_, c)| c.len())
                .unwrap()
        };
        assert_eq!(last(&majority), last(&two_thirds));
    }

    #[test]
    fn vote_discipline_one_vote_per_epoch_for_correct_nodes() {
        let config = quiet_config(5, 400);
        let threshold = Threshold::Majority;
        let mut nodes: Vec<StreamletNode> = (0..5)
            .map(|p| StreamletNode::new(pid(p), 5, 3, 11, threshold, None))
            .collect();
        // Run a minimal in-memory exchange: leaders propose, votes flood
        // instantly.
        for tick in 0..config.horizon {
            let mut all_msgs: Vec<Message> = Vec::new();
            for node in nodes.iter_mut() {
                let out = node.step(tick, Vec::new());
                all_msgs.extend(out.outgoing.into_iter().map(|o| o.msg));
            }
            while let Some(msg) = all_msgs.pop() {
                for node in nodes.iter_mut() {
                    if node.pid != msg.sender {
                        let mut out = StepOutput::default();
                        node.ingest(&msg, tick, &mut out);
                        all_msgs.extend(out.outgoing.into_iter().map(|o| o.msg));
                    }
                }
            }
        }
        for node in &nodes {
            assert!(node.votes_emitted.values().all(|v| *v <= 1));
        }
    }

    #[test]
    fn second_proposal_in_epoch_is_ignored_by_correct_nodes() {
        let mut node = StreamletNode::new(pid(1), 4, 3, 0, Threshold::Majority, None);
        let leader = leader_of(0, 0, 4);
        assert_ne!(leader, node.pid, "test wants a non-leader voter");
        let g = Block::genesis();
        let first = Block::child(&g, leader, 0, vec![1]);
        let second = Block::child(&g, leader, 0, vec![2]);
        let mut out = StepOutput::default();
        node.ingest(&Message::propose(leader, 0, first.clone()), 0, &mut out);
        node.ingest(&Message::propose(leader, 0, second), 0, &mut out);
        let votes: Vec<&Message> = out
            .outgoing
            .iter()
            .map(|o| &o.msg)
            .filter(|m| matches!(m.kind, MessageKind::Vote { .. }))
            .collect();
        assert_eq!(votes.len(), 1);
        assert_eq!(votes[0].block().id, first.id);
    }

    #[test]
    fn proposal_not_extending_longest_notarized_gets_no_vote() {
        let mut node = StreamletNode::new(pid(1), 4, 3, 0, Threshold::Majority, None);
        // Give the node a notarized chain of length 2.
        let g = Block::genesis();
        let b1 = Block::child(&g, pid(2), 1, vec![1]);
        let mut out = StepOutput::default();
        node.learn_block(&b1, 1);
        for v in 0..3 {
            node.notarization.record_vote(b1.id, pid(v));
        }
        // A proposal extending genesis instead of the notarized tip.
        let epoch = 2;
        let leader = leader_of(0, epoch, 4);
        let low = Block::child(&g, leader, epoch, vec![9]);
        let now = epoch * 2 * 3;
        node.ingest(&Message::propose(leader, epoch, low), now, &mut out);
        assert!(
            !out.outgoing
                .iter()
                .any(|o| matches!(o.msg.kind, MessageKind::Vote { .. })),
            "no vote for a non-extending proposal"
        );
    }

    #[test]
    fn finalize_needs_three_consecutive_epochs() {
        let mut node = StreamletNode::new(pid(0), 4, 3, 0, Threshold::Majority, None);
        // Notarized chain with epochs 5, 6, 7.
        let blocks = chain_blocks(&[5, 6, 7]);
        for b in &blocks[1..] {
            node.learn_block(b, 0);
            for v in 0..3 {
                node.notarization.record_vote(b.id, pid(v));
            }
        }
        let finalized = node.try_finalize();
        // Up to the middle of the window: the epoch-6 block.
        assert_eq!(finalized.len(), 3);
        assert_eq!(finalized.tip().epoch, 6);

        // Epoch gap: 5, 7, 8 finalizes nothing.
        let mut node2 = StreamletNode::new(pid(0), 4, 3, 0, Threshold::Majority, None);
        for b in &chain_blocks(&[5, 7, 8])[1..] {
            node2.learn_block(b, 0);
            for v in 0..3 {
                node2.notarization.record_vote(b.id, pid(v));
            }
        }
        assert_eq!(node2.try_finalize().len(), 1);
    }

    #[test]
    fn genesis_only_finalizes_to_genesis() {
        let mut node = StreamletNode::new(pid(0), 4, 3, 0, Threshold::Majority, None);
        let f = node.try_finalize();
        assert_eq!(f.len(), 1);
        assert!(f[0].is_genesis());
    }

    #[test]
    fn runs_are_deterministic() {
        let mut config = quiet_config(5, 300);
        config.adversary = AdversaryPolicy::RandomDelay;
        config.byzantine.insert(4, Behavior::DoubleVote);
        let a = run_streamlet(&config, false, None);
        let b = run_streamlet(&config, false, None);
        assert_eq!(a.history.to_jsonl_string(), b.history.to_jsonl_string());
    }

    /// Partition scenario: the two correct halves finalize disjoint
    /// branches with the vote-low process bridging both, and detection
    /// fires on view merge.
    pub(crate) fn partitioned_fork_config() -> NetConfig {
        let first: &[u32] = &[0, 1];
        let second: &[u32] = &[2, 3];
        let seed = find_seed_for_leaders(
            5,
            &[
                (0, first),
                (1, first),
                (2, first),
                (3, second),
                (4, second),
                (5, second),
            ],
        );
        let mut byzantine = BTreeMap::new();
        byzantine.insert(4, Behavior::VoteLow);
        NetConfig {
            n: 5,
            byzantine,
            gst: 48,
            delta: 4,
            horizon: 240,
            seed,
            adversary: AdversaryPolicy::TargetedRace,
            payload_rule: PayloadRule::AcceptAll,
        }
    }

    #[test]
    fn partitioned_run_finalizes_conflicting_chains_then_detects() {
        let config = partitioned_fork_config();
        let artifacts = run_streamlet(&config, false, None);

        // Detection fired exactly once per correct process and exposed
        // exactly the flagged process.
        for p in 0..4u32 {
            assert_eq!(
                artifacts.stats.exclusions.get(&p),
                Some(&vec![4]),
                "process {p} must exclude exactly the vote-low process"
            );
            assert_eq!(artifacts.stats.fork_events.get(&p), Some(&1));
        }
        assert!(
            !artifacts.stats.finalized_resets.is_empty(),
            "conflicting finalizations must have been rolled back"
        );

        // The fork is visible in the reads, so strong prefix fails, but
        // the run stabilizes: eventual strong prefix passes at cut 0.5.
        let sp = crate::checker::check_strong_prefix(&artifacts.history);
        assert_eq!(sp.outcome, crate::checker::Outcome::Fail);
        let (esp, cut) = crate::checker::check_eventual_strong_prefix(
            &artifacts.history,
            &crate::checker::CheckParams::default(),
        );
        assert!(esp.passed(), "{}", esp.detail);
        assert!(cut.unwrap() > 0);

        // The chain keeps growing after the reset.
        let last = artifacts
            .history
            .reads_in_program_order(None)
            .last()
            .map(|(_, c)| c.len())
            .unwrap();
        assert!(last > 3, "post-detection chain must regrow, got {last}");
    }
}
