//! Deterministic adversarial simulator.
//!
//! A run is fully determined by its scenario: the network configuration
//! (process count, Byzantine assignment, eventual-synchrony parameters,
//! seed, adversary policy) and a protocol workload. All randomness flows
//! from one seeded generator consumed in a fixed order, so identical
//! scenarios produce byte-identical traces.
//!
//! Time is a logical tick counter. Before the stabilization tick `gst`
//! message delays and view staleness are adversarial; afterwards a message
//! sent at `t` arrives by `t + delta`, and a view served at `t` is no
//! staler than `t - delta`. Pure asynchrony is expressed by pushing `gst`
//! to the horizon. Messages are delayed, never dropped.

use crate::block::ProcessId;
use crate::blocktree::PayloadRule;
use crate::history::History;
use crate::oracle::AuditRecord;
use crate::protocol::{Behavior, Message};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryPolicy {
    /// No reordering: next-tick delivery and fresh views.
    Fifo,
    /// Seeded delays up to the synchrony bound; arbitrary staleness before
    /// the stabilization tick.
    RandomDelay,
    /// Splits correct processes into two halves that only hear each other
    /// at the stabilization tick; Byzantine processes bridge both sides.
    TargetedRace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n: u32,
    #[serde(default)]
    pub byzantine: BTreeMap<u32, Behavior>,
    /// Stabilization tick; at or above `horizon` means never.
    pub gst: u64,
    pub delta: u64,
    pub horizon: u64,
    pub seed: u64,
    pub adversary: AdversaryPolicy,
    #[serde(default)]
    pub payload_rule: PayloadRule,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("process count must be at least 1")]
    NoProcesses,
    #[error("delta must be at least 1")]
    ZeroDelta,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("byzantine process {0} is out of range")]
    ByzantineOutOfRange(u32),
    #[error("race schedule needs at least 1 round")]
    NoRounds,
    #[error("race target for phase {phase} must be {expected}, got {got}")]
    BadRaceTarget { phase: usize, expected: u64, got: u64 },
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::NoProcesses);
        }
        if self.delta == 0 {
            return Err(ConfigError::ZeroDelta);
        }
        if self.horizon == 0 {
            return Err(ConfigError::ZeroHorizon);
        }
        if let Some(pid) = self.byzantine.keys().find(|p| **p >= self.n) {
            return Err(ConfigError::ByzantineOutOfRange(*pid));
        }
        Ok(())
    }

    pub fn behavior_of(&self, pid: ProcessId) -> Option<Behavior> {
        self.byzantine.get(&pid.0).copied()
    }

    pub fn is_byzantine(&self, pid: ProcessId) -> bool {
        self.byzantine.contains_key(&pid.0)
    }

    /// Correct processes split into two halves for the targeted-race
    /// policy; Byzantine processes belong to neither.
    pub fn partition_group(&self, pid: ProcessId) -> Option<usize> {
        if self.is_byzantine(pid) {
            return None;
        }
        let correct: Vec<u32> = (0..self.n).filter(|p| !self.byzantine.contains_key(p)).collect();
        let half = correct.len().div_ceil(2);
        correct.iter().position(|p| *p == pid.0).map(|i| usize::from(i >= half))
    }
}

/// An in-flight message. Correct-sender deliveries always satisfy
/// `deliver_at <= max(gst, sent + delta)`.
#[derive(Clone, Debug)]
pub struct PendingMessage {
    pub msg: Message,
    pub from: ProcessId,
    pub to: ProcessId,
    pub sent: u64,
    pub deliver_at: u64,
}

/// Picks a delivery tick for a message sent at `sent`, honoring the
/// synchrony bound. The targeted-race policy holds cross-partition
/// traffic until the stabilization tick.
pub fn schedule_delivery<R: rand::Rng>(
    config: &NetConfig,
    rng: &mut R,
    from: ProcessId,
    to: ProcessId,
    sent: u64,
) -> u64 {
    let bound = (sent + config.delta).max(config.gst);
    match config.adversary {
        AdversaryPolicy::Fifo => sent + 1,
        AdversaryPolicy::RandomDelay => rng.gen_range(sent + 1..=bound),
        AdversaryPolicy::TargetedRace => {
            let cross = match (config.partition_group(from), config.partition_group(to)) {
                (Some(a), Some(b)) => a != b,
                // Byzantine endpoints bridge the partition.
                _ => false,
            };
            if cross && sent + config.delta < config.gst {
                bound
            } else {
                rng.gen_range(sent + 1..=sent + config.delta)
            }
        }
    }
}

/// Ordered queue of in-flight messages; ties broken by send sequence so
/// delivery order is deterministic.
#[derive(Debug, Default)]
pub struct MessageQueue {
    pending: BTreeMap<(u64, u64), PendingMessage>,
    next_seq: u64,
    /// Delivery audit: (from, sent, deliver_at) per message.
    pub log: Vec<(ProcessId, u64, u64)>,
}

impl MessageQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pm: PendingMessage) {
        self.log.push((pm.from, pm.sent, pm.deliver_at));
        self.pending.insert((pm.deliver_at, self.next_seq), pm);
        self.next_seq += 1;
    }

    /// Messages due at `tick`, in deterministic order.
    pub fn due(&mut self, tick: u64) -> Vec<PendingMessage> {
        let mut out = Vec::new();
        let keys: Vec<(u64, u64)> = self
            .pending
            .range(..=(tick, u64::MAX))
            .map(|(k, _)| *k)
            .collect();
        for key in keys {
            out.push(self.pending.remove(&key).unwrap());
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }
}

/// Workload and protocol selection for a run, the unit the CLI reads from
/// scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum ProtocolSpec {
    /// Asynchronous appender over the shared-tree oracle.
    EpAsync {
        appends_per_process: u32,
        append_every: u64,
        read_every: u64,
    },
    /// The scripted longest-chain race.
    LongestChainRace {
        rounds: u32,
        /// Per-phase branch-length targets; empty means the minimal
        /// crossover ladder.
        #[serde(default)]
        targets: Vec<u64>,
    },
    /// Majority-notarization Streamlet variant.
    StreamletMod {
        #[serde(default)]
        original_threshold: bool,
        /// Drive repeated-proposal instances up to this index and read
        /// every tick instead of every epoch.
        #[serde(default)]
        ec_instances: Option<u32>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: NetConfig,
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
}

/// Everything a run produces: the history trace, the oracle audit log
/// (empty for message-passing protocols), and run statistics.
#[derive(Debug)]
pub struct RunArtifacts {
    pub history: History,
    pub audit: Vec<AuditRecord>,
    pub stats: RunStats,
}

/// Per-run observations the acceptance suite asserts on.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunStats {
    /// Blocks in the final global tree (oracle protocols).
    pub tree_blocks: Option<usize>,
    /// Widest fork after per-creator filtering (oracle protocols).
    pub max_effective_fork_width: Option<usize>,
    /// (previous leader length, new leader length) at each lead change of
    /// the race schedule.
    pub lead_changes: Vec<(u64, u64)>,
    /// Per process: conflicting-finalization events it observed.
    pub fork_events: BTreeMap<u32, u64>,
    /// Per process: processes it excluded after detection.
    pub exclusions: BTreeMap<u32, Vec<u32>>,
    /// Ticks at which some process shrank its finalized chain; legal only
    /// as a detection consequence.
    pub finalized_resets: Vec<u64>,
}

impl RunStats {
    pub fn max_fork_events(&self) -> u64 {
        self.fork_events.values().copied().max().unwrap_or(0)
    }
}

/// Runs a scenario to its horizon and returns the artifacts.
pub fn run(scenario: &Scenario) -> Result<RunArtifacts, ConfigError> {
    scenario.config.validate()?;
    match &scenario.protocol {
        ProtocolSpec::EpAsync {
            appends_per_process,
            append_every,
            read_every,
        } => Ok(crate::protocol::ep::run_ep(
            &scenario.config,
            *appends_per_process,
            *append_every,
            *read_every,
        )),
        ProtocolSpec::LongestChainRace { rounds, targets } => {
            crate::protocol::race::run_race(&scenario.config, *rounds, targets)
        }
        ProtocolSpec::StreamletMod {
            original_threshold,
            ec_instances,
        } => Ok(crate::protocol::streamlet::run_streamlet(
            &scenario.config,
            *original_threshold,
            *ec_instances,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn config(adversary: AdversaryPolicy) -> NetConfig {
        NetConfig {
            n: 4,
            byzantine: BTreeMap::new(),
            gst: 100,
            delta: 5,
            horizon: 400,
            seed: 9,
            adversary,
            payload_rule: PayloadRule::AcceptAll,
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = config(AdversaryPolicy::Fifo);
        c.delta = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroDelta));
        let mut c = config(AdversaryPolicy::Fifo);
        c.byzantine.insert(9, Behavior::Silent);
        assert_eq!(c.validate(), Err(ConfigError::ByzantineOutOfRange(9)));
    }

    #[test]
    fn delivery_respects_synchrony_bound() {
        let c = config(AdversaryPolicy::RandomDelay);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        for sent in [0u64, 50, 99, 100, 200] {
            for _ in 0..50 {
                let at = schedule_delivery(&c, &mut rng, ProcessId(0), ProcessId(1), sent);
                assert!(at > sent);
                assert!(at <= (sent + c.delta).max(c.gst));
                if sent >= c.gst {
                    assert!(at <= sent + c.delta);
                }
            }
        }
    }

    #[test]
    fn targeted_race_partitions_until_stabilization() {
        let mut c = config(AdversaryPolicy::TargetedRace);
        c.byzantine.insert(3, Behavior::VoteLow);
        // Correct processes 0,1,2 split into {0,1} and {2}.
        assert_eq!(c.partition_group(ProcessId(0)), Some(0));
        assert_eq!(c.partition_group(ProcessId(1)), Some(0));
        assert_eq!(c.partition_group(ProcessId(2)), Some(1));
        assert_eq!(c.partition_group(ProcessId(3)), None);

        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        // Cross-partition traffic waits for the stabilization tick.
        let at = schedule_delivery(&c, &mut rng, ProcessId(0), ProcessId(2), 10);
        assert_eq!(at, c.gst);
        // The Byzantine bridge is fast both ways.
        let at = schedule_delivery(&c, &mut rng, ProcessId(3), ProcessId(2), 10);
        assert!(at <= 10 + c.delta);
        // Intra-partition traffic is fast.
        let at = schedule_delivery(&c, &mut rng, ProcessId(0), ProcessId(1), 10);
        assert!(at <= 10 + c.delta);
        // After stabilization everything is fast.
        let at = schedule_delivery(&c, &mut rng, ProcessId(0), ProcessId(2), 150);
        assert!(at <= 150 + c.delta);
    }

    #[test]
    fn queue_delivers_in_deterministic_order() {
        let mut q = MessageQueue::new();
        let g = crate::block::Block::genesis();
        for (i, at) in [(0u32, 5u64), (1, 3), (2, 5)] {
            q.push(PendingMessage {
                msg: Message::propose(ProcessId(i), 0, g.clone()),
                from: ProcessId(i),
                to: ProcessId(0),
                sent: 1,
                deliver_at: at,
            });
        }
        let due3 = q.due(3);
        assert_eq!(due3.len(), 1);
        assert_eq!(due3[0].from, ProcessId(1));
        let due5 = q.due(5);
        assert_eq!(due5.len(), 2);
        assert_eq!(due5[0].from, ProcessId(0));
        assert_eq!(due5[1].from, ProcessId(2));
        assert_eq!(q.in_flight(), 0);
    }
}
