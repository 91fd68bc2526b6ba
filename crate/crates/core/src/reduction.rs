//! Pruning reductions between consistency levels, and the eventual-
//! agreement adapter over them.
//!
//! Reads through a known displacement bound `dis` can drop their last
//! `dis` blocks and return only settled prefixes: any two such reads are
//! prefix-comparable, which is strong prefix. When the bound exists but is
//! unknown, returning the first half of the chain prunes a growing number
//! of blocks, which eventually exceeds the bound: eventual strong prefix.
//! On top of an eventual-strong-prefix base, repeated proposals decide by
//! appending and polling reads until their position fills, which yields
//! agreement on every instance beyond some index.

use crate::block::ProcessId;
use crate::blocktree::{prune_half, prune_last, Chain};
use crate::history::History;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How a pruned reader cuts the base chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    /// The displacement bound is known: drop its worth of trailing blocks.
    KnownDis(usize),
    /// Unknown bound: keep the first half.
    Half,
}

impl PruneMode {
    pub fn apply(&self, chain: &Chain) -> Chain {
        match self {
            PruneMode::KnownDis(d) => prune_last(chain, *d),
            PruneMode::Half => prune_half(chain),
        }
    }
}

/// Anything that can serve reads and best-effort appends; the base
/// protocol handle a pruned reader or instance driver wraps.
pub trait ProtocolHandle {
    fn append(&mut self, payload: Vec<u8>) -> bool;
    fn read(&mut self) -> Chain;
}

/// Read-side wrapper: appends pass through, reads come back pruned.
pub struct PrunedReader<H> {
    pub base: H,
    pub mode: PruneMode,
}

impl<H: ProtocolHandle> PrunedReader<H> {
    pub fn new(base: H, mode: PruneMode) -> Self {
        PrunedReader { base, mode }
    }

    pub fn append(&mut self, payload: Vec<u8>) -> bool {
        self.base.append(payload)
    }

    pub fn read(&mut self) -> Chain {
        self.mode.apply(&self.base.read())
    }
}

/// Derives the pruned-reader history from a base run: every returned
/// chain is cut by the mode, everything else is untouched.
pub fn prune_history(h: &History, mode: PruneMode) -> History {
    h.map_read_chains(|c| mode.apply(c))
}

/// One repeated-proposal instance: decides at most once.
#[derive(Clone, Debug)]
pub struct EcInstance {
    pub index: u32,
    pub decided: Option<Chain>,
}

impl EcInstance {
    pub fn new(index: u32) -> Self {
        EcInstance {
            index,
            decided: None,
        }
    }

    /// The block this instance agreed on, once decided.
    pub fn value(&self) -> Option<&std::sync::Arc<crate::block::Block>> {
        self.decided.as_ref().and_then(|c| c.get(self.index as usize))
    }
}

/// Proposes a value for one instance: appends it through the base, then
/// polls reads until the instance's position fills and the chain is the
/// decision. Returns None if the tree stops growing within the poll
/// budget; on a live base the ever-growing tree guarantees termination.
pub fn propose_ec<H: ProtocolHandle>(
    base: &mut H,
    instance: &mut EcInstance,
    value: Vec<u8>,
    max_polls: usize,
) -> Option<Chain> {
    if let Some(decided) = &instance.decided {
        return Some(decided.clone()); // integrity: one decision per instance
    }
    base.append(value);
    for _ in 0..max_polls {
        let chain = base.read();
        if chain.len() > instance.index as usize {
            instance.decided = Some(chain.clone());
            return Some(chain);
        }
    }
    None
}

/// A decision extracted from a trace: the first read of the process whose
/// chain filled the instance's position, following the sequential
/// invocation discipline (instance j+1 starts only after j decided).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcDecision {
    pub process: ProcessId,
    pub instance: u32,
    pub tick: u64,
    pub chain: Chain,
}

/// Replays the instance discipline over each process's read sequence.
pub fn ec_decisions(h: &History, max_instance: u32) -> BTreeMap<u32, Vec<EcDecision>> {
    let mut out: BTreeMap<u32, Vec<EcDecision>> = BTreeMap::new();
    let processes: std::collections::BTreeSet<u32> = h
        .reads_in_program_order(None)
        .iter()
        .map(|(e, _)| e.process.0)
        .collect();
    for p in processes {
        let mut decisions = Vec::new();
        let mut next = 1u32;
        for (event, chain) in h.reads_in_program_order(Some(ProcessId(p))) {
            if next > max_instance {
                break;
            }
            if chain.len() > next as usize {
                decisions.push(EcDecision {
                    process: ProcessId(p),
                    instance: next,
                    tick: event.tick,
                    chain: chain.clone(),
                });
                next += 1;
            }
        }
        out.insert(p, decisions);
    }
    out
}

/// The smallest instance index from which every process's decided value
/// (the block at the instance position) agrees, over instances decided by
/// all processes. None when no such suffix exists.
pub fn smallest_agreement_instance(
    decisions: &BTreeMap<u32, Vec<EcDecision>>,
) -> Option<u32> {
    if decisions.is_empty() {
        return None;
    }
    let max_common = decisions
        .values()
        .map(|d| d.len() as u32)
        .min()
        .unwrap_or(0);
    if max_common == 0 {
        return None;
    }
    let agree = |j: u32| -> bool {
        let mut value = None;
        for per_process in decisions.values() {
            let d = &per_process[(j - 1) as usize];
            debug_assert_eq!(d.instance, j);
            let block = d.chain.get(j as usize).map(|b| b.id);
            match (&value, block) {
                (None, b) => value = Some(b),
                (Some(v), b) if *v == b => {}
                _ => return false,
            }
        }
        true
    };
    let mut k = max_common;
    while k > 1 && agree(k - 1) {
        k -= 1;
    }
    if k == max_common && !agree(max_common) {
        return None;
    }
    Some(k)
}
