//! Shared-tree oracles.
//!
//! All writes to the global blocktree go through an oracle: a process asks
//! for a grant (`get_valid_block`) for a candidate under a parent, then
//! applies it (`set_valid_block`). The unconstrained oracle admits any
//! valid block and places no bound on fork width; the fork-bounded variant
//! counts outstanding grants toward a per-parent cap of `k` children so the
//! cap can never be exceeded by concurrent grants. Views are versioned
//! immutable snapshots; the scheduler may serve any version at or above a
//! process's previous one, which is where asynchrony enters.

use crate::block::{Block, BlockId, ProcessId};
use crate::blocktree::{Blocktree, Chain, ValidityPredicate};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// An immutable view of the global tree at some version.
#[derive(Clone, Debug)]
pub struct ViewSnapshot {
    pub tree: Arc<Blocktree>,
    pub version: u64,
    /// Tick at which this version was produced.
    pub tick: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    /// The parent is not in the global tree. Distinct from a negative
    /// grant: the caller's view is stale and it should refresh.
    #[error("unknown parent {0}")]
    UnknownParent(BlockId),
    /// `set_valid_block` without a prior grant for this (parent, block)
    /// pair; a protocol bug.
    #[error("append of {block} under {parent} was never granted")]
    UngrantedAppend { parent: BlockId, block: BlockId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditOp {
    UpdateView,
    GetValidBlock,
    SetValidBlock,
}

/// One line of the oracle audit log, consumed by the checker's oracle
/// invariant audits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub op: AuditOp,
    pub process: ProcessId,
    pub parent: Option<BlockId>,
    pub block: Option<BlockId>,
    pub version: u64,
    pub result: String,
}

/// The shared-tree oracle. `fork_bound: None` is the unconstrained oracle;
/// `Some(k)` caps every parent at `k` children, grants included.
#[derive(Debug)]
pub struct Oracle {
    versions: Vec<ViewSnapshot>,
    predicate: ValidityPredicate,
    fork_bound: Option<u32>,
    /// Granted (parent, block) pairs; grants are never revoked, so a grant
    /// guarantees the later apply succeeds.
    grants: BTreeSet<(BlockId, BlockId)>,
    /// Granted but not yet applied children per parent; these count toward
    /// the fork bound.
    pending: BTreeMap<BlockId, BTreeSet<BlockId>>,
    /// Block contents granted per id, for the apply-time provenance check.
    granted_blocks: BTreeMap<BlockId, Arc<Block>>,
    /// Last version served to each process; views never move backwards.
    floors: BTreeMap<ProcessId, u64>,
    audit: Vec<AuditRecord>,
}

impl Oracle {
    /// Unconstrained-fork oracle.
    pub fn unbounded(predicate: ValidityPredicate) -> Oracle {
        Self::with_bound(predicate, None)
    }

    /// Fork-bounded oracle: at most `k` children ever attach to a parent.
    pub fn fork_bounded(predicate: ValidityPredicate, k: u32) -> Oracle {
        Self::with_bound(predicate, Some(k))
    }

    fn with_bound(predicate: ValidityPredicate, fork_bound: Option<u32>) -> Oracle {
        Oracle {
            versions: vec![ViewSnapshot {
                tree: Arc::new(Blocktree::new()),
                version: 0,
                tick: 0,
            }],
            predicate,
            fork_bound,
            grants: BTreeSet::new(),
            pending: BTreeMap::new(),
            granted_blocks: BTreeMap::new(),
            floors: BTreeMap::new(),
            audit: Vec::new(),
        }
    }

    pub fn current_version(&self) -> u64 {
        (self.versions.len() - 1) as u64
    }

    pub fn current_tree(&self) -> &Arc<Blocktree> {
        &self.versions.last().unwrap().tree
    }

    pub fn predicate(&self) -> &ValidityPredicate {
        &self.predicate
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Lowest version the scheduler may serve to `process`.
    pub fn floor(&self, process: ProcessId) -> u64 {
        self.floors.get(&process).copied().unwrap_or(0)
    }

    /// Latest version whose publication tick is at most `tick`.
    pub fn version_at_tick(&self, tick: u64) -> u64 {
        match self.versions.partition_point(|v| v.tick <= tick) {
            0 => 0,
            p => (p - 1) as u64,
        }
    }

    /// Serves `process` the snapshot at `version`, clamped to be no older
    /// than the process's floor and no newer than the current version.
    pub fn update_view(&mut self, process: ProcessId, version: u64) -> ViewSnapshot {
        let clamped = version.max(self.floor(process)).min(self.current_version());
        self.floors.insert(process, clamped);
        let snap = self.versions[clamped as usize].clone();
        self.audit.push(AuditRecord {
            op: AuditOp::UpdateView,
            process,
            parent: None,
            block: None,
            version: clamped,
            result: "ok".into(),
        });
        snap
    }

    /// Fresh view at the current version.
    pub fn update_view_fresh(&mut self, process: ProcessId) -> ViewSnapshot {
        self.update_view(process, self.current_version())
    }

    /// Grant request: is `candidate` a valid extension of `parent`?
    /// Validity is judged against the current global tree; the fork bound
    /// counts applied children plus outstanding grants.
    pub fn get_valid_block(
        &mut self,
        process: ProcessId,
        parent: BlockId,
        candidate: &Arc<Block>,
    ) -> Result<bool, OracleError> {
        let version = self.current_version();
        let result = self.grant_decision(parent, candidate);
        if let Ok(granted) = result {
            if granted {
                self.grants.insert((parent, candidate.id));
                self.granted_blocks.insert(candidate.id, Arc::clone(candidate));
                if !self.current_tree().contains(&candidate.id) {
                    self.pending.entry(parent).or_default().insert(candidate.id);
                }
            }
        }
        self.audit.push(AuditRecord {
            op: AuditOp::GetValidBlock,
            process,
            parent: Some(parent),
            block: Some(candidate.id),
            version,
            result: match &result {
                Ok(true) => "granted".into(),
                Ok(false) => "denied".into(),
                Err(e) => format!("error: {e}"),
            },
        });
        result
    }

    fn grant_decision(&self, parent: BlockId, candidate: &Arc<Block>) -> Result<bool, OracleError> {
        let tree = self.current_tree();
        if !tree.contains(&parent) {
            return Err(OracleError::UnknownParent(parent));
        }
        if self.grants.contains(&(parent, candidate.id)) {
            return Ok(true); // grants are monotone
        }
        if candidate.parent != parent {
            return Ok(false);
        }
        let mut chain = tree.chain_to(&parent).expect("parent present");
        chain.0.push(Arc::clone(candidate));
        if !self.predicate.check(&chain) {
            return Ok(false);
        }
        if let Some(k) = self.fork_bound {
            let applied = tree.children(&parent).len();
            let pending = self
                .pending
                .get(&parent)
                .map(|s| s.iter().filter(|id| !tree.contains(id)).count())
                .unwrap_or(0);
            if applied + pending >= k as usize {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Applies a granted block, publishing a new tree version, and returns
    /// the parent's full child set so a slow caller learns about siblings
    /// that raced ahead of it. Retries of an already-applied block are
    /// idempotent.
    pub fn set_valid_block(
        &mut self,
        process: ProcessId,
        parent: BlockId,
        block: Arc<Block>,
        tick: u64,
    ) -> Result<BTreeSet<BlockId>, OracleError> {
        let outcome = self.apply_granted(parent, block.clone(), tick);
        self.audit.push(AuditRecord {
            op: AuditOp::SetValidBlock,
            process,
            parent: Some(parent),
            block: Some(block.id),
            version: self.current_version(),
            result: match &outcome {
                Ok(_) => "applied".into(),
                Err(e) => format!("error: {e}"),
            },
        });
        outcome
    }

    fn apply_granted(
        &mut self,
        parent: BlockId,
        block: Arc<Block>,
        tick: u64,
    ) -> Result<BTreeSet<BlockId>, OracleError> {
        if !self.grants.contains(&(parent, block.id)) {
            return Err(OracleError::UngrantedAppend {
                parent,
                block: block.id,
            });
        }
        if !self.current_tree().contains(&block.id) {
            let mut tree = (**self.current_tree()).clone();
            tree.attach(block.clone(), tick)
                .expect("granted block must attach");
            self.versions.push(ViewSnapshot {
                tree: Arc::new(tree),
                version: self.versions.len() as u64,
                tick,
            });
            if let Some(set) = self.pending.get_mut(&parent) {
                set.remove(&block.id);
            }
        }
        Ok(self
            .current_tree()
            .children(&parent)
            .iter()
            .copied()
            .collect())
    }

    /// Audits every reachable version: fork bound respected, every block
    /// valid under the predicate. Used after runs and in tests.
    pub fn audit_invariants(&self) -> Result<(), String> {
        for snap in &self.versions {
            snap.tree.validate()?;
            for block in snap.tree.blocks() {
                if block.is_genesis() {
                    continue;
                }
                let chain: Chain = snap.tree.chain_to(&block.id).unwrap();
                if !self.predicate.check(&chain) {
                    return Err(format!("invalid chain to {} in version {}", block.id, snap.version));
                }
                if !self.grants.contains(&(block.parent, block.id)) {
                    return Err(format!("block {} applied without grant", block.id));
                }
            }
            if let Some(k) = self.fork_bound {
                for block in snap.tree.blocks() {
                    let width = snap.tree.children(&block.id).len();
                    if width > k as usize {
                        return Err(format!(
                            "fork bound exceeded at {}: {} > {}",
                            block.id, width, k
                        ));
                    }
                }
            }
        }
        // Versions served to each process never decreased.
        let mut last: BTreeMap<ProcessId, u64> = BTreeMap::new();
        for rec in &self.audit {
            if rec.op == AuditOp::UpdateView {
                if let Some(prev) = last.get(&rec.process) {
                    if rec.version < *prev {
                        return Err(format!("view for {} moved backwards", rec.process));
                    }
                }
                last.insert(rec.process, rec.version);
            }
        }
        Ok(())
    }

    pub fn write_audit_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.audit {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
