//! Reference evaluator: recomputes every verdict by direct enumeration.
//!
//! This module deliberately shares no logic with the optimized checker.
//! Prefix tests are spelled out blockwise, displacement is found by trying
//! every prune depth, and the eventual-strong-prefix cut is found by
//! scanning every candidate cut instead of locating the last conflict.
//! The acceptance suite compares both evaluators over seeded random
//! histories; any divergence is a checker bug.

use crate::blocktree::{Chain, ValidityPredicate};
use crate::history::{Event, EventKind, History};

fn reads(h: &History) -> Vec<(&Event, &Chain)> {
    let mut out = Vec::new();
    for event in h.events() {
        if let EventKind::ReadRsp { chain } = &event.kind {
            out.push((event, chain));
        }
    }
    out
}

fn prefixes(a: &Chain, b: &Chain) -> bool {
    if a.len() > b.len() {
        return false;
    }
    for i in 0..a.len() {
        if a[i].id != b[i].id {
            return false;
        }
    }
    true
}

pub fn chain_validity(h: &History, predicate: &ValidityPredicate) -> bool {
    reads(h).iter().all(|(_, chain)| predicate.check(chain))
}

pub fn chain_integrity(h: &History) -> bool {
    for (read, chain) in reads(h) {
        for block in chain.iter() {
            if block.is_genesis() {
                continue;
            }
            let appended_before = h.events().iter().any(|e| {
                e.eid < read.eid
                    && matches!(&e.kind, EventKind::AppendInv { block: b } if b.id == block.id)
            });
            if !appended_before {
                return false;
            }
        }
    }
    true
}

/// Literal windowed eventual prefix: for every position filled by any read
/// strictly before `window * horizon`, every pair of reads at or after the
/// stabilization tick that both reach the position must return the same
/// block there. Returns None when the history cannot be judged (fewer than
/// two reads, or no reads in the stabilization region).
pub fn eventual_prefix(h: &History, window: f64) -> Option<bool> {
    let all = reads(h);
    if all.len() < 2 {
        return None;
    }
    let horizon = h.horizon() as f64;
    let fill_cutoff = window * horizon;
    let stable_from = (1.0 - (1.0 - window) / 2.0) * horizon;
    if !all.iter().any(|(e, _)| e.tick as f64 >= stable_from) {
        return None;
    }
    let mut position = 0usize;
    loop {
        let filled_early = all
            .iter()
            .any(|(e, c)| (e.tick as f64) < fill_cutoff && c.len() > position);
        if !filled_early {
            return Some(true);
        }
        for (e1, c1) in &all {
            for (e2, c2) in &all {
                if (e1.tick as f64) < stable_from || (e2.tick as f64) < stable_from {
                    continue;
                }
                if let (Some(b1), Some(b2)) = (c1.get(position), c2.get(position)) {
                    if b1.id != b2.id {
                        return Some(false);
                    }
                }
            }
        }
        position += 1;
    }
}

pub fn ever_growing_tree(h: &History, k: u64) -> Option<bool> {
    let has_append = h
        .events()
        .iter()
        .any(|e| matches!(e.kind, EventKind::AppendInv { .. }));
    if !has_append {
        return None;
    }
    Some(reads(h).iter().any(|(_, c)| c.len() as u64 > k))
}

pub fn strong_prefix(h: &History) -> bool {
    let all = reads(h);
    for (_, a) in &all {
        for (_, b) in &all {
            if !prefixes(a, b) && !prefixes(b, a) {
                return false;
            }
        }
    }
    true
}

/// Scans every candidate cut from the front: the smallest read index such
/// that all pairs of reads at or beyond it are mutually comparable.
pub fn min_esp_cut(h: &History) -> Option<usize> {
    let all = reads(h);
    if all.is_empty() {
        return None;
    }
    'cut: for cut in 0..all.len() {
        for i in cut..all.len() {
            for j in cut..all.len() {
                let (a, b) = (all[i].1, all[j].1);
                if !prefixes(a, b) && !prefixes(b, a) {
                    continue 'cut;
                }
            }
        }
        return Some(cut);
    }
    Some(all.len() - 1)
}

pub fn eventual_strong_prefix(h: &History, cut_fraction: f64) -> Option<bool> {
    let all = reads(h);
    if all.len() < 2 {
        return None;
    }
    let cut = min_esp_cut(h)?;
    Some(cut as f64 <= cut_fraction * all.len() as f64)
}

/// Displacement by trying every prune depth in turn, never pruning
/// genesis away.
fn displacement_by_search(a: &Chain, b: &Chain) -> usize {
    for d in 0..=a.len() {
        let keep = a.len().saturating_sub(d).max(1);
        let pruned = Chain(a.0[..keep].to_vec());
        if prefixes(&pruned, b) {
            return d;
        }
    }
    a.len()
}

pub fn max_displacement(h: &History) -> usize {
    let all = reads(h);
    let mut max = 0;
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            max = max.max(displacement_by_search(all[i].1, all[j].1));
        }
    }
    max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{Block, ProcessId};
    use crate::history::RunMeta;
    use std::sync::Arc;

    #[test]
    fn displacement_search_clamps_at_genesis() {
        let g = Block::genesis();
        let a = Block::child(&g, ProcessId(1), 0, vec![1]);
        let b = Block::child(&g, ProcessId(2), 0, vec![2]);
        let ca = Chain(vec![Arc::clone(&g), a]);
        let cb = Chain(vec![g, b]);
        assert_eq!(displacement_by_search(&ca, &cb), 1);
        assert_eq!(displacement_by_search(&ca, &ca), 0);
    }

    #[test]
    fn strong_prefix_trivial_cases() {
        let mut h = History::new(RunMeta::bare("test", 1, 0, 10));
        h.record_read(ProcessId(0), 1, Chain::genesis_only());
        h.record_read(ProcessId(0), 2, Chain::genesis_only());
        assert!(strong_prefix(&h));
        assert_eq!(min_esp_cut(&h), Some(0));
    }
}
