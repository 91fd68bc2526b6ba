//! Consistency checking over recorded histories.
//!
//! Each consistency criterion is decided (or measured) over the read
//! responses of a history. The two eventual criteria quantify over
//! infinite histories, so on finite traces they are decided under explicit
//! approximation parameters: a stabilization window for eventual prefix
//! and a cut fraction for eventual strong prefix. Positions a late read
//! has not reached do not count as disagreement; this keeps the criteria
//! lattice (strong prefix implies eventual strong prefix implies eventual
//! prefix) intact on finite traces. Event ids are the total order standing
//! in for program order wherever the definitions quantify over subsequent
//! reads.
//!
//! The [`reference`] module holds an independent evaluator that recomputes
//! every verdict by direct enumeration; the two are compared over seeded
//! random histories in the acceptance suite.

pub mod reference;

use crate::block::BlockId;
use crate::blocktree::{is_prefix, Chain, ValidityPredicate};
use crate::history::{Event, EventKind, History};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    ChainValidity,
    ChainIntegrity,
    EventualPrefix,
    EverGrowingTree,
    StrongPrefix,
    EventualStrongPrefix,
    BoundedDisplacement,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Criterion::ChainValidity => "chain-validity",
            Criterion::ChainIntegrity => "chain-integrity",
            Criterion::EventualPrefix => "eventual-prefix",
            Criterion::EverGrowingTree => "ever-growing-tree",
            Criterion::StrongPrefix => "strong-prefix",
            Criterion::EventualStrongPrefix => "eventual-strong-prefix",
            Criterion::BoundedDisplacement => "bounded-displacement",
        };
        write!(f, "{name}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    /// The history is too small to decide the criterion.
    Inconclusive,
    /// Quantitative criteria report a measurement instead of pass/fail.
    Measured,
}

/// Concrete evidence for a failing verdict, drawn from the history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Witness {
    InvalidRead { eid: u64 },
    UnappendedBlock { eid: u64, block: BlockId },
    PositionDisagrees { position: usize, first_eid: u64, second_eid: u64 },
    IncomparablePair { first_eid: u64, second_eid: u64 },
    NoReadLongerThan { k: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: Criterion,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub detail: String,
}

impl Verdict {
    fn pass(criterion: Criterion, detail: impl Into<String>) -> Verdict {
        Verdict {
            criterion,
            outcome: Outcome::Pass,
            witness: None,
            detail: detail.into(),
        }
    }

    fn fail(criterion: Criterion, witness: Witness, detail: impl Into<String>) -> Verdict {
        Verdict {
            criterion,
            outcome: Outcome::Fail,
            witness: Some(witness),
            detail: detail.into(),
        }
    }

    fn inconclusive(criterion: Criterion, detail: impl Into<String>) -> Verdict {
        Verdict {
            criterion,
            outcome: Outcome::Inconclusive,
            witness: None,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

/// Quantitative companions to the verdicts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Number of value changes per chain position across the global read
    /// sequence (a change to or from an unfilled position counts).
    pub churn: BTreeMap<usize, u64>,
    pub max_displacement: usize,
    /// Max displacement over the first half of the reads; equality with
    /// the full-history max suggests the displacement is bounded.
    pub first_half_displacement: usize,
    pub displacement_plateaus: bool,
    /// (tick, length) samples of the common prefix over every process's
    /// latest read.
    pub common_prefix_series: Vec<(u64, usize)>,
    /// Smallest read index from which all later reads are pairwise
    /// prefix-comparable.
    pub min_esp_cut: Option<usize>,
    /// Smallest instance index from which repeated-proposal decisions
    /// agree across processes, when the trace is run in that mode.
    pub smallest_k_ec: Option<usize>,
    pub reads: usize,
    pub appends: usize,
    pub successful_appends: usize,
}

/// Approximation parameters for the eventual criteria.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CheckParams {
    /// Fraction of the horizon before which a position must be filled to
    /// be checked, with stabilization required from the midpoint of the
    /// remaining run.
    pub window: f64,
    /// Latest admissible stabilization point for eventual strong prefix,
    /// as a fraction of the read count.
    pub cut_fraction: f64,
}

impl Default for CheckParams {
    fn default() -> Self {
        CheckParams {
            window: 0.5,
            cut_fraction: 0.5,
        }
    }
}

pub(crate) fn reads_of(h: &History) -> Vec<(&Event, &Chain)> {
    h.reads_in_program_order(None)
}

/// Every returned chain satisfies the validity predicate.
pub fn check_chain_validity(h: &History, predicate: &ValidityPredicate) -> Verdict {
    for (event, chain) in reads_of(h) {
        if !predicate.check(chain) {
            return Verdict::fail(
                Criterion::ChainValidity,
                Witness::InvalidRead { eid: event.eid },
                format!("read {} returned an invalid chain", event.eid),
            );
        }
    }
    Verdict::pass(Criterion::ChainValidity, "all returned chains valid")
}

/// Every non-genesis block in a returned chain was appended earlier in the
/// event order.
pub fn check_chain_integrity(h: &History) -> Verdict {
    let mut first_append: BTreeMap<BlockId, u64> = BTreeMap::new();
    for event in h.events() {
        if let EventKind::AppendInv { block } = &event.kind {
            first_append.entry(block.id).or_insert(event.eid);
        }
    }
    for (event, chain) in reads_of(h) {
        for block in chain.iter() {
            if block.is_genesis() {
                continue;
            }
            match first_append.get(&block.id) {
                Some(inv_eid) if *inv_eid < event.eid => {}
                _ => {
                    return Verdict::fail(
                        Criterion::ChainIntegrity,
                        Witness::UnappendedBlock {
                            eid: event.eid,
                            block: block.id,
                        },
                        format!(
                            "read {} returned block {} with no preceding append",
                            event.eid, block.id
                        ),
                    );
                }
            }
        }
    }
    Verdict::pass(Criterion::ChainIntegrity, "all returned blocks were appended")
}

/// Finite approximation of eventual prefix: every position filled within
/// the early window must be agreed on by all sufficiently late reads that
/// have reached it.
pub fn check_eventual_prefix(h: &History, params: &CheckParams) -> Verdict {
    let reads = reads_of(h);
    if reads.len() < 2 {
        return Verdict::inconclusive(Criterion::EventualPrefix, "fewer than 2 reads");
    }
    let horizon = h.horizon() as f64;
    let fill_cutoff = params.window * horizon;
    let stable_from = (1.0 - (1.0 - params.window) / 2.0) * horizon;

    let late: Vec<&(&Event, &Chain)> = reads
        .iter()
        .filter(|(e, _)| e.tick as f64 >= stable_from)
        .collect();
    if late.is_empty() {
        return Verdict::inconclusive(
            Criterion::EventualPrefix,
            format!("no reads at or after tick {stable_from:.0}"),
        );
    }

    let max_early_len = reads
        .iter()
        .filter(|(e, _)| (e.tick as f64) < fill_cutoff)
        .map(|(_, c)| c.len())
        .max()
        .unwrap_or(0);

    for position in 0..max_early_len {
        let mut agreed: Option<(u64, BlockId)> = None;
        for (event, chain) in &late {
            let Some(block) = chain.get(position) else {
                continue; // not reached by this read: no constraint
            };
            match agreed {
                None => agreed = Some((event.eid, block.id)),
                Some((first_eid, id)) if id != block.id => {
                    return Verdict::fail(
                        Criterion::EventualPrefix,
                        Witness::PositionDisagrees {
                            position,
                            first_eid,
                            second_eid: event.eid,
                        },
                        format!("late reads disagree at position {position}"),
                    );
                }
                Some(_) => {}
            }
        }
    }
    Verdict::pass(
        Criterion::EventualPrefix,
        format!(
            "positions filled before tick {fill_cutoff:.0} agreed from tick {stable_from:.0}"
        ),
    )
}

/// Some read returned a chain longer than `k`.
pub fn check_ever_growing_tree(h: &History, k: u64) -> Verdict {
    if !h
        .events()
        .iter()
        .any(|e| matches!(e.kind, EventKind::AppendInv { .. }))
    {
        return Verdict::inconclusive(Criterion::EverGrowingTree, "history contains no appends");
    }
    let longest = reads_of(h).iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    if longest as u64 > k {
        Verdict::pass(
            Criterion::EverGrowingTree,
            format!("longest read chain {longest} exceeds k={k}"),
        )
    } else {
        Verdict::fail(
            Criterion::EverGrowingTree,
            Witness::NoReadLongerThan { k },
            format!("longest read chain {longest} does not exceed k={k}"),
        )
    }
}

/// Distinct chains with the read indices at which they occur, preserving
/// first-occurrence order. Collapsing repeats keeps the pairwise checks
/// quadratic in distinct chains rather than in reads.
fn chain_classes<'a>(reads: &[(&'a Event, &'a Chain)]) -> Vec<(&'a Chain, Vec<usize>)> {
    let mut index: BTreeMap<Vec<BlockId>, usize> = BTreeMap::new();
    let mut classes: Vec<(&Chain, Vec<usize>)> = Vec::new();
    for (i, (_, chain)) in reads.iter().enumerate() {
        let key: Vec<BlockId> = chain.ids().collect();
        match index.get(&key) {
            Some(&class) => classes[class].1.push(i),
            None => {
                index.insert(key, classes.len());
                classes.push((chain, vec![i]));
            }
        }
    }
    classes
}

fn comparable(a: &Chain, b: &Chain) -> bool {
    is_prefix(a, b) || is_prefix(b, a)
}

/// Every pair of returned chains is prefix-comparable. Exact on finite
/// histories.
pub fn check_strong_prefix(h: &History) -> Verdict {
    let reads = reads_of(h);
    let classes = chain_classes(&reads);
    for (i, (a, occ_a)) in classes.iter().enumerate() {
        for (b, occ_b) in classes.iter().skip(i + 1) {
            if !comparable(a, b) {
                let (mut first, mut second) = (reads[occ_a[0]].0.eid, reads[occ_b[0]].0.eid);
                if first > second {
                    std::mem::swap(&mut first, &mut second);
                }
                return Verdict::fail(
                    Criterion::StrongPrefix,
                    Witness::IncomparablePair {
                        first_eid: first,
                        second_eid: second,
                    },
                    "two returned chains are prefix-incomparable",
                );
            }
        }
    }
    Verdict::pass(Criterion::StrongPrefix, "all returned chains comparable")
}

/// Smallest read index from which all later reads are pairwise
/// prefix-comparable. Always defined for non-empty read sets (a single
/// trailing read is vacuously comparable).
pub fn min_esp_cut(h: &History) -> Option<usize> {
    let reads = reads_of(h);
    if reads.is_empty() {
        return None;
    }
    let classes = chain_classes(&reads);
    let mut cut = 0usize;
    for (i, (a, occ_a)) in classes.iter().enumerate() {
        for (b, occ_b) in classes.iter().skip(i + 1) {
            if !comparable(a, b) {
                let last_a = *occ_a.last().unwrap();
                let last_b = *occ_b.last().unwrap();
                cut = cut.max(last_a.min(last_b) + 1);
            }
        }
    }
    Some(cut)
}

/// Eventual strong prefix under the cut-fraction approximation: the
/// stabilization read must occur within the first `cut_fraction` of the
/// read sequence.
pub fn check_eventual_strong_prefix(h: &History, params: &CheckParams) -> (Verdict, Option<usize>) {
    let reads = reads_of(h);
    if reads.len() < 2 {
        return (
            Verdict::inconclusive(Criterion::EventualStrongPrefix, "fewer than 2 reads"),
            None,
        );
    }
    let cut = min_esp_cut(h).unwrap();
    let budget = params.cut_fraction * reads.len() as f64;
    let verdict = if (cut as f64) <= budget {
        Verdict::pass(
            Criterion::EventualStrongPrefix,
            format!("stabilized at read {cut} of {} (budget {budget:.1})", reads.len()),
        )
    } else {
        // The stabilization point itself is the witness: the last
        // incomparable pair straddles cut - 1.
        let witness = last_incomparable_pair(&reads)
            .map(|(a, b)| Witness::IncomparablePair {
                first_eid: a,
                second_eid: b,
            })
            .expect("cut > 0 implies an incomparable pair");
        Verdict::fail(
            Criterion::EventualStrongPrefix,
            witness,
            format!("stabilized only at read {cut} of {} (budget {budget:.1})", reads.len()),
        )
    };
    (verdict, Some(cut))
}

fn last_incomparable_pair(reads: &[(&Event, &Chain)]) -> Option<(u64, u64)> {
    let classes = chain_classes(reads);
    let mut best: Option<(usize, u64, u64)> = None;
    for (i, (a, occ_a)) in classes.iter().enumerate() {
        for (b, occ_b) in classes.iter().skip(i + 1) {
            if !comparable(a, b) {
                let last_a = *occ_a.last().unwrap();
                let last_b = *occ_b.last().unwrap();
                let anchor = last_a.min(last_b);
                let (first, second) = if last_a < last_b {
                    (reads[last_a].0.eid, reads[last_b].0.eid)
                } else {
                    (reads[last_b].0.eid, reads[last_a].0.eid)
                };
                if best.map_or(true, |(cur, _, _)| anchor > cur) {
                    best = Some((anchor, first, second));
                }
            }
        }
    }
    best.map(|(_, a, b)| (a, b))
}

/// Displacement between two chains, tolerant of forged traces whose
/// chains do not share a root (everything must then be pruned).
fn displacement_lenient(a: &Chain, b: &Chain) -> usize {
    let mut common = 0;
    while common < a.len() && common < b.len() && a[common].id == b[common].id {
        common += 1;
    }
    a.len() - common
}

/// Maximum displacement over ordered read pairs, plus the same maximum
/// restricted to the first half of the reads as a boundedness heuristic:
/// a bounded-displacement history plateaus, an unbounded one keeps
/// growing with the horizon.
pub fn measure_displacement(h: &History) -> (usize, usize, bool) {
    let reads = reads_of(h);
    let classes = chain_classes(&reads);
    let half = reads.len() / 2;
    let mut max_all = 0usize;
    let mut max_half = 0usize;
    for (a, occ_a) in &classes {
        for (b, occ_b) in &classes {
            let first_a = *occ_a.first().unwrap();
            let last_b = *occ_b.last().unwrap();
            if first_a >= last_b {
                continue; // no ordered occurrence pair
            }
            let d = displacement_lenient(a, b);
            max_all = max_all.max(d);
            if occ_b.iter().any(|&j| j < half && occ_a.iter().any(|&i| i < j)) {
                max_half = max_half.max(d);
            }
        }
    }
    (max_all, max_half, max_all == max_half)
}

/// Number of value changes per position across the global read sequence.
/// A position keeps churning while selection flips between branches;
/// transitions to or from an unfilled position count as changes.
pub fn churn_per_position(h: &History) -> BTreeMap<usize, u64> {
    let reads = reads_of(h);
    let mut churn: BTreeMap<usize, u64> = BTreeMap::new();
    for pair in reads.windows(2) {
        let (_, prev) = pair[0];
        let (_, next) = pair[1];
        let span = prev.len().max(next.len());
        for position in 0..span {
            let a = prev.get(position).map(|b| b.id);
            let b = next.get(position).map(|b| b.id);
            if a != b {
                *churn.entry(position).or_insert(0) += 1;
            }
        }
    }
    churn
}

/// (tick, length) samples of the common prefix across every process's
/// latest read at the sample tick.
pub fn common_prefix_series(h: &History, samples: usize) -> Vec<(u64, usize)> {
    let horizon = h.horizon().max(1);
    let mut series = Vec::new();
    let mut latest: BTreeMap<crate::block::ProcessId, &Chain> = BTreeMap::new();
    let reads = reads_of(h);
    let mut next = 0usize;
    for s in 1..=samples {
        let tick = horizon * s as u64 / samples as u64;
        while next < reads.len() && reads[next].0.tick <= tick {
            latest.insert(reads[next].0.process, reads[next].1);
            next += 1;
        }
        if latest.is_empty() {
            continue;
        }
        let first = *latest.values().next().unwrap();
        let mut len = first.len();
        for chain in latest.values().skip(1) {
            let mut common = 0;
            while common < len && common < chain.len() && first[common].id == chain[common].id {
                common += 1;
            }
            len = len.min(common);
        }
        series.push((tick, len));
    }
    series
}

/// A full report: every criterion at the given parameters plus metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub params: CheckParams,
    pub verdicts: Vec<Verdict>,
    pub metrics: Metrics,
}

pub fn check_all(h: &History, params: &CheckParams) -> Report {
    let predicate = ValidityPredicate {
        payload_rule: h.meta.payload_rule,
    };
    let reads = reads_of(h);
    let appends = h
        .events()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::AppendInv { .. }))
        .count();
    let successful = h
        .events()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::AppendRsp { ack: true }))
        .count();

    let mut verdicts = vec![
        check_chain_validity(h, &predicate),
        check_chain_integrity(h),
        check_eventual_prefix(h, params),
        check_ever_growing_tree(h, (successful / 2) as u64),
        check_strong_prefix(h),
    ];
    let (esp, cut) = check_eventual_strong_prefix(h, params);
    verdicts.push(esp);

    let (max_displacement, first_half, plateaus) = measure_displacement(h);
    verdicts.push(Verdict {
        criterion: Criterion::BoundedDisplacement,
        outcome: Outcome::Measured,
        witness: None,
        detail: format!(
            "max displacement {max_displacement} (first half {first_half}, plateaus: {plateaus})"
        ),
    });

    Report {
        params: *params,
        verdicts,
        metrics: Metrics {
            churn: churn_per_position(h),
            max_displacement,
            first_half_displacement: first_half,
            displacement_plateaus: plateaus,
            common_prefix_series: common_prefix_series(h, 32),
            min_esp_cut: cut,
            smallest_k_ec: None,
            reads: reads.len(),
            appends,
            successful_appends: successful,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{Block, ProcessId};
    use crate::history::RunMeta;
    use std::sync::Arc;

    fn pid(n: u32) -> ProcessId {
        ProcessId(n)
    }

    fn meta(horizon: u64) -> RunMeta {
        RunMeta::bare("test", 2, 1, horizon)
    }

    /// Linear chain of the given length including genesis.
    fn chain_of(len: usize) -> Chain {
        let mut blocks = vec![Block::genesis()];
        for i in 1..len {
            let b = Block::child(blocks.last().unwrap(), pid(0), 0, vec![i as u8]);
            blocks.push(b);
        }
        Chain(blocks)
    }

    fn forked_chain(shared: &Chain, extra: usize, creator: u32) -> Chain {
        let mut blocks = shared.0.clone();
        for i in 0..extra {
            let b = Block::child(blocks.last().unwrap(), pid(creator), 0, vec![0xAB, i as u8]);
            blocks.push(b);
        }
        Chain(blocks)
    }

    /// A history whose appends cover everything its reads return.
    fn well_formed_history(read_chains: Vec<(u64, Chain)>, horizon: u64) -> History {
        let mut h = History::new(meta(horizon));
        let mut appended = std::collections::BTreeSet::new();
        for (_, chain) in &read_chains {
            for block in chain.iter().skip(1) {
                if appended.insert(block.id) {
                    h.record_append(pid(0), 0, Arc::clone(block), true);
                }
            }
        }
        for (tick, chain) in read_chains {
            h.record_read(pid(1), tick, chain);
        }
        h
    }

    #[test]
    fn validity_passes_on_genesis_reads_and_fails_on_forged() {
        let mut h = History::new(meta(10));
        h.record_read(pid(0), 1, Chain::genesis_only());
        let ok = check_chain_validity(&h, &ValidityPredicate::accept_all());
        assert!(ok.passed());

        // Forge a chain that skips a link.
        let c = chain_of(4);
        let broken = Chain(vec![c[0].clone(), c[2].clone()]);
        let mut h2 = History::new(meta(10));
        h2.record_read(pid(0), 1, broken);
        let bad = check_chain_validity(&h2, &ValidityPredicate::accept_all());
        assert_eq!(bad.outcome, Outcome::Fail);
        assert!(matches!(bad.witness, Some(Witness::InvalidRead { .. })));
    }

    #[test]
    fn integrity_fails_on_never_appended_block() {
        let c = chain_of(3);
        let mut h = History::new(meta(10));
        h.record_read(pid(0), 1, c.clone());
        let v = check_chain_integrity(&h);
        assert_eq!(v.outcome, Outcome::Fail);

        let h2 = well_formed_history(vec![(1, c)], 10);
        assert!(check_chain_integrity(&h2).passed());
    }

    #[test]
    fn integrity_requires_append_before_read_in_event_order() {
        let c = chain_of(2);
        let mut h = History::new(meta(10));
        h.record_read(pid(1), 1, c.clone());
        // Append arrives only after the read.
        h.record_append(pid(0), 2, c[1].clone(), true);
        assert_eq!(check_chain_integrity(&h).outcome, Outcome::Fail);
    }

    #[test]
    fn eventual_prefix_passes_on_single_branch() {
        let c = chain_of(6);
        let reads = (1..=10)
            .map(|t| (t * 10, Chain(c.0[..(t as usize / 2 + 1).min(c.len())].to_vec())))
            .collect();
        let h = well_formed_history(reads, 100);
        let v = check_eventual_prefix(&h, &CheckParams::default());
        assert!(v.passed(), "{}", v.detail);
        // A single growing branch churns each position exactly once, when
        // it first fills; genesis never changes.
        let churn = churn_per_position(&h);
        assert_eq!(churn.get(&0), None);
        assert!(churn.values().all(|&c| c == 1));
    }

    #[test]
    fn eventual_prefix_fails_when_late_reads_alternate() {
        let shared = chain_of(1); // genesis only
        let a = forked_chain(&shared, 3, 1);
        let b = forked_chain(&shared, 3, 2);
        let reads = vec![
            (10, a.clone()),
            (30, b.clone()),
            (80, a.clone()),
            (95, b.clone()),
        ];
        let h = well_formed_history(reads, 100);
        let v = check_eventual_prefix(&h, &CheckParams::default());
        assert_eq!(v.outcome, Outcome::Fail);
        match v.witness {
            Some(Witness::PositionDisagrees { position, .. }) => assert_eq!(position, 1),
            other => panic!("unexpected witness {other:?}"),
        }
    }

    #[test]
    fn eventual_prefix_inconclusive_on_tiny_history() {
        let mut h = History::new(meta(10));
        h.record_read(pid(0), 1, Chain::genesis_only());
        let v = check_eventual_prefix(&h, &CheckParams::default());
        assert_eq!(v.outcome, Outcome::Inconclusive);
    }

    #[test]
    fn ever_growing_tree_thresholds() {
        let c = chain_of(5);
        let h = well_formed_history(vec![(1, c)], 10);
        assert!(check_ever_growing_tree(&h, 4).passed());
        assert_eq!(check_ever_growing_tree(&h, 5).outcome, Outcome::Fail);
    }

    #[test]
    fn ever_growing_tree_star_fixture_fails() {
        // Every block attached at genesis: reads never exceed 2 blocks.
        let g = Chain::genesis_only();
        let reads: Vec<(u64, Chain)> = (0..6)
            .map(|i| (i * 10 + 1, forked_chain(&g, 1, i as u32)))
            .collect();
        let h = well_formed_history(reads, 100);
        assert_eq!(check_ever_growing_tree(&h, 2).outcome, Outcome::Fail);
    }

    #[test]
    fn strong_prefix_pass_and_fail() {
        let c = chain_of(6);
        let prefixes: Vec<(u64, Chain)> = (1..=5)
            .map(|i| (i * 10, Chain(c.0[..=i as usize].to_vec())))
            .collect();
        let h = well_formed_history(prefixes, 100);
        assert!(check_strong_prefix(&h).passed());

        let shared = chain_of(2);
        let x = forked_chain(&shared, 1, 1);
        let y = forked_chain(&shared, 1, 2);
        let h2 = well_formed_history(vec![(10, x), (20, y)], 100);
        let v = check_strong_prefix(&h2);
        assert_eq!(v.outcome, Outcome::Fail);
        assert!(matches!(v.witness, Some(Witness::IncomparablePair { .. })));
    }

    #[test]
    fn esp_cut_zero_on_strong_prefix_history() {
        let c = chain_of(6);
        let prefixes: Vec<(u64, Chain)> = (1..=5)
            .map(|i| (i * 10, Chain(c.0[..=i as usize].to_vec())))
            .collect();
        let h = well_formed_history(prefixes, 100);
        let (v, cut) = check_eventual_strong_prefix(&h, &CheckParams::default());
        assert!(v.passed());
        assert_eq!(cut, Some(0));
    }

    #[test]
    fn esp_cut_lands_after_last_conflict() {
        let shared = chain_of(2);
        let x = forked_chain(&shared, 1, 1);
        let y = forked_chain(&shared, 2, 2);
        // Conflict across reads 0 and 1, comparable from read 1 onwards.
        let y_longer = forked_chain(&shared, 3, 2);
        let reads = vec![(10, x), (20, y.clone()), (30, y_longer), (40, y)];
        let h = well_formed_history(reads, 100);
        let (_, cut) = check_eventual_strong_prefix(&h, &CheckParams::default());
        assert_eq!(cut, Some(1));

        // An alternating tail defeats any early cut.
        let shared2 = chain_of(1);
        let a = forked_chain(&shared2, 1, 1);
        let b = forked_chain(&shared2, 1, 2);
        let reads2 = vec![(10, a.clone()), (20, b.clone()), (30, a), (40, b)];
        let h2 = well_formed_history(reads2, 100);
        let (v2, cut2) = check_eventual_strong_prefix(&h2, &CheckParams::default());
        assert_eq!(cut2, Some(3));
        assert_eq!(v2.outcome, Outcome::Fail);
    }

    #[test]
    fn displacement_measures_reorg_depth() {
        let c = chain_of(6);
        let reads: Vec<(u64, Chain)> = vec![
            (10, Chain(c.0[..4].to_vec())),
            (20, Chain(c.0[..6].to_vec())),
        ];
        let h = well_formed_history(reads, 100);
        assert_eq!(measure_displacement(&h).0, 0);

        // One reorg of depth 3.
        let shared = chain_of(2);
        let long = forked_chain(&shared, 3, 1);
        let other = forked_chain(&shared, 3, 2);
        let h2 = well_formed_history(vec![(10, long), (20, other)], 100);
        assert_eq!(measure_displacement(&h2).0, 3);
    }

    #[test]
    fn churn_counts_alternations() {
        let shared = chain_of(1);
        let a = forked_chain(&shared, 1, 1);
        let b = forked_chain(&shared, 1, 2);
        let reads = vec![
            (10, a.clone()),
            (20, b.clone()),
            (30, a.clone()),
            (40, b.clone()),
        ];
        let h = well_formed_history(reads, 100);
        let churn = churn_per_position(&h);
        assert_eq!(churn.get(&1), Some(&3));
        assert_eq!(churn.get(&0), None);
    }

    #[test]
    fn lattice_holds_on_assorted_histories() {
        // Strong prefix pass implies ESP pass implies EP not failing.
        let candidates = vec![
            {
                let c = chain_of(6);
                well_formed_history(
                    (1..=5)
                        .map(|i| (i * 18, Chain(c.0[..=i as usize].to_vec())))
                        .collect(),
                    100,
                )
            },
            {
                let shared = chain_of(1);
                let a = forked_chain(&shared, 2, 1);
                let b = forked_chain(&shared, 2, 2);
                well_formed_history(vec![(5, a.clone()), (15, b), (60, a.clone()), (90, a)], 100)
            },
        ];
        let params = CheckParams::default();
        for h in &candidates {
            let sp = check_strong_prefix(h).passed();
            let (esp, _) = check_eventual_strong_prefix(h, &params);
            let ep = check_eventual_prefix(h, &params);
            if sp {
                assert!(esp.passed());
            }
            if esp.passed() {
                assert_ne!(ep.outcome, Outcome::Fail);
            }
        }
    }
}
