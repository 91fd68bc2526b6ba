//! Blocktree finality laboratory.
//!
//! A workbench for blockchain finality semantics: the blocktree data type
//! with pluggable chain selection, shared-tree oracles, three executable
//! protocols (an asynchronous eventual-prefix appender, a longest-chain
//! race schedule that defeats eventual prefix, and a majority-notarization
//! Streamlet variant with Byzantine exclusion), pruning-based reductions
//! between consistency levels, a deterministic adversarial simulator, and
//! a checker that decides or measures every consistency criterion over
//! recorded histories.

pub mod block;
pub mod blocktree;
pub mod checker;
pub mod history;
pub mod oracle;
pub mod protocol;
pub mod reduction;
pub mod sim;

pub use block::{Block, BlockId, BlockRegistry, ProcessId};
pub use blocktree::{
    apply_append, displacement, is_prefix, prune_half, prune_last, read_tree, Blocktree, Chain,
    PayloadRule, SelectionFn, ValidityPredicate,
};
pub use history::{Event, EventKind, History, RunMeta};
