//! Executable protocols.
//!
//! Three protocols share the simulator: an asynchronous appender built on
//! the shared-tree oracle with lowest-id selection ([`ep`]), a scripted
//! longest-chain race that defeats eventual prefix ([`race`]), and a
//! majority-notarization Streamlet variant with Byzantine detection and
//! exclusion ([`streamlet`]).

pub mod ep;
pub mod race;
pub mod streamlet;

use crate::block::{Block, ProcessId};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Adversarial behavior assignment. The first four drive the notarization
/// protocol, the rest drive the asynchronous appender; `Silent` applies to
/// both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Votes for every proposal it sees in an epoch.
    DoubleVote,
    /// Votes without checking that the proposal extends a longest
    /// notarized chain.
    VoteLow,
    /// As leader, proposes two different blocks to two halves of the
    /// network.
    EquivocatingLeader,
    /// Sends nothing, ever.
    Silent,
    /// Appends a second child under the same parent on every fourth
    /// append slot.
    DuplicateChild,
    /// Appends under a randomly chosen existing block instead of the
    /// selected tip.
    RandomFork,
    /// Follows the append procedure but submits payloads the validity
    /// predicate rejects.
    InvalidPayload,
}

/// Message wire format for the notarization protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MessageKind {
    Propose { block: Arc<Block> },
    Vote { block: Arc<Block> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(flatten)]
    pub kind: MessageKind,
    pub epoch: u64,
    pub sender: ProcessId,
    /// Simulated signature: identity is verified by construction, so the
    /// tag only documents who signed what.
    #[serde(rename = "signature-tag")]
    pub signature: String,
}

impl Message {
    pub fn propose(sender: ProcessId, epoch: u64, block: Arc<Block>) -> Message {
        let signature = format!("sig:{}:{}", sender.0, &block.id.to_hex()[..12]);
        Message {
            kind: MessageKind::Propose { block },
            epoch,
            sender,
            signature,
        }
    }

    pub fn vote(sender: ProcessId, epoch: u64, block: Arc<Block>) -> Message {
        let signature = format!("sig:{}:{}", sender.0, &block.id.to_hex()[..12]);
        Message {
            kind: MessageKind::Vote { block },
            epoch,
            sender,
            signature,
        }
    }

    pub fn block(&self) -> &Arc<Block> {
        match &self.kind {
            MessageKind::Propose { block } => block,
            MessageKind::Vote { block } => block,
        }
    }
}
