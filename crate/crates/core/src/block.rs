//! Blocks and identifiers.
//!
//! A block identifier is a digest of the block's parent id, creator, epoch
//! and payload, so identical inputs always produce identical ids and the
//! id doubles as a content fingerprint.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::sync::Arc;

/// Process identity. Uniqueness is enforced by construction in the
/// simulator; there is no way to forge another process's id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl ProcessId {
    /// Reserved creator id for the genesis block.
    pub const GENESIS: ProcessId = ProcessId(u32::MAX);
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Fixed-width opaque block identifier, ordered lexicographically on its
/// bytes. That order is the total order used for every tie-break.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub [u8; 32]);

impl BlockId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let bytes = hex::decode(s)?;
        let mut id = [0u8; 32];
        if bytes.len() != 32 {
            return Err(hex::FromHexError::InvalidStringLength);
        }
        id.copy_from_slice(&bytes);
        Ok(BlockId(id))
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({}..)", &self.to_hex()[..8])
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl Serialize for BlockId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        BlockId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// A node of the blocktree. `height` is the distance from genesis; the
/// genesis block has height 0, epoch 0 and is its own parent.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub parent: BlockId,
    pub creator: ProcessId,
    pub epoch: u64,
    pub height: u64,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

fn digest(parent: &BlockId, creator: ProcessId, epoch: u64, payload: &[u8]) -> BlockId {
    let mut h = Sha256::new();
    h.update(parent.0);
    h.update(creator.0.to_le_bytes());
    h.update(epoch.to_le_bytes());
    h.update((payload.len() as u64).to_le_bytes());
    h.update(payload);
    BlockId(h.finalize().into())
}

impl Block {
    /// The unique root block shared by every tree.
    pub fn genesis() -> Arc<Block> {
        let mut h = Sha256::new();
        h.update(b"blocktree-genesis");
        let id = BlockId(h.finalize().into());
        Arc::new(Block {
            id,
            parent: id,
            creator: ProcessId::GENESIS,
            epoch: 0,
            height: 0,
            payload: Vec::new(),
        })
    }

    /// Builds a block extending `parent`. The id is a digest of
    /// (parent, creator, epoch, payload), so construction is deterministic.
    pub fn child(parent: &Block, creator: ProcessId, epoch: u64, payload: Vec<u8>) -> Arc<Block> {
        let id = digest(&parent.id, creator, epoch, &payload);
        Arc::new(Block {
            id,
            parent: parent.id,
            creator,
            epoch,
            height: parent.height + 1,
            payload,
        })
    }

    pub fn is_genesis(&self) -> bool {
        self.parent == self.id
    }
}

/// Detects identifier collisions between blocks with distinct contents.
/// One registry is threaded through each simulation run.
#[derive(Debug, Default)]
pub struct BlockRegistry {
    seen: std::collections::BTreeMap<BlockId, (BlockId, ProcessId, u64, Vec<u8>)>,
}

impl BlockRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a freshly constructed block. Returns an error if the same id
    /// was previously registered for different contents.
    pub fn register(&mut self, block: &Block) -> Result<(), IdCollision> {
        let fp = (
            block.parent,
            block.creator,
            block.epoch,
            block.payload.clone(),
        );
        match self.seen.get(&block.id) {
            None => {
                self.seen.insert(block.id, fp);
                Ok(())
            }
            Some(prev) if *prev == fp => Ok(()),
            Some(_) => Err(IdCollision(block.id)),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("block id collision: {0} produced by two distinct block contents")]
pub struct IdCollision(pub BlockId);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_is_deterministic() {
        let g = Block::genesis();
        let a = Block::child(&g, ProcessId(1), 0, vec![1, 2, 3]);
        let b = Block::child(&g, ProcessId(1), 0, vec![1, 2, 3]);
        assert_eq!(a.id, b.id);
        let c = Block::child(&g, ProcessId(1), 0, vec![1, 2, 4]);
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn genesis_is_its_own_parent() {
        let g = Block::genesis();
        assert!(g.is_genesis());
        assert_eq!(g.height, 0);
        assert_eq!(g.epoch, 0);
    }

    #[test]
    fn height_increments_from_parent() {
        let g = Block::genesis();
        let a = Block::child(&g, ProcessId(0), 0, vec![]);
        let b = Block::child(&a, ProcessId(0), 0, vec![]);
        assert_eq!(a.height, 1);
        assert_eq!(b.height, 2);
    }

    #[test]
    fn registry_flags_collisions_only_for_distinct_contents() {
        let g = Block::genesis();
        let a = Block::child(&g, ProcessId(1), 0, vec![9]);
        let mut reg = BlockRegistry::new();
        reg.register(&a).unwrap();
        reg.register(&a).unwrap(); // same contents, fine
        let forged = Block {
            payload: vec![8],
            ..(*a).clone()
        };
        assert!(reg.register(&forged).is_err());
    }

    #[test]
    fn id_hex_round_trip() {
        let g = Block::genesis();
        let parsed = BlockId::from_hex(&g.id.to_hex()).unwrap();
        assert_eq!(parsed, g.id);
    }
}
