//! Block structures, canonical encoding, and side-chain maintenance.
//!
//! Content blocks use a fixed big-endian layout so that their on-disk size is
//! exactly `HEADER_LEN + payload.len()`. Consensus blocks use a counted layout
//! (entries and child hashes are prefixed by a `u32` count).

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::Tick;

pub const DIGEST_LEN: usize = 32;
pub const LEDGER_ID_LEN: usize = 16;
/// Fixed-width prefix of every content block encoding.
pub const HEADER_LEN: usize = 4 * DIGEST_LEN + LEDGER_ID_LEN + 4 * 8;
pub const MAX_PUBLIC_PAYLOAD: usize = 208;
/// Measured upper bound on a content block in the reference deployment.
pub const MAX_BLOCK_LEN: usize = 400;

const CONSENSUS_HEADER_LEN: usize = 1 + 8 + 8 + DIGEST_LEN + 4 + 4;
const MEMBER_ENTRY_LEN: usize = LEDGER_ID_LEN + DIGEST_LEN + 8 * 4 + DIGEST_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("public payload of {len} bytes exceeds the {max}-byte cap")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("license {0} is already used on this chain")]
    DuplicateSerial(LicenseRef),
    #[error("consensus block does not cover ledger {0}")]
    NotCovered(LedgerId),
    #[error("block {found} does not extend the chain (expected sequence {expected})")]
    BrokenLink { expected: u64, found: u64 },
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
    #[error("too many entries for a u32 count")]
    TooManyEntries,
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    /// Genesis sentinel: the `prev_hash` of the first block of every side chain.
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    /// Hash of several byte strings fed in order.
    pub fn of_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update(part);
        }
        Digest(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// 16-byte peer ledger identifier. Ordering is bytewise, so ids built with
/// [`LedgerId::from_index`] sort by index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LedgerId(pub [u8; LEDGER_ID_LEN]);

impl LedgerId {
    pub fn from_index(index: u64) -> Self {
        let mut bytes = [0u8; LEDGER_ID_LEN];
        bytes[8..].copy_from_slice(&index.to_be_bytes());
        LedgerId(bytes)
    }

    /// Index for ids created by `from_index`.
    pub fn index(&self) -> Option<u64> {
        if self.0[..8].iter().all(|b| *b == 0) {
            Some(u64::from_be_bytes(self.0[8..].try_into().unwrap()))
        } else {
            None
        }
    }
}

impl fmt::Debug for LedgerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index() {
            Some(i) => write!(f, "LedgerId({i})"),
            None => write!(f, "LedgerId({})", hex::encode(self.0)),
        }
    }
}

impl fmt::Display for LedgerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// One license unit: unique across the committed marketplace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LicenseRef {
    pub tc_id: u64,
    pub serial: u64,
}

impl fmt::Display for LicenseRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tc{}#{}", self.tc_id, self.serial)
    }
}

/// Canonically encodable block.
pub trait CanonicalBlock {
    fn encode(&self) -> Result<Vec<u8>, ChainError>;

    fn hash(&self) -> Result<Digest, ChainError> {
        Ok(Digest::of(&self.encode()?))
    }
}

/// SHA-256 over the canonical encoding of either block kind.
pub fn hash_block<B: CanonicalBlock + ?Sized>(block: &B) -> Result<Digest, ChainError> {
    block.hash()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentBlock {
    pub prev_hash: Digest,
    /// Hash of the latest committed consensus block known to the producer.
    pub psl_anchor: Digest,
    pub tc_signature: Digest,
    /// Hash of the full public and private content.
    pub payload_hash: Digest,
    pub ledger_id: LedgerId,
    pub sequence: u64,
    pub timestamp: Tick,
    pub license: LicenseRef,
    pub public_payload: Vec<u8>,
}

impl ContentBlock {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.public_payload.len()
    }

    fn write_canonical(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.extend_from_slice(&self.prev_hash.0);
        out.extend_from_slice(&self.psl_anchor.0);
        out.extend_from_slice(&self.tc_signature.0);
        out.extend_from_slice(&self.payload_hash.0);
        out.extend_from_slice(&self.ledger_id.0);
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.license.tc_id.to_be_bytes());
        out.extend_from_slice(&self.license.serial.to_be_bytes());
        out.extend_from_slice(&self.public_payload);
    }

    /// Digest of a block already known to be within the payload cap.
    pub fn digest(&self) -> Digest {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.write_canonical(&mut buf);
        Digest::of(&buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ChainError> {
        if bytes.len() < HEADER_LEN {
            return Err(ChainError::Malformed("content block shorter than header"));
        }
        let payload_len = bytes.len() - HEADER_LEN;
        if payload_len > MAX_PUBLIC_PAYLOAD {
            return Err(ChainError::PayloadTooLarge { len: payload_len, max: MAX_PUBLIC_PAYLOAD });
        }
        let mut r = Reader::new(bytes);
        Ok(ContentBlock {
            prev_hash: r.digest()?,
            psl_anchor: r.digest()?,
            tc_signature: r.digest()?,
            payload_hash: r.digest()?,
            ledger_id: r.ledger_id()?,
            sequence: r.u64()?,
            timestamp: r.u64()?,
            license: LicenseRef { tc_id: r.u64()?, serial: r.u64()? },
            public_payload: r.rest().to_vec(),
        })
    }
}

impl CanonicalBlock for ContentBlock {
    fn encode(&self) -> Result<Vec<u8>, ChainError> {
        check_payload(self.public_payload.len())?;
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_canonical(&mut out);
        Ok(out)
    }
}

/// Encodes a content block; fails if the public payload exceeds the cap.
pub fn encode_block(block: &ContentBlock) -> Result<Vec<u8>, ChainError> {
    block.encode()
}

fn check_payload(len: usize) -> Result<(), ChainError> {
    if len > MAX_PUBLIC_PAYLOAD {
        Err(ChainError::PayloadTooLarge { len, max: MAX_PUBLIC_PAYLOAD })
    } else {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Primary,
    Bridge,
    Global,
}

impl Tier {
    fn tag(self) -> u8 {
        match self {
            Tier::Primary => 0,
            Tier::Bridge => 1,
            Tier::Global => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, ChainError> {
        match tag {
            0 => Ok(Tier::Primary),
            1 => Ok(Tier::Bridge),
            2 => Ok(Tier::Global),
            _ => Err(ChainError::Malformed("unknown tier tag")),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Primary => "primary",
            Tier::Bridge => "bridge",
            Tier::Global => "global",
        })
    }
}

/// Values carried forward for one ledger in a consensus block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemberEntry {
    pub ledger_id: LedgerId,
    pub last_block_hash: Digest,
    pub block_count: u64,
    pub phyli_delta: i64,
    pub phyli_balance: i64,
    pub trust: u64,
    pub config_hash: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusBlock {
    pub tier: Tier,
    pub interval_id: u64,
    pub timestamp: Tick,
    pub prev_consensus_hash: Digest,
    pub member_entries: Vec<MemberEntry>,
    /// Hashes of the lower-tier blocks this one covers; empty for Primary.
    pub child_hashes: Vec<Digest>,
}

impl ConsensusBlock {
    pub fn encoded_len(&self) -> usize {
        CONSENSUS_HEADER_LEN
            + self.member_entries.len() * MEMBER_ENTRY_LEN
            + self.child_hashes.len() * DIGEST_LEN
    }

    /// Digest of the canonical encoding. Entry and child counts always fit
    /// the u32 length fields for blocks built in-process.
    pub fn digest(&self) -> Digest {
        self.hash().expect("consensus block counts fit u32")
    }

    pub fn entry(&self, ledger: LedgerId) -> Option<&MemberEntry> {
        self.member_entries.iter().find(|e| e.ledger_id == ledger)
    }

    pub fn delta_sum(&self) -> i128 {
        self.member_entries.iter().map(|e| e.phyli_delta as i128).sum()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ChainError> {
        let mut r = Reader::new(bytes);
        let tier = Tier::from_tag(r.u8()?)?;
        let interval_id = r.u64()?;
        let timestamp = r.u64()?;
        let prev_consensus_hash = r.digest()?;
        let n_entries = r.u32()? as usize;
        let mut member_entries = Vec::with_capacity(n_entries.min(1 << 16));
        for _ in 0..n_entries {
            member_entries.push(MemberEntry {
                ledger_id: r.ledger_id()?,
                last_block_hash: r.digest()?,
                block_count: r.u64()?,
                phyli_delta: r.u64()? as i64,
                phyli_balance: r.u64()? as i64,
                trust: r.u64()?,
                config_hash: r.digest()?,
            });
        }
        let n_children = r.u32()? as usize;
        let mut child_hashes = Vec::with_capacity(n_children.min(1 << 16));
        for _ in 0..n_children {
            child_hashes.push(r.digest()?);
        }
        if !r.rest().is_empty() {
            return Err(ChainError::Malformed("trailing bytes after consensus block"));
        }
        Ok(ConsensusBlock {
            tier,
            interval_id,
            timestamp,
            prev_consensus_hash,
            member_entries,
            child_hashes,
        })
    }
}

impl CanonicalBlock for ConsensusBlock {
    fn encode(&self) -> Result<Vec<u8>, ChainError> {
        let n_entries = u32::try_from(self.member_entries.len()).map_err(|_| ChainError::TooManyEntries)?;
        let n_children = u32::try_from(self.child_hashes.len()).map_err(|_| ChainError::TooManyEntries)?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.tier.tag());
        out.extend_from_slice(&self.interval_id.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.prev_consensus_hash.0);
        out.extend_from_slice(&n_entries.to_be_bytes());
        for e in &self.member_entries {
            out.extend_from_slice(&e.ledger_id.0);
            out.extend_from_slice(&e.last_block_hash.0);
            out.extend_from_slice(&e.block_count.to_be_bytes());
            out.extend_from_slice(&e.phyli_delta.to_be_bytes());
            out.extend_from_slice(&e.phyli_balance.to_be_bytes());
            out.extend_from_slice(&e.trust.to_be_bytes());
            out.extend_from_slice(&e.config_hash.0);
        }
        out.extend_from_slice(&n_children.to_be_bytes());
        for c in &self.child_hashes {
            out.extend_from_slice(&c.0);
        }
        Ok(out)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ChainError> {
        if self.buf.len() < n {
            return Err(ChainError::Malformed("unexpected end of input"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ChainError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ChainError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ChainError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn digest(&mut self) -> Result<Digest, ChainError> {
        Ok(Digest(self.take(DIGEST_LEN)?.try_into().unwrap()))
    }

    fn ledger_id(&mut self) -> Result<LedgerId, ChainError> {
        Ok(LedgerId(self.take(LEDGER_ID_LEN)?.try_into().unwrap()))
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }
}

/// Content of a block waiting to be (re)linked onto a side chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingBlock {
    pub public_payload: Vec<u8>,
    pub tc_signature: Digest,
    pub payload_hash: Digest,
    pub license: LicenseRef,
    pub created_at: Tick,
}

impl From<&ContentBlock> for PendingBlock {
    fn from(b: &ContentBlock) -> Self {
        PendingBlock {
            public_payload: b.public_payload.clone(),
            tc_signature: b.tc_signature,
            payload_hash: b.payload_hash,
            license: b.license,
            created_at: b.timestamp,
        }
    }
}

/// Marks the newest pruned block; retained blocks start right after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub hash: Digest,
    pub sequence: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    PrevHashMismatch,
    SequenceNotIncreasing,
    ForeignLedger,
    PayloadTooLarge,
    /// The last block no longer hashes to the recorded tip.
    TipMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainReport {
    Ok,
    /// `position` indexes retained blocks; `TipMismatch` reports `len`.
    Violation { position: usize, kind: ViolationKind },
}

impl ChainReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainReport::Ok)
    }
}

/// One ledger's side chain. Blocks are shared (`Arc`) with partner replicas.
#[derive(Clone, Debug)]
pub struct SideChain {
    ledger_id: LedgerId,
    blocks: Vec<Arc<ContentBlock>>,
    checkpoint: Option<Checkpoint>,
    anchor: Digest,
    tip_hash: Digest,
    serials: HashSet<LicenseRef>,
    retained_bytes: u64,
    pruned_bytes: u64,
    pruned_blocks: u64,
}

impl SideChain {
    pub fn new(ledger_id: LedgerId) -> Self {
        SideChain {
            ledger_id,
            blocks: Vec::new(),
            checkpoint: None,
            anchor: Digest::ZERO,
            tip_hash: Digest::ZERO,
            serials: HashSet::new(),
            retained_bytes: 0,
            pruned_bytes: 0,
            pruned_blocks: 0,
        }
    }

    pub fn ledger_id(&self) -> LedgerId {
        self.ledger_id
    }

    pub fn blocks(&self) -> &[Arc<ContentBlock>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn checkpoint(&self) -> Option<Checkpoint> {
        self.checkpoint
    }

    pub fn anchor(&self) -> Digest {
        self.anchor
    }

    pub fn set_anchor(&mut self, anchor: Digest) {
        self.anchor = anchor;
    }

    /// Hash of the newest block, or the checkpoint / genesis sentinel.
    pub fn tip_hash(&self) -> Digest {
        self.tip_hash
    }

    /// Sequence of the newest block including pruned history.
    pub fn tip_sequence(&self) -> Option<u64> {
        self.blocks.last().map(|b| b.sequence).or(self.checkpoint.map(|c| c.sequence))
    }

    pub fn next_sequence(&self) -> u64 {
        self.tip_sequence().map_or(0, |s| s + 1)
    }

    pub fn contains_serial(&self, license: &LicenseRef) -> bool {
        self.serials.contains(license)
    }

    pub fn retained_bytes(&self) -> u64 {
        self.retained_bytes
    }

    pub fn pruned_bytes(&self) -> u64 {
        self.pruned_bytes
    }

    pub fn pruned_blocks(&self) -> u64 {
        self.pruned_blocks
    }

    /// Bytes ever retained on this chain, pruned or not.
    pub fn total_bytes(&self) -> u64 {
        self.retained_bytes + self.pruned_bytes
    }

    /// Index of the retained block with this sequence.
    pub fn position_of(&self, sequence: u64) -> Option<usize> {
        let first = self.blocks.first()?.sequence;
        let idx = usize::try_from(sequence.checked_sub(first)?).ok()?;
        (self.blocks.get(idx)?.sequence == sequence).then_some(idx)
    }

    /// Retained blocks with sequence strictly after `after` (all when `None`).
    pub fn blocks_after(&self, after: Option<u64>) -> &[Arc<ContentBlock>] {
        let start = match after {
            None => 0,
            Some(seq) => self.blocks.partition_point(|b| b.sequence <= seq),
        };
        &self.blocks[start..]
    }

    pub fn append_content_block(
        &mut self,
        payload: Vec<u8>,
        tc_signature: Digest,
        payload_hash: Digest,
        license: LicenseRef,
        now: Tick,
    ) -> Result<Arc<ContentBlock>, ChainError> {
        check_payload(payload.len())?;
        if self.serials.contains(&license) {
            return Err(ChainError::DuplicateSerial(license));
        }
        let block = ContentBlock {
            prev_hash: self.tip_hash,
            psl_anchor: self.anchor,
            tc_signature,
            payload_hash,
            ledger_id: self.ledger_id,
            sequence: self.next_sequence(),
            timestamp: now,
            license,
            public_payload: payload,
        };
        let block = Arc::new(block);
        self.push_linked(block.clone(), block.digest());
        Ok(block)
    }

    /// Appends a block produced elsewhere (partner replication). The block
    /// must extend the current tip.
    pub fn replicate(&mut self, block: Arc<ContentBlock>) -> Result<(), ChainError> {
        check_payload(block.public_payload.len())?;
        let expected = self.next_sequence();
        if block.sequence != expected || block.prev_hash != self.tip_hash || block.ledger_id != self.ledger_id {
            return Err(ChainError::BrokenLink { expected, found: block.sequence });
        }
        if self.serials.contains(&block.license) {
            return Err(ChainError::DuplicateSerial(block.license));
        }
        let digest = block.digest();
        self.push_linked(block, digest);
        Ok(())
    }

    fn push_linked(&mut self, block: Arc<ContentBlock>, digest: Digest) {
        self.serials.insert(block.license);
        self.retained_bytes += block.encoded_len() as u64;
        self.tip_hash = digest;
        self.blocks.push(block);
    }

    pub fn verify_chain(&self) -> ChainReport {
        let (mut prev_hash, mut prev_seq) = match self.checkpoint {
            Some(c) => (c.hash, Some(c.sequence)),
            None => (Digest::ZERO, None),
        };
        for (position, block) in self.blocks.iter().enumerate() {
            let violation = |kind| ChainReport::Violation { position, kind };
            if block.ledger_id != self.ledger_id {
                return violation(ViolationKind::ForeignLedger);
            }
            if block.public_payload.len() > MAX_PUBLIC_PAYLOAD {
                return violation(ViolationKind::PayloadTooLarge);
            }
            if block.prev_hash != prev_hash {
                return violation(ViolationKind::PrevHashMismatch);
            }
            if prev_seq.is_some_and(|p| block.sequence <= p) {
                return violation(ViolationKind::SequenceNotIncreasing);
            }
            prev_hash = block.digest();
            prev_seq = Some(block.sequence);
        }
        if prev_hash != self.tip_hash {
            return ChainReport::Violation { position: self.blocks.len(), kind: ViolationKind::TipMismatch };
        }
        ChainReport::Ok
    }

    /// Re-builds queued block contents onto the current tip, in order, each
    /// anchored to `anchor`. Nothing is appended if any serial would repeat.
    pub fn relink_queued_blocks(
        &mut self,
        queued: Vec<PendingBlock>,
        anchor: Digest,
    ) -> Result<Vec<Arc<ContentBlock>>, ChainError> {
        let mut seen = HashSet::with_capacity(queued.len());
        for p in &queued {
            check_payload(p.public_payload.len())?;
            if self.serials.contains(&p.license) || !seen.insert(p.license) {
                return Err(ChainError::DuplicateSerial(p.license));
            }
        }
        self.anchor = anchor;
        let mut linked = Vec::with_capacity(queued.len());
        for p in queued {
            let block = self.append_content_block(p.public_payload, p.tc_signature, p.payload_hash, p.license, p.created_at)?;
            linked.push(block);
        }
        Ok(linked)
    }

    /// Removes retained blocks with sequence greater than `after` and returns
    /// their contents in chain order.
    pub fn detach_after(&mut self, after: Option<u64>) -> Vec<PendingBlock> {
        let keep = match after {
            None => 0,
            Some(seq) => self.blocks.partition_point(|b| b.sequence <= seq),
        };
        if keep == self.blocks.len() {
            return Vec::new();
        }
        let detached: Vec<_> = self.blocks.drain(keep..).collect();
        for b in &detached {
            self.serials.remove(&b.license);
            self.retained_bytes -= b.encoded_len() as u64;
        }
        self.tip_hash = match self.blocks.last() {
            Some(b) => b.digest(),
            None => self.checkpoint.map_or(Digest::ZERO, |c| c.hash),
        };
        detached.iter().map(|b| PendingBlock::from(b.as_ref())).collect()
    }

    /// Drops every block up to and including the one the consensus block
    /// records as this ledger's last block.
    pub fn prune_before_checkpoint(&mut self, consensus: &ConsensusBlock) -> Result<usize, ChainError> {
        let entry = consensus.entry(self.ledger_id).ok_or(ChainError::NotCovered(self.ledger_id))?;
        let target = entry.last_block_hash;
        let current_base = self.checkpoint.map_or(Digest::ZERO, |c| c.hash);
        if target == current_base {
            return Ok(0);
        }
        // Walk back from the tip; prune points are usually recent.
        let mut cut = None;
        let mut next_prev = self.tip_hash;
        for (idx, block) in self.blocks.iter().enumerate().rev() {
            if next_prev == target {
                cut = Some(idx);
                break;
            }
            next_prev = block.prev_hash;
        }
        if cut.is_none() && !self.blocks.is_empty() && self.blocks[0].prev_hash == target {
            return Ok(0);
        }
        let idx = cut.ok_or(ChainError::NotCovered(self.ledger_id))?;
        let removed: Vec<_> = self.blocks.drain(..=idx).collect();
        let last = removed.last().expect("non-empty prune range");
        self.checkpoint = Some(Checkpoint { hash: target, sequence: last.sequence });
        let bytes: u64 = removed.iter().map(|b| b.encoded_len() as u64).sum();
        self.retained_bytes -= bytes;
        self.pruned_bytes += bytes;
        self.pruned_blocks += removed.len() as u64;
        Ok(removed.len())
    }

    /// Length-prefixed concatenation of the retained blocks' encodings.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.retained_bytes as usize + 4 * self.blocks.len());
        let mut buf = Vec::with_capacity(HEADER_LEN + MAX_PUBLIC_PAYLOAD);
        for b in &self.blocks {
            buf.clear();
            b.write_canonical(&mut buf);
            out.extend_from_slice(&(buf.len() as u32).to_be_bytes());
            out.extend_from_slice(&buf);
        }
        out
    }

    /// Inverse of [`SideChain::to_bytes`]. A first block that does not start
    /// from genesis becomes the checkpoint boundary.
    pub fn from_bytes(ledger_id: LedgerId, bytes: &[u8]) -> Result<Self, ChainError> {
        let mut chain = SideChain::new(ledger_id);
        let mut r = Reader::new(bytes);
        let mut first = true;
        while !r.buf.is_empty() {
            let len = r.u32()? as usize;
            let block = ContentBlock::decode(r.take(len)?)?;
            if first && !block.prev_hash.is_zero() {
                let sequence = block
                    .sequence
                    .checked_sub(1)
                    .ok_or(ChainError::Malformed("non-genesis block at sequence 0"))?;
                chain.checkpoint = Some(Checkpoint { hash: block.prev_hash, sequence });
                chain.tip_hash = block.prev_hash;
            }
            first = false;
            chain.replicate(Arc::new(block))?;
        }
        Ok(chain)
    }

    /// Digest of `to_bytes`, for replica comparison.
    pub fn fingerprint(&self) -> Digest {
        Digest::of_parts([self.checkpoint.map_or(Digest::ZERO, |c| c.hash).0.as_slice(), &self.to_bytes()])
    }

    #[cfg(test)]
    pub(crate) fn block_mut(&mut self, idx: usize) -> &mut ContentBlock {
        Arc::make_mut(&mut self.blocks[idx])
    }
}
