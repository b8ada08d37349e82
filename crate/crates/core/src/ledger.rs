//! Peer ledger state: its own side chain, redundant copies of its partners'
//! chains, license accounts, Phyli and trust, and the queue of content held
//! back while the PSL is halted.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::accounting::{net_zero_settlement, PhyliLedgerEntry, TrustRecord};
use crate::chain::{ChainError, ContentBlock, Digest, LedgerId, PendingBlock, SideChain};
use crate::consensus::{BridgeDeadline, PslId, QuorumConfig};
use crate::contract::{execute_contract, ContractError, LicenseAccount, OffChainStore, Record, TransactionContractPrototype};
use crate::{Phyli, Tick};

pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Standing {
    Active,
    Suspended,
    Excluded,
}

/// Reported status: standing combined with the online flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LedgerStatus {
    Active,
    Offline,
    Suspended,
    Excluded,
}

impl fmt::Display for LedgerStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LedgerStatus::Active => "active",
            LedgerStatus::Offline => "offline",
            LedgerStatus::Suspended => "suspended",
            LedgerStatus::Excluded => "excluded",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    Offline,
    Excluded,
    QueueFull,
    NoLicenseAccount(u64),
    Contract(ContractError),
    Chain(ChainError),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Offline => f.write_str("ledger offline"),
            RejectReason::Excluded => f.write_str("ledger excluded"),
            RejectReason::QueueFull => f.write_str("pending queue full"),
            RejectReason::NoLicenseAccount(tc) => write!(f, "no license account for contract {tc}"),
            RejectReason::Contract(e) => write!(f, "{e}"),
            RejectReason::Chain(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubmitOutcome {
    Appended(Arc<ContentBlock>),
    Queued,
    Rejected(RejectReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolAction {
    PullParameters,
    JoinPrimary,
    RequestBridge,
    JoinGlobal,
}

#[derive(Clone, Debug)]
pub struct PeerLedgerState {
    pub ledger_id: LedgerId,
    pub psl: PslId,
    pub config_hash: Digest,
    pub chain: SideChain,
    pub partner_copies: BTreeMap<LedgerId, SideChain>,
    pub licenses: BTreeMap<u64, LicenseAccount>,
    pub offchain: OffChainStore,
    pub phyli: PhyliLedgerEntry,
    pub trust: TrustRecord,
    pub held_param_version: u64,
    pub online: bool,
    pub standing: Standing,
    pub queue: Vec<PendingBlock>,
    pub queue_capacity: usize,
    /// Last own sequence covered by a committed Primary.
    pub primary_seq: Option<u64>,
    /// Last own sequence covered by a committed Bridge.
    pub bridge_seq: Option<u64>,
    pub global_seq: Option<u64>,
    /// Set by a failed consensus; queued content waits for the next success.
    pub awaiting_consensus: bool,
    pub stops_pulling: bool,
    pub corrupt_settlement: bool,
    pub blocks_created: u64,
    pub misses: u64,
    pub consensus_bytes: u64,
}

impl PeerLedgerState {
    pub fn new(ledger_id: LedgerId, psl: PslId, config_hash: Digest, balance: Phyli, trust: u64) -> Self {
        PeerLedgerState {
            ledger_id,
            psl,
            config_hash,
            chain: SideChain::new(ledger_id),
            partner_copies: BTreeMap::new(),
            licenses: BTreeMap::new(),
            offchain: OffChainStore::default(),
            phyli: PhyliLedgerEntry::new(ledger_id, balance),
            trust: TrustRecord::new(ledger_id, trust),
            held_param_version: 0,
            online: true,
            standing: Standing::Active,
            queue: Vec::new(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            primary_seq: None,
            bridge_seq: None,
            global_seq: None,
            awaiting_consensus: false,
            stops_pulling: false,
            corrupt_settlement: false,
            blocks_created: 0,
            misses: 0,
            consensus_bytes: 0,
        }
    }

    pub fn status(&self) -> LedgerStatus {
        match (self.standing, self.online) {
            (Standing::Excluded, _) => LedgerStatus::Excluded,
            (_, false) => LedgerStatus::Offline,
            (Standing::Suspended, true) => LedgerStatus::Suspended,
            (Standing::Active, true) => LedgerStatus::Active,
        }
    }

    pub fn account_mut(&mut self, tc_id: u64) -> &mut LicenseAccount {
        let id = self.ledger_id;
        self.licenses.entry(tc_id).or_insert_with(|| LicenseAccount::new(id, tc_id))
    }

    /// True when new content must go to the queue instead of the chain.
    pub fn must_queue(&self, psl_halted: bool) -> bool {
        psl_halted || self.standing != Standing::Active || self.awaiting_consensus || !self.queue.is_empty()
    }

    /// Executes the contract and appends the block, or queues it while the
    /// PSL is halted. Nothing is spent on a rejection.
    pub fn submit_transaction(
        &mut self,
        proto: &TransactionContractPrototype,
        input: &Record,
        now: Tick,
        psl_halted: bool,
    ) -> SubmitOutcome {
        if self.standing == Standing::Excluded {
            return SubmitOutcome::Rejected(RejectReason::Excluded);
        }
        if !self.online {
            return SubmitOutcome::Rejected(RejectReason::Offline);
        }
        let queue = self.must_queue(psl_halted);
        if queue && self.queue.len() >= self.queue_capacity {
            return SubmitOutcome::Rejected(RejectReason::QueueFull);
        }
        let Some(account) = self.licenses.get_mut(&proto.tc_id) else {
            return SubmitOutcome::Rejected(RejectReason::NoLicenseAccount(proto.tc_id));
        };
        let exec = match execute_contract(proto, input, account) {
            Ok(e) => e,
            Err(e) => return SubmitOutcome::Rejected(RejectReason::Contract(e)),
        };
        self.offchain.insert(exec.payload_hash, exec.private_payload);
        self.blocks_created += 1;
        if queue {
            self.queue.push(PendingBlock {
                public_payload: exec.public_payload,
                tc_signature: proto.definition_hash,
                payload_hash: exec.payload_hash,
                license: exec.license,
                created_at: now,
            });
            return SubmitOutcome::Queued;
        }
        match self.chain.append_content_block(exec.public_payload, proto.definition_hash, exec.payload_hash, exec.license, now) {
            Ok(block) => SubmitOutcome::Appended(block),
            Err(e) => SubmitOutcome::Rejected(RejectReason::Chain(e)),
        }
    }

    /// Relinks the queue onto the chain tip, restamped at `now`.
    pub fn drain_queue(&mut self, anchor: Digest, now: Tick) -> Result<Vec<Arc<ContentBlock>>, ChainError> {
        if self.queue.is_empty() {
            return Ok(Vec::new());
        }
        let mut queued = std::mem::take(&mut self.queue);
        for p in &mut queued {
            p.created_at = now;
        }
        self.chain.relink_queued_blocks(queued.clone(), anchor).inspect_err(|_| self.queue = queued)
    }

    pub fn blocks_since_primary(&self) -> u64 {
        self.chain.blocks_after(self.primary_seq).len() as u64
    }

    /// This ledger's own settlement computation for its PSL, inflated on its
    /// own entry when a corruption fault is active.
    pub fn claim_settlement(&self, counts: &BTreeMap<LedgerId, u64>) -> Option<BTreeMap<LedgerId, Phyli>> {
        let mut claim = net_zero_settlement::<Phyli>(counts).ok()?;
        if self.corrupt_settlement {
            if let Some(own) = claim.get_mut(&self.ledger_id) {
                *own += 1;
            }
        }
        Some(claim)
    }

    /// Own chain bytes plus partner copies, including pruned history.
    pub fn stored_bytes(&self) -> u64 {
        self.partner_copies.values().map(SideChain::total_bytes).sum()
    }

    /// Protocol steps due at `now`, in the order the ledger performs them.
    pub fn tick(&self, now: Tick, cfg: &QuorumConfig, pull_interval: Tick, bridge: BridgeDeadline) -> Vec<ProtocolAction> {
        if !self.online || self.standing == Standing::Excluded {
            return Vec::new();
        }
        let mut actions = Vec::new();
        if !self.stops_pulling && pull_interval > 0 && now.is_multiple_of(pull_interval) {
            actions.push(ProtocolAction::PullParameters);
        }
        if self.standing == Standing::Active && now > 0 && now.is_multiple_of(cfg.sync_interval) {
            actions.push(ProtocolAction::JoinPrimary);
        }
        if bridge != BridgeDeadline::Ok {
            actions.push(ProtocolAction::RequestBridge);
        }
        if now > 0 && now.is_multiple_of(cfg.global_period) {
            actions.push(ProtocolAction::JoinGlobal);
        }
        actions
    }
}

/// Brings a partner copy in line with the owner's chain: drops any suffix
/// the owner no longer has, then replicates what is missing.
pub fn sync_copy(copy: &mut SideChain, owner: &SideChain) -> Result<(), ChainError> {
    if copy.tip_hash() == owner.tip_hash() {
        return Ok(());
    }
    // Links are hash chained, so the newest matching block vouches for the
    // whole prefix before it.
    let matching = copy.blocks().iter().rev().find(|b| {
        owner.position_of(b.sequence).is_some_and(|o| {
            let theirs = &owner.blocks()[o];
            Arc::ptr_eq(theirs, b) || theirs == *b
        })
    });
    let keep = matching.map(|b| b.sequence).or(copy.checkpoint().map(|c| c.sequence));
    copy.detach_after(keep);
    for block in owner.blocks_after(keep) {
        copy.replicate(block.clone())?;
    }
    Ok(())
}
