//! The three consensus tiers as pure functions over snapshots supplied by
//! the caller. Primary settles Phyli inside one PSL, Bridge confirms a PSL's
//! Primaries with outside verifiers and screens serials, Global commits the
//! marketplace and enforces the roster.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::accounting::{
    apply_penalty, net_zero_settlement, update_trust, AccountingError, Outcome, TrustPolicy, TrustRecord,
};
use crate::chain::{ConsensusBlock, Digest, LedgerId, LicenseRef, MemberEntry, PendingBlock, SideChain, Tier};
use crate::consortium::{Compliance, NonCompliance};
use crate::{Phyli, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PslId(pub u64);

impl fmt::Display for PslId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "psl{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PslStatus {
    Active,
    Suspended,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("tick {now} is not a multiple of {interval}")]
    NotOnInterval { now: Tick, interval: Tick },
    #[error("{0} is not active")]
    PslNotActive(PslId),
    #[error("{0} has no committed primary since its last bridge")]
    NoPrimaryToCover(PslId),
    #[error("bridge quorum unreachable: {online} online, {required} required")]
    QuorumUnreachable { online: usize, required: usize },
    #[error("global majority unreachable: {participants} participating, {required} required")]
    MajorityUnreachable { participants: usize, required: usize },
    #[error("a consortium server replica is offline")]
    ConsortiumOffline,
    #[error("member reports do not match the PSL roster")]
    RosterMismatch,
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuorumConfig {
    pub sync_interval: Tick,
    pub bridge_quorum_pct: u32,
    pub bridge_max_span: Tick,
    pub global_period: Tick,
    pub global_majority_pct: u32,
    pub missed_global_limit: u32,
}

impl Default for QuorumConfig {
    fn default() -> Self {
        QuorumConfig {
            sync_interval: 10,
            bridge_quorum_pct: 67,
            bridge_max_span: 100,
            global_period: 1000,
            global_majority_pct: 51,
            missed_global_limit: 3,
        }
    }
}

impl QuorumConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, pct) in [("bridge_quorum_pct", self.bridge_quorum_pct), ("global_majority_pct", self.global_majority_pct)] {
            if !(51..=100).contains(&pct) {
                return Err(format!("{name} must be in (50, 100], got {pct}"));
            }
        }
        for (name, span) in [
            ("sync_interval", self.sync_interval),
            ("bridge_max_span", self.bridge_max_span),
            ("global_period", self.global_period),
        ] {
            if span == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Smallest head-count that reaches `pct` percent of `n`.
pub fn quorum_required(pct: u32, n: usize) -> usize {
    (pct as usize * n).div_ceil(100)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimarySyncList {
    pub id: PslId,
    pub members: Vec<LedgerId>,
    pub sync_interval: Tick,
    pub last_primary: Option<Digest>,
    pub last_bridge_tick: Tick,
    pub missed_globals: u32,
    pub status: PslStatus,
}

impl PrimarySyncList {
    pub fn new(id: PslId, mut members: Vec<LedgerId>, sync_interval: Tick) -> Result<Self, ConsensusError> {
        members.sort();
        members.dedup();
        if members.len() < 2 {
            return Err(AccountingError::DegeneratePsl(members.len()).into());
        }
        Ok(PrimarySyncList {
            id,
            members,
            sync_interval,
            last_primary: None,
            last_bridge_tick: 0,
            missed_globals: 0,
            status: PslStatus::Active,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BridgeDeadline {
    Ok,
    MustBridge,
    Suspend,
}

pub fn check_bridge_deadline(psl: &mut PrimarySyncList, now: Tick, cfg: &QuorumConfig) -> BridgeDeadline {
    if psl.status == PslStatus::Suspended {
        return BridgeDeadline::Suspend;
    }
    let elapsed = now.saturating_sub(psl.last_bridge_tick);
    match elapsed.cmp(&cfg.bridge_max_span) {
        std::cmp::Ordering::Less => BridgeDeadline::Ok,
        std::cmp::Ordering::Equal => BridgeDeadline::MustBridge,
        std::cmp::Ordering::Greater => {
            if psl.status == PslStatus::Active {
                psl.status = PslStatus::Suspended;
            }
            BridgeDeadline::Suspend
        }
    }
}

/// What one member brings to a Primary round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemberReport {
    pub ledger_id: LedgerId,
    pub online: bool,
    pub compliance: Compliance,
    pub config_hash: Digest,
    pub last_block_hash: Digest,
    /// Blocks created since the previous committed Primary.
    pub block_count: u64,
    pub balance: Phyli,
    pub trust: TrustRecord,
    /// The member's own computation of the whole PSL's settlement.
    pub claimed: Option<BTreeMap<LedgerId, Phyli>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimaryCommit {
    pub block: ConsensusBlock,
    pub hash: Digest,
    pub deltas: BTreeMap<LedgerId, Phyli>,
    pub trust: BTreeMap<LedgerId, TrustRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimaryFailure {
    pub psl: PslId,
    pub interval_id: u64,
    pub absent: Vec<LedgerId>,
    pub mismatched: Vec<LedgerId>,
    pub noncompliant: Vec<(LedgerId, NonCompliance)>,
    /// Records after penalties, for every member.
    pub trust: BTreeMap<LedgerId, TrustRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PrimaryOutcome {
    Committed(PrimaryCommit),
    Failed(PrimaryFailure),
}

/// Requires every member present, agreeing on the settlement and compliant.
/// Absent or mismatched members take an individual Miss; a compliance
/// failure costs every member `joint_penalty` once.
pub fn run_primary_consensus(
    psl: &PrimarySyncList,
    reports: &[MemberReport],
    policy: &TrustPolicy,
    joint_penalty: u64,
    now: Tick,
) -> Result<PrimaryOutcome, ConsensusError> {
    if psl.sync_interval == 0 || !now.is_multiple_of(psl.sync_interval) {
        return Err(ConsensusError::NotOnInterval { now, interval: psl.sync_interval });
    }
    if psl.status != PslStatus::Active {
        return Err(ConsensusError::PslNotActive(psl.id));
    }
    let by_id: BTreeMap<LedgerId, &MemberReport> = reports.iter().map(|r| (r.ledger_id, r)).collect();
    if by_id.len() != reports.len() || by_id.keys().ne(psl.members.iter()) {
        return Err(ConsensusError::RosterMismatch);
    }
    let counts: BTreeMap<LedgerId, u64> = by_id.iter().map(|(id, r)| (*id, r.block_count)).collect();
    let expected = net_zero_settlement::<Phyli>(&counts)?;
    let interval_id = now / psl.sync_interval;

    let mut absent = Vec::new();
    let mut mismatched = Vec::new();
    let mut noncompliant = Vec::new();
    for (id, r) in &by_id {
        if !r.online {
            absent.push(*id);
            continue;
        }
        if r.claimed.as_ref() != Some(&expected) {
            mismatched.push(*id);
        }
        if let Compliance::NonCompliant(reason) = r.compliance {
            noncompliant.push((*id, reason));
        }
    }

    if absent.is_empty() && mismatched.is_empty() && noncompliant.is_empty() {
        let mut entries = Vec::with_capacity(by_id.len());
        let mut trust = BTreeMap::new();
        for (id, r) in &by_id {
            let delta = expected[id];
            let balance = r.balance.checked_add(delta).ok_or(AccountingError::Overflow)?;
            let record = update_trust(r.trust, Outcome::Success, policy);
            entries.push(MemberEntry {
                ledger_id: *id,
                last_block_hash: r.last_block_hash,
                block_count: r.block_count,
                phyli_delta: delta,
                phyli_balance: balance,
                trust: record.trust,
                config_hash: r.config_hash,
            });
            trust.insert(*id, record);
        }
        let block = ConsensusBlock {
            tier: Tier::Primary,
            interval_id,
            timestamp: now,
            prev_consensus_hash: psl.last_primary.unwrap_or(Digest::ZERO),
            member_entries: entries,
            child_hashes: Vec::new(),
        };
        let hash = block.digest();
        return Ok(PrimaryOutcome::Committed(PrimaryCommit { block, hash, deltas: expected, trust }));
    }

    let mut trust: BTreeMap<LedgerId, TrustRecord> = by_id.iter().map(|(id, r)| (*id, r.trust)).collect();
    for id in absent.iter().chain(&mismatched) {
        let record = trust.remove(id).expect("member present");
        trust.insert(*id, update_trust(record, Outcome::Miss, policy));
    }
    if !noncompliant.is_empty() {
        for record in trust.values_mut() {
            *record = apply_penalty(*record, joint_penalty);
        }
    }
    Ok(PrimaryOutcome::Failed(PrimaryFailure { psl: psl.id, interval_id, absent, mismatched, noncompliant, trust }))
}

/// Position of one content block, as seen by the double-spend scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockRef {
    pub license: LicenseRef,
    pub block: Digest,
    pub ledger: LedgerId,
    pub sequence: u64,
    pub timestamp: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DoubleSpendEntry {
    pub license: LicenseRef,
    pub first: BlockRef,
    pub second: BlockRef,
    pub tier: Tier,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DoubleSpendReport {
    pub entries: Vec<DoubleSpendEntry>,
}

impl DoubleSpendReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Exhaustive scan: one entry per license seen in two or more blocks,
/// citing its first two occurrences.
pub fn detect_double_spend<I>(blocks: I, tier: Tier) -> DoubleSpendReport
where
    I: IntoIterator<Item = BlockRef>,
{
    screen_serials(&HashMap::new(), blocks, tier)
}

/// Like [`detect_double_spend`], but a block also conflicts with anything
/// already in `committed`.
pub fn screen_serials<I>(committed: &HashMap<LicenseRef, BlockRef>, blocks: I, tier: Tier) -> DoubleSpendReport
where
    I: IntoIterator<Item = BlockRef>,
{
    let mut seen: HashMap<LicenseRef, BlockRef> = HashMap::new();
    let mut reported = BTreeSet::new();
    let mut entries = Vec::new();
    for b in blocks {
        let prior = committed.get(&b.license).or_else(|| seen.get(&b.license)).copied();
        match prior {
            Some(first) => {
                if reported.insert(b.license) {
                    entries.push(DoubleSpendEntry { license: b.license, first, second: b, tier });
                }
            }
            None => {
                seen.insert(b.license, b);
            }
        }
    }
    DoubleSpendReport { entries }
}

/// Folds consensus blocks over `base`: counts and deltas accumulate, every
/// other field takes the latest value.
pub fn aggregate_entries<'a, I>(base: &BTreeMap<LedgerId, MemberEntry>, blocks: I) -> BTreeMap<LedgerId, MemberEntry>
where
    I: IntoIterator<Item = &'a ConsensusBlock>,
{
    let mut out: BTreeMap<LedgerId, MemberEntry> = base
        .iter()
        .map(|(id, e)| (*id, MemberEntry { block_count: 0, phyli_delta: 0, ..*e }))
        .collect();
    for block in blocks {
        for e in &block.member_entries {
            let acc = out.entry(e.ledger_id).or_insert(MemberEntry { block_count: 0, phyli_delta: 0, ..*e });
            let block_count = acc.block_count + e.block_count;
            let phyli_delta = acc.phyli_delta + e.phyli_delta;
            *acc = MemberEntry { block_count, phyli_delta, ..*e };
        }
    }
    out
}

/// Recomputes every Primary from its counts and checks that balances chain
/// on from `carried`. Returns the first ledger that does not add up.
pub fn verify_primary_chain(
    carried: &BTreeMap<LedgerId, MemberEntry>,
    primaries: &[ConsensusBlock],
) -> Result<(), LedgerId> {
    let mut balances: BTreeMap<LedgerId, Phyli> = carried.iter().map(|(id, e)| (*id, e.phyli_balance)).collect();
    for block in primaries {
        let counts: BTreeMap<LedgerId, u64> = block.member_entries.iter().map(|e| (e.ledger_id, e.block_count)).collect();
        let expected = net_zero_settlement::<Phyli>(&counts);
        for e in &block.member_entries {
            let ok_delta = matches!(&expected, Ok(map) if map.get(&e.ledger_id) == Some(&e.phyli_delta));
            let prior = balances.get(&e.ledger_id).copied();
            let ok_balance = prior.and_then(|b| b.checked_add(e.phyli_delta)) == Some(e.phyli_balance);
            if !ok_delta || !ok_balance {
                return Err(e.ledger_id);
            }
            balances.insert(e.ledger_id, e.phyli_balance);
        }
    }
    Ok(())
}

/// One PSL's material for a Bridge round.
#[derive(Clone, Copy, Debug)]
pub struct BridgeCandidate<'a> {
    pub psl: &'a PrimarySyncList,
    /// Primaries committed since the PSL's last Bridge, oldest first.
    pub primaries: &'a [ConsensusBlock],
    /// Member entries as of the last Bridge.
    pub carried: &'a BTreeMap<LedgerId, MemberEntry>,
    /// Content blocks covered by `primaries`, in creation order.
    pub content: &'a [BlockRef],
    /// A suspended PSL asking to be reactivated.
    pub recovery: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BridgeCommit {
    pub block: ConsensusBlock,
    pub hash: Digest,
    pub confirmations: usize,
    pub required: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BridgeFailure {
    DoubleSpend(DoubleSpendReport),
    Inconsistent(LedgerId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BridgeOutcome {
    Committed(BridgeCommit),
    Failed(BridgeFailure),
}

/// Verifiers are the ledgers outside the candidate PSL, with their online
/// flags. With no outside ledgers at all the quorum is vacuous.
pub fn run_bridge_consensus(
    candidate: BridgeCandidate<'_>,
    verifiers: &[(LedgerId, bool)],
    committed: &HashMap<LicenseRef, BlockRef>,
    cfg: &QuorumConfig,
    prev_bridge: Digest,
    now: Tick,
) -> Result<BridgeOutcome, ConsensusError> {
    let psl = candidate.psl;
    match psl.status {
        PslStatus::Excluded => return Err(ConsensusError::PslNotActive(psl.id)),
        PslStatus::Suspended if !candidate.recovery => return Err(ConsensusError::PslNotActive(psl.id)),
        _ => {}
    }
    if candidate.primaries.is_empty() && !candidate.recovery {
        return Err(ConsensusError::NoPrimaryToCover(psl.id));
    }
    let required = quorum_required(cfg.bridge_quorum_pct, verifiers.len());
    let online = verifiers.iter().filter(|(_, up)| *up).count();
    if online < required {
        return Err(ConsensusError::QuorumUnreachable { online, required });
    }
    if let Err(ledger) = verify_primary_chain(candidate.carried, candidate.primaries) {
        return Ok(BridgeOutcome::Failed(BridgeFailure::Inconsistent(ledger)));
    }
    let report = screen_serials(committed, candidate.content.iter().copied(), Tier::Bridge);
    if !report.is_empty() {
        return Ok(BridgeOutcome::Failed(BridgeFailure::DoubleSpend(report)));
    }
    let aggregated = aggregate_entries(candidate.carried, candidate.primaries);
    let member_entries = psl.members.iter().filter_map(|m| aggregated.get(m).copied()).collect();
    let block = ConsensusBlock {
        tier: Tier::Bridge,
        interval_id: now / psl.sync_interval.max(1),
        timestamp: now,
        prev_consensus_hash: prev_bridge,
        member_entries,
        child_hashes: candidate.primaries.iter().map(|p| p.digest()).collect(),
    };
    let hash = block.digest();
    Ok(BridgeOutcome::Committed(BridgeCommit { block, hash, confirmations: online, required }))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RosterMember {
    pub ledger_id: LedgerId,
    pub psl: PslId,
    pub online: bool,
    pub trust: TrustRecord,
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalInput<'a> {
    /// Every PSL not yet excluded.
    pub psls: &'a [PrimarySyncList],
    /// Every ledger not yet excluded, ascending.
    pub roster: &'a [RosterMember],
    /// Latest carried entry per ledger, aggregated since the last Global.
    pub entries: &'a BTreeMap<LedgerId, MemberEntry>,
    /// Bridge blocks committed since the last Global.
    pub bridges: &'a [Digest],
    /// Content committed by those Bridges.
    pub content: &'a [BlockRef],
    /// Content committed by earlier Globals.
    pub committed: &'a HashMap<LicenseRef, BlockRef>,
    pub consortium_online: bool,
    pub prev_global: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalCommit {
    pub block: ConsensusBlock,
    pub hash: Digest,
    pub participants: BTreeSet<LedgerId>,
    pub missed_globals: BTreeMap<PslId, u32>,
    pub excluded_psls: Vec<PslId>,
    pub excluded_ledgers: Vec<LedgerId>,
    pub trust: BTreeMap<LedgerId, TrustRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GlobalOutcome {
    Committed(Box<GlobalCommit>),
    Failed(DoubleSpendReport),
}

/// Participation requires the ledger online and its PSL active. A PSL misses
/// the round unless all of its members participate; past the limit it is
/// excluded along with its members.
pub fn run_global_consensus(
    input: GlobalInput<'_>,
    cfg: &QuorumConfig,
    policy: &TrustPolicy,
    now: Tick,
) -> Result<GlobalOutcome, ConsensusError> {
    if !now.is_multiple_of(cfg.global_period) {
        return Err(ConsensusError::NotOnInterval { now, interval: cfg.global_period });
    }
    if !input.consortium_online {
        return Err(ConsensusError::ConsortiumOffline);
    }
    let status: BTreeMap<PslId, PslStatus> = input.psls.iter().map(|p| (p.id, p.status)).collect();
    let participates =
        |m: &RosterMember| m.online && status.get(&m.psl) == Some(&PslStatus::Active);
    let participants: BTreeSet<LedgerId> = input.roster.iter().filter(|m| participates(m)).map(|m| m.ledger_id).collect();
    let required = quorum_required(cfg.global_majority_pct, input.roster.len());
    if participants.len() < required {
        return Err(ConsensusError::MajorityUnreachable { participants: participants.len(), required });
    }
    let report = screen_serials(input.committed, input.content.iter().copied(), Tier::Global);
    if !report.is_empty() {
        return Ok(GlobalOutcome::Failed(report));
    }

    let mut trust = BTreeMap::new();
    let mut excluded_ledgers = Vec::new();
    for m in input.roster {
        let outcome = if participants.contains(&m.ledger_id) { Outcome::Success } else { Outcome::Miss };
        let record = update_trust(m.trust, outcome, policy);
        if policy.excludes(&record) {
            excluded_ledgers.push(m.ledger_id);
        }
        trust.insert(m.ledger_id, record);
    }

    let mut missed_globals = BTreeMap::new();
    let mut excluded_psls = Vec::new();
    for psl in input.psls {
        let complete = psl.status == PslStatus::Active && psl.members.iter().all(|m| participants.contains(m));
        let missed = if complete { psl.missed_globals } else { psl.missed_globals + 1 };
        missed_globals.insert(psl.id, missed);
        let remaining = psl.members.iter().filter(|m| !excluded_ledgers.contains(m)).count();
        if missed > cfg.missed_global_limit || remaining < 2 {
            excluded_psls.push(psl.id);
            for m in &psl.members {
                if !excluded_ledgers.contains(m) {
                    excluded_ledgers.push(*m);
                }
            }
        }
    }
    excluded_ledgers.sort();

    let member_entries = input
        .roster
        .iter()
        .filter(|m| excluded_ledgers.binary_search(&m.ledger_id).is_err())
        .filter_map(|m| {
            let e = input.entries.get(&m.ledger_id)?;
            Some(MemberEntry { trust: trust[&m.ledger_id].trust, ..*e })
        })
        .collect();
    let block = ConsensusBlock {
        tier: Tier::Global,
        interval_id: now / cfg.global_period,
        timestamp: now,
        prev_consensus_hash: input.prev_global,
        member_entries,
        child_hashes: input.bridges.to_vec(),
    };
    let hash = block.digest();
    Ok(GlobalOutcome::Committed(Box::new(GlobalCommit {
        block,
        hash,
        participants,
        missed_globals,
        excluded_psls,
        excluded_ledgers,
        trust,
    })))
}

/// Detaches blocks after the last committed sequence and puts them ahead of
/// anything already queued, keeping creation order.
pub fn restructure_after_failure(chain: &mut SideChain, committed_upto: Option<u64>, queue: &mut Vec<PendingBlock>) -> usize {
    let mut detached = chain.detach_after(committed_upto);
    let n = detached.len();
    if n > 0 {
        detached.append(queue);
        *queue = detached;
    }
    n
}
