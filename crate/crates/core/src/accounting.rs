//! Net-zero Phyli settlement and trust bookkeeping.
//!
//! Settlement arithmetic is generic over the signed amount type; the protocol
//! itself uses [`crate::Phyli`] (`i64`). All arithmetic is checked, so a
//! narrower type reports [`AccountingError::Overflow`] instead of wrapping.

use std::collections::BTreeMap;
use std::fmt::Debug;

use num_traits::{PrimInt, Signed};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::LedgerId;
use crate::Phyli;

/// Signed integer usable as a Phyli amount.
pub trait Amount: PrimInt + Signed + Debug {}

impl<T: PrimInt + Signed + Debug> Amount for T {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccountingError {
    #[error("a synchronization list needs at least 2 members, got {0}")]
    DegeneratePsl(usize),
    #[error("no Phyli entry for ledger {0}")]
    UnknownLedger(LedgerId),
    #[error("settlement arithmetic overflowed")]
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhyliLedgerEntry<A = Phyli> {
    pub ledger_id: LedgerId,
    pub balance: A,
    pub last_delta: A,
}

impl<A: Amount> PhyliLedgerEntry<A> {
    pub fn new(ledger_id: LedgerId, balance: A) -> Self {
        PhyliLedgerEntry { ledger_id, balance, last_delta: A::zero() }
    }
}

/// Per-member Phyli deltas for one synchronization interval.
///
/// Each member receives one unit per block it stores for a partner and pays
/// one unit to every partner per block it created, so for `k` members
/// `delta(i) = sum_{j != i} count(j) - (k - 1) * count(i)`. The deltas sum to
/// zero exactly.
pub fn net_zero_settlement<A: Amount>(
    block_counts: &BTreeMap<LedgerId, u64>,
) -> Result<BTreeMap<LedgerId, A>, AccountingError> {
    let k = block_counts.len();
    if k < 2 {
        return Err(AccountingError::DegeneratePsl(k));
    }
    let cast = |v: u64| A::from(v).ok_or(AccountingError::Overflow);
    let total = block_counts
        .values()
        .try_fold(A::zero(), |acc, &c| acc.checked_add(&cast(c)?).ok_or(AccountingError::Overflow))?;
    let members = A::from(k).ok_or(AccountingError::Overflow)?;
    block_counts
        .iter()
        .map(|(&id, &count)| {
            // total - k*count == (total - count) - (k-1)*count
            let owed = members.checked_mul(&cast(count)?).ok_or(AccountingError::Overflow)?;
            let delta = total.checked_sub(&owed).ok_or(AccountingError::Overflow)?;
            Ok((id, delta))
        })
        .collect()
}

/// Adds each delta to its ledger's balance. Either every entry is updated or
/// none is.
pub fn apply_settlement<A: Amount>(
    entries: &BTreeMap<LedgerId, PhyliLedgerEntry<A>>,
    deltas: &BTreeMap<LedgerId, A>,
) -> Result<BTreeMap<LedgerId, PhyliLedgerEntry<A>>, AccountingError> {
    let mut updated = entries.clone();
    for (id, &delta) in deltas {
        let entry = updated.get_mut(id).ok_or(AccountingError::UnknownLedger(*id))?;
        entry.balance = entry.balance.checked_add(&delta).ok_or(AccountingError::Overflow)?;
        entry.last_delta = delta;
    }
    Ok(updated)
}

/// True iff `claimed` matches the recomputed settlement entry for entry.
pub fn verify_partner_settlement<A: Amount>(
    claimed: &BTreeMap<LedgerId, A>,
    block_counts: &BTreeMap<LedgerId, u64>,
) -> bool {
    match net_zero_settlement::<A>(block_counts) {
        Ok(expected) => expected == *claimed,
        Err(_) => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Miss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrustRecord {
    pub ledger_id: LedgerId,
    pub trust: u64,
    pub consecutive_misses: u32,
    pub last_outcome: Option<Outcome>,
}

impl TrustRecord {
    pub fn new(ledger_id: LedgerId, trust: u64) -> Self {
        TrustRecord { ledger_id, trust, consecutive_misses: 0, last_outcome: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustPolicy {
    pub initial_trust: u64,
    pub success_increment: u64,
    pub miss_penalty: u64,
    /// Ledgers whose trust falls below this leave the roster; 0 disables.
    pub exclusion_threshold: u64,
}

impl Default for TrustPolicy {
    fn default() -> Self {
        TrustPolicy { initial_trust: 100, success_increment: 1, miss_penalty: 10, exclusion_threshold: 0 }
    }
}

impl TrustPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.miss_penalty < self.success_increment {
            return Err(format!(
                "miss_penalty ({}) must be at least success_increment ({})",
                self.miss_penalty, self.success_increment
            ));
        }
        Ok(())
    }

    pub fn excludes(&self, record: &TrustRecord) -> bool {
        self.exclusion_threshold > 0 && record.trust < self.exclusion_threshold
    }
}

pub fn update_trust(record: TrustRecord, outcome: Outcome, policy: &TrustPolicy) -> TrustRecord {
    match outcome {
        Outcome::Success => TrustRecord {
            trust: record.trust.saturating_add(policy.success_increment),
            consecutive_misses: 0,
            last_outcome: Some(Outcome::Success),
            ..record
        },
        Outcome::Miss => TrustRecord {
            trust: record.trust.saturating_sub(policy.miss_penalty),
            consecutive_misses: record.consecutive_misses.saturating_add(1),
            last_outcome: Some(Outcome::Miss),
            ..record
        },
    }
}

/// Flat deduction used for joint compliance penalties; the miss streak is
/// left alone.
pub fn apply_penalty(record: TrustRecord, amount: u64) -> TrustRecord {
    TrustRecord { trust: record.trust.saturating_sub(amount), ..record }
}
