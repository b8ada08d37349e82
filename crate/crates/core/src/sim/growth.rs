//! Piecewise-exponential load schedule and the storage arithmetic used by
//! the growth experiment.

use crate::chain::{HEADER_LEN, MAX_PUBLIC_PAYLOAD};
use crate::Tick;

pub const MIB: u64 = 1 << 20;
pub const GIB: f64 = (1u64 << 30) as f64;
pub const TIB: f64 = (1u64 << 40) as f64;

/// Legacy platform block size used for the analytic comparison.
pub const LEGACY_BLOCK_BYTES: u64 = 4 * MIB;
/// Alternate preset: average smart contract size on a public chain.
pub const CONTRACT_PRESET_BYTES: u64 = 22 * 1000;

/// Full-size content block: header plus a maximal public payload.
pub const FULL_BLOCK_BYTES: u64 = (HEADER_LEN + MAX_PUBLIC_PAYLOAD) as u64;

/// Replicated overhead allowed per ledger at the reference scale of 30
/// million transactions.
pub const REFERENCE_OVERHEAD_BYTES: u64 = 2 * MIB;
pub const REFERENCE_TRANSACTIONS: u64 = 30_000_000;

/// Overhead bound scaled linearly to `n` transactions.
pub fn scaled_overhead_bound(n: u64) -> u64 {
    (REFERENCE_OVERHEAD_BYTES as u128 * n as u128 / REFERENCE_TRANSACTIONS as u128) as u64
}

pub fn legacy_bytes(transactions: u64, block_bytes: u64) -> u128 {
    transactions as u128 * block_bytes as u128
}

/// Splits `total` over `parts` as evenly as possible, larger shares first.
fn spread(total: u64, parts: u64) -> impl Iterator<Item = u64> {
    let (base, extra) = total.checked_div(parts).map_or((0, 0), |b| (b, total % parts));
    (0..parts).map(move |i| base + u64::from(i < extra))
}

/// Per-tick marketplace submission counts for ticks `1..=duration`.
///
/// Stage `s` of `stages` carries weight `2^s`; stage totals are rounded by
/// largest remainder so the schedule sums to `total` exactly.
pub fn growth_schedule(total: u64, stages: u32, duration: Tick) -> Vec<u64> {
    let stages = stages.clamp(1, 62).min(duration.max(1) as u32) as u64;
    let weight_sum = (1u128 << stages) - 1;
    let mut stage_totals: Vec<(u64, u128, usize)> = (0..stages)
        .map(|s| {
            let exact = total as u128 * (1u128 << s);
            ((exact / weight_sum) as u64, exact % weight_sum, s as usize)
        })
        .collect();
    let assigned: u64 = stage_totals.iter().map(|t| t.0).sum();
    let mut by_remainder: Vec<usize> = (0..stage_totals.len()).collect();
    by_remainder.sort_by(|&a, &b| stage_totals[b].1.cmp(&stage_totals[a].1).then(b.cmp(&a)));
    for &i in by_remainder.iter().take((total - assigned) as usize) {
        stage_totals[i].0 += 1;
    }

    let mut out = Vec::with_capacity(duration as usize);
    for (s, (stage_total, _, _)) in stage_totals.iter().enumerate() {
        let start = duration * s as u64 / stages;
        let end = duration * (s as u64 + 1) / stages;
        out.extend(spread(*stage_total, end - start));
    }
    out
}

/// Share of `count` submissions at `tick` that goes to ledger `idx` of `n`.
/// The remainder rotates with the tick so no ledger is favoured.
pub fn ledger_share(count: u64, tick: Tick, idx: usize, n: usize) -> u64 {
    let n = n as u64;
    let base = count / n;
    let extra = count % n;
    let pos = (idx as u64 + n - tick % n) % n;
    base + u64::from(pos < extra)
}
