use std::fmt::Write as _;

use crate::chain::{Digest, LedgerId};
use crate::consensus::{DoubleSpendEntry, PslId};
use crate::Tick;

use super::growth::{GIB, TIB};

pub const CSV_HEADER: &str =
    "tick,ledger_id,status,blocks_created,own_chain_bytes,stored_bytes,consensus_bytes,offchain_bytes,phyli,trust,misses";

/// One CSV row. `ledger_id` is `*` for the marketplace summary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricsRow {
    pub tick: Tick,
    pub ledger_id: String,
    pub status: String,
    pub blocks_created: u64,
    pub own_chain_bytes: u64,
    pub stored_bytes: u64,
    pub consensus_bytes: u64,
    pub offchain_bytes: u64,
    pub phyli: i128,
    pub trust: u64,
    pub misses: u64,
}

impl MetricsRow {
    fn write_csv(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.tick,
            self.ledger_id,
            self.status,
            self.blocks_created,
            self.own_chain_bytes,
            self.stored_bytes,
            self.consensus_bytes,
            self.offchain_bytes,
            self.phyli,
            self.trust,
            self.misses
        );
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TierCounts {
    pub committed: u64,
    pub failed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimaryFailureRecord {
    pub tick: Tick,
    pub psl: PslId,
    pub absent: Vec<LedgerId>,
    pub mismatched: Vec<LedgerId>,
    pub noncompliant: Vec<(LedgerId, String)>,
    /// Every member's trust before and after the failure.
    pub trust: Vec<(LedgerId, u64, u64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub primary: TierCounts,
    pub bridge: TierCounts,
    pub global: TierCounts,
    pub primary_failures: Vec<PrimaryFailureRecord>,
    pub double_spends: Vec<DoubleSpendEntry>,
    pub submissions: u64,
    pub rejected: u64,
    /// Content blocks committed by a Bridge, and their encoded bytes.
    pub committed_blocks: u64,
    pub unique_content_bytes: u64,
    /// Bridge and Global bytes, each copy held by every ledger.
    pub replicated_overhead_bytes: u64,
    /// Largest own-chain plus partner-copy footprint of any ledger.
    pub max_ledger_footprint: u64,
    pub legacy_block_bytes: u64,
    pub final_global_hash: Digest,
    pub trace_hash: Digest,
    pub phyli_total: i128,
}

impl MetricsReport {
    pub fn legacy_bytes(&self) -> u128 {
        self.committed_blocks as u128 * self.legacy_block_bytes as u128
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            row.write_csv(&mut out);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "submissions        {} ({} rejected)", self.submissions, self.rejected);
        let _ = writeln!(s, "committed blocks   {}", self.committed_blocks);
        let _ = writeln!(
            s,
            "consensus          primary {}/{} bridge {}/{} global {}/{} (committed/failed)",
            self.primary.committed,
            self.primary.failed,
            self.bridge.committed,
            self.bridge.failed,
            self.global.committed,
            self.global.failed
        );
        let _ = writeln!(s, "double spends      {}", self.double_spends.len());
        let _ = writeln!(s, "unique content     {} B ({:.4} GiB)", self.unique_content_bytes, self.unique_content_bytes as f64 / GIB);
        let _ = writeln!(s, "ledger footprint   {} B (max own + partner copies)", self.max_ledger_footprint);
        let _ = writeln!(s, "replicated overhead {} B per ledger", self.replicated_overhead_bytes);
        let legacy = self.legacy_bytes();
        let _ = writeln!(
            s,
            "legacy comparison  {} B ({:.2} TiB at {} B/block)",
            legacy,
            legacy as f64 / TIB,
            self.legacy_block_bytes
        );
        let _ = writeln!(s, "phyli total        {}", self.phyli_total);
        let _ = writeln!(s, "final global       {}", self.final_global_hash);
        let _ = writeln!(s, "trace hash         {}", self.trace_hash);
        s.push_str("sizes use binary units (1 GiB = 2^30 B, 1 TiB = 2^40 B)\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let report = MetricsReport {
            rows: vec![MetricsRow {
                tick: 1000,
                ledger_id: "*".into(),
                status: "-".into(),
                blocks_created: 3,
                own_chain_bytes: 528,
                stored_bytes: 1056,
                consensus_bytes: 900,
                offchain_bytes: 0,
                phyli: 0,
                trust: 303,
                misses: 0,
            }],
            ..Default::default()
        };
        assert_eq!(report.to_csv(), format!("{CSV_HEADER}\n1000,*,-,3,528,1056,900,0,0,303,0\n"));
    }

    #[test]
    fn legacy_uses_committed_blocks() {
        let r = MetricsReport { committed_blocks: 30_000_000, legacy_block_bytes: 4 << 20, ..Default::default() };
        assert_eq!(r.legacy_bytes(), 125_829_120_000_000);
        assert!(r.summary().contains("114.44 TiB"));
    }
}
