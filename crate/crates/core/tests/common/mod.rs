#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stcm_core::chain::{Digest, LedgerId};
use stcm_core::consensus::BlockRef;
use stcm_core::contract::{FieldCheck, ValidationRule};
use stcm_core::sim::{ContractSpec, FaultDetail, FaultKind, FaultSpec, FaultTarget, Params, Scenario, Simulation, TxRate};

pub fn contract() -> ContractSpec {
    ContractSpec {
        fields: ValidationRule::new([
            ("qty", FieldCheck::Int { min: 1, max: 500 }),
            ("note", FieldCheck::Str { min_len: 0, max_len: 12 }),
        ]),
        private: vec!["note".into()],
        licenses: 100_000,
        owner: 0,
    }
}

pub fn base(seed: u64, psl_count: usize, psl_size: usize, duration: u64, rate: f64) -> Scenario {
    Scenario {
        seed,
        duration,
        psl_count,
        psl_size,
        tx_rate: TxRate::PerLedger(rate),
        contracts: vec![contract()],
        params: Params::default(),
        config_version: "1.0".into(),
        approved_versions: Vec::new(),
        proposals: Vec::new(),
        faults: Vec::new(),
    }
}

pub fn fault(kind: FaultKind, target: FaultTarget, from: u64, to: u64) -> FaultSpec {
    FaultSpec { kind, target, from, to, detail: FaultDetail::default() }
}

/// Small random marketplace with offline and settlement faults, plus
/// double-spend injections when `adversarial`. Faults end by mid-run so
/// every PSL gets a chance to recover before the last Global.
pub fn random_scenario(seed: u64, adversarial: bool, duration: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let psl_count = rng.gen_range(if adversarial { 2..=3 } else { 1..=3 });
    let psl_size = rng.gen_range(2..=4);
    let mut s = base(seed, psl_count, psl_size, duration, rng.gen_range(0.05..1.5));
    s.params.global_period = 100;
    s.params.bridge_max_span = rng.gen_range(3..=10) * 10;
    s.params.initial_balance = rng.gen_range(0..1000);
    let n = (psl_count * psl_size) as u64;
    let half = duration / 2;
    for _ in 0..rng.gen_range(0..=3) {
        let kind = if rng.gen_bool(0.5) { FaultKind::Offline } else { FaultKind::CorruptSettlement };
        let from = rng.gen_range(1..half - 20);
        let to = from + rng.gen_range(1..20);
        s.faults.push(fault(kind, FaultTarget::Ledger(rng.gen_range(0..n)), from, to));
    }
    if adversarial {
        for _ in 0..rng.gen_range(1..=2) {
            let from = rng.gen_range(20..half);
            s.faults.push(fault(FaultKind::DoubleSpendInject, FaultTarget::Ledger(rng.gen_range(0..n)), from, from + 1));
        }
    }
    s
}

/// Every pair of positions holding the same (tc_id, serial), by direct
/// comparison.
pub fn duplicate_pairs(blocks: &[BlockRef]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if blocks[i].license.tc_id == blocks[j].license.tc_id && blocks[i].license.serial == blocks[j].license.serial {
                out.push((i, j));
            }
        }
    }
    out
}

/// (tc_id, serial, payload hash) of everything a ledger holds: chain blocks
/// and queued blocks.
pub fn held_content(sim: &Simulation) -> Vec<(u64, u64, Digest)> {
    let mut out = Vec::new();
    for l in sim.ledgers().values() {
        for b in l.chain.blocks() {
            out.push((b.license.tc_id, b.license.serial, b.payload_hash));
        }
        for p in &l.queue {
            out.push((p.license.tc_id, p.license.serial, p.payload_hash));
        }
    }
    for p in sim.quarantined() {
        out.push((p.license.tc_id, p.license.serial, p.payload_hash));
    }
    out.sort();
    out
}

pub fn executed_content(sim: &Simulation) -> Vec<(u64, u64, Digest)> {
    let mut out: Vec<_> = sim.executions().iter().map(|e| (e.license.tc_id, e.license.serial, e.payload_hash)).collect();
    out.sort();
    out
}

pub fn ledger(i: u64) -> LedgerId {
    LedgerId::from_index(i)
}
