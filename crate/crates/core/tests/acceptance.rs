//! Acceptance run: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{base, duplicate_pairs, executed_content, fault, held_content, ledger, random_scenario};
use stcm_core::chain::{LedgerId, Tier};
use stcm_core::consortium::NonCompliance;
use stcm_core::sim::growth::{legacy_bytes, scaled_overhead_bound, GIB, LEGACY_BLOCK_BYTES, TIB};
use stcm_core::sim::{growth_scenario, run_scenario, FaultKind, FaultTarget, ProposalSpec, Scenario, Simulation, TxRate};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(s: Scenario) -> Result<Simulation, String> {
    let mut sim = Simulation::new(s).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    Ok(sim)
}

// Full-size block: 176-byte header + 208-byte payload.
const BLOCK_BYTES: u64 = 384;

fn storage_growth() -> Outcome {
    let start = Instant::now();
    let r = run_scenario(growth_scenario(300_000, 3, 1, 1)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(r.committed_blocks == 300_000, || format!("{} blocks committed", r.committed_blocks))?;
    ensure(r.unique_content_bytes == 300_000 * BLOCK_BYTES, || format!("unique content {}", r.unique_content_bytes))?;
    ensure(r.unique_content_bytes <= 120_000_000, || "over 120 MB".into())?;
    let per_block = r.unique_content_bytes / r.committed_blocks;
    let extrapolated = 30_000_000.0 * per_block as f64 / GIB;
    ensure(extrapolated < 12.0, || format!("30e6 extrapolation {extrapolated:.2} GiB"))?;
    let bound = scaled_overhead_bound(300_000);
    ensure(r.replicated_overhead_bytes <= bound, || format!("overhead {} > {bound}", r.replicated_overhead_bytes))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "unique {} B, 30e6 -> {extrapolated:.2} GiB, overhead {} <= {bound} B, {:.1}s",
        r.unique_content_bytes,
        r.replicated_overhead_bytes,
        elapsed.as_secs_f64()
    ))
}

fn legacy_comparison() -> Outcome {
    let legacy = legacy_bytes(30_000_000, LEGACY_BLOCK_BYTES);
    ensure(legacy == 125_829_120_000_000, || format!("legacy bytes {legacy}"))?;
    let tib = legacy as f64 / TIB;
    ensure((tib - 114.44).abs() < 0.005, || format!("{tib} TiB"))?;
    let r = run_scenario(growth_scenario(3_000, 3, 1, 2)).map_err(|e| e.to_string())?;
    ensure(r.legacy_bytes() == 3_000 * LEGACY_BLOCK_BYTES as u128, || format!("report legacy {}", r.legacy_bytes()))?;
    Ok(format!("30e6 x 4 MiB = {tib:.2} TiB"))
}

fn overhead_for(psl_count: usize, rate: f64) -> Result<u64, String> {
    let mut s = base(3, psl_count, 3, 1000, rate);
    s.contracts[0] = stcm_core::sim::ContractSpec::fixed_payload(208, 100_000);
    let r = run_scenario(s).map_err(|e| e.to_string())?;
    Ok(r.replicated_overhead_bytes)
}

fn replicated_overhead() -> Outcome {
    let low = overhead_for(4, 0.05)?;
    let high = overhead_for(4, 0.5)?;
    let change = (high as f64 - low as f64).abs() / low as f64;
    ensure(change < 0.01, || format!("10x load moved overhead {low} -> {high}"))?;
    let doubled = overhead_for(8, 0.05)?;
    let ratio = doubled as f64 / low as f64;
    ensure((ratio - 2.0).abs() / 2.0 < 0.05, || format!("doubling PSLs gave ratio {ratio}"))?;
    Ok(format!("4 PSLs {low} B at both loads (change {:.3}%), 8 PSLs {doubled} B (x{ratio:.4})", change * 100.0))
}

fn net_zero() -> Outcome {
    let mut primaries = 0;
    for seed in 0..1000 {
        let s = random_scenario(seed, seed % 4 == 0, 200);
        let expected = (s.ledger_count() as i128) * s.params.initial_balance as i128;
        let sim = run(s).map_err(|e| format!("seed {seed}: {e}"))?;
        for c in sim.history().iter().filter(|c| c.block.tier == Tier::Primary) {
            primaries += 1;
            let sum: i128 = c.block.member_entries.iter().map(|e| e.phyli_delta as i128).sum();
            ensure(sum == 0, || format!("seed {seed}: primary {} sums to {sum}", c.hash))?;
        }
        let total: i128 = sim.ledgers().values().map(|l| l.phyli.balance as i128).sum();
        ensure(total == expected, || format!("seed {seed}: phyli total {total} != {expected}"))?;
        for row in sim.report().rows.iter().filter(|r| r.ledger_id == "*") {
            ensure(row.phyli == expected, || format!("seed {seed}: tick {} total {}", row.tick, row.phyli))?;
        }
    }
    Ok(format!("1000 scenarios, {primaries} primary blocks, every delta sum 0"))
}

fn double_spend() -> Outcome {
    let (mut injections, mut committed) = (0, 0);
    for seed in 0..100 {
        let sim = run(random_scenario(1000 + seed, true, 400)).map_err(|e| format!("seed {seed}: {e}"))?;
        let blocks = sim.global_committed_blocks();
        committed += blocks.len();
        let dups = duplicate_pairs(&blocks);
        ensure(dups.is_empty(), || format!("seed {seed}: {} duplicate pairs reached Global", dups.len()))?;
        let reported: Vec<_> = sim.report().double_spends.iter().map(|d| (d.license, d.tier)).collect();
        for inj in sim.injections() {
            injections += 1;
            let hit = reported.iter().any(|(l, tier)| *l == inj.license && matches!(tier, Tier::Bridge | Tier::Global));
            ensure(hit, || format!("seed {seed}: injection {} at {} unreported", inj.license, inj.tick))?;
        }
    }
    ensure(injections > 0, || "no injection landed".into())?;
    Ok(format!("100 scenarios, {injections} injections all reported, {committed} Global blocks scanned, 0 duplicates"))
}

fn primary_rule() -> Outcome {
    let mut cases = 0;
    for kind in [FaultKind::Offline, FaultKind::CorruptSettlement] {
        for target in 0..6u64 {
            for (from, to) in [(15, 25), (15, 45)] {
                let mut s = base(11 + target, 2, 3, 300, 0.6);
                s.faults.push(fault(kind, FaultTarget::Ledger(target), from, to));
                let sim = run(s).map_err(|e| e.to_string())?;
                let offender = ledger(target);
                let rec = sim
                    .report()
                    .primary_failures
                    .iter()
                    .find(|f| f.tick == 20)
                    .ok_or_else(|| format!("{kind:?} on {target}: no failure at tick 20"))?;
                let blamed = match kind {
                    FaultKind::Offline => &rec.absent,
                    _ => &rec.mismatched,
                };
                ensure(blamed == &vec![offender], || format!("{kind:?} on {target}: blamed {blamed:?}"))?;
                for (id, before, after) in &rec.trust {
                    // one success at tick 10, then the miss
                    let expected = if *id == offender { 101 - 10 } else { 101 };
                    ensure(*before == 101 && *after == expected, || {
                        format!("{kind:?} on {target}: {id} trust {before} -> {after}")
                    })?;
                }
                ensure(held_content(&sim) == executed_content(&sim), || format!("{kind:?} on {target}: content lost"))?;
                for l in sim.ledgers().values() {
                    let spent: u64 = l.licenses.values().map(|a| a.purchased() - a.balance()).sum();
                    let ran = sim.executions().iter().filter(|e| e.ledger == l.ledger_id).count() as u64;
                    ensure(spent == ran, || format!("{}: {spent} licenses spent, {ran} executions", l.ledger_id))?;
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} fault cases: failure, -10 trust on the offender, content multiset preserved"))
}

fn roster_enforcement() -> Outcome {
    // PSL 1 of 3 goes dark for good at tick 50
    let mut s = base(5, 3, 3, 800, 0.4);
    s.params.global_period = 100;
    s.params.bridge_max_span = 50;
    s.faults.push(fault(FaultKind::Offline, FaultTarget::Psl(1), 50, 10_000));
    let sim = run(s).map_err(|e| e.to_string())?;
    let status = sim.psl_status(stcm_core::consensus::PslId(1));
    ensure(status == Some(stcm_core::consensus::PslStatus::Excluded), || format!("psl1 {status:?}"))?;
    let members: Vec<LedgerId> = (3..6).map(ledger).collect();
    // excluded at the fourth missed Global (tick 400)
    let later: Vec<_> = sim.history().iter().filter(|c| c.block.timestamp > 400).collect();
    ensure(!later.is_empty(), || "no consensus after exclusion".into())?;
    for c in &later {
        let leaked = c.block.member_entries.iter().any(|e| members.contains(&e.ledger_id));
        ensure(!leaked, || format!("{:?} at {} lists an excluded ledger", c.block.tier, c.block.timestamp))?;
    }
    let at_400 = sim.history().iter().find(|c| c.block.tier == Tier::Global && c.block.timestamp == 400);
    ensure(at_400.is_some_and(|g| g.block.member_entries.len() == 6), || "global at 400 should drop psl1".into())?;

    // ledger 2 never pulls; a parameter change is promoted at the Global of tick 100
    let mut s = base(6, 2, 3, 500, 0.4);
    s.params.global_period = 100;
    s.proposals.push(ProposalSpec { at: 5, name: "bridge_max_span".into(), value: serde_json::json!(80) });
    s.faults.push(fault(FaultKind::StaleVersion, FaultTarget::Ledger(2), 1, 10_000));
    let sim = run(s).map_err(|e| e.to_string())?;
    let promoted = sim.consortium().history().iter().find(|p| p.version == 1).map(|p| p.committed_at);
    ensure(promoted == Some(100), || format!("promotion at {promoted:?}"))?;
    let hits: Vec<_> = sim
        .report()
        .primary_failures
        .iter()
        .filter(|f| f.noncompliant.iter().any(|(id, _)| *id == ledger(2)))
        .collect();
    ensure(hits.len() == 1, || format!("{} detections", hits.len()))?;
    let hit = hits[0];
    ensure(hit.tick - 100 <= 100, || format!("detected at {}", hit.tick))?;
    let reason = NonCompliance::StaleParameters.to_string();
    ensure(hit.noncompliant[0].1 == reason, || format!("reason {}", hit.noncompliant[0].1))?;
    for (id, before, after) in &hit.trust {
        ensure(*after == before - 10, || format!("{id}: {before} -> {after}"))?;
    }
    let excluded = sim.ledgers()[&ledger(2)].standing == stcm_core::ledger::Standing::Excluded;
    ensure(excluded, || "stale ledger still active".into())?;
    Ok(format!(
        "psl1 excluded at tick 400 and absent from {} later blocks; stale ledger caught at {} with one joint penalty",
        later.len(),
        hit.tick
    ))
}

fn determinism() -> Outcome {
    for seed in 0..20 {
        let s = random_scenario(5000 + seed, seed % 2 == 0, 300);
        let a = run(s.clone())?;
        let b = run(s)?;
        ensure(a.report().to_csv() == b.report().to_csv(), || format!("seed {seed}: CSV differs"))?;
        ensure(a.report().trace_hash == b.report().trace_hash, || format!("seed {seed}: trace differs"))?;
    }
    Ok("20 scenarios x 2 runs, identical CSV and trace hash".into())
}

fn prune_carry_forward() -> Outcome {
    let mut pruned_total = 0;
    for seed in 0..20 {
        let mut s = random_scenario(7000 + seed, false, 450);
        s.tx_rate = TxRate::PerLedger(0.8);
        let plain = run(s.clone())?;
        s.params.prune_at_global = true;
        let pruned = run(s.clone())?;

        // balances from the full Primary history, genesis onward
        let mut from_history: BTreeMap<LedgerId, i128> =
            plain.ledgers().keys().map(|id| (*id, s.params.initial_balance as i128)).collect();
        for c in plain.history().iter().filter(|c| c.block.tier == Tier::Primary) {
            for e in &c.block.member_entries {
                *from_history.get_mut(&e.ledger_id).unwrap() += e.phyli_delta as i128;
            }
        }

        // balances carried by the last Global plus the Primaries it has not absorbed
        let h = pruned.history();
        let g = h.iter().rposition(|c| c.block.tier == Tier::Global).unwrap();
        let mut carried = BTreeMap::new();
        for e in &h[g].block.member_entries {
            let psl = pruned.ledgers()[&e.ledger_id].psl;
            let last_bridge = h[..g].iter().rposition(|c| c.block.tier == Tier::Bridge && c.psl == Some(psl)).unwrap_or(0);
            let tail: i128 = h[last_bridge + 1..]
                .iter()
                .filter(|c| c.block.tier == Tier::Primary)
                .filter_map(|c| c.block.entry(e.ledger_id))
                .map(|m| m.phyli_delta as i128)
                .sum();
            carried.insert(e.ledger_id, e.phyli_balance as i128 + tail);
        }

        for (id, l) in pruned.ledgers() {
            let unpruned = plain.ledgers()[id].phyli.balance as i128;
            ensure(l.phyli.balance as i128 == unpruned, || format!("seed {seed}: {id} differs after pruning"))?;
            ensure(from_history[id] == unpruned, || format!("seed {seed}: {id} history {} vs {unpruned}", from_history[id]))?;
            if let Some(b) = carried.get(id) {
                ensure(*b == unpruned, || format!("seed {seed}: {id} carried forward {b} vs {unpruned}"))?;
            }
            ensure(l.chain.verify_chain().is_ok(), || format!("seed {seed}: {id} chain broken after pruning"))?;
            pruned_total += l.chain.pruned_blocks();
        }
        let phyli = |sim: &Simulation| sim.report().rows.iter().map(|r| (r.tick, r.ledger_id.clone(), r.phyli)).collect::<Vec<_>>();
        ensure(phyli(&plain) == phyli(&pruned), || format!("seed {seed}: phyli trajectories differ"))?;
    }
    ensure(pruned_total > 0, || "nothing was pruned".into())?;
    Ok(format!("20 scenarios, {pruned_total} blocks pruned, balances identical to unpruned history"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "storage growth", storage_growth),
        (2, "legacy comparison", legacy_comparison),
        (3, "replicated overhead", replicated_overhead),
        (4, "net-zero exactness", net_zero),
        (5, "double-spend safety", double_spend),
        (6, "100% primary rule", primary_rule),
        (7, "roster enforcement", roster_enforcement),
        (8, "determinism", determinism),
        (9, "prune and carry forward", prune_carry_forward),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
