//! Deterministic discrete-event driver. One tick at a time, the loop
//! schedules that tick's pulls, submissions and consensus rounds and then
//! executes every due event in [`EventKind`] order.

mod event;
pub mod growth;
pub mod metrics;
pub mod scenario;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::accounting::{Outcome, TrustPolicy};
use crate::chain::{ConsensusBlock, Digest, LedgerId, LicenseRef, MemberEntry, PendingBlock, Tier};
use crate::consensus::{
    aggregate_entries, check_bridge_deadline, restructure_after_failure, run_bridge_consensus, run_global_consensus,
    run_primary_consensus, BlockRef, BridgeCandidate, BridgeDeadline, BridgeFailure, BridgeOutcome, ConsensusError,
    DoubleSpendReport, GlobalInput, GlobalOutcome, MemberReport, PrimaryOutcome, PrimarySyncList, PslId, PslStatus,
    QuorumConfig, RosterMember,
};
use crate::consortium::{self, config_hash_for, Compliance, ConsortiumServer, GlobalParameterSet, ParamValue};
use crate::contract::ContractRegistry;
use crate::ledger::{sync_copy, LedgerStatus, PeerLedgerState, Standing, SubmitOutcome};
use crate::Tick;

pub use event::{EventKind, EventQueue, Payload, SimEvent, Target};
pub use metrics::{MetricsReport, MetricsRow, PrimaryFailureRecord, TierCounts, CSV_HEADER};
pub use scenario::{
    ContractSpec, FaultDetail, FaultKind, FaultSpec, FaultTarget, GrowthSpec, Params, ProposalSpec, Scenario, TxRate,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invariant breach at tick {tick}: {what}")]
    InvariantBreach { tick: Tick, what: String },
}

/// A consensus block as committed, with the PSL it belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommittedConsensus {
    pub hash: Digest,
    pub psl: Option<PslId>,
    pub block: ConsensusBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Injection {
    pub tick: Tick,
    pub attacker: LedgerId,
    pub source: LedgerId,
    pub license: LicenseRef,
}

/// One contract execution: who ran it, the license spent and the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExecutionRecord {
    pub ledger: LedgerId,
    pub license: LicenseRef,
    pub payload_hash: Digest,
}

#[derive(Clone, Debug)]
struct PslState {
    list: PrimarySyncList,
    /// Primaries since the last Bridge and the content they cover.
    primaries: Vec<ConsensusBlock>,
    content: Vec<BlockRef>,
    content_bytes: u64,
    /// Member entries as of the last Bridge.
    carried: BTreeMap<LedgerId, MemberEntry>,
    in_flight_until: Tick,
}

pub struct Simulation {
    scenario: Scenario,
    cfg: QuorumConfig,
    policy: TrustPolicy,
    joint_penalty: u64,
    pull_interval: Tick,
    rng: ChaCha8Rng,
    queue: EventQueue,
    consortium: ConsortiumServer,
    registry: ContractRegistry,
    contract_ids: Vec<u64>,
    ledgers: BTreeMap<LedgerId, PeerLedgerState>,
    psls: BTreeMap<PslId, PslState>,
    bridge_index: HashMap<LicenseRef, BlockRef>,
    global_index: HashMap<LicenseRef, BlockRef>,
    bridges_since_global: Vec<ConsensusBlock>,
    content_since_global: Vec<BlockRef>,
    global_base: BTreeMap<LedgerId, MemberEntry>,
    last_bridge: Digest,
    last_global: Digest,
    history: Vec<CommittedConsensus>,
    offline_faults: BTreeMap<LedgerId, u32>,
    replica_faults: Vec<u32>,
    injections: Vec<Injection>,
    executions: Vec<ExecutionRecord>,
    quarantined: Vec<PendingBlock>,
    growth: Option<Vec<u64>>,
    initial_phyli: i128,
    report: MetricsReport,
    trace: Sha256,
    trace_lines: Option<Vec<String>>,
    rows_at: Option<Tick>,
    finished: bool,
}

fn breach(tick: Tick, what: impl Into<String>) -> SimError {
    SimError::InvariantBreach { tick, what: what.into() }
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let params = scenario.params.clone();
        let cfg = params.quorum();
        let policy = params.trust;
        let config = config_hash_for(&scenario.config_version);
        let n = scenario.ledger_count();
        let ids: Vec<LedgerId> = (0..n as u64).map(LedgerId::from_index).collect();

        let mut registry = ContractRegistry::new();
        let mut contract_ids = Vec::new();
        for (i, c) in scenario.contracts.iter().enumerate() {
            let proto = registry
                .define_prototype(LedgerId::from_index(c.owner), c.fields.clone(), c.privacy_rule())
                .map_err(|e| SimError::InvalidScenario(format!("contract {i}: {e}")))?;
            let tc = proto.tc_id;
            registry.vet(tc).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            contract_ids.push(tc);
        }

        // Genesis Global: commits the contracts and the initial parameters.
        let genesis_entries: Vec<MemberEntry> = ids
            .iter()
            .map(|id| MemberEntry {
                ledger_id: *id,
                last_block_hash: Digest::ZERO,
                block_count: 0,
                phyli_delta: 0,
                phyli_balance: params.initial_balance,
                trust: policy.initial_trust,
                config_hash: config,
            })
            .collect();
        let genesis = ConsensusBlock {
            tier: Tier::Global,
            interval_id: 0,
            timestamp: 0,
            prev_consensus_hash: Digest::ZERO,
            member_entries: genesis_entries.clone(),
            child_hashes: Vec::new(),
        };
        let genesis_hash = genesis.digest();
        for tc in &contract_ids {
            registry.commit(*tc, genesis_hash).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        }
        let mut set = GlobalParameterSet::genesis(&cfg, scenario.approved_hashes());
        set.params.insert(consortium::COMMITTED_CONTRACTS.into(), ParamValue::Ids(registry.committed_ids()));
        set.global_block = genesis_hash;
        let mut cs = ConsortiumServer::new(set, scenario.psl_size, params.cs_replicas)
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;

        let mut ledgers = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            let reg = cs.register_ledger(*id, config, 0).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            let mut pl = PeerLedgerState::new(*id, reg.psl_assignment, config, params.initial_balance, policy.initial_trust);
            pl.queue_capacity = params.queue_capacity;
            pl.held_param_version = cs.current().version;
            pl.chain.set_anchor(genesis_hash);
            let spec = &scenario.contracts[i % contract_ids.len()];
            if spec.licenses > 0 {
                let tc = contract_ids[i % contract_ids.len()];
                registry
                    .purchase_licenses(pl.account_mut(tc), spec.licenses)
                    .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            }
            ledgers.insert(*id, pl);
        }

        let by_id: BTreeMap<LedgerId, MemberEntry> = genesis_entries.iter().map(|e| (e.ledger_id, *e)).collect();
        let mut psls = BTreeMap::new();
        for (psl, members) in cs.psl_members() {
            let list = PrimarySyncList::new(*psl, members.clone(), cfg.sync_interval)
                .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            for m in members {
                let pl = ledgers.get_mut(m).expect("registered ledger");
                for partner in members.iter().filter(|p| *p != m) {
                    pl.partner_copies.insert(*partner, crate::chain::SideChain::new(*partner));
                }
            }
            let carried = members.iter().map(|m| (*m, by_id[m])).collect();
            psls.insert(*psl, PslState {
                list,
                primaries: Vec::new(),
                content: Vec::new(),
                content_bytes: 0,
                carried,
                in_flight_until: 0,
            });
        }

        let growth = match &scenario.tx_rate {
            TxRate::Growth { growth: g } => Some(growth::growth_schedule(g.total, g.stages, scenario.duration)),
            TxRate::PerLedger(_) => None,
        };
        let mut queue = EventQueue::new();
        for (i, f) in scenario.faults.iter().enumerate() {
            let target = fault_target(f.target);
            queue.push(f.from, EventKind::FaultStart, target, Payload::Fault(i));
            queue.push(f.to, EventKind::FaultEnd, target, Payload::Fault(i));
        }

        let genesis_len = genesis.encoded_len() as u64;
        for pl in ledgers.values_mut() {
            pl.consensus_bytes += genesis_len;
        }
        let report = MetricsReport {
            replicated_overhead_bytes: genesis_len,
            legacy_block_bytes: growth::LEGACY_BLOCK_BYTES,
            ..Default::default()
        };

        Ok(Simulation {
            cfg,
            policy,
            joint_penalty: params.joint_penalty(),
            pull_interval: params.pull_interval(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            queue,
            consortium: cs,
            registry,
            contract_ids,
            ledgers,
            psls,
            bridge_index: HashMap::new(),
            global_index: HashMap::new(),
            bridges_since_global: Vec::new(),
            content_since_global: Vec::new(),
            global_base: by_id,
            last_bridge: genesis_hash,
            last_global: genesis_hash,
            history: vec![CommittedConsensus { hash: genesis_hash, psl: None, block: genesis }],
            offline_faults: BTreeMap::new(),
            replica_faults: vec![0; params.cs_replicas],
            injections: Vec::new(),
            executions: Vec::new(),
            quarantined: Vec::new(),
            growth,
            initial_phyli: n as i128 * params.initial_balance as i128,
            report,
            trace: Sha256::new(),
            trace_lines: None,
            rows_at: None,
            finished: false,
            scenario,
        })
    }

    /// Keeps the event trace lines in memory as well as hashing them.
    pub fn with_trace(mut self) -> Self {
        self.trace_lines = Some(Vec::new());
        self
    }

    pub fn set_legacy_block_bytes(&mut self, bytes: u64) {
        self.report.legacy_block_bytes = bytes;
    }

    pub fn run(&mut self) -> Result<&MetricsReport, SimError> {
        if !self.finished {
            for t in 0..=self.scenario.duration {
                self.step(t)?;
            }
            self.finish();
        }
        Ok(&self.report)
    }

    pub fn report(&self) -> &MetricsReport {
        &self.report
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn history(&self) -> &[CommittedConsensus] {
        &self.history
    }

    pub fn ledgers(&self) -> &BTreeMap<LedgerId, PeerLedgerState> {
        &self.ledgers
    }

    pub fn consortium(&self) -> &ConsortiumServer {
        &self.consortium
    }

    pub fn registry(&self) -> &ContractRegistry {
        &self.registry
    }

    pub fn psl_status(&self, psl: PslId) -> Option<PslStatus> {
        self.psls.get(&psl).map(|s| s.list.status)
    }

    pub fn psl_missed_globals(&self, psl: PslId) -> Option<u32> {
        self.psls.get(&psl).map(|s| s.list.missed_globals)
    }

    pub fn injections(&self) -> &[Injection] {
        &self.injections
    }

    pub fn executions(&self) -> &[ExecutionRecord] {
        &self.executions
    }

    pub fn quarantined(&self) -> &[PendingBlock] {
        &self.quarantined
    }

    pub fn trace_lines(&self) -> Option<&[String]> {
        self.trace_lines.as_deref()
    }

    /// Total Phyli over every ledger ever registered.
    pub fn phyli_total(&self) -> i128 {
        self.ledgers.values().map(|l| l.phyli.balance as i128).sum()
    }

    fn record(&mut self, t: Tick, kind: &str, target: Target, outcome: &str) {
        let line = format!("{t} {kind} {target} {outcome}");
        self.trace.update(line.as_bytes());
        self.trace.update(b"\n");
        if let Some(lines) = &mut self.trace_lines {
            lines.push(line);
        }
    }

    fn step(&mut self, t: Tick) -> Result<(), SimError> {
        for i in 0..self.scenario.proposals.len() {
            if self.scenario.proposals[i].at == t {
                let (name, value) = self.scenario.proposals[i].resolve().map_err(SimError::InvalidScenario)?;
                let p = self.consortium.propose_parameter(name.clone(), value);
                self.consortium.display_proposal(p.proposal_id).map_err(|e| breach(t, e.to_string()))?;
                self.record(t, "propose", Target::Consortium(0), &format!("#{} {name}", p.proposal_id));
            }
        }
        self.schedule_tick(t);
        while let Some(e) = self.queue.pop_due(t) {
            self.handle(e)?;
        }
        Ok(())
    }

    fn schedule_tick(&mut self, t: Tick) {
        let ids: Vec<LedgerId> = self.ledgers.keys().copied().collect();
        if t.is_multiple_of(self.pull_interval) {
            for id in &ids {
                self.queue.push(t, EventKind::ParamPull, Target::Ledger(*id), Payload::None);
            }
        }
        let n = ids.len();
        for (i, id) in ids.iter().enumerate() {
            let count = match (&self.growth, &self.scenario.tx_rate) {
                (Some(schedule), _) => match t.checked_sub(1).and_then(|k| schedule.get(k as usize)) {
                    Some(c) => growth::ledger_share(*c, t, i, n),
                    None => 0,
                },
                (None, TxRate::PerLedger(rate)) => {
                    let whole = rate.floor();
                    let frac = rate - whole;
                    whole as u64 + u64::from(frac > 0.0 && self.rng.gen::<f64>() < frac)
                }
                (None, TxRate::Growth { .. }) => 0,
            };
            if count > 0 {
                self.queue.push(t, EventKind::Submit, Target::Ledger(*id), Payload::Count(count));
            }
        }
        if t > 0 && t.is_multiple_of(self.cfg.sync_interval) {
            let psls: Vec<PslId> = self.psls.keys().copied().collect();
            for p in psls {
                self.queue.push(t, EventKind::PrimaryDue, Target::Psl(p), Payload::None);
                self.queue.push(t, EventKind::BridgeDue, Target::Psl(p), Payload::None);
            }
        }
        if t > 0 && t.is_multiple_of(self.cfg.global_period) {
            self.queue.push(t, EventKind::GlobalDue, Target::Marketplace, Payload::None);
        }
    }

    fn handle(&mut self, e: SimEvent) -> Result<(), SimError> {
        let t = e.at;
        let outcome = match (e.kind, e.target, e.payload) {
            (EventKind::FaultStart, _, Payload::Fault(i)) => self.fault_start(i, t)?,
            (EventKind::FaultEnd, _, Payload::Fault(i)) => self.fault_end(i),
            (EventKind::ParamPull, Target::Ledger(id), _) => self.param_pull(id),
            (EventKind::Submit, Target::Ledger(id), Payload::Count(n)) => self.submit(id, n, t)?,
            (EventKind::PrimaryDue, Target::Psl(p), _) => self.primary(p, t)?,
            (EventKind::BridgeDue, Target::Psl(p), _) => self.bridge_due(p, t)?,
            (EventKind::GlobalDue, _, _) => self.global(t)?,
            other => return Err(breach(t, format!("malformed event {other:?}"))),
        };
        self.record(t, &e.kind.to_string(), e.target, &outcome);
        Ok(())
    }

    fn halted(&self, psl: PslId, t: Tick) -> bool {
        self.psls.get(&psl).is_none_or(|s| s.list.status != PslStatus::Active || t < s.in_flight_until)
    }

    fn set_online(&mut self, id: LedgerId, delta: i32) {
        let c = self.offline_faults.entry(id).or_insert(0);
        *c = c.saturating_add_signed(-delta);
        let online = *c == 0;
        if let Some(l) = self.ledgers.get_mut(&id) {
            l.online = online;
        }
    }

    fn fault_target_ledgers(&self, target: FaultTarget) -> Vec<LedgerId> {
        match target {
            FaultTarget::Ledger(i) => vec![LedgerId::from_index(i)],
            FaultTarget::Psl(p) => self.ledgers.values().filter(|l| l.psl == PslId(p)).map(|l| l.ledger_id).collect(),
            FaultTarget::Consortium(_) => Vec::new(),
        }
    }

    fn fault_start(&mut self, i: usize, t: Tick) -> Result<String, SimError> {
        let f = self.scenario.faults[i];
        match f.kind {
            FaultKind::Offline => {
                if let FaultTarget::Consortium(r) = f.target {
                    self.replica_faults[r] += 1;
                    self.consortium.set_replica_online(r, false);
                }
                for id in self.fault_target_ledgers(f.target) {
                    self.set_online(id, -1);
                }
                Ok("offline".into())
            }
            FaultKind::CorruptSettlement => {
                for id in self.fault_target_ledgers(f.target) {
                    self.ledgers.get_mut(&id).expect("validated target").corrupt_settlement = true;
                }
                Ok("corrupt-settlement".into())
            }
            FaultKind::StaleVersion => {
                for id in self.fault_target_ledgers(f.target) {
                    self.ledgers.get_mut(&id).expect("validated target").stops_pulling = true;
                }
                Ok("stale-version".into())
            }
            FaultKind::DoubleSpendInject => {
                let FaultTarget::Ledger(a) = f.target else { unreachable!("validated") };
                self.inject(LedgerId::from_index(a), f.detail.source.map(LedgerId::from_index), t)
            }
        }
    }

    fn fault_end(&mut self, i: usize) -> String {
        let f = self.scenario.faults[i];
        match f.kind {
            FaultKind::Offline => {
                if let FaultTarget::Consortium(r) = f.target {
                    self.replica_faults[r] = self.replica_faults[r].saturating_sub(1);
                    if self.replica_faults[r] == 0 {
                        self.consortium.set_replica_online(r, true);
                    }
                }
                for id in self.fault_target_ledgers(f.target) {
                    self.set_online(id, 1);
                }
            }
            FaultKind::CorruptSettlement => {
                for id in self.fault_target_ledgers(f.target) {
                    self.ledgers.get_mut(&id).expect("validated target").corrupt_settlement = false;
                }
            }
            FaultKind::StaleVersion => {
                for id in self.fault_target_ledgers(f.target) {
                    self.ledgers.get_mut(&id).expect("validated target").stops_pulling = false;
                }
            }
            FaultKind::DoubleSpendInject => {}
        }
        "restored".into()
    }

    /// Copies the source ledger's most recent Bridge-committed license (or
    /// its latest block) onto the attacker's chain.
    fn inject(&mut self, attacker: LedgerId, source: Option<LedgerId>, t: Tick) -> Result<String, SimError> {
        let att_psl = self.ledgers[&attacker].psl;
        let source = source.or_else(|| {
            let others = || self.ledgers.values().filter(|l| l.ledger_id != attacker && l.standing != Standing::Excluded);
            others().find(|l| l.psl != att_psl).or_else(|| others().next()).map(|l| l.ledger_id)
        });
        let Some(source) = source else { return Ok("no source ledger".into()) };
        let src = &self.ledgers[&source];
        let committed = src.bridge_seq.and_then(|s| src.chain.position_of(s)).map(|p| &src.chain.blocks()[p]);
        let Some(block) = committed.or(src.chain.blocks().last()).cloned() else {
            return Ok(format!("source {source} has no blocks"));
        };
        let halted = self.halted(att_psl, t);
        let a = self.ledgers.get_mut(&attacker).expect("validated target");
        if !a.online || a.standing == Standing::Excluded {
            return Ok("attacker unavailable".into());
        }
        let forged = PendingBlock::from(block.as_ref());
        let license = forged.license;
        if a.chain.contains_serial(&license) {
            return Ok("license already on attacker chain".into());
        }
        if a.must_queue(halted) {
            a.queue.push(PendingBlock { created_at: t, ..forged });
        } else {
            a.chain
                .append_content_block(forged.public_payload, forged.tc_signature, forged.payload_hash, license, t)
                .map_err(|e| breach(t, e.to_string()))?;
            self.sync_partner_copies(attacker);
        }
        self.injections.push(Injection { tick: t, attacker, source, license });
        Ok(format!("forged {license} from {source}"))
    }

    fn param_pull(&mut self, id: LedgerId) -> String {
        let l = &self.ledgers[&id];
        if !l.online || l.standing == Standing::Excluded || l.stops_pulling {
            return "skipped".into();
        }
        let Ok(set) = self.consortium.pull_parameters(id) else { return "not registered".into() };
        let version = set.version;
        let approved = set.approved_config_hashes();
        let l = self.ledgers.get_mut(&id).expect("known ledger");
        l.held_param_version = version;
        if !approved.contains(&l.config_hash) {
            if let Some(next) = approved.iter().next() {
                l.config_hash = *next;
                return format!("v{version} upgraded");
            }
        }
        format!("v{version}")
    }

    fn submit(&mut self, id: LedgerId, count: u64, t: Tick) -> Result<String, SimError> {
        let psl = self.ledgers[&id].psl;
        let halted = self.halted(psl, t);
        self.try_drain(id, t)?;
        let idx = id.index().unwrap_or(0) as usize;
        let tc = self.contract_ids[idx % self.contract_ids.len()];
        let proto = self.registry.get(tc).expect("registered contract");
        let ledger = self.ledgers.get_mut(&id).expect("known ledger");
        let (mut appended, mut queued, mut rejected) = (0u64, 0u64, 0u64);
        for _ in 0..count {
            let input = proto.validation_rule.sample(&mut self.rng);
            match ledger.submit_transaction(proto, &input, t, halted) {
                SubmitOutcome::Appended(b) => {
                    appended += 1;
                    self.executions.push(ExecutionRecord { ledger: id, license: b.license, payload_hash: b.payload_hash });
                }
                SubmitOutcome::Queued => {
                    queued += 1;
                    let p = ledger.queue.last().expect("just queued");
                    self.executions.push(ExecutionRecord { ledger: id, license: p.license, payload_hash: p.payload_hash });
                }
                SubmitOutcome::Rejected(_) => rejected += 1,
            }
        }
        self.report.submissions += count;
        self.report.rejected += rejected;
        if appended > 0 {
            self.sync_partner_copies(id);
        }
        Ok(format!("appended {appended} queued {queued} rejected {rejected}"))
    }

    /// Relinks a ledger's queue once nothing holds it back.
    fn try_drain(&mut self, id: LedgerId, t: Tick) -> Result<(), SimError> {
        let psl = self.ledgers[&id].psl;
        let halted = self.halted(psl, t);
        let l = self.ledgers.get_mut(&id).expect("known ledger");
        if l.queue.is_empty() || halted || !l.online || l.standing != Standing::Active || l.awaiting_consensus {
            return Ok(());
        }
        let anchor = l.chain.anchor();
        l.drain_queue(anchor, t).map_err(|e| breach(t, format!("relink on {id}: {e}")))?;
        self.sync_partner_copies(id);
        Ok(())
    }

    /// Brings every online partner's copy of `owner`'s chain up to date.
    fn sync_partner_copies(&mut self, owner: LedgerId) {
        let psl = self.ledgers[&owner].psl;
        let partners: Vec<LedgerId> = self
            .ledgers
            .values()
            .filter(|l| l.psl == psl && l.ledger_id != owner && l.online && l.partner_copies.contains_key(&owner))
            .map(|l| l.ledger_id)
            .collect();
        for p in partners {
            let mut partner = self.ledgers.remove(&p).expect("known partner");
            if let Some(copy) = partner.partner_copies.get_mut(&owner) {
                // a copy that cannot follow is rebuilt from scratch
                if sync_copy(copy, &self.ledgers[&owner].chain).is_err() {
                    let fresh = self.ledgers[&owner].chain.clone();
                    *copy = fresh;
                }
            }
            self.ledgers.insert(p, partner);
        }
    }

    fn check_phyli(&self, t: Tick) -> Result<(), SimError> {
        let total = self.phyli_total();
        if total != self.initial_phyli {
            return Err(breach(t, format!("phyli total {total} drifted from {}", self.initial_phyli)));
        }
        Ok(())
    }

    fn primary(&mut self, psl: PslId, t: Tick) -> Result<String, SimError> {
        let st = &self.psls[&psl];
        if st.list.status != PslStatus::Active {
            return Ok(format!("skipped ({:?})", st.list.status));
        }
        let members = st.list.members.clone();
        let counts: BTreeMap<LedgerId, u64> = members.iter().map(|m| (*m, self.ledgers[m].blocks_since_primary())).collect();
        let reports: Vec<MemberReport> = members
            .iter()
            .map(|m| {
                let l = &self.ledgers[m];
                MemberReport {
                    ledger_id: *m,
                    online: l.online,
                    compliance: if l.online {
                        self.consortium.verify_compliance(*m, l.config_hash, t)
                    } else {
                        Compliance::Compliant
                    },
                    config_hash: l.config_hash,
                    last_block_hash: l.chain.tip_hash(),
                    block_count: counts[m],
                    balance: l.phyli.balance,
                    trust: l.trust,
                    claimed: l.claim_settlement(&counts),
                }
            })
            .collect();
        let outcome = run_primary_consensus(&st.list, &reports, &self.policy, self.joint_penalty, t)
            .map_err(|e| breach(t, format!("primary {psl}: {e}")))?;
        match outcome {
            PrimaryOutcome::Committed(c) => {
                if c.block.delta_sum() != 0 {
                    return Err(breach(t, format!("primary {psl} deltas sum to {}", c.block.delta_sum())));
                }
                let len = c.block.encoded_len() as u64;
                let mut refs = Vec::new();
                let mut bytes = 0;
                for e in &c.block.member_entries {
                    let l = self.ledgers.get_mut(&e.ledger_id).expect("member");
                    for b in l.chain.blocks_after(l.primary_seq) {
                        bytes += b.encoded_len() as u64;
                        refs.push(BlockRef {
                            license: b.license,
                            block: b.digest(),
                            ledger: b.ledger_id,
                            sequence: b.sequence,
                            timestamp: b.timestamp,
                        });
                    }
                    l.primary_seq = l.chain.tip_sequence().or(l.primary_seq);
                    l.phyli.balance = e.phyli_balance;
                    l.phyli.last_delta = e.phyli_delta;
                    l.trust = c.trust[&e.ledger_id];
                    l.awaiting_consensus = false;
                    l.chain.set_anchor(c.hash);
                    l.consensus_bytes += len;
                }
                refs.sort_by_key(|r| (r.timestamp, r.ledger, r.sequence));
                let st = self.psls.get_mut(&psl).expect("known psl");
                st.content.extend(refs);
                st.content_bytes += bytes;
                st.primaries.push(c.block.clone());
                st.list.last_primary = Some(c.hash);
                self.history.push(CommittedConsensus { hash: c.hash, psl: Some(psl), block: c.block });
                self.report.primary.committed += 1;
                self.check_phyli(t)?;
                for m in &members {
                    self.try_drain(*m, t)?;
                    self.sync_partner_copies(*m);
                }
                Ok(format!("committed {}", c.hash))
            }
            PrimaryOutcome::Failed(f) => {
                self.report.primary.failed += 1;
                let trust = members.iter().map(|m| (*m, self.ledgers[m].trust.trust, f.trust[m].trust)).collect();
                self.report.primary_failures.push(PrimaryFailureRecord {
                    tick: t,
                    psl,
                    absent: f.absent.clone(),
                    mismatched: f.mismatched.clone(),
                    noncompliant: f.noncompliant.iter().map(|(id, why)| (*id, why.to_string())).collect(),
                    trust,
                });
                for m in &members {
                    let l = self.ledgers.get_mut(m).expect("member");
                    l.trust = f.trust[m];
                    if f.absent.contains(m) || f.mismatched.contains(m) {
                        l.misses += 1;
                    }
                    let upto = l.primary_seq;
                    restructure_after_failure(&mut l.chain, upto, &mut l.queue);
                    l.awaiting_consensus = true;
                }
                for (offender, _) in &f.noncompliant {
                    self.exclude_ledger(*offender);
                }
                for m in &members {
                    self.sync_partner_copies(*m);
                }
                Ok(format!(
                    "failed absent {} mismatched {} noncompliant {}",
                    f.absent.len(),
                    f.mismatched.len(),
                    f.noncompliant.len()
                ))
            }
        }
    }

    fn exclude_ledger(&mut self, id: LedgerId) {
        let Some(l) = self.ledgers.get_mut(&id) else { return };
        if l.standing == Standing::Excluded {
            return;
        }
        l.standing = Standing::Excluded;
        let psl = l.psl;
        self.consortium.exclude_ledger(id);
        for other in self.ledgers.values_mut().filter(|o| o.psl == psl) {
            other.partner_copies.remove(&id);
        }
        let remaining = {
            let st = self.psls.get_mut(&psl).expect("known psl");
            st.list.members.retain(|m| *m != id);
            st.list.members.len()
        };
        if remaining < 2 {
            self.exclude_psl(psl);
        }
    }

    fn exclude_psl(&mut self, psl: PslId) {
        let st = self.psls.get_mut(&psl).expect("known psl");
        if st.list.status == PslStatus::Excluded {
            return;
        }
        st.list.status = PslStatus::Excluded;
        self.consortium.close_psl(psl);
        let members: Vec<LedgerId> = self.ledgers.values().filter(|l| l.psl == psl).map(|l| l.ledger_id).collect();
        for m in members {
            let l = self.ledgers.get_mut(&m).expect("member");
            l.standing = Standing::Excluded;
            self.consortium.exclude_ledger(m);
        }
    }

    fn set_psl_standing(&mut self, psl: PslId, status: PslStatus) {
        let st = self.psls.get_mut(&psl).expect("known psl");
        st.list.status = status;
        let standing = match status {
            PslStatus::Active => Standing::Active,
            PslStatus::Suspended => Standing::Suspended,
            PslStatus::Excluded => Standing::Excluded,
        };
        for m in st.list.members.clone() {
            let l = self.ledgers.get_mut(&m).expect("member");
            if l.standing != Standing::Excluded {
                l.standing = standing;
            }
        }
    }

    fn bridge_due(&mut self, psl: PslId, t: Tick) -> Result<String, SimError> {
        let cfg = self.cfg;
        let st = self.psls.get_mut(&psl).expect("known psl");
        match st.list.status {
            PslStatus::Excluded => Ok("skipped (excluded)".into()),
            PslStatus::Suspended => {
                let members_online = st.list.members.iter().all(|m| self.ledgers[m].online);
                if !members_online {
                    return Ok("suspended".into());
                }
                self.attempt_bridge(psl, t, true)
            }
            PslStatus::Active => {
                let deadline = check_bridge_deadline(&mut st.list, t, &cfg);
                let next_too_late = t + cfg.sync_interval > st.list.last_bridge_tick + cfg.bridge_max_span;
                match deadline {
                    BridgeDeadline::Suspend => {
                        self.set_psl_standing(psl, PslStatus::Suspended);
                        Ok("suspended (deadline)".into())
                    }
                    BridgeDeadline::MustBridge => self.attempt_bridge(psl, t, false),
                    BridgeDeadline::Ok if next_too_late => self.attempt_bridge(psl, t, false),
                    BridgeDeadline::Ok => Ok("not due".into()),
                }
            }
        }
    }

    fn attempt_bridge(&mut self, psl: PslId, t: Tick, recovery: bool) -> Result<String, SimError> {
        // offline ledgers are not active and so are outside the quorum base
        let verifiers: Vec<(LedgerId, bool)> = self
            .ledgers
            .values()
            .filter(|l| l.psl != psl && l.status() == LedgerStatus::Active)
            .map(|l| (l.ledger_id, true))
            .collect();
        let st = &self.psls[&psl];
        let candidate = BridgeCandidate {
            psl: &st.list,
            primaries: &st.primaries,
            carried: &st.carried,
            content: &st.content,
            recovery,
        };
        let outcome = match run_bridge_consensus(candidate, &verifiers, &self.bridge_index, &self.cfg, self.last_bridge, t) {
            Ok(o) => o,
            Err(e @ (ConsensusError::NoPrimaryToCover(_) | ConsensusError::QuorumUnreachable { .. })) => {
                self.report.bridge.failed += 1;
                return Ok(format!("not reached: {e}"));
            }
            Err(e) => return Err(breach(t, format!("bridge {psl}: {e}"))),
        };
        match outcome {
            BridgeOutcome::Committed(c) => {
                let len = c.block.encoded_len() as u64;
                let st = self.psls.get_mut(&psl).expect("known psl");
                let content = std::mem::take(&mut st.content);
                let bytes = std::mem::take(&mut st.content_bytes);
                st.primaries.clear();
                st.list.last_bridge_tick = t;
                st.in_flight_until = t + self.scenario.params.consensus_latency;
                st.carried.extend(c.block.member_entries.iter().map(|e| (e.ledger_id, *e)));
                let members = st.list.members.clone();
                for r in &content {
                    self.bridge_index.insert(r.license, *r);
                }
                self.report.committed_blocks += content.len() as u64;
                self.report.unique_content_bytes += bytes;
                self.report.replicated_overhead_bytes += len;
                self.content_since_global.extend(content);
                self.bridges_since_global.push(c.block.clone());
                self.last_bridge = c.hash;
                for l in self.ledgers.values_mut().filter(|l| l.standing != Standing::Excluded) {
                    l.consensus_bytes += len;
                }
                for m in &members {
                    let l = self.ledgers.get_mut(m).expect("member");
                    l.bridge_seq = l.primary_seq;
                    l.chain.set_anchor(c.hash);
                }
                self.history.push(CommittedConsensus { hash: c.hash, psl: Some(psl), block: c.block });
                self.report.bridge.committed += 1;
                if recovery {
                    self.set_psl_standing(psl, PslStatus::Active);
                    for m in &members {
                        self.ledgers.get_mut(m).expect("member").awaiting_consensus = false;
                        self.try_drain(*m, t)?;
                    }
                }
                Ok(format!("committed {} ({}/{})", c.hash, c.confirmations, c.required))
            }
            BridgeOutcome::Failed(BridgeFailure::DoubleSpend(report)) => {
                self.report.bridge.failed += 1;
                let n = report.len();
                self.rollback_psl(psl, &report, t)?;
                self.report.double_spends.extend(report.entries);
                Ok(format!("double spend ({n}), suspended"))
            }
            BridgeOutcome::Failed(BridgeFailure::Inconsistent(l)) => {
                Err(breach(t, format!("bridge {psl}: primaries do not add up for {l}")))
            }
        }
    }

    /// Undoes everything since the PSL's last Bridge, quarantines the
    /// duplicate blocks and suspends the PSL.
    fn rollback_psl(&mut self, psl: PslId, report: &DoubleSpendReport, t: Tick) -> Result<(), SimError> {
        let st = self.psls.get_mut(&psl).expect("known psl");
        st.primaries.clear();
        st.content.clear();
        st.content_bytes = 0;
        let members = st.list.members.clone();
        let carried = st.carried.clone();
        for m in &members {
            let l = self.ledgers.get_mut(m).expect("member");
            l.phyli.balance = carried[m].phyli_balance;
            let upto = l.bridge_seq;
            restructure_after_failure(&mut l.chain, upto, &mut l.queue);
            l.primary_seq = upto;
            l.awaiting_consensus = true;
        }
        for entry in &report.entries {
            let Some(l) = self.ledgers.get_mut(&entry.second.ledger) else { continue };
            if let Some(pos) = l.queue.iter().position(|p| p.license == entry.license) {
                self.quarantined.push(l.queue.remove(pos));
            }
        }
        self.set_psl_standing(psl, PslStatus::Suspended);
        for m in &members {
            self.sync_partner_copies(*m);
        }
        self.check_phyli(t)
    }

    fn global(&mut self, t: Tick) -> Result<String, SimError> {
        // a final Bridge for every PSL with unbridged Primaries
        let pending: Vec<PslId> = self
            .psls
            .iter()
            .filter(|(_, s)| s.list.status == PslStatus::Active && !s.primaries.is_empty())
            .map(|(p, _)| *p)
            .collect();
        for p in pending {
            let outcome = self.attempt_bridge(p, t, false)?;
            self.record(t, "final-bridge", Target::Psl(p), &outcome);
        }

        let roster: Vec<RosterMember> = self
            .ledgers
            .values()
            .filter(|l| l.standing != Standing::Excluded)
            .map(|l| RosterMember { ledger_id: l.ledger_id, psl: l.psl, online: l.online, trust: l.trust })
            .collect();
        let aggregated = aggregate_entries(&self.global_base, &self.bridges_since_global);
        let entries: BTreeMap<LedgerId, MemberEntry> =
            roster.iter().filter_map(|m| aggregated.get(&m.ledger_id).map(|e| (m.ledger_id, *e))).collect();
        let psls: Vec<PrimarySyncList> =
            self.psls.values().filter(|s| s.list.status != PslStatus::Excluded).map(|s| s.list.clone()).collect();
        let bridges: Vec<Digest> = self.bridges_since_global.iter().map(ConsensusBlock::digest).collect();
        let input = GlobalInput {
            psls: &psls,
            roster: &roster,
            entries: &entries,
            bridges: &bridges,
            content: &self.content_since_global,
            committed: &self.global_index,
            consortium_online: self.consortium.all_replicas_online(),
            prev_global: self.last_global,
        };
        let outcome = match run_global_consensus(input, &self.cfg, &self.policy, t) {
            Ok(o) => o,
            Err(e @ (ConsensusError::MajorityUnreachable { .. } | ConsensusError::ConsortiumOffline)) => {
                self.report.global.failed += 1;
                self.snapshot_rows(t);
                return Ok(format!("failed: {e}"));
            }
            Err(e) => return Err(breach(t, format!("global: {e}"))),
        };
        let c = match outcome {
            GlobalOutcome::Committed(c) => *c,
            GlobalOutcome::Failed(report) => {
                return Err(breach(t, format!("{} duplicate serials reached global", report.len())));
            }
        };
        for (id, record) in &c.trust {
            let l = self.ledgers.get_mut(id).expect("roster ledger");
            if record.last_outcome == Some(Outcome::Miss) {
                l.misses += 1;
            }
            l.trust = *record;
        }
        for (p, missed) in &c.missed_globals {
            self.psls.get_mut(p).expect("known psl").list.missed_globals = *missed;
        }
        for p in &c.excluded_psls {
            self.exclude_psl(*p);
        }
        for id in &c.excluded_ledgers {
            self.exclude_ledger(*id);
        }
        for r in self.content_since_global.drain(..) {
            self.global_index.insert(r.license, r);
        }
        self.bridges_since_global.clear();
        self.global_base = c.block.member_entries.iter().map(|e| (e.ledger_id, *e)).collect();
        self.last_global = c.hash;
        let len = c.block.encoded_len() as u64;
        self.report.replicated_overhead_bytes += len;
        let latency = self.scenario.params.consensus_latency;
        for st in self.psls.values_mut() {
            st.in_flight_until = t + latency;
        }
        for l in self.ledgers.values_mut().filter(|l| l.standing != Standing::Excluded) {
            l.consensus_bytes += len;
            l.global_seq = l.bridge_seq;
            l.chain.set_anchor(c.hash);
        }
        self.report.global.committed += 1;

        let displayed = self.consortium.displayed_proposals();
        let mut note = String::new();
        if !displayed.is_empty() {
            match self.consortium.promote_parameters(&displayed, Some(c.hash), t) {
                Ok(set) => {
                    note = format!(" params v{}", set.version);
                    self.cfg = set.quorum_config();
                    for st in self.psls.values_mut() {
                        st.list.sync_interval = self.cfg.sync_interval;
                    }
                }
                Err(e) => note = format!(" promotion refused: {e}"),
            }
        }
        if self.scenario.params.prune_at_global {
            self.prune_all(&c.block, t)?;
        }
        self.history.push(CommittedConsensus { hash: c.hash, psl: None, block: c.block });
        self.check_phyli(t)?;
        self.snapshot_rows(t);
        Ok(format!("committed {}{}", c.hash, note))
    }

    fn prune_all(&mut self, block: &ConsensusBlock, t: Tick) -> Result<(), SimError> {
        for l in self.ledgers.values_mut().filter(|l| l.standing != Standing::Excluded) {
            l.chain.prune_before_checkpoint(block).map_err(|e| breach(t, format!("prune {}: {e}", l.ledger_id)))?;
            for copy in l.partner_copies.values_mut() {
                if block.entry(copy.ledger_id()).is_some() {
                    copy.prune_before_checkpoint(block).map_err(|e| breach(t, format!("prune copy: {e}")))?;
                }
            }
        }
        Ok(())
    }

    fn snapshot_rows(&mut self, t: Tick) {
        if self.rows_at == Some(t) {
            return;
        }
        self.rows_at = Some(t);
        let mut total = MetricsRow {
            tick: t,
            ledger_id: "*".into(),
            status: "-".into(),
            blocks_created: 0,
            own_chain_bytes: self.report.unique_content_bytes,
            stored_bytes: 0,
            consensus_bytes: self.report.replicated_overhead_bytes,
            offchain_bytes: 0,
            phyli: 0,
            trust: 0,
            misses: 0,
        };
        for l in self.ledgers.values() {
            let row = MetricsRow {
                tick: t,
                ledger_id: l.ledger_id.to_string(),
                status: l.status().to_string(),
                blocks_created: l.blocks_created,
                own_chain_bytes: l.chain.total_bytes(),
                stored_bytes: l.stored_bytes(),
                consensus_bytes: l.consensus_bytes,
                offchain_bytes: l.offchain.bytes(),
                phyli: l.phyli.balance as i128,
                trust: l.trust.trust,
                misses: l.misses,
            };
            total.blocks_created += row.blocks_created;
            total.stored_bytes += row.stored_bytes;
            total.offchain_bytes += row.offchain_bytes;
            total.phyli += row.phyli;
            total.trust += row.trust;
            total.misses += row.misses;
            self.report.rows.push(row);
        }
        self.report.rows.push(total);
    }

    fn finish(&mut self) {
        self.snapshot_rows(self.scenario.duration);
        self.report.final_global_hash = self.last_global;
        self.report.phyli_total = self.phyli_total();
        self.report.max_ledger_footprint =
            self.ledgers.values().map(|l| l.chain.total_bytes() + l.stored_bytes()).max().unwrap_or(0);
        let trace = std::mem::replace(&mut self.trace, Sha256::new());
        self.report.trace_hash = Digest(trace.finalize().into());
        self.finished = true;
    }

    /// Content blocks covered by a committed Global, read straight off
    /// every ledger's chain.
    pub fn global_committed_blocks(&self) -> Vec<BlockRef> {
        let mut out = Vec::new();
        for l in self.ledgers.values() {
            let Some(upto) = l.global_seq else { continue };
            for b in l.chain.blocks().iter().take_while(|b| b.sequence <= upto) {
                out.push(BlockRef {
                    license: b.license,
                    block: b.digest(),
                    ledger: b.ledger_id,
                    sequence: b.sequence,
                    timestamp: b.timestamp,
                });
            }
        }
        out
    }
}

fn fault_target(t: FaultTarget) -> Target {
    match t {
        FaultTarget::Ledger(i) => Target::Ledger(LedgerId::from_index(i)),
        FaultTarget::Psl(p) => Target::Psl(PslId(p)),
        FaultTarget::Consortium(r) => Target::Consortium(r),
    }
}

pub fn run_scenario(scenario: Scenario) -> Result<MetricsReport, SimError> {
    let mut sim = Simulation::new(scenario)?;
    sim.run()?;
    Ok(sim.report)
}

/// The storage-growth experiment: one marketplace of `psl_count` PSLs of
/// `psl_size` ledgers submitting `transactions` full-size blocks on a
/// doubling schedule.
pub fn growth_scenario(transactions: u64, psl_size: usize, psl_count: usize, seed: u64) -> Scenario {
    let ledgers = (psl_size * psl_count).max(1) as u64;
    Scenario {
        seed,
        duration: 2000,
        psl_count,
        psl_size,
        tx_rate: TxRate::Growth { growth: GrowthSpec { total: transactions, stages: 6 } },
        contracts: vec![ContractSpec::fixed_payload(crate::chain::MAX_PUBLIC_PAYLOAD, transactions.div_ceil(ledgers) * 2)],
        params: Params::default(),
        config_version: "1.0".into(),
        approved_versions: Vec::new(),
        proposals: Vec::new(),
        faults: Vec::new(),
    }
}
