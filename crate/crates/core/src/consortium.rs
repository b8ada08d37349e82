//! Consortium server: ledger registration and PSL assignment, pull-based
//! global parameters with a propose → display → promote workflow, and
//! version compliance checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::chain::{Digest, LedgerId};
use crate::consensus::{PslId, QuorumConfig};
use crate::Tick;

pub const SYNC_INTERVAL: &str = "sync_interval";
pub const BRIDGE_QUORUM_PCT: &str = "bridge_quorum_pct";
pub const BRIDGE_MAX_SPAN: &str = "bridge_max_span";
pub const GLOBAL_PERIOD: &str = "global_period";
pub const GLOBAL_MAJORITY_PCT: &str = "global_majority_pct";
pub const MISSED_GLOBAL_LIMIT: &str = "missed_global_limit";
pub const APPROVED_CONFIG_HASHES: &str = "approved_config_hashes";
pub const COMMITTED_CONTRACTS: &str = "committed_contracts";

/// Config hash a ledger reports when running the given software version.
pub fn config_hash_for(version: &str) -> Digest {
    Digest::of_parts([b"stcm-config:".as_slice(), version.as_bytes()])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParamValue {
    Int(u64),
    Digests(BTreeSet<Digest>),
    Ids(BTreeSet<u64>),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Digests(set) => write!(f, "{} hashes", set.len()),
            ParamValue::Ids(set) => write!(f, "{set:?}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsortiumError {
    #[error("ledger {0} is already registered")]
    DuplicateLedgerId(LedgerId),
    #[error("config hash {0} is not an approved version")]
    UnapprovedVersion(Digest),
    #[error("ledger {0} is not registered")]
    NotRegistered(LedgerId),
    #[error("unknown proposal {0}")]
    UnknownProposal(u64),
    #[error("proposal {id} is {stage:?}, expected {expected:?}")]
    WrongStage { id: u64, stage: ProposalStage, expected: ProposalStage },
    #[error("promotion requires a committed global block")]
    NoGlobalCommit,
    #[error("invalid value for {name}: {reason}")]
    InvalidValue { name: String, reason: String },
}

/// One immutable version of the consortium-governed configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalParameterSet {
    pub version: u64,
    pub committed_at: Tick,
    /// Global block that committed this version (zero for the genesis set).
    pub global_block: Digest,
    pub params: BTreeMap<String, ParamValue>,
}

impl GlobalParameterSet {
    pub fn genesis(cfg: &QuorumConfig, approved: BTreeSet<Digest>) -> Self {
        let mut params = BTreeMap::new();
        params.insert(SYNC_INTERVAL.into(), ParamValue::Int(cfg.sync_interval));
        params.insert(BRIDGE_QUORUM_PCT.into(), ParamValue::Int(cfg.bridge_quorum_pct as u64));
        params.insert(BRIDGE_MAX_SPAN.into(), ParamValue::Int(cfg.bridge_max_span));
        params.insert(GLOBAL_PERIOD.into(), ParamValue::Int(cfg.global_period));
        params.insert(GLOBAL_MAJORITY_PCT.into(), ParamValue::Int(cfg.global_majority_pct as u64));
        params.insert(MISSED_GLOBAL_LIMIT.into(), ParamValue::Int(cfg.missed_global_limit as u64));
        params.insert(APPROVED_CONFIG_HASHES.into(), ParamValue::Digests(approved));
        params.insert(COMMITTED_CONTRACTS.into(), ParamValue::Ids(BTreeSet::new()));
        GlobalParameterSet { version: 0, committed_at: 0, global_block: Digest::ZERO, params }
    }

    pub fn int(&self, name: &str) -> Option<u64> {
        match self.params.get(name) {
            Some(ParamValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn approved_config_hashes(&self) -> BTreeSet<Digest> {
        match self.params.get(APPROVED_CONFIG_HASHES) {
            Some(ParamValue::Digests(set)) => set.clone(),
            _ => BTreeSet::new(),
        }
    }

    pub fn is_approved(&self, config_hash: &Digest) -> bool {
        matches!(self.params.get(APPROVED_CONFIG_HASHES), Some(ParamValue::Digests(set)) if set.contains(config_hash))
    }

    pub fn quorum_config(&self) -> QuorumConfig {
        let d = QuorumConfig::default();
        let get = |name, default| self.int(name).unwrap_or(default);
        QuorumConfig {
            sync_interval: get(SYNC_INTERVAL, d.sync_interval),
            bridge_quorum_pct: get(BRIDGE_QUORUM_PCT, d.bridge_quorum_pct as u64) as u32,
            bridge_max_span: get(BRIDGE_MAX_SPAN, d.bridge_max_span),
            global_period: get(GLOBAL_PERIOD, d.global_period),
            global_majority_pct: get(GLOBAL_MAJORITY_PCT, d.global_majority_pct as u64) as u32,
            missed_global_limit: get(MISSED_GLOBAL_LIMIT, d.missed_global_limit as u64) as u32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ProposalStage {
    Proposed,
    PubliclyDisplayed,
    Committed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterProposal {
    pub proposal_id: u64,
    pub name: String,
    pub value: ParamValue,
    pub stage: ProposalStage,
    pub committed_in: Option<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub ledger_id: LedgerId,
    pub config_hash: Digest,
    pub psl_assignment: PslId,
    pub registered_at: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NonCompliance {
    UnapprovedVersion,
    StaleParameters,
    NotRegistered,
}

impl fmt::Display for NonCompliance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NonCompliance::UnapprovedVersion => "unapproved-version",
            NonCompliance::StaleParameters => "stale-parameters",
            NonCompliance::NotRegistered => "not-registered",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Compliance {
    Compliant,
    NonCompliant(NonCompliance),
}

/// Root consortium service. Replicas share this state; every replica must be
/// online for a Global round.
#[derive(Clone, Debug)]
pub struct ConsortiumServer {
    history: Vec<GlobalParameterSet>,
    registrations: BTreeMap<LedgerId, Registration>,
    excluded: BTreeSet<LedgerId>,
    held_versions: BTreeMap<LedgerId, u64>,
    psl_size: usize,
    psls: BTreeMap<PslId, Vec<LedgerId>>,
    closed_psls: BTreeSet<PslId>,
    proposals: BTreeMap<u64, ParameterProposal>,
    next_proposal: u64,
    replicas_online: Vec<bool>,
}

impl ConsortiumServer {
    pub fn new(genesis: GlobalParameterSet, psl_size: usize, replicas: usize) -> Result<Self, ConsortiumError> {
        genesis.quorum_config().validate().map_err(|reason| ConsortiumError::InvalidValue {
            name: "genesis".into(),
            reason,
        })?;
        if psl_size < 2 {
            return Err(ConsortiumError::InvalidValue { name: "psl_size".into(), reason: "must be at least 2".into() });
        }
        Ok(ConsortiumServer {
            history: vec![genesis],
            registrations: BTreeMap::new(),
            excluded: BTreeSet::new(),
            held_versions: BTreeMap::new(),
            psl_size,
            psls: BTreeMap::new(),
            closed_psls: BTreeSet::new(),
            proposals: BTreeMap::new(),
            next_proposal: 0,
            replicas_online: vec![true; replicas.max(1)],
        })
    }

    pub fn current(&self) -> &GlobalParameterSet {
        self.history.last().expect("history starts with genesis")
    }

    pub fn history(&self) -> &[GlobalParameterSet] {
        &self.history
    }

    pub fn version(&self, v: u64) -> Option<&GlobalParameterSet> {
        self.history.get(v as usize)
    }

    pub fn registration(&self, ledger: LedgerId) -> Option<&Registration> {
        self.registrations.get(&ledger).filter(|_| !self.excluded.contains(&ledger))
    }

    pub fn psl_members(&self) -> &BTreeMap<PslId, Vec<LedgerId>> {
        &self.psls
    }

    pub fn set_replica_online(&mut self, replica: usize, online: bool) -> bool {
        match self.replicas_online.get_mut(replica) {
            Some(slot) => {
                *slot = online;
                true
            }
            None => false,
        }
    }

    pub fn replica_count(&self) -> usize {
        self.replicas_online.len()
    }

    pub fn all_replicas_online(&self) -> bool {
        self.replicas_online.iter().all(|r| *r)
    }

    pub fn register_ledger(
        &mut self,
        ledger_id: LedgerId,
        config_hash: Digest,
        now: Tick,
    ) -> Result<Registration, ConsortiumError> {
        if self.registrations.contains_key(&ledger_id) && !self.excluded.contains(&ledger_id) {
            return Err(ConsortiumError::DuplicateLedgerId(ledger_id));
        }
        if !self.current().is_approved(&config_hash) {
            return Err(ConsortiumError::UnapprovedVersion(config_hash));
        }
        let open = self
            .psls
            .iter()
            .find(|(id, members)| members.len() < self.psl_size && !self.closed_psls.contains(id))
            .map(|(id, _)| *id);
        let psl = open.unwrap_or_else(|| PslId(self.psls.keys().next_back().map_or(0, |p| p.0 + 1)));
        self.psls.entry(psl).or_default().push(ledger_id);
        self.excluded.remove(&ledger_id);
        let reg = Registration { ledger_id, config_hash, psl_assignment: psl, registered_at: now };
        self.registrations.insert(ledger_id, reg.clone());
        self.held_versions.insert(ledger_id, self.current().version);
        Ok(reg)
    }

    /// Drops a ledger from the roster; it must register again to return.
    pub fn exclude_ledger(&mut self, ledger_id: LedgerId) {
        if self.excluded.insert(ledger_id) {
            for members in self.psls.values_mut() {
                members.retain(|m| *m != ledger_id);
            }
        }
    }

    /// Stops assigning new ledgers to a PSL that left the roster.
    pub fn close_psl(&mut self, psl: PslId) {
        self.closed_psls.insert(psl);
    }

    pub fn propose_parameter(&mut self, name: impl Into<String>, value: ParamValue) -> ParameterProposal {
        let id = self.next_proposal;
        self.next_proposal += 1;
        let p = ParameterProposal { proposal_id: id, name: name.into(), value, stage: ProposalStage::Proposed, committed_in: None };
        self.proposals.insert(id, p.clone());
        p
    }

    pub fn display_proposal(&mut self, id: u64) -> Result<ParameterProposal, ConsortiumError> {
        let p = self.proposals.get_mut(&id).ok_or(ConsortiumError::UnknownProposal(id))?;
        if p.stage != ProposalStage::Proposed {
            return Err(ConsortiumError::WrongStage { id, stage: p.stage, expected: ProposalStage::Proposed });
        }
        p.stage = ProposalStage::PubliclyDisplayed;
        Ok(p.clone())
    }

    pub fn proposal(&self, id: u64) -> Option<&ParameterProposal> {
        self.proposals.get(&id)
    }

    pub fn displayed_proposals(&self) -> Vec<u64> {
        self.proposals.values().filter(|p| p.stage == ProposalStage::PubliclyDisplayed).map(|p| p.proposal_id).collect()
    }

    /// Promotes the given displayed proposals into one new parameter version.
    /// Proposals apply in (name, id) order, so a later proposal for the same
    /// name wins deterministically.
    pub fn promote_parameters(
        &mut self,
        ids: &[u64],
        global_block: Option<Digest>,
        now: Tick,
    ) -> Result<&GlobalParameterSet, ConsortiumError> {
        let global_block = global_block.filter(|d| !d.is_zero()).ok_or(ConsortiumError::NoGlobalCommit)?;
        let mut batch = Vec::with_capacity(ids.len());
        for &id in ids {
            let p = self.proposals.get(&id).ok_or(ConsortiumError::UnknownProposal(id))?;
            if p.stage != ProposalStage::PubliclyDisplayed {
                return Err(ConsortiumError::WrongStage { id, stage: p.stage, expected: ProposalStage::PubliclyDisplayed });
            }
            batch.push((p.name.clone(), id, p.value.clone()));
        }
        batch.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        let mut next = self.current().clone();
        for (name, _, value) in &batch {
            next.params.insert(name.clone(), value.clone());
        }
        next.quorum_config()
            .validate()
            .map_err(|reason| ConsortiumError::InvalidValue { name: batch.iter().map(|b| b.0.clone()).collect::<Vec<_>>().join(","), reason })?;
        next.version += 1;
        next.committed_at = now;
        next.global_block = global_block;
        for &id in ids {
            let p = self.proposals.get_mut(&id).expect("checked above");
            p.stage = ProposalStage::Committed;
            p.committed_in = Some(global_block);
        }
        self.history.push(next);
        Ok(self.current())
    }

    /// Records the committed contract ids in a new version.
    pub fn publish_contracts(&mut self, ids: BTreeSet<u64>, global_block: Digest, now: Tick) -> Result<&GlobalParameterSet, ConsortiumError> {
        let p = self.propose_parameter(COMMITTED_CONTRACTS, ParamValue::Ids(ids));
        self.display_proposal(p.proposal_id)?;
        self.promote_parameters(&[p.proposal_id], Some(global_block), now)
    }

    pub fn pull_parameters(&mut self, ledger: LedgerId) -> Result<&GlobalParameterSet, ConsortiumError> {
        if self.registration(ledger).is_none() {
            return Err(ConsortiumError::NotRegistered(ledger));
        }
        let version = self.current().version;
        self.held_versions.insert(ledger, version);
        Ok(self.current())
    }

    pub fn held_version(&self, ledger: LedgerId) -> Option<u64> {
        self.held_versions.get(&ledger).copied()
    }

    /// Oldest version a ledger may still hold at `now`: every version
    /// committed at least one Global period ago must have been pulled.
    pub fn required_version(&self, now: Tick) -> u64 {
        let window = self.current().quorum_config().global_period;
        self.history
            .iter()
            .rev()
            .find(|set| set.version == 0 || set.committed_at.saturating_add(window) <= now)
            .map_or(0, |set| set.version)
    }

    pub fn verify_compliance(&self, ledger: LedgerId, running_config: Digest, now: Tick) -> Compliance {
        if self.registration(ledger).is_none() {
            return Compliance::NonCompliant(NonCompliance::NotRegistered);
        }
        if !self.current().is_approved(&running_config) {
            return Compliance::NonCompliant(NonCompliance::UnapprovedVersion);
        }
        let held = self.held_version(ledger).unwrap_or(0);
        if held < self.required_version(now) {
            return Compliance::NonCompliant(NonCompliance::StaleParameters);
        }
        Compliance::Compliant
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn server() -> ConsortiumServer {
        let approved = BTreeSet::from([config_hash_for("1.0")]);
        ConsortiumServer::new(GlobalParameterSet::genesis(&QuorumConfig::default(), approved), 3, 1).unwrap()
    }

    fn lid(i: u64) -> LedgerId {
        LedgerId::from_index(i)
    }

    #[test]
    fn registration_fills_psls_in_order() {
        let mut cs = server();
        let regs: Vec<_> = (0..7).map(|i| cs.register_ledger(lid(i), config_hash_for("1.0"), 0).unwrap()).collect();
        let psls: Vec<u64> = regs.iter().map(|r| r.psl_assignment.0).collect();
        assert_eq!(psls, vec![0, 0, 0, 1, 1, 1, 2]);
    }

    #[test]
    fn registration_rejects_bad_version_and_duplicates() {
        let mut cs = server();
        assert_eq!(
            cs.register_ledger(lid(0), config_hash_for("0.9"), 0),
            Err(ConsortiumError::UnapprovedVersion(config_hash_for("0.9")))
        );
        cs.register_ledger(lid(0), config_hash_for("1.0"), 0).unwrap();
        assert_eq!(cs.register_ledger(lid(0), config_hash_for("1.0"), 0), Err(ConsortiumError::DuplicateLedgerId(lid(0))));
        // an excluded ledger may register again
        cs.exclude_ledger(lid(0));
        assert!(cs.registration(lid(0)).is_none());
        assert!(cs.register_ledger(lid(0), config_hash_for("1.0"), 5).is_ok());
    }

    #[test]
    fn proposal_workflow() {
        let mut cs = server();
        let p = cs.propose_parameter(BRIDGE_MAX_SPAN, ParamValue::Int(80));
        assert!(matches!(
            cs.promote_parameters(&[p.proposal_id], Some(Digest([1; 32])), 10),
            Err(ConsortiumError::WrongStage { .. })
        ));
        cs.display_proposal(p.proposal_id).unwrap();
        assert_eq!(cs.promote_parameters(&[p.proposal_id], None, 10), Err(ConsortiumError::NoGlobalCommit));
        let set = cs.promote_parameters(&[p.proposal_id], Some(Digest([1; 32])), 10).unwrap();
        assert_eq!(set.version, 1);
        assert_eq!(set.int(BRIDGE_MAX_SPAN), Some(80));
        assert_eq!(cs.history()[0].int(BRIDGE_MAX_SPAN), Some(100));
        assert_eq!(cs.proposal(p.proposal_id).unwrap().stage, ProposalStage::Committed);
    }

    #[test]
    fn batch_promotion_is_one_version_in_name_order() {
        let mut cs = server();
        let a = cs.propose_parameter(MISSED_GLOBAL_LIMIT, ParamValue::Int(5));
        let b = cs.propose_parameter(BRIDGE_MAX_SPAN, ParamValue::Int(50));
        let c = cs.propose_parameter(BRIDGE_MAX_SPAN, ParamValue::Int(60));
        for id in [a.proposal_id, b.proposal_id, c.proposal_id] {
            cs.display_proposal(id).unwrap();
        }
        // id order given reversed; result must not depend on it
        let set = cs.promote_parameters(&[c.proposal_id, b.proposal_id, a.proposal_id], Some(Digest([2; 32])), 7).unwrap();
        assert_eq!(set.version, 1);
        assert_eq!(set.int(BRIDGE_MAX_SPAN), Some(60));
        assert_eq!(set.int(MISSED_GLOBAL_LIMIT), Some(5));
    }

    #[test]
    fn invalid_promotion_is_refused() {
        let mut cs = server();
        let p = cs.propose_parameter(BRIDGE_QUORUM_PCT, ParamValue::Int(40));
        cs.display_proposal(p.proposal_id).unwrap();
        assert!(matches!(
            cs.promote_parameters(&[p.proposal_id], Some(Digest([1; 32])), 1),
            Err(ConsortiumError::InvalidValue { .. })
        ));
        assert_eq!(cs.current().version, 0);
    }

    #[test]
    fn pulls_are_latest_and_idempotent() {
        let mut cs = server();
        cs.register_ledger(lid(0), config_hash_for("1.0"), 0).unwrap();
        let first = cs.pull_parameters(lid(0)).unwrap().clone();
        assert_eq!(cs.pull_parameters(lid(0)).unwrap(), &first);
        let p = cs.propose_parameter(BRIDGE_MAX_SPAN, ParamValue::Int(80));
        cs.display_proposal(p.proposal_id).unwrap();
        cs.promote_parameters(&[p.proposal_id], Some(Digest([1; 32])), 1000).unwrap();
        assert_eq!(cs.held_version(lid(0)), Some(0));
        assert_eq!(cs.pull_parameters(lid(0)).unwrap().version, 1);
        assert_eq!(cs.pull_parameters(lid(9)), Err(ConsortiumError::NotRegistered(lid(9))));
    }

    #[test]
    fn compliance_checks_version_and_staleness() {
        let mut cs = server();
        let v1 = config_hash_for("1.0");
        cs.register_ledger(lid(0), v1, 0).unwrap();
        cs.register_ledger(lid(1), v1, 0).unwrap();
        assert_eq!(cs.verify_compliance(lid(0), v1, 10), Compliance::Compliant);

        let p = cs.propose_parameter(BRIDGE_MAX_SPAN, ParamValue::Int(80));
        cs.display_proposal(p.proposal_id).unwrap();
        cs.promote_parameters(&[p.proposal_id], Some(Digest([1; 32])), 1000).unwrap();
        cs.pull_parameters(lid(1)).unwrap();
        // inside the staleness window both are fine
        assert_eq!(cs.verify_compliance(lid(0), v1, 1990), Compliance::Compliant);
        assert_eq!(cs.verify_compliance(lid(0), v1, 2000), Compliance::NonCompliant(NonCompliance::StaleParameters));
        assert_eq!(cs.verify_compliance(lid(1), v1, 2000), Compliance::Compliant);

        // superseding the approved version
        let v2 = config_hash_for("2.0");
        let p = cs.propose_parameter(APPROVED_CONFIG_HASHES, ParamValue::Digests(BTreeSet::from([v2])));
        cs.display_proposal(p.proposal_id).unwrap();
        cs.promote_parameters(&[p.proposal_id], Some(Digest([2; 32])), 2000).unwrap();
        assert_eq!(cs.verify_compliance(lid(1), v1, 2010), Compliance::NonCompliant(NonCompliance::UnapprovedVersion));
        assert_eq!(cs.verify_compliance(lid(1), v2, 2010), Compliance::Compliant);
        assert_eq!(cs.verify_compliance(lid(7), v2, 2010), Compliance::NonCompliant(NonCompliance::NotRegistered));
    }

    #[test]
    fn versions_strictly_increase() {
        let mut cs = server();
        for i in 0..5u64 {
            let p = cs.propose_parameter(BRIDGE_MAX_SPAN, ParamValue::Int(50 + i));
            cs.display_proposal(p.proposal_id).unwrap();
            cs.promote_parameters(&[p.proposal_id], Some(Digest([1; 32])), i * 1000).unwrap();
        }
        let versions: Vec<u64> = cs.history().iter().map(|s| s.version).collect();
        assert_eq!(versions, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(cs.version(2).unwrap().int(BRIDGE_MAX_SPAN), Some(51));
    }
}
