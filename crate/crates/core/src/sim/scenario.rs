//! Scenario files: marketplace shape, transaction load, contracts,
//! parameters and faults.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::accounting::TrustPolicy;
use crate::chain::Digest;
use crate::consensus::QuorumConfig;
use crate::consortium::{self, config_hash_for, ParamValue};
use crate::contract::{FieldCheck, PrivacyRule, ValidationRule};
use crate::ledger::DEFAULT_QUEUE_CAPACITY;
use crate::{Phyli, Tick};

use super::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration: Tick,
    pub psl_count: usize,
    #[serde(default = "default_psl_size")]
    pub psl_size: usize,
    pub tx_rate: TxRate,
    pub contracts: Vec<ContractSpec>,
    #[serde(default)]
    pub params: Params,
    #[serde(default = "default_version")]
    pub config_version: String,
    #[serde(default)]
    pub approved_versions: Vec<String>,
    #[serde(default)]
    pub proposals: Vec<ProposalSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

fn default_psl_size() -> usize {
    3
}

fn default_version() -> String {
    "1.0".into()
}

/// Submissions per ledger per tick, or a growth schedule for the whole
/// marketplace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TxRate {
    PerLedger(f64),
    Growth { growth: GrowthSpec },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSpec {
    pub total: u64,
    #[serde(default = "default_stages")]
    pub stages: u32,
}

fn default_stages() -> u32 {
    6
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub fields: ValidationRule,
    #[serde(default)]
    pub private: Vec<String>,
    /// Licenses each ledger buys up front.
    #[serde(default = "default_licenses")]
    pub licenses: u64,
    /// Ledger index of the owner.
    #[serde(default)]
    pub owner: u64,
}

fn default_licenses() -> u64 {
    1_000_000
}

impl ContractSpec {
    pub fn privacy_rule(&self) -> PrivacyRule {
        PrivacyRule::private(self.private.iter().cloned())
    }

    /// One string field whose canonical encoding is exactly `payload` bytes.
    pub fn fixed_payload(payload: usize, licenses: u64) -> Self {
        // name_len(1) + "doc"(3) + tag(1) + len(2)
        let len = payload.saturating_sub(7);
        ContractSpec {
            fields: ValidationRule::new([("doc", FieldCheck::Str { min_len: len, max_len: len })]),
            private: Vec::new(),
            licenses,
            owner: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub sync_interval: Tick,
    pub bridge_quorum_pct: u32,
    pub bridge_max_span: Tick,
    pub global_period: Tick,
    pub global_majority_pct: u32,
    pub missed_global_limit: u32,
    pub trust: TrustPolicy,
    /// Defaults to the trust policy's miss penalty.
    pub joint_penalty: Option<u64>,
    /// Defaults to the sync interval.
    pub param_pull_interval: Option<Tick>,
    pub consensus_latency: Tick,
    pub cs_replicas: usize,
    pub prune_at_global: bool,
    pub queue_capacity: usize,
    pub initial_balance: Phyli,
}

impl Default for Params {
    fn default() -> Self {
        let q = QuorumConfig::default();
        Params {
            sync_interval: q.sync_interval,
            bridge_quorum_pct: q.bridge_quorum_pct,
            bridge_max_span: q.bridge_max_span,
            global_period: q.global_period,
            global_majority_pct: q.global_majority_pct,
            missed_global_limit: q.missed_global_limit,
            trust: TrustPolicy::default(),
            joint_penalty: None,
            param_pull_interval: None,
            consensus_latency: 0,
            cs_replicas: 1,
            prune_at_global: false,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            initial_balance: 0,
        }
    }
}

impl Params {
    pub fn quorum(&self) -> QuorumConfig {
        QuorumConfig {
            sync_interval: self.sync_interval,
            bridge_quorum_pct: self.bridge_quorum_pct,
            bridge_max_span: self.bridge_max_span,
            global_period: self.global_period,
            global_majority_pct: self.global_majority_pct,
            missed_global_limit: self.missed_global_limit,
        }
    }

    pub fn joint_penalty(&self) -> u64 {
        self.joint_penalty.unwrap_or(self.trust.miss_penalty)
    }

    pub fn pull_interval(&self) -> Tick {
        self.param_pull_interval.unwrap_or(self.sync_interval)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSpec {
    pub at: Tick,
    pub name: String,
    pub value: serde_json::Value,
}

impl ProposalSpec {
    /// Parameter name and value as the consortium stores them.
    pub fn resolve(&self) -> Result<(String, ParamValue), String> {
        let int_names = [
            consortium::SYNC_INTERVAL,
            consortium::BRIDGE_QUORUM_PCT,
            consortium::BRIDGE_MAX_SPAN,
            consortium::GLOBAL_PERIOD,
            consortium::GLOBAL_MAJORITY_PCT,
            consortium::MISSED_GLOBAL_LIMIT,
        ];
        if int_names.contains(&self.name.as_str()) {
            let v = self.value.as_u64().ok_or_else(|| format!("{} needs a non-negative integer", self.name))?;
            return Ok((self.name.clone(), ParamValue::Int(v)));
        }
        if self.name == "approved_versions" {
            let list = self.value.as_array().ok_or("approved_versions needs a list of strings")?;
            let mut set = BTreeSet::new();
            for v in list {
                set.insert(config_hash_for(v.as_str().ok_or("approved_versions needs a list of strings")?));
            }
            return Ok((consortium::APPROVED_CONFIG_HASHES.to_string(), ParamValue::Digests(set)));
        }
        Err(format!("unknown parameter {}", self.name))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Offline,
    CorruptSettlement,
    DoubleSpendInject,
    StaleVersion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    Ledger(u64),
    Psl(u64),
    Consortium(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultDetail {
    /// Ledger whose latest license a double-spend injection copies.
    pub source: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: FaultTarget,
    pub from: Tick,
    pub to: Tick,
    #[serde(default)]
    pub detail: FaultDetail,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn ledger_count(&self) -> usize {
        self.psl_count * self.psl_size
    }

    pub fn approved_hashes(&self) -> BTreeSet<Digest> {
        let mut versions: BTreeSet<&str> = self.approved_versions.iter().map(String::as_str).collect();
        if versions.is_empty() {
            versions.insert(&self.config_version);
        }
        versions.into_iter().map(config_hash_for).collect()
    }

    /// Reports the first problem found.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if self.duration == 0 {
            return bad("duration must be at least 1".into());
        }
        if self.psl_count == 0 {
            return bad("psl_count must be at least 1".into());
        }
        if self.psl_size < 2 {
            return bad(format!("psl_size must be at least 2, got {}", self.psl_size));
        }
        match &self.tx_rate {
            TxRate::PerLedger(r) if !r.is_finite() || *r < 0.0 => return bad(format!("tx_rate must be a non-negative number, got {r}")),
            TxRate::Growth { growth } if growth.stages == 0 => return bad("growth needs at least one stage".into()),
            _ => {}
        }
        if self.contracts.is_empty() {
            return bad("at least one contract is required".into());
        }
        let n = self.ledger_count() as u64;
        for (i, c) in self.contracts.iter().enumerate() {
            if c.owner >= n {
                return bad(format!("contract {i}: owner {} does not exist", c.owner));
            }
            if let Some(p) = c.private.iter().find(|p| !c.fields.fields.contains_key(*p)) {
                return bad(format!("contract {i}: private field {p} is not in the schema"));
            }
        }
        self.params.quorum().validate().map_err(SimError::InvalidScenario)?;
        self.params.trust.validate().map_err(SimError::InvalidScenario)?;
        if self.params.cs_replicas == 0 {
            return bad("cs_replicas must be at least 1".into());
        }
        if self.params.pull_interval() == 0 {
            return bad("param_pull_interval must be at least 1".into());
        }
        if !self.approved_hashes().contains(&config_hash_for(&self.config_version)) {
            return bad(format!("config_version {} is not approved", self.config_version));
        }
        for p in &self.proposals {
            p.resolve().map_err(SimError::InvalidScenario)?;
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.from >= f.to {
                return bad(format!("fault {i}: window [{}, {}) is empty", f.from, f.to));
            }
            let exists = match f.target {
                FaultTarget::Ledger(l) => l < n,
                FaultTarget::Psl(p) => p < self.psl_count as u64,
                FaultTarget::Consortium(r) => r < self.params.cs_replicas,
            };
            if !exists {
                return bad(format!("fault {i}: unknown target {:?}", f.target));
            }
            let ledger_only = matches!(f.kind, FaultKind::CorruptSettlement | FaultKind::StaleVersion | FaultKind::DoubleSpendInject);
            if ledger_only && !matches!(f.target, FaultTarget::Ledger(_)) {
                return bad(format!("fault {i}: {:?} needs a ledger target", f.kind));
            }
            if let Some(src) = f.detail.source {
                if src >= n || Some(src) == ledger_index(f.target) {
                    return bad(format!("fault {i}: bad source ledger {src}"));
                }
            }
            if f.kind == FaultKind::DoubleSpendInject && f.detail.source.is_none() && n < 2 {
                return bad(format!("fault {i}: no other ledger to copy from"));
            }
        }
        Ok(())
    }
}

fn ledger_index(t: FaultTarget) -> Option<u64> {
    match t {
        FaultTarget::Ledger(l) => Some(l),
        _ => None,
    }
}
