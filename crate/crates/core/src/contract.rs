//! Transaction contracts: prototype registry, self-validating execution with a
//! public/private split, and per-ledger license accounting.
//!
//! A prototype carries only declarative logic (per-field checks and a privacy
//! classification). Executing it validates one flat input record, spends one
//! license unit, and yields the public bytes that go on chain plus the private
//! bytes kept off chain. `payload_hash` covers `public || private`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Digest, LedgerId, LicenseRef, MAX_PUBLIC_PAYLOAD};

pub const MAX_PRIVATE_PAYLOAD: usize = 64 * 1024;
const MAX_FIELD_NAME: usize = u8::MAX as usize;
const MAX_STR_LEN: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("malformed rule: {0}")]
    MalformedRule(String),
    #[error("unknown contract {0}")]
    UnknownContract(u64),
    #[error("contract {0} is not committed")]
    NotCommitted(u64),
    #[error("contract {tc_id} is {status:?}, expected {expected:?}")]
    WrongStatus { tc_id: u64, status: PrototypeStatus, expected: PrototypeStatus },
    #[error("promotion requires a committed global block")]
    NoGlobalCommit,
    #[error("account holds licenses for contract {account}, not {contract}")]
    WrongContract { account: u64, contract: u64 },
    #[error("no licenses left for contract {tc_id} on ledger {ledger}")]
    LicenseExhausted { ledger: LedgerId, tc_id: u64 },
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("public part is {0} bytes, over the {MAX_PUBLIC_PAYLOAD}-byte cap")]
    PublicOverflow(usize),
    #[error("private part is {0} bytes, over the {MAX_PRIVATE_PAYLOAD}-byte cap")]
    PrivateOverflow(usize),
    #[error("license purchases must be for at least one unit")]
    InvalidQuantity,
    #[error("serial space for contract {0} is exhausted")]
    SerialSpaceExhausted(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldCheck {
    Int { min: i64, max: i64 },
    Str { min_len: usize, max_len: usize },
    OneOf(Vec<String>),
}

impl FieldCheck {
    fn well_formed(&self) -> Result<(), String> {
        match self {
            FieldCheck::Int { min, max } if min > max => Err(format!("int range {min}..{max} is empty")),
            FieldCheck::Str { min_len, max_len } if min_len > max_len || *max_len > MAX_STR_LEN => {
                Err(format!("string length range {min_len}..{max_len} is invalid"))
            }
            FieldCheck::OneOf(options) if options.is_empty() => Err("enum has no options".into()),
            FieldCheck::OneOf(options) if options.iter().any(|o| o.len() > MAX_STR_LEN) => {
                Err("enum option too long".into())
            }
            _ => Ok(()),
        }
    }

    fn check(&self, name: &str, value: &FieldValue) -> Result<(), String> {
        match (self, value) {
            (FieldCheck::Int { min, max }, FieldValue::Int(v)) => {
                if v < min || v > max {
                    return Err(format!("{name}={v} outside {min}..={max}"));
                }
            }
            (FieldCheck::Str { min_len, max_len }, FieldValue::Str(s)) => {
                if s.len() < *min_len || s.len() > *max_len {
                    return Err(format!("{name} length {} outside {min_len}..={max_len}", s.len()));
                }
            }
            (FieldCheck::OneOf(options), FieldValue::Str(s)) => {
                if !options.iter().any(|o| o == s) {
                    return Err(format!("{name}={s:?} not an allowed value"));
                }
            }
            _ => return Err(format!("{name} has the wrong type")),
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> FieldValue {
        match self {
            FieldCheck::Int { min, max } => FieldValue::Int(rng.gen_range(*min..=*max)),
            FieldCheck::Str { min_len, max_len } => {
                let len = rng.gen_range(*min_len..=*max_len);
                FieldValue::Str((0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect())
            }
            FieldCheck::OneOf(options) => FieldValue::Str(options[rng.gen_range(0..options.len())].clone()),
        }
    }
}

/// Conjunction of per-field checks; the key set is the input schema.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidationRule {
    pub fields: BTreeMap<String, FieldCheck>,
}

impl ValidationRule {
    pub fn new(fields: impl IntoIterator<Item = (impl Into<String>, FieldCheck)>) -> Self {
        ValidationRule { fields: fields.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }

    pub fn validate(&self, input: &Record) -> Result<(), String> {
        if let Some(extra) = input.keys().find(|k| !self.fields.contains_key(*k)) {
            return Err(format!("unexpected field {extra}"));
        }
        for (name, check) in &self.fields {
            let value = input.get(name).ok_or_else(|| format!("missing field {name}"))?;
            check.check(name, value)?;
        }
        Ok(())
    }

    /// A uniformly drawn record that satisfies the rule.
    pub fn sample(&self, rng: &mut impl Rng) -> Record {
        self.fields.iter().map(|(name, check)| (name.clone(), check.sample(rng))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Privacy {
    Public,
    Private,
}

/// Fields absent from the rule are public.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrivacyRule {
    pub fields: BTreeMap<String, Privacy>,
}

impl PrivacyRule {
    pub fn private<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        PrivacyRule { fields: names.into_iter().map(|n| (n.into(), Privacy::Private)).collect() }
    }

    pub fn classify(&self, field: &str) -> Privacy {
        self.fields.get(field).copied().unwrap_or(Privacy::Public)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Int(i64),
    Str(String),
}

pub type Record = BTreeMap<String, FieldValue>;

/// Canonical record encoding, fields in name order:
/// `name_len:u8 ‖ name ‖ tag:u8 ‖ (i64 BE | len:u16 BE ‖ bytes)`.
pub fn encode_fields<'a>(fields: impl IntoIterator<Item = (&'a String, &'a FieldValue)>) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, value) in fields {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        match value {
            FieldValue::Int(v) => {
                out.push(0);
                out.extend_from_slice(&v.to_be_bytes());
            }
            FieldValue::Str(s) => {
                out.push(1);
                out.extend_from_slice(&(s.len() as u16).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

/// Hash binding the public and private parts of one execution.
pub fn payload_hash(public: &[u8], private: &[u8]) -> Digest {
    Digest::of_parts([public, private])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrototypeStatus {
    Proposed,
    Vetted,
    Committed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionContractPrototype {
    pub tc_id: u64,
    pub owner: LedgerId,
    /// Placed in every content block the contract produces.
    pub definition_hash: Digest,
    pub validation_rule: ValidationRule,
    pub privacy_rule: PrivacyRule,
    pub status: PrototypeStatus,
    /// Global block that committed the prototype.
    pub committed_in: Option<Digest>,
    /// Serials handed out so far; the next purchase starts here.
    pub issued_serials: u64,
}

/// Deterministic over owner and both rules.
pub fn definition_hash(owner: LedgerId, rule: &ValidationRule, privacy: &PrivacyRule) -> Digest {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"stcm-tc-v1");
    buf.extend_from_slice(&owner.0);
    buf.extend_from_slice(&(rule.fields.len() as u32).to_be_bytes());
    for (name, check) in &rule.fields {
        buf.extend_from_slice(&(name.len() as u32).to_be_bytes());
        buf.extend_from_slice(name.as_bytes());
        match check {
            FieldCheck::Int { min, max } => {
                buf.push(0);
                buf.extend_from_slice(&min.to_be_bytes());
                buf.extend_from_slice(&max.to_be_bytes());
            }
            FieldCheck::Str { min_len, max_len } => {
                buf.push(1);
                buf.extend_from_slice(&(*min_len as u64).to_be_bytes());
                buf.extend_from_slice(&(*max_len as u64).to_be_bytes());
            }
            FieldCheck::OneOf(options) => {
                buf.push(2);
                buf.extend_from_slice(&(options.len() as u32).to_be_bytes());
                for o in options {
                    buf.extend_from_slice(&(o.len() as u32).to_be_bytes());
                    buf.extend_from_slice(o.as_bytes());
                }
            }
        }
        buf.push(match privacy.classify(name) {
            Privacy::Public => 0,
            Privacy::Private => 1,
        });
    }
    Digest::of(&buf)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Purchase {
    pub buyer: LedgerId,
    pub tc_id: u64,
    pub serials: Range<u64>,
}

/// Consortium-side store of prototypes. Owns the contract id counter and
/// each contract's serial counter.
#[derive(Clone, Debug, Default)]
pub struct ContractRegistry {
    next_tc_id: u64,
    prototypes: BTreeMap<u64, TransactionContractPrototype>,
    purchases: Vec<Purchase>,
}

impl ContractRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define_prototype(
        &mut self,
        owner: LedgerId,
        validation_rule: ValidationRule,
        privacy_rule: PrivacyRule,
    ) -> Result<&TransactionContractPrototype, ContractError> {
        if validation_rule.fields.is_empty() {
            return Err(ContractError::MalformedRule("rule names no fields".into()));
        }
        for (name, check) in &validation_rule.fields {
            if name.is_empty() || name.len() > MAX_FIELD_NAME {
                return Err(ContractError::MalformedRule(format!("bad field name {name:?}")));
            }
            check.well_formed().map_err(ContractError::MalformedRule)?;
        }
        if let Some(unknown) = privacy_rule.fields.keys().find(|k| !validation_rule.fields.contains_key(*k)) {
            return Err(ContractError::MalformedRule(format!("privacy rule names unknown field {unknown}")));
        }
        let tc_id = self.next_tc_id;
        self.next_tc_id += 1;
        let proto = TransactionContractPrototype {
            tc_id,
            owner,
            definition_hash: definition_hash(owner, &validation_rule, &privacy_rule),
            validation_rule,
            privacy_rule,
            status: PrototypeStatus::Proposed,
            committed_in: None,
            issued_serials: 0,
        };
        Ok(self.prototypes.entry(tc_id).or_insert(proto))
    }

    pub fn get(&self, tc_id: u64) -> Option<&TransactionContractPrototype> {
        self.prototypes.get(&tc_id)
    }

    pub fn prototypes(&self) -> impl Iterator<Item = &TransactionContractPrototype> {
        self.prototypes.values()
    }

    pub fn committed_ids(&self) -> BTreeSet<u64> {
        self.prototypes.values().filter(|p| p.status == PrototypeStatus::Committed).map(|p| p.tc_id).collect()
    }

    pub fn purchases(&self) -> &[Purchase] {
        &self.purchases
    }

    fn proto_mut(&mut self, tc_id: u64) -> Result<&mut TransactionContractPrototype, ContractError> {
        self.prototypes.get_mut(&tc_id).ok_or(ContractError::UnknownContract(tc_id))
    }

    /// Public display for vetting.
    pub fn vet(&mut self, tc_id: u64) -> Result<(), ContractError> {
        let p = self.proto_mut(tc_id)?;
        if p.status != PrototypeStatus::Proposed {
            return Err(ContractError::WrongStatus { tc_id, status: p.status, expected: PrototypeStatus::Proposed });
        }
        p.status = PrototypeStatus::Vetted;
        Ok(())
    }

    pub fn commit(&mut self, tc_id: u64, global_block: Digest) -> Result<(), ContractError> {
        if global_block.is_zero() {
            return Err(ContractError::NoGlobalCommit);
        }
        let p = self.proto_mut(tc_id)?;
        if p.status != PrototypeStatus::Vetted {
            return Err(ContractError::WrongStatus { tc_id, status: p.status, expected: PrototypeStatus::Vetted });
        }
        p.status = PrototypeStatus::Committed;
        p.committed_in = Some(global_block);
        Ok(())
    }

    /// Sells `n` units to the account's ledger. Serials come from the
    /// contract's own counter, so they never collide across buyers.
    pub fn purchase_licenses(&mut self, account: &mut LicenseAccount, n: u64) -> Result<Range<u64>, ContractError> {
        let tc_id = account.tc_id;
        let p = self.proto_mut(tc_id)?;
        if p.status != PrototypeStatus::Committed {
            return Err(ContractError::NotCommitted(tc_id));
        }
        if n == 0 {
            return Err(ContractError::InvalidQuantity);
        }
        let start = p.issued_serials;
        let end = start.checked_add(n).ok_or(ContractError::SerialSpaceExhausted(tc_id))?;
        p.issued_serials = end;
        account.credit(start..end);
        self.purchases.push(Purchase { buyer: account.ledger_id, tc_id, serials: start..end });
        Ok(start..end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LicenseAccount {
    pub ledger_id: LedgerId,
    pub tc_id: u64,
    balance: u64,
    purchased: u64,
    ranges: VecDeque<Range<u64>>,
}

impl LicenseAccount {
    pub fn new(ledger_id: LedgerId, tc_id: u64) -> Self {
        LicenseAccount { ledger_id, tc_id, balance: 0, purchased: 0, ranges: VecDeque::new() }
    }

    pub fn balance(&self) -> u64 {
        self.balance
    }

    pub fn purchased(&self) -> u64 {
        self.purchased
    }

    /// Serial the next execution will consume.
    pub fn next_serial(&self) -> Option<u64> {
        self.ranges.front().map(|r| r.start)
    }

    fn credit(&mut self, serials: Range<u64>) {
        let n = serials.end - serials.start;
        self.balance += n;
        self.purchased += n;
        match self.ranges.back_mut() {
            Some(last) if last.end == serials.start => last.end = serials.end,
            _ => self.ranges.push_back(serials),
        }
    }

    fn take_serial(&mut self) -> Option<u64> {
        let front = self.ranges.front_mut()?;
        let serial = front.start;
        front.start += 1;
        if front.is_empty() {
            self.ranges.pop_front();
        }
        self.balance -= 1;
        Some(serial)
    }
}

/// Output of one contract execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub public_payload: Vec<u8>,
    pub private_payload: Vec<u8>,
    pub payload_hash: Digest,
    pub license: LicenseRef,
}

pub fn execute_contract(
    proto: &TransactionContractPrototype,
    input: &Record,
    account: &mut LicenseAccount,
) -> Result<Execution, ContractError> {
    if proto.status != PrototypeStatus::Committed {
        return Err(ContractError::NotCommitted(proto.tc_id));
    }
    if account.tc_id != proto.tc_id {
        return Err(ContractError::WrongContract { account: account.tc_id, contract: proto.tc_id });
    }
    if account.balance == 0 {
        return Err(ContractError::LicenseExhausted { ledger: account.ledger_id, tc_id: proto.tc_id });
    }
    proto.validation_rule.validate(input).map_err(ContractError::ValidationFailed)?;

    let (public, private): (Vec<_>, Vec<_>) =
        input.iter().partition(|(name, _)| proto.privacy_rule.classify(name) == Privacy::Public);
    let public_payload = encode_fields(public);
    let private_payload = encode_fields(private);
    if public_payload.len() > MAX_PUBLIC_PAYLOAD {
        return Err(ContractError::PublicOverflow(public_payload.len()));
    }
    if private_payload.len() > MAX_PRIVATE_PAYLOAD {
        return Err(ContractError::PrivateOverflow(private_payload.len()));
    }
    let serial = account.take_serial().expect("positive balance implies a serial");
    Ok(Execution {
        payload_hash: payload_hash(&public_payload, &private_payload),
        public_payload,
        private_payload,
        license: LicenseRef { tc_id: proto.tc_id, serial },
    })
}

/// Private content keyed by the payload hash of the block that references it.
#[derive(Clone, Debug, Default)]
pub struct OffChainStore {
    entries: HashMap<Digest, Vec<u8>>,
    bytes: u64,
}

impl OffChainStore {
    /// Stores the private part; empty private parts need no entry.
    pub fn insert(&mut self, payload_hash: Digest, private: Vec<u8>) {
        if private.is_empty() {
            return;
        }
        let len = private.len() as u64;
        if let Some(old) = self.entries.insert(payload_hash, private) {
            self.bytes -= old.len() as u64;
        }
        self.bytes += len;
    }

    pub fn get(&self, payload_hash: &Digest) -> &[u8] {
        self.entries.get(payload_hash).map_or(&[], Vec::as_slice)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Recombines on-chain public bytes with stored private bytes.
    pub fn verifies(&self, public: &[u8], payload_hash: &Digest) -> bool {
        crate::contract::payload_hash(public, self.get(payload_hash)) == *payload_hash
    }
}

impl fmt::Display for PrototypeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn owner() -> LedgerId {
        LedgerId::from_index(1)
    }

    fn qty_rule() -> ValidationRule {
        ValidationRule::new([
            ("qty", FieldCheck::Int { min: 1, max: 100 }),
            ("note", FieldCheck::Str { min_len: 0, max_len: 32 }),
        ])
    }

    fn input(qty: i64, note: &str) -> Record {
        [("qty".to_string(), FieldValue::Int(qty)), ("note".to_string(), FieldValue::Str(note.into()))].into()
    }

    fn committed(reg: &mut ContractRegistry, privacy: PrivacyRule) -> u64 {
        let id = reg.define_prototype(owner(), qty_rule(), privacy).unwrap().tc_id;
        reg.vet(id).unwrap();
        reg.commit(id, Digest([7; 32])).unwrap();
        id
    }

    #[test]
    fn define_assigns_ids_and_stable_hash() {
        let mut reg = ContractRegistry::new();
        let a = reg.define_prototype(owner(), qty_rule(), PrivacyRule::default()).unwrap().clone();
        let b = reg.define_prototype(owner(), qty_rule(), PrivacyRule::default()).unwrap().clone();
        assert_eq!(a.status, PrototypeStatus::Proposed);
        assert_eq!((a.tc_id, b.tc_id), (0, 1));
        assert_eq!(a.definition_hash, b.definition_hash);
        assert_eq!(a.definition_hash, definition_hash(owner(), &qty_rule(), &PrivacyRule::default()));
        let other = definition_hash(LedgerId::from_index(2), &qty_rule(), &PrivacyRule::default());
        assert_ne!(a.definition_hash, other);
        let private = definition_hash(owner(), &qty_rule(), &PrivacyRule::private(["note"]));
        assert_ne!(a.definition_hash, private);
    }

    #[test]
    fn privacy_rule_must_name_known_fields() {
        let mut reg = ContractRegistry::new();
        let err = reg.define_prototype(owner(), qty_rule(), PrivacyRule::private(["ssn"])).unwrap_err();
        assert!(matches!(err, ContractError::MalformedRule(_)));
        let empty_range = ValidationRule::new([("qty", FieldCheck::Int { min: 5, max: 1 })]);
        assert!(reg.define_prototype(owner(), empty_range, PrivacyRule::default()).is_err());
    }

    #[test]
    fn status_workflow_is_ordered() {
        let mut reg = ContractRegistry::new();
        let id = reg.define_prototype(owner(), qty_rule(), PrivacyRule::default()).unwrap().tc_id;
        assert!(matches!(reg.commit(id, Digest([1; 32])), Err(ContractError::WrongStatus { .. })));
        reg.vet(id).unwrap();
        assert_eq!(reg.commit(id, Digest::ZERO), Err(ContractError::NoGlobalCommit));
        reg.commit(id, Digest([1; 32])).unwrap();
        assert_eq!(reg.committed_ids(), BTreeSet::from([id]));
    }

    #[test]
    fn execution_spends_one_license() {
        let mut reg = ContractRegistry::new();
        let id = committed(&mut reg, PrivacyRule::default());
        let mut acct = LicenseAccount::new(LedgerId::from_index(4), id);
        reg.purchase_licenses(&mut acct, 5).unwrap();
        let proto = reg.get(id).unwrap();
        let out = execute_contract(proto, &input(3, "ok"), &mut acct).unwrap();
        assert_eq!(acct.balance(), 4);
        assert_eq!(out.license, LicenseRef { tc_id: id, serial: 0 });
        assert!(out.private_payload.is_empty());
        assert_eq!(out.payload_hash, payload_hash(&out.public_payload, &[]));
    }

    #[test]
    fn exhausted_account_cannot_execute() {
        let mut reg = ContractRegistry::new();
        let id = committed(&mut reg, PrivacyRule::default());
        let mut acct = LicenseAccount::new(LedgerId::from_index(4), id);
        let err = execute_contract(reg.get(id).unwrap(), &input(3, ""), &mut acct).unwrap_err();
        assert!(matches!(err, ContractError::LicenseExhausted { .. }));
    }

    #[test]
    fn failed_validation_spends_nothing() {
        let mut reg = ContractRegistry::new();
        let id = committed(&mut reg, PrivacyRule::default());
        let mut acct = LicenseAccount::new(LedgerId::from_index(4), id);
        reg.purchase_licenses(&mut acct, 5).unwrap();
        let err = execute_contract(reg.get(id).unwrap(), &input(0, ""), &mut acct).unwrap_err();
        assert!(matches!(err, ContractError::ValidationFailed(_)));
        assert_eq!(acct.balance(), 5);
        assert_eq!(acct.next_serial(), Some(0));

        let mut extra = input(3, "");
        extra.insert("x".into(), FieldValue::Int(1));
        assert!(execute_contract(reg.get(id).unwrap(), &extra, &mut acct).is_err());
        let mut wrong_type = input(3, "");
        wrong_type.insert("qty".into(), FieldValue::Str("3".into()));
        assert!(execute_contract(reg.get(id).unwrap(), &wrong_type, &mut acct).is_err());
        assert_eq!(acct.balance(), 5);
    }

    #[test]
    fn uncommitted_prototype_rejected() {
        let mut reg = ContractRegistry::new();
        let id = reg.define_prototype(owner(), qty_rule(), PrivacyRule::default()).unwrap().tc_id;
        let mut acct = LicenseAccount::new(LedgerId::from_index(4), id);
        assert_eq!(reg.purchase_licenses(&mut acct, 5), Err(ContractError::NotCommitted(id)));
        assert_eq!(
            execute_contract(reg.get(id).unwrap(), &input(3, ""), &mut acct),
            Err(ContractError::NotCommitted(id))
        );
    }

    #[test]
    fn public_overflow_detected() {
        let mut reg = ContractRegistry::new();
        let rule = ValidationRule::new([("doc", FieldCheck::Str { min_len: 0, max_len: 400 })]);
        let id = reg.define_prototype(owner(), rule, PrivacyRule::default()).unwrap().tc_id;
        reg.vet(id).unwrap();
        reg.commit(id, Digest([1; 32])).unwrap();
        let mut acct = LicenseAccount::new(owner(), id);
        reg.purchase_licenses(&mut acct, 2).unwrap();
        // 1 + 3 + 1 + 2 + 201 = 208 fits exactly
        let fits: Record = [("doc".to_string(), FieldValue::Str("a".repeat(201)))].into();
        assert_eq!(execute_contract(reg.get(id).unwrap(), &fits, &mut acct).unwrap().public_payload.len(), 208);
        let over: Record = [("doc".to_string(), FieldValue::Str("a".repeat(202)))].into();
        assert_eq!(execute_contract(reg.get(id).unwrap(), &over, &mut acct), Err(ContractError::PublicOverflow(209)));
        assert_eq!(acct.balance(), 1);
    }

    #[test]
    fn purchases_are_additive_and_serials_monotone() {
        let mut reg = ContractRegistry::new();
        let id = committed(&mut reg, PrivacyRule::default());
        let mut a = LicenseAccount::new(LedgerId::from_index(4), id);
        let mut b = LicenseAccount::new(LedgerId::from_index(5), id);
        assert_eq!(reg.purchase_licenses(&mut a, 100).unwrap(), 0..100);
        assert_eq!(a.balance(), 100);

        let mut fresh = LicenseAccount::new(LedgerId::from_index(6), id);
        reg.purchase_licenses(&mut fresh, 50).unwrap();
        reg.purchase_licenses(&mut b, 10).unwrap();
        reg.purchase_licenses(&mut fresh, 50).unwrap();
        assert_eq!(fresh.balance(), 100);
        let proto = reg.get(id).unwrap().clone();
        let serials: Vec<u64> = (0..100)
            .map(|_| execute_contract(&proto, &input(1, ""), &mut fresh).unwrap().license.serial)
            .collect();
        assert!(serials.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(fresh.balance(), 0);
        assert_eq!(reg.purchases().len(), 4);
        assert_eq!(reg.purchase_licenses(&mut a, 0), Err(ContractError::InvalidQuantity));
    }

    #[test]
    fn privacy_split_recombines() {
        let mut reg = ContractRegistry::new();
        let id = committed(&mut reg, PrivacyRule::private(["note"]));
        let mut acct = LicenseAccount::new(LedgerId::from_index(4), id);
        reg.purchase_licenses(&mut acct, 1).unwrap();
        let out = execute_contract(reg.get(id).unwrap(), &input(7, "secret"), &mut acct).unwrap();
        assert!(!out.public_payload.windows(6).any(|w| w == b"secret"));
        assert!(out.private_payload.windows(6).any(|w| w == b"secret"));
        let mut store = OffChainStore::default();
        store.insert(out.payload_hash, out.private_payload.clone());
        assert!(store.verifies(&out.public_payload, &out.payload_hash));
        assert_eq!(store.bytes(), out.private_payload.len() as u64);
        assert!(!OffChainStore::default().verifies(&out.public_payload, &out.payload_hash));
    }

    proptest! {
        #[test]
        fn executions_equal_purchased_minus_balance(buys in proptest::collection::vec(1u64..20, 1..5), runs in 0usize..80, seed in any::<u64>()) {
            let mut reg = ContractRegistry::new();
            let id = committed(&mut reg, PrivacyRule::private(["note"]));
            let mut acct = LicenseAccount::new(LedgerId::from_index(4), id);
            for n in &buys {
                reg.purchase_licenses(&mut acct, *n).unwrap();
            }
            let proto = reg.get(id).unwrap().clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut done = 0u64;
            let mut seen = BTreeSet::new();
            for _ in 0..runs {
                let rec = proto.validation_rule.sample(&mut rng);
                match execute_contract(&proto, &rec, &mut acct) {
                    Ok(out) => {
                        done += 1;
                        prop_assert!(seen.insert(out.license));
                        prop_assert_eq!(payload_hash(&out.public_payload, &out.private_payload), out.payload_hash);
                    }
                    Err(ContractError::LicenseExhausted { .. }) => prop_assert_eq!(acct.balance(), 0),
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                }
            }
            prop_assert_eq!(done, acct.purchased() - acct.balance());
        }
    }
}
