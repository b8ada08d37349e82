use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use crate::chain::LedgerId;
use crate::consensus::PslId;
use crate::Tick;

/// Declaration order is the execution order among events at one tick:
/// faults settle first, then pulls and submissions, then consensus from the
/// lowest tier up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    FaultEnd,
    FaultStart,
    ParamPull,
    Submit,
    PrimaryDue,
    BridgeDue,
    GlobalDue,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::FaultEnd => "fault-end",
            EventKind::FaultStart => "fault-start",
            EventKind::ParamPull => "param-pull",
            EventKind::Submit => "submit",
            EventKind::PrimaryDue => "primary",
            EventKind::BridgeDue => "bridge",
            EventKind::GlobalDue => "global",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Ledger(LedgerId),
    Psl(PslId),
    Consortium(usize),
    Marketplace,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Ledger(id) => match id.index() {
                Some(i) => write!(f, "pl{i}"),
                None => write!(f, "{id}"),
            },
            Target::Psl(p) => write!(f, "{p}"),
            Target::Consortium(r) => write!(f, "cs{r}"),
            Target::Marketplace => f.write_str("*"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    None,
    /// Number of submissions.
    Count(u64),
    /// Index into the scenario's fault list.
    Fault(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub at: Tick,
    pub kind: EventKind,
    pub target: Target,
    pub payload: Payload,
    seq: u64,
}

impl SimEvent {
    fn key(&self) -> (Tick, EventKind, Target, u64) {
        (self.at, self.kind, self.target, self.seq)
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on (tick, kind, target, insertion order).
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    next_seq: u64,
    last_popped: Option<Tick>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Events scheduled in the past are refused.
    pub fn push(&mut self, at: Tick, kind: EventKind, target: Target, payload: Payload) -> bool {
        if self.last_popped.is_some_and(|t| at < t) {
            return false;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { at, kind, target, payload, seq }));
        true
    }

    pub fn peek_tick(&self) -> Option<Tick> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(e) = self.heap.pop()?;
        self.last_popped = Some(e.at);
        Some(e)
    }

    pub fn pop_due(&mut self, now: Tick) -> Option<SimEvent> {
        if self.peek_tick()? <= now {
            self.pop()
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
