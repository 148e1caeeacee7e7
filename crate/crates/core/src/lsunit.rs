//! Load/store unit: memory-ordering admission control at issue time.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::trace::{AccessKind, MemoryAccess};

/// How memory accesses are assumed to alias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AliasPolicy {
    /// Every memory operation conflicts with every older store, and stores
    /// also conflict with older loads.
    AllAlias,
    /// Memory operations never conflict.
    NoAlias,
    /// Conflicts exactly when byte ranges overlap. Operations without
    /// address metadata conflict with everything.
    #[default]
    MetadataExact,
}

impl FromStr for AliasPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(AliasPolicy::AllAlias),
            "none" => Ok(AliasPolicy::NoAlias),
            "metadata" => Ok(AliasPolicy::MetadataExact),
            _ => Err(format!("unknown alias policy `{s}` (expected all, none or metadata)")),
        }
    }
}

impl fmt::Display for AliasPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AliasPolicy::AllAlias => "all",
            AliasPolicy::NoAlias => "none",
            AliasPolicy::MetadataExact => "metadata",
        })
    }
}

/// True iff the half-open byte ranges of `a` and `b` intersect.
pub fn ranges_overlap(a: &MemoryAccess, b: &MemoryAccess) -> bool {
    let a_end = a.address as u128 + a.size as u128;
    let b_end = b.address as u128 + b.size as u128;
    (a.address as u128) < b_end && (b.address as u128) < a_end
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit,
    BlockedBy(u64),
}

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    accesses: Vec<MemoryAccess>,
    executed: bool,
}

impl Entry {
    /// Accesses of `kind`, or `None` when the instruction carried no address
    /// metadata at all.
    fn of_kind(&self, kind: AccessKind) -> Option<impl Iterator<Item = &MemoryAccess>> {
        (!self.accesses.is_empty()).then(|| self.accesses.iter().filter(move |a| a.kind == kind))
    }
}

/// Load and store queues. Entries are inserted at dispatch in trace order and
/// removed at retirement.
#[derive(Debug)]
pub struct MemQueues {
    loads: VecDeque<Entry>,
    stores: VecDeque<Entry>,
    lq_size: usize,
    sq_size: usize,
}

fn position(q: &VecDeque<Entry>, seq: u64) -> Option<usize> {
    q.binary_search_by_key(&seq, |e| e.seq).ok()
}

fn older_pending(q: &VecDeque<Entry>, seq: u64) -> impl Iterator<Item = &Entry> {
    q.iter().take_while(move |e| e.seq < seq).filter(|e| !e.executed)
}

fn conflicts(
    policy: AliasPolicy,
    cand: &Entry,
    cand_kind: AccessKind,
    older: &Entry,
    older_kind: AccessKind,
) -> bool {
    match policy {
        AliasPolicy::NoAlias => false,
        AliasPolicy::AllAlias => true,
        AliasPolicy::MetadataExact => match (cand.of_kind(cand_kind), older.of_kind(older_kind)) {
            (Some(mine), Some(theirs)) => {
                let theirs: Vec<_> = theirs.collect();
                mine.into_iter().any(|a| theirs.iter().any(|b| ranges_overlap(a, b)))
            }
            _ => true,
        },
    }
}

impl MemQueues {
    pub fn new(lq_size: usize, sq_size: usize) -> Self {
        MemQueues {
            loads: VecDeque::with_capacity(lq_size),
            stores: VecDeque::with_capacity(sq_size),
            lq_size,
            sq_size,
        }
    }

    pub fn has_space(&self, needs_load: bool, needs_store: bool) -> bool {
        (!needs_load || self.loads.len() < self.lq_size)
            && (!needs_store || self.stores.len() < self.sq_size)
    }

    pub fn load_len(&self) -> usize {
        self.loads.len()
    }

    pub fn store_len(&self) -> usize {
        self.stores.len()
    }

    /// Registers a dispatched memory operation. `accesses` may be empty when
    /// the trace carried no metadata for it.
    pub fn insert(&mut self, seq: u64, is_load: bool, is_store: bool, accesses: &[MemoryAccess]) {
        let entry = Entry { seq, accesses: accesses.to_vec(), executed: false };
        for (wanted, q, cap) in [
            (is_load, &mut self.loads, self.lq_size),
            (is_store, &mut self.stores, self.sq_size),
        ] {
            if wanted {
                assert!(q.len() < cap, "memory queue overflow at seq {seq}");
                debug_assert!(q.back().is_none_or(|e| e.seq < seq), "out-of-order insert");
                q.push_back(entry.clone());
            }
        }
    }

    pub fn mark_executed(&mut self, seq: u64) {
        for q in [&mut self.loads, &mut self.stores] {
            if let Some(i) = position(q, seq) {
                q[i].executed = true;
            }
        }
    }

    pub fn remove(&mut self, seq: u64) {
        for q in [&mut self.loads, &mut self.stores] {
            if let Some(i) = position(q, seq) {
                q.remove(i);
            }
        }
    }

    /// Decides whether the memory operation `seq` may issue now.
    ///
    /// Loads wait for older conflicting stores; stores wait for older
    /// conflicting stores and loads. Only entries that have not reached
    /// Executed can block. The youngest blocker is reported.
    pub fn admit(&self, policy: AliasPolicy, seq: u64) -> Admission {
        let as_load = position(&self.loads, seq).map(|i| &self.loads[i]);
        let as_store = position(&self.stores, seq).map(|i| &self.stores[i]);
        let mut blocker: Option<u64> = None;
        let mut note = |s: u64| blocker = Some(blocker.map_or(s, |b| b.max(s)));

        if let Some(cand) = as_load {
            for older in older_pending(&self.stores, seq) {
                if conflicts(policy, cand, AccessKind::Load, older, AccessKind::Store) {
                    note(older.seq);
                }
            }
        }
        if let Some(cand) = as_store {
            for older in older_pending(&self.stores, seq) {
                if conflicts(policy, cand, AccessKind::Store, older, AccessKind::Store) {
                    note(older.seq);
                }
            }
            for older in older_pending(&self.loads, seq) {
                if conflicts(policy, cand, AccessKind::Store, older, AccessKind::Load) {
                    note(older.seq);
                }
            }
        }
        match blocker {
            Some(s) => Admission::BlockedBy(s),
            None => Admission::Admit,
        }
    }
}
