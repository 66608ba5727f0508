use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use super::{CallTag, Scope};

#[derive(Debug, Default, Clone)]
struct Counts {
    by_tag: BTreeMap<CallTag, u64>,
    transport_retries: u64,
}

/// Monotone per-scope counters of completion calls, by tag.
#[derive(Debug, Default)]
pub struct CallLedger {
    inner: Mutex<HashMap<Scope, Counts>>,
}

impl CallLedger {
    pub fn record(&self, scope: &Scope, tag: CallTag) {
        let mut map = self.inner.lock().expect("ledger poisoned");
        *map.entry(scope.clone()).or_default().by_tag.entry(tag).or_insert(0) += 1;
    }

    pub fn record_transport_retries(&self, scope: &Scope, n: u32) {
        let mut map = self.inner.lock().expect("ledger poisoned");
        map.entry(scope.clone()).or_default().transport_retries += u64::from(n);
    }

    pub fn total(&self, scope: &Scope) -> u64 {
        let map = self.inner.lock().expect("ledger poisoned");
        map.get(scope).map_or(0, |c| c.by_tag.values().sum())
    }

    pub fn by_tag(&self, scope: &Scope) -> BTreeMap<CallTag, u64> {
        let map = self.inner.lock().expect("ledger poisoned");
        map.get(scope).map(|c| c.by_tag.clone()).unwrap_or_default()
    }

    pub fn transport_retries(&self, scope: &Scope) -> u64 {
        let map = self.inner.lock().expect("ledger poisoned");
        map.get(scope).map_or(0, |c| c.transport_retries)
    }

    /// Sum over every scope.
    pub fn grand_total(&self) -> u64 {
        let map = self.inner.lock().expect("ledger poisoned");
        map.values().flat_map(|c| c.by_tag.values()).sum()
    }
}
