use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{
    plan_commit, AuditEntry, ReadView, Snapshot, Store, StoreError, StoredRecord, Transaction,
};

#[derive(Debug, Default)]
struct State {
    records: BTreeMap<(String, String), StoredRecord>,
    audit: Vec<AuditEntry>,
}

/// Volatile store. Same semantics as the durable backend, minus durability.
#[derive(Debug, Default)]
pub struct MemoryStore {
    state: Mutex<State>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl ReadView for MemoryStore {
    fn get_raw(&self, collection: &str, key: &str) -> Result<Option<StoredRecord>, StoreError> {
        Ok(self
            .lock()
            .records
            .get(&(collection.to_owned(), key.to_owned()))
            .cloned())
    }

    fn scan_prefix_raw(
        &self,
        collection: &str,
        prefix: &str,
    ) -> Result<Vec<StoredRecord>, StoreError> {
        let state = self.lock();
        let start = (collection.to_owned(), prefix.to_owned());
        Ok(state
            .records
            .range(start..)
            .take_while(|((c, k), _)| c == collection && k.starts_with(prefix))
            .map(|(_, r)| r.clone())
            .collect())
    }
}

impl Store for MemoryStore {
    fn commit(&self, tx: Transaction) -> Result<Vec<u64>, StoreError> {
        let mut state = self.lock();
        let first_seq = state.audit.len() as u64 + 1;
        let plan = plan_commit(
            &tx,
            |c, k| Ok(state.records.get(&(c.to_owned(), k.to_owned())).cloned()),
            first_seq,
        )?;
        for (slot, record) in plan.writes {
            match record {
                Some(r) => state.records.insert(slot, r),
                None => state.records.remove(&slot),
            };
        }
        state.audit.extend(plan.audit);
        Ok(plan.versions)
    }

    fn snapshot(&self) -> Result<Snapshot, StoreError> {
        let state = self.lock();
        let mut snap = Snapshot::default();
        for r in state.records.values() {
            snap.insert(r.clone());
        }
        Ok(snap)
    }

    fn audit_log(
        &self,
        collection: Option<&str>,
        key: Option<&str>,
    ) -> Result<Vec<AuditEntry>, StoreError> {
        Ok(self
            .lock()
            .audit
            .iter()
            .filter(|e| collection.is_none_or(|c| e.collection == c))
            .filter(|e| key.is_none_or(|k| e.key == k))
            .cloned()
            .collect())
    }
}
