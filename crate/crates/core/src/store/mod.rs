//! Versioned record store with an audit trail.
//!
//! Records are JSON documents addressed by `(collection, key)`. Every write
//! is a compare-and-swap against the version the caller last read; version 0
//! means "absent". A [`Transaction`] applies all of its writes or none of
//! them and appends exactly one [`AuditEntry`] per write.
//!
//! Two backends implement [`Store`]: [`MemoryStore`] for tests and tooling,
//! and [`RedbStore`], a durable single-file store.

mod memory;
mod redb_store;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use memory::MemoryStore;
pub use redb_store::RedbStore;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("version conflict on {collection}/{key}: expected {expected}, found {actual}")]
    Conflict {
        collection: String,
        key: String,
        expected: u64,
        actual: u64,
    },
    #[error("cannot delete absent record {collection}/{key}")]
    Missing { collection: String, key: String },
    #[error("backend: {0}")]
    Backend(String),
    #[error("corrupt record {collection}/{key}: {reason}")]
    Corrupt {
        collection: String,
        key: String,
        reason: String,
    },
}

/// A record as held by the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub collection: String,
    pub key: String,
    pub version: u64,
    pub body: Value,
}

/// One line of the mutation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub actor: String,
    pub action: String,
    pub collection: String,
    pub key: String,
    pub prior_version: u64,
    /// 0 when the write deleted the record.
    pub new_version: u64,
    pub prior: Option<Value>,
}

#[derive(Debug, Clone)]
pub struct Write {
    pub collection: String,
    pub key: String,
    pub expected_version: u64,
    /// `None` deletes the record.
    pub body: Option<Value>,
}

/// An atomic batch of writes attributed to one actor.
#[derive(Debug, Clone)]
pub struct Transaction {
    pub actor: String,
    pub action: String,
    pub at: DateTime<Utc>,
    pub writes: Vec<Write>,
}

impl Transaction {
    pub fn new(actor: impl Into<String>, action: impl Into<String>, at: DateTime<Utc>) -> Self {
        Transaction {
            actor: actor.into(),
            action: action.into(),
            at,
            writes: Vec::new(),
        }
    }

    pub fn put<T: Record>(&mut self, record: &T, expected_version: u64) -> &mut Self {
        let body = serde_json::to_value(record).expect("records serialize to JSON");
        self.writes.push(Write {
            collection: T::COLLECTION.to_owned(),
            key: record.key(),
            expected_version,
            body: Some(body),
        });
        self
    }

    pub fn delete<T: Record>(&mut self, key: impl Into<String>, expected_version: u64) -> &mut Self {
        self.writes.push(Write {
            collection: T::COLLECTION.to_owned(),
            key: key.into(),
            expected_version,
            body: None,
        });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.writes.is_empty()
    }
}

/// A typed document stored under a fixed collection.
pub trait Record: Serialize + DeserializeOwned {
    const COLLECTION: &'static str;
    fn key(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Versioned<T> {
    pub version: u64,
    pub record: T,
}

/// Read access shared by live stores and snapshots. Scans return records
/// sorted by key.
pub trait ReadView {
    fn get_raw(&self, collection: &str, key: &str) -> Result<Option<StoredRecord>, StoreError>;
    fn scan_prefix_raw(&self, collection: &str, prefix: &str)
        -> Result<Vec<StoredRecord>, StoreError>;

    fn scan_raw(&self, collection: &str) -> Result<Vec<StoredRecord>, StoreError> {
        self.scan_prefix_raw(collection, "")
    }
}

pub trait Store: ReadView + Send + Sync {
    /// Applies every write or none. Returns the new version of each write in
    /// order (0 for deletions).
    fn commit(&self, tx: Transaction) -> Result<Vec<u64>, StoreError>;

    /// A consistent point-in-time copy of every record.
    fn snapshot(&self) -> Result<Snapshot, StoreError>;

    /// Audit entries in commit order, optionally filtered.
    fn audit_log(
        &self,
        collection: Option<&str>,
        key: Option<&str>,
    ) -> Result<Vec<AuditEntry>, StoreError>;
}

fn decode<T: Record>(raw: StoredRecord) -> Result<Versioned<T>, StoreError> {
    let record = serde_json::from_value(raw.body).map_err(|e| StoreError::Corrupt {
        collection: raw.collection.clone(),
        key: raw.key.clone(),
        reason: e.to_string(),
    })?;
    Ok(Versioned {
        version: raw.version,
        record,
    })
}

/// Typed helpers over any [`ReadView`].
pub trait ReadViewExt: ReadView {
    fn get<T: Record>(&self, key: &str) -> Result<Option<Versioned<T>>, StoreError> {
        self.get_raw(T::COLLECTION, key)?.map(decode).transpose()
    }

    fn scan<T: Record>(&self) -> Result<Vec<Versioned<T>>, StoreError> {
        self.scan_raw(T::COLLECTION)?.into_iter().map(decode).collect()
    }

    fn scan_prefix<T: Record>(&self, prefix: &str) -> Result<Vec<Versioned<T>>, StoreError> {
        self.scan_prefix_raw(T::COLLECTION, prefix)?
            .into_iter()
            .map(decode)
            .collect()
    }

    /// Current version of a key, 0 when absent.
    fn version_of<T: Record>(&self, key: &str) -> Result<u64, StoreError> {
        Ok(self.get_raw(T::COLLECTION, key)?.map_or(0, |r| r.version))
    }
}

impl<R: ReadView + ?Sized> ReadViewExt for R {}

/// Frozen copy of the store contents.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    records: BTreeMap<String, BTreeMap<String, StoredRecord>>,
}

impl Snapshot {
    pub(crate) fn insert(&mut self, record: StoredRecord) {
        self.records
            .entry(record.collection.clone())
            .or_default()
            .insert(record.key.clone(), record);
    }

    pub fn len(&self) -> usize {
        self.records.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ReadView for Snapshot {
    fn get_raw(&self, collection: &str, key: &str) -> Result<Option<StoredRecord>, StoreError> {
        Ok(self
            .records
            .get(collection)
            .and_then(|c| c.get(key))
            .cloned())
    }

    fn scan_prefix_raw(
        &self,
        collection: &str,
        prefix: &str,
    ) -> Result<Vec<StoredRecord>, StoreError> {
        Ok(self
            .records
            .get(collection)
            .map(|c| {
                c.range(prefix.to_owned()..)
                    .take_while(|(k, _)| k.starts_with(prefix))
                    .map(|(_, r)| r.clone())
                    .collect()
            })
            .unwrap_or_default())
    }
}

pub(crate) struct CommitPlan {
    /// Final state per touched slot; `None` removes the record.
    pub writes: Vec<((String, String), Option<StoredRecord>)>,
    pub audit: Vec<AuditEntry>,
    pub versions: Vec<u64>,
}

/// Checks every write against `current` and builds the audit entries.
/// Shared by both backends so conflict semantics cannot drift.
pub(crate) fn plan_commit(
    tx: &Transaction,
    mut current: impl FnMut(&str, &str) -> Result<Option<StoredRecord>, StoreError>,
    first_seq: u64,
) -> Result<CommitPlan, StoreError> {
    let mut staged: BTreeMap<(String, String), Option<StoredRecord>> = BTreeMap::new();
    let mut audit = Vec::with_capacity(tx.writes.len());
    let mut versions = Vec::with_capacity(tx.writes.len());
    for (i, w) in tx.writes.iter().enumerate() {
        let slot = (w.collection.clone(), w.key.clone());
        let prior = match staged.get(&slot) {
            Some(staged) => staged.clone(),
            None => current(&w.collection, &w.key)?,
        };
        let actual = prior.as_ref().map_or(0, |r| r.version);
        if actual != w.expected_version {
            return Err(StoreError::Conflict {
                collection: w.collection.clone(),
                key: w.key.clone(),
                expected: w.expected_version,
                actual,
            });
        }
        if prior.is_none() && w.body.is_none() {
            return Err(StoreError::Missing {
                collection: w.collection.clone(),
                key: w.key.clone(),
            });
        }
        let next = w.body.clone().map(|body| StoredRecord {
            collection: w.collection.clone(),
            key: w.key.clone(),
            version: actual + 1,
            body,
        });
        let new_version = next.as_ref().map_or(0, |r| r.version);
        versions.push(new_version);
        audit.push(AuditEntry {
            seq: first_seq + i as u64,
            at: tx.at,
            actor: tx.actor.clone(),
            action: tx.action.clone(),
            collection: w.collection.clone(),
            key: w.key.clone(),
            prior_version: actual,
            new_version,
            prior: prior.map(|r| r.body),
        });
        staged.insert(slot, next);
    }
    Ok(CommitPlan {
        writes: staged.into_iter().collect(),
        audit,
        versions,
    })
}
