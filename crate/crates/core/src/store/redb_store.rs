use std::fmt::Display;
use std::path::Path;

use redb::{Database, ReadableTable, TableDefinition};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    plan_commit, AuditEntry, ReadView, Snapshot, Store, StoreError, StoredRecord, Transaction,
};

/// `"<collection>\0<key>"` -> JSON `{version, body}`
const RECORDS: TableDefinition<&str, &[u8]> = TableDefinition::new("records");
/// sequence number -> JSON audit entry
const AUDIT: TableDefinition<u64, &[u8]> = TableDefinition::new("audit");

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u64,
    body: Value,
}

fn backend(e: impl Display) -> StoreError {
    StoreError::Backend(e.to_string())
}

fn slot(collection: &str, key: &str) -> String {
    format!("{collection}\0{key}")
}

fn unslot(raw: &str) -> (&str, &str) {
    raw.split_once('\0').unwrap_or((raw, ""))
}

fn decode_envelope(collection: &str, key: &str, bytes: &[u8]) -> Result<StoredRecord, StoreError> {
    let env: Envelope = serde_json::from_slice(bytes).map_err(|e| StoreError::Corrupt {
        collection: collection.to_owned(),
        key: key.to_owned(),
        reason: e.to_string(),
    })?;
    Ok(StoredRecord {
        collection: collection.to_owned(),
        key: key.to_owned(),
        version: env.version,
        body: env.body,
    })
}

/// Durable single-file store backed by redb. Each [`Transaction`] is one
/// redb write transaction committed with immediate durability, so a write
/// acknowledged to the caller survives a process kill.
pub struct RedbStore {
    db: Database,
}

impl std::fmt::Debug for RedbStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RedbStore").finish_non_exhaustive()
    }
}

impl RedbStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let db = Database::create(path.as_ref()).map_err(backend)?;
        let tx = db.begin_write().map_err(backend)?;
        tx.open_table(RECORDS).map_err(backend)?;
        tx.open_table(AUDIT).map_err(backend)?;
        tx.commit().map_err(backend)?;
        Ok(RedbStore { db })
    }

    fn scan_in<T>(table: &T, collection: &str, prefix: &str) -> Result<Vec<StoredRecord>, StoreError>
    where
        T: ReadableTable<&'static str, &'static [u8]>,
    {
        let start = slot(collection, prefix);
        let mut out = Vec::new();
        for item in table.range(start.as_str()..).map_err(backend)? {
            let (k, v) = item.map_err(backend)?;
            let k = k.value();
            if !k.starts_with(&start) {
                break;
            }
            let (c, key) = unslot(k);
            out.push(decode_envelope(c, key, v.value())?);
        }
        Ok(out)
    }
}

impl ReadView for RedbStore {
    fn get_raw(&self, collection: &str, key: &str) -> Result<Option<StoredRecord>, StoreError> {
        let tx = self.db.begin_read().map_err(backend)?;
        let table = tx.open_table(RECORDS).map_err(backend)?;
        let got = table.get(slot(collection, key).as_str()).map_err(backend)?;
        got.map(|v| decode_envelope(collection, key, v.value()))
            .transpose()
    }

    fn scan_prefix_raw(
        &self,
        collection: &str,
        prefix: &str,
    ) -> Result<Vec<StoredRecord>, StoreError> {
        let tx = self.db.begin_read().map_err(backend)?;
        let table = tx.open_table(RECORDS).map_err(backend)?;
        Self::scan_in(&table, collection, prefix)
    }
}

impl Store for RedbStore {
    fn commit(&self, tx: Transaction) -> Result<Vec<u64>, StoreError> {
        let wtx = self.db.begin_write().map_err(backend)?;
        let versions = {
            let mut records = wtx.open_table(RECORDS).map_err(backend)?;
            let mut audit = wtx.open_table(AUDIT).map_err(backend)?;
            let first_seq = audit
                .last()
                .map_err(backend)?
                .map_or(1, |(k, _)| k.value() + 1);
            let plan = plan_commit(
                &tx,
                |c, k| {
                    let got = records.get(slot(c, k).as_str()).map_err(backend)?;
                    got.map(|v| decode_envelope(c, k, v.value())).transpose()
                },
                first_seq,
            )?;
            for ((c, k), record) in plan.writes {
                let key = slot(&c, &k);
                match record {
                    Some(r) => {
                        let bytes = serde_json::to_vec(&Envelope {
                            version: r.version,
                            body: r.body,
                        })
                        .map_err(backend)?;
                        records.insert(key.as_str(), bytes.as_slice()).map_err(backend)?;
                    }
                    None => {
                        records.remove(key.as_str()).map_err(backend)?;
                    }
                }
            }
            for entry in &plan.audit {
                let bytes = serde_json::to_vec(entry).map_err(backend)?;
                audit.insert(entry.seq, bytes.as_slice()).map_err(backend)?;
            }
            plan.versions
        };
        wtx.commit().map_err(backend)?;
        Ok(versions)
    }

    fn snapshot(&self) -> Result<Snapshot, StoreError> {
        let tx = self.db.begin_read().map_err(backend)?;
        let table = tx.open_table(RECORDS).map_err(backend)?;
        let mut snap = Snapshot::default();
        for item in table.iter().map_err(backend)? {
            let (k, v) = item.map_err(backend)?;
            let (c, key) = unslot(k.value());
            snap.insert(decode_envelope(c, key, v.value())?);
        }
        Ok(snap)
    }

    fn audit_log(
        &self,
        collection: Option<&str>,
        key: Option<&str>,
    ) -> Result<Vec<AuditEntry>, StoreError> {
        let tx = self.db.begin_read().map_err(backend)?;
        let table = tx.open_table(AUDIT).map_err(backend)?;
        let mut out = Vec::new();
        for item in table.iter().map_err(backend)? {
            let (_, v) = item.map_err(backend)?;
            let entry: AuditEntry = serde_json::from_slice(v.value()).map_err(backend)?;
            if collection.is_some_and(|c| entry.collection != c)
                || key.is_some_and(|k| entry.key != k)
            {
                continue;
            }
            out.push(entry);
        }
        Ok(out)
    }
}
