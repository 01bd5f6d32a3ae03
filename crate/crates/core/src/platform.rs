use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::clock::{Clock, SystemClock};
use crate::error::{Error, Result};
use crate::identity::{Annotator, Project, Role, CLASS_TABLE_VERSION, DEFAULT_INTERVAL_MS};
use crate::ids::{AnnotatorId, ProjectId};
use crate::ingestion::FrameDecoder;
use crate::store::{AuditEntry, ReadViewExt, Store, Transaction};

/// The annotation platform: every protocol operation, bound to a store, a
/// frame decoder and a clock.
///
/// Mutations read the records they touch, validate, and commit with the
/// versions they read, so two racing writers never both succeed. Reports
/// and exports work from a [`crate::store::Snapshot`].
#[derive(Clone)]
pub struct Platform {
    store: Arc<dyn Store>,
    decoder: Arc<dyn FrameDecoder>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform").finish_non_exhaustive()
    }
}

impl Platform {
    pub fn new(store: Arc<dyn Store>, decoder: Arc<dyn FrameDecoder>) -> Self {
        Platform {
            store,
            decoder,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn store(&self) -> &dyn Store {
        self.store.as_ref()
    }

    pub fn decoder(&self) -> &dyn FrameDecoder {
        self.decoder.as_ref()
    }

    pub(crate) fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub(crate) fn tx(&self, actor: &AnnotatorId, action: &str) -> Transaction {
        Transaction::new(actor.as_str(), action, self.now())
    }

    pub(crate) fn commit(&self, tx: Transaction) -> Result<Vec<u64>> {
        Ok(self.store.commit(tx)?)
    }

    pub fn annotator(&self, id: &AnnotatorId) -> Result<Annotator> {
        self.actor(id)
    }

    pub(crate) fn actor(&self, id: &AnnotatorId) -> Result<Annotator> {
        self.store
            .get::<Annotator>(id.as_str())?
            .map(|v| v.record)
            .ok_or_else(|| Error::UnknownActor(id.to_string()))
    }

    pub fn annotators(&self) -> Result<Vec<Annotator>> {
        Ok(self
            .store
            .scan::<Annotator>()?
            .into_iter()
            .map(|v| v.record)
            .collect())
    }

    /// Creates the first administrator of an empty store.
    pub fn bootstrap_admin(&self, id: AnnotatorId, display_name: &str) -> Result<Annotator> {
        if !self.store.scan::<Annotator>()?.is_empty() {
            return Err(Error::Invalid(
                "bootstrap is only allowed on a store without annotators".into(),
            ));
        }
        let admin = Annotator {
            annotator_id: id.clone(),
            display_name: display_name.to_owned(),
            roles: [Role::Admin].into(),
        };
        let mut tx = self.tx(&id, "bootstrap_admin");
        tx.put(&admin, 0);
        self.commit(tx)?;
        Ok(admin)
    }

    pub fn upsert_annotator(&self, actor: &AnnotatorId, annotator: Annotator) -> Result<Annotator> {
        self.actor(actor)?.require(&[Role::Admin])?;
        let version = self
            .store
            .version_of::<Annotator>(annotator.annotator_id.as_str())?;
        let mut tx = self.tx(actor, "upsert_annotator");
        tx.put(&annotator, version);
        self.commit(tx)?;
        Ok(annotator)
    }

    pub fn create_project(
        &self,
        actor: &AnnotatorId,
        project_id: ProjectId,
        name: &str,
        interval_ms: Option<u64>,
    ) -> Result<Project> {
        self.actor(actor)?.require(&[Role::Admin])?;
        let interval_ms = interval_ms.unwrap_or(DEFAULT_INTERVAL_MS);
        if interval_ms == 0 {
            return Err(Error::Invalid("interval_ms must be positive".into()));
        }
        let project = Project {
            project_id,
            name: name.to_owned(),
            interval_ms,
            checklist_version: crate::cvs::CHECKLIST_VERSION.to_owned(),
            class_table_version: CLASS_TABLE_VERSION,
            created_at: self.now(),
        };
        let mut tx = self.tx(actor, "create_project");
        tx.put(&project, 0);
        self.commit(tx).map_err(|e| match e {
            Error::VersionConflict { key, .. } => {
                Error::Invalid(format!("project {key} already exists"))
            }
            other => other,
        })?;
        Ok(project)
    }

    pub fn project(&self, id: &ProjectId) -> Result<Project> {
        self.store
            .get::<Project>(id.as_str())?
            .map(|v| v.record)
            .ok_or_else(|| Error::not_found("project", id))
    }

    pub fn projects(&self) -> Result<Vec<Project>> {
        Ok(self
            .store
            .scan::<Project>()?
            .into_iter()
            .map(|v| v.record)
            .collect())
    }

    pub fn audit_log(&self, collection: Option<&str>, key: Option<&str>) -> Result<Vec<AuditEntry>> {
        Ok(self.store.audit_log(collection, key)?)
    }
}
