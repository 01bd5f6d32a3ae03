//! Annotators, roles and projects.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, ProjectId};
use crate::store::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    CvsRater,
    Segmenter,
    Reviewer,
    Screener,
    Admin,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::CvsRater,
        Role::Segmenter,
        Role::Reviewer,
        Role::Screener,
        Role::Admin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::CvsRater => "cvs_rater",
            Role::Segmenter => "segmenter",
            Role::Reviewer => "reviewer",
            Role::Screener => "screener",
            Role::Admin => "admin",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown role {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub annotator_id: AnnotatorId,
    pub display_name: String,
    pub roles: BTreeSet<Role>,
}

impl Annotator {
    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    /// Ok when the annotator holds at least one of `any_of`.
    pub fn require(&self, any_of: &[Role]) -> Result<()> {
        if any_of.iter().any(|r| self.has_role(*r)) {
            Ok(())
        } else {
            Err(Error::Forbidden {
                actor: self.annotator_id.clone(),
                required: any_of
                    .iter()
                    .map(|r| r.as_str())
                    .collect::<Vec<_>>()
                    .join("|"),
            })
        }
    }
}

impl Record for Annotator {
    const COLLECTION: &'static str = "annotators";
    fn key(&self) -> String {
        self.annotator_id.to_string()
    }
}

pub const DEFAULT_INTERVAL_MS: u64 = 30_000;
pub const CLASS_TABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: ProjectId,
    pub name: String,
    /// Default keyframe spacing for [`crate::Platform::sample_keyframes`].
    pub interval_ms: u64,
    pub checklist_version: String,
    pub class_table_version: u32,
    pub created_at: DateTime<Utc>,
}

impl Record for Project {
    const COLLECTION: &'static str = "projects";
    fn key(&self) -> String {
        self.project_id.to_string()
    }
}
