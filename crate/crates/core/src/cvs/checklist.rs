//! Criterion checklist shown next to every assessment form.
//!
//! The built-in wording is a condensed working version; projects that
//! distribute their own protocol material should load it with
//! [`ChecklistForm::from_json`] and bump the version string.

use serde::{Deserialize, Serialize};

use super::Criterion;
use crate::error::{Error, Result};

pub const CHECKLIST_VERSION: &str = "cvs-checklist/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionChecklist {
    pub criterion: Criterion,
    pub title: String,
    pub definition: String,
    pub not_achieved: Vec<String>,
    pub achieved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistForm {
    pub version: String,
    pub criteria: Vec<CriterionChecklist>,
}

impl ChecklistForm {
    pub fn from_json(raw: &str) -> Result<Self> {
        let form: ChecklistForm =
            serde_json::from_str(raw).map_err(|e| Error::Invalid(format!("checklist: {e}")))?;
        let mut seen: Vec<Criterion> = form.criteria.iter().map(|c| c.criterion).collect();
        seen.sort();
        if seen != Criterion::ALL {
            return Err(Error::Invalid(
                "checklist must describe c1, c2 and c3 exactly once".into(),
            ));
        }
        Ok(form)
    }

    pub fn get(&self, criterion: Criterion) -> Option<&CriterionChecklist> {
        self.criteria.iter().find(|c| c.criterion == criterion)
    }
}

fn lines(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

pub fn default_checklist() -> ChecklistForm {
    ChecklistForm {
        version: CHECKLIST_VERSION.to_owned(),
        criteria: vec![
            CriterionChecklist {
                criterion: Criterion::C1,
                title: "Two-structure criterion".into(),
                definition: "Exactly two tubular structures, the cystic duct and the cystic \
                             artery, are seen connected to the gallbladder."
                    .into(),
                not_achieved: lines(&[
                    "A number of tubular structures other than two is seen.",
                    "The structures do not yet look tubular (incomplete dissection, viewing angle, occlusion).",
                    "The structures cannot be followed into the gallbladder.",
                ]),
                achieved: lines(&[
                    "Two tubular structures are seen entering the gallbladder.",
                    "Rate as achieved even if an additional structure cannot yet be ruled out because C2 or C3 is incomplete.",
                ]),
            },
            CriterionChecklist {
                criterion: Criterion::C2,
                title: "Hepatocystic triangle criterion".into(),
                definition: "Fat and connective tissue are cleared from the hepatocystic \
                             triangle, giving an unobstructed view of it."
                    .into(),
                not_achieved: lines(&[
                    "The dissected windows are not full thickness; deeper anatomy is not visible through them.",
                    "Other structures between duct and artery, or between artery and cystic plate, cannot be confirmed or excluded.",
                ]),
                achieved: lines(&[
                    "Two full-thickness windows (duct to artery, artery to cystic plate) are confirmed by sight or by passing an instrument.",
                    "With a single tubular structure (no cystic artery) there is one window and the criterion can still be achieved.",
                ]),
            },
            CriterionChecklist {
                criterion: Criterion::C3,
                title: "Cystic plate criterion".into(),
                definition: "The lower gallbladder is taken off the liver bed so that the \
                             cystic plate is exposed."
                    .into(),
                not_achieved: lines(&[
                    "The cystic plate is not visible along the entire inferior gallbladder margin.",
                    "Other structures running on the cystic plate cannot be confirmed or excluded.",
                ]),
                achieved: lines(&[
                    "The cystic plate is visible under the whole inferior margin, from the anterior to the posterior view.",
                    "A thick or fatty plate, or a dissection plane close to the gallbladder, does not prevent achievement.",
                ]),
            },
        ],
    }
}
