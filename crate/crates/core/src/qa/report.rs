use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::kappa::{cohen_kappa, Kappa};
use crate::cvs::{Criterion, CvsAssessment};
use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, ProjectId, Target, VideoId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum AgreementScope {
    Project(ProjectId),
    Video(VideoId),
}

/// A single criterion or the derived CVS label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaCriterion {
    C1,
    C2,
    C3,
    Cvs,
}

impl KappaCriterion {
    pub fn label(self, a: &CvsAssessment) -> bool {
        match self {
            KappaCriterion::C1 => a.criterion(Criterion::C1),
            KappaCriterion::C2 => a.criterion(Criterion::C2),
            KappaCriterion::C3 => a.criterion(Criterion::C3),
            KappaCriterion::Cvs => a.cvs(),
        }
    }
}

impl FromStr for KappaCriterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(KappaCriterion::C1),
            "c2" => Ok(KappaCriterion::C2),
            "c3" => Ok(KappaCriterion::C3),
            "cvs" => Ok(KappaCriterion::Cvs),
            other => Err(Error::Invalid(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Agreement of one rater pair over the targets both assessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub rater_a: AnnotatorId,
    pub rater_b: AnnotatorId,
    pub shared_items: usize,
    /// `None` when the pair shares no target.
    pub kappa: Option<Kappa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub scope: AgreementScope,
    pub criterion: KappaCriterion,
    pub raters: Vec<AnnotatorId>,
    /// `matrix[i][j]` is the kappa of `raters[i]` and `raters[j]`; `None`
    /// marks a pair with no shared target.
    pub matrix: Vec<Vec<Option<Kappa>>>,
    pub pairs: Vec<PairAgreement>,
    /// Mean over pairs with a defined kappa.
    pub mean_pairwise_kappa: Option<f64>,
    pub n_items: usize,
    pub computed_at: DateTime<Utc>,
}

impl AgreementReport {
    /// Fixed-width text table for terminals.
    pub fn to_table(&self) -> String {
        let width = self.raters.iter().map(|r| r.as_str().len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "");
        for r in &self.raters {
            let _ = write!(out, " {:>width$}", r.as_str());
        }
        out.push('\n');
        for (r, row) in self.raters.iter().zip(&self.matrix) {
            let _ = write!(out, "{:width$}", r.as_str());
            for cell in row {
                let text = cell.map_or_else(|| "-".to_owned(), |k| k.to_string());
                let _ = write!(out, " {text:>width$}");
            }
            out.push('\n');
        }
        let mean = self
            .mean_pairwise_kappa
            .map_or_else(|| "n/a".to_owned(), |m| format!("{m:.3}"));
        let _ = writeln!(out, "items: {}  mean pairwise kappa: {mean}", self.n_items);
        out
    }
}

/// Pairwise kappa over all raters in `assessments`.
///
/// Each pair is compared on the targets both rated. Pairs without a shared
/// target are missing and, like undefined kappas, do not enter the mean.
pub fn agreement_report(
    scope: AgreementScope,
    criterion: KappaCriterion,
    assessments: &[CvsAssessment],
    computed_at: DateTime<Utc>,
) -> Result<AgreementReport> {
    let mut by_rater: BTreeMap<&AnnotatorId, BTreeMap<&Target, bool>> = BTreeMap::new();
    for a in assessments {
        by_rater
            .entry(&a.rater_id)
            .or_default()
            .insert(&a.target, criterion.label(a));
    }
    let n_items = assessments.iter().map(|a| &a.target).collect::<BTreeSet<_>>().len();
    let raters: Vec<&AnnotatorId> = by_rater.keys().copied().collect();
    let n = raters.len();
    let mut matrix = vec![vec![None; n]; n];
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i..n {
            let (la, lb) = (&by_rater[raters[i]], &by_rater[raters[j]]);
            let (a, b): (Vec<bool>, Vec<bool>) = la
                .iter()
                .filter_map(|(t, &x)| lb.get(t).map(|&y| (x, y)))
                .unzip();
            let kappa = if a.is_empty() { None } else { Some(cohen_kappa(&a, &b)?) };
            matrix[i][j] = kappa;
            matrix[j][i] = kappa;
            if i < j {
                pairs.push(PairAgreement {
                    rater_a: raters[i].clone(),
                    rater_b: raters[j].clone(),
                    shared_items: a.len(),
                    kappa,
                });
            }
        }
    }
    if pairs.iter().all(|p| p.kappa.is_none()) {
        return Err(Error::NoSharedTargets);
    }
    let defined: Vec<f64> = pairs.iter().filter_map(|p| p.kappa.and_then(Kappa::value)).collect();
    let mean_pairwise_kappa =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AgreementReport {
        scope,
        criterion,
        raters: raters.into_iter().cloned().collect(),
        matrix,
        pairs,
        mean_pairwise_kappa,
        n_items,
        computed_at,
    })
}
