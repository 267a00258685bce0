//! The `subjects.json` input: audited people, their web-presence signals,
//! auxiliary facts and ground truths.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canary::{AuxFact, Cohort, SubjectProfile};
use crate::ingest::PropertySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub name: String,
    #[serde(default)]
    pub qid: Option<String>,
    #[serde(default)]
    pub pageviews: Option<f64>,
    #[serde(default)]
    pub article_bytes: Option<f64>,
    #[serde(default)]
    pub sitelinks: Option<f64>,
    #[serde(default)]
    pub aux_facts: Vec<AuxFact>,
    /// pid → true values.
    #[serde(default)]
    pub ground_truths: BTreeMap<String, Vec<String>>,
    /// Fixed cohort; otherwise assigned from web presence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<Cohort>,
}

impl SubjectEntry {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            qid: None,
            pageviews: None,
            article_bytes: None,
            sitelinks: None,
            aux_facts: Vec::new(),
            ground_truths: BTreeMap::new(),
            cohort: None,
        }
    }

    /// Profile for auditing. Auxiliary facts without a property id get one
    /// by exact label match against `catalog`.
    pub fn profile(&self, catalog: &[PropertySpec], cohort: Option<Cohort>, web_presence: Option<f64>) -> SubjectProfile {
        let aux_facts = self
            .aux_facts
            .iter()
            .map(|f| {
                let mut f = f.clone();
                if f.pid.is_none() {
                    f.pid = catalog.iter().find(|p| p.label == f.label).map(|p| p.pid.clone());
                }
                f
            })
            .collect();
        SubjectProfile {
            name: self.name.clone(),
            aux_facts,
            web_presence,
            cohort: self.cohort.or(cohort),
        }
    }
}

pub fn read_subjects(path: &Path) -> Result<Vec<SubjectEntry>, std::io::Error> {
    let s = std::fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
