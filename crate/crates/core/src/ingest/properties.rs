use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::IngestError;
use crate::text::{id_number, is_prefixed_id};

/// Wikidata property datatype. Only the first four can be rendered into
/// text-based canaries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Datatype {
    WikibaseItem,
    String,
    Quantity,
    Time,
    Other(std::string::String),
}

impl Datatype {
    pub const PROMPTABLE: [Datatype; 4] =
        [Datatype::WikibaseItem, Datatype::String, Datatype::Quantity, Datatype::Time];

    pub fn as_str(&self) -> &str {
        match self {
            Datatype::WikibaseItem => "wikibase-item",
            Datatype::String => "string",
            Datatype::Quantity => "quantity",
            Datatype::Time => "time",
            Datatype::Other(s) => s,
        }
    }

    pub fn is_promptable(&self) -> bool {
        !matches!(self, Datatype::Other(_))
    }
}

impl FromStr for Datatype {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "wikibase-item" => Datatype::WikibaseItem,
            "string" => Datatype::String,
            "quantity" => Datatype::Quantity,
            "time" => Datatype::Time,
            other => Datatype::Other(other.to_string()),
        })
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Datatype {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Datatype {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = std::string::String::deserialize(d)?;
        Ok(s.parse().unwrap())
    }
}

/// A property with its English metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertySpec {
    pub pid: String,
    pub label: String,
    pub description: String,
    pub aliases: Vec<String>,
    pub datatype: Datatype,
}

impl PropertySpec {
    pub fn new(
        pid: impl Into<String>,
        label: impl Into<String>,
        datatype: Datatype,
    ) -> Result<Self, IngestError> {
        let spec = Self {
            pid: pid.into(),
            label: label.into(),
            description: String::new(),
            aliases: Vec::new(),
            datatype,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !is_prefixed_id(&self.pid, 'P') {
            return Err(IngestError::InvalidProperty(format!("bad property id {:?}", self.pid)));
        }
        if self.label.trim().is_empty() {
            return Err(IngestError::InvalidProperty(format!("{} has an empty label", self.pid)));
        }
        Ok(())
    }
}

/// Keeps the properties whose datatype is one of the four promptable types,
/// preserving catalog order.
pub fn filter_properties(catalog: &[PropertySpec]) -> Vec<PropertySpec> {
    filter_properties_by(catalog, &Datatype::PROMPTABLE)
}

/// Like [`filter_properties`] with a caller-chosen subset of the whitelist.
/// Datatypes outside the promptable whitelist are ignored.
pub fn filter_properties_by(catalog: &[PropertySpec], allowed: &[Datatype]) -> Vec<PropertySpec> {
    catalog
        .iter()
        .filter(|p| p.datatype.is_promptable() && allowed.contains(&p.datatype))
        .cloned()
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PropertyEntry {
    label: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    aliases: Vec<String>,
    datatype: Datatype,
}

struct Catalog<'a>(&'a [PropertySpec]);

impl Serialize for Catalog<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut sorted: Vec<&PropertySpec> = self.0.iter().collect();
        sorted.sort_by_key(|p| (id_number(&p.pid), p.pid.clone()));
        let mut map = s.serialize_map(Some(sorted.len()))?;
        for p in sorted {
            let entry = PropertyEntry {
                label: p.label.clone(),
                description: p.description.clone(),
                aliases: p.aliases.clone(),
                datatype: p.datatype.clone(),
            };
            map.serialize_entry(&p.pid, &entry)?;
        }
        map.end()
    }
}

/// Serializes a catalog as the `properties.json` map (pid → metadata), ordered
/// by numeric property id.
pub fn properties_to_json(catalog: &[PropertySpec]) -> String {
    let mut out = serde_json::to_string_pretty(&Catalog(catalog)).expect("catalog serializes");
    out.push('\n');
    out
}

/// Parses a `properties.json` map. Entries come back in numeric pid order.
pub fn properties_from_json(json: &str) -> Result<Vec<PropertySpec>, IngestError> {
    let raw: BTreeMap<String, PropertyEntry> =
        serde_json::from_str(json).map_err(|e| IngestError::InvalidProperty(e.to_string()))?;
    let mut out = Vec::with_capacity(raw.len());
    for (pid, e) in raw {
        let spec = PropertySpec {
            pid,
            label: e.label,
            description: e.description,
            aliases: e.aliases,
            datatype: e.datatype,
        };
        spec.validate()?;
        out.push(spec);
    }
    out.sort_by_key(|p| id_number(&p.pid));
    Ok(out)
}

pub fn read_properties(path: &Path) -> Result<Vec<PropertySpec>, IngestError> {
    let json = std::fs::read_to_string(path)?;
    properties_from_json(&json)
}
