//! Training objective registry.

use serde::{Deserialize, Serialize};

use super::Competency;
use crate::error::{Error, Result};

const REGISTRY_JSON: &str = include_str!("../../data/registry.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    InScope,
    Partial,
    OutOfScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveRecord {
    pub id: String,
    pub competency: Competency,
    pub scope: Scope,
    pub criterion: String,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    version: u32,
    objectives: Vec<ObjectiveRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    objectives: Vec<ObjectiveRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ScopeCounts {
    pub in_scope: usize,
    pub partial: usize,
    pub out_of_scope: usize,
}

impl ScopeCounts {
    pub fn total(&self) -> usize {
        self.in_scope + self.partial + self.out_of_scope
    }
}

impl Registry {
    pub fn parse(text: &str) -> Result<Self> {
        let file: RegistryFile = serde_json::from_str(text).map_err(Error::from_json)?;
        if file.version != 1 {
            return Err(Error::Config(format!(
                "unsupported registry version {}",
                file.version
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &file.objectives {
            if !seen.insert(o.id.as_str()) {
                return Err(Error::Config(format!("duplicate objective {}", o.id)));
            }
        }
        Ok(Self {
            objectives: file.objectives,
        })
    }

    pub fn objectives(&self) -> &[ObjectiveRecord] {
        &self.objectives
    }

    pub fn get(&self, id: &str) -> Result<&ObjectiveRecord> {
        self.objectives
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| Error::NotFound(format!("objective {id}")))
    }

    pub fn in_scope(&self) -> impl Iterator<Item = &ObjectiveRecord> {
        self.objectives.iter().filter(|o| o.scope == Scope::InScope)
    }

    pub fn counts(&self) -> ScopeCounts {
        let mut c = ScopeCounts::default();
        for o in &self.objectives {
            match o.scope {
                Scope::InScope => c.in_scope += 1,
                Scope::Partial => c.partial += 1,
                Scope::OutOfScope => c.out_of_scope += 1,
            }
        }
        c
    }
}

/// The bundled registry.
pub fn load_registry() -> Result<Registry> {
    Registry::parse(REGISTRY_JSON)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_counts() {
        let r = load_registry().unwrap();
        let c = r.counts();
        assert_eq!(c.total(), 64);
        assert_eq!(c.in_scope, 39);
        assert_eq!(c.partial, 3);
        assert_eq!(c.out_of_scope, 22);
    }

    #[test]
    fn coord_003_is_partial() {
        let r = load_registry().unwrap();
        let o = r.get("MBT.COORD.003").unwrap();
        assert_eq!(o.scope, Scope::Partial);
        assert_eq!(o.notes, "Coordination is fixed and pre-populated");
        assert_eq!(o.competency, Competency::Coordination);
    }

    #[test]
    fn unknown_id() {
        let r = load_registry().unwrap();
        assert!(matches!(r.get("MBT.SAFETY.999"), Err(Error::NotFound(_))));
    }

    #[test]
    fn corrupt_registry_is_an_error() {
        assert!(Registry::parse("{\"version\":1,\"objectives\":[{\"id\":1}]}").is_err());
        let dup = r#"{"version":1,"objectives":[
            {"id":"A","competency":"Safety","scope":"in_scope","criterion":"x"},
            {"id":"A","competency":"Safety","scope":"in_scope","criterion":"y"}]}"#;
        assert!(matches!(Registry::parse(dup), Err(Error::Config(_))));
    }
}
