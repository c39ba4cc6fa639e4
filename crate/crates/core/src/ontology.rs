//! Event type ontologies: type definitions, argument roles, seed triggers and
//! the authored APEX descriptions, plus the base/novel partition of the type
//! universe.
//!
//! Ontologies are stored as TOML documents with one `[[types]]` record per
//! event type:
//!
//! ```toml
//! format_version = 1
//! base = ["Conflict:Attack"]
//! novel = ["Life:Die"]
//!
//! [[types]]
//! type_id = "Conflict:Attack"
//! name = "Attack"
//! definition = "Violent or physical act causing harm or damage"
//! roles = ["Attacker", "Instrument", "Victim", "Target", "Place"]
//! seeds = ["invaded", "airstrikes", "overthrew", "ambushed"]
//! apex = "Attack [SEP] invaded airstrikes overthrew ambushed [SEP] An Attacker physically attacks a Target with Instrument at a Place"
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Literal segment separator used inside stored prompt text.
pub const SEGMENT_SEPARATOR: &str = "[SEP]";

/// Type id reserved for the implicit non-event class.
pub const RESERVED_OTHER: &str = "Other";

pub const ONTOLOGY_FORMAT_VERSION: u32 = 1;

const ACE_APEX: &str = include_str!("../assets/ace2005_apex.toml");

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArgumentRole(String);

impl ArgumentRole {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Validation("argument role name is empty".into()));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventTypeDef {
    pub type_id: String,
    pub name_tokens: Vec<String>,
    pub definition: String,
    pub roles: Vec<ArgumentRole>,
    pub seed_triggers: Vec<String>,
    pub apex_text: Option<String>,
}

/// The three segments of an authored APEX description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApexSegments<'a> {
    pub name: Vec<&'a str>,
    pub seeds: Vec<&'a str>,
    pub description: Vec<&'a str>,
}

impl EventTypeDef {
    pub fn name(&self) -> String {
        self.name_tokens.join(" ")
    }

    /// Splits the authored APEX text into name, seed and description segments.
    pub fn apex_segments(&self) -> Option<Result<ApexSegments<'_>>> {
        self.apex_text
            .as_deref()
            .map(|text| split_apex(&self.type_id, text))
    }
}

fn split_apex<'a>(type_id: &str, text: &'a str) -> Result<ApexSegments<'a>> {
    let segments: Vec<Vec<&str>> = text
        .split(SEGMENT_SEPARATOR)
        .map(|s| s.split_whitespace().collect())
        .collect();
    if segments.len() != 3 || segments.iter().any(Vec::is_empty) {
        return Err(Error::Validation(format!(
            "APEX text of `{type_id}` must be `name {SEGMENT_SEPARATOR} seeds {SEGMENT_SEPARATOR} description`"
        )));
    }
    let mut it = segments.into_iter();
    Ok(ApexSegments {
        name: it.next().unwrap(),
        seeds: it.next().unwrap(),
        description: it.next().unwrap(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventOntology {
    types: Vec<EventTypeDef>,
    base_ids: Vec<String>,
    novel_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyFile {
    format_version: u32,
    #[serde(default)]
    base: Vec<String>,
    #[serde(default)]
    novel: Vec<String>,
    #[serde(default)]
    types: Vec<TypeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypeRecord {
    type_id: String,
    name: String,
    #[serde(default)]
    definition: String,
    #[serde(default)]
    roles: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    seeds: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    apex: Option<String>,
}

impl EventOntology {
    /// Builds and validates an ontology.
    pub fn new(
        mut types: Vec<EventTypeDef>,
        base_ids: Vec<String>,
        novel_ids: Vec<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for ty in &mut types {
            if ty.type_id.trim().is_empty() {
                return Err(Error::Validation("empty type_id".into()));
            }
            if ty.type_id == RESERVED_OTHER {
                return Err(Error::Validation(format!(
                    "`{RESERVED_OTHER}` is reserved and cannot be defined as an event type"
                )));
            }
            if !seen.insert(ty.type_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate type_id `{}`",
                    ty.type_id
                )));
            }
            if ty.name_tokens.is_empty() {
                return Err(Error::Validation(format!(
                    "type `{}` has an empty name",
                    ty.type_id
                )));
            }
            let mut roles = HashSet::new();
            for role in &ty.roles {
                if !roles.insert(role.as_str()) {
                    return Err(Error::Validation(format!(
                        "type `{}` repeats argument role `{}`",
                        ty.type_id,
                        role.as_str()
                    )));
                }
            }
            if let Some(apex) = &ty.apex_text {
                if apex.trim().is_empty() {
                    return Err(Error::Validation(format!(
                        "type `{}` has an empty APEX text",
                        ty.type_id
                    )));
                }
                let segments = split_apex(&ty.type_id, apex)?;
                if segments.name != ty.name_tokens {
                    return Err(Error::Validation(format!(
                        "APEX name segment of `{}` does not match its name",
                        ty.type_id
                    )));
                }
                let seeds: Vec<String> = segments.seeds.iter().map(|s| s.to_string()).collect();
                if ty.seed_triggers.is_empty() {
                    ty.seed_triggers = seeds;
                } else if ty.seed_triggers != seeds {
                    return Err(Error::Validation(format!(
                        "APEX seed segment of `{}` does not match its seeds",
                        ty.type_id
                    )));
                }
            }
        }

        let check_ids = |ids: &[String], which: &str| -> Result<()> {
            let mut local = HashSet::new();
            for id in ids {
                if id == RESERVED_OTHER {
                    return Err(Error::Validation(format!(
                        "{which} set contains the reserved id `{RESERVED_OTHER}`"
                    )));
                }
                if !seen.contains(id) {
                    return Err(Error::Validation(format!(
                        "{which} set references undefined type `{id}`"
                    )));
                }
                if !local.insert(id) {
                    return Err(Error::Validation(format!("{which} set lists `{id}` twice")));
                }
            }
            Ok(())
        };
        check_ids(&base_ids, "base")?;
        check_ids(&novel_ids, "novel")?;

        let base: BTreeSet<&String> = base_ids.iter().collect();
        let overlap: Vec<&str> = novel_ids
            .iter()
            .filter(|id| base.contains(id))
            .map(String::as_str)
            .collect();
        if !overlap.is_empty() {
            return Err(Error::Validation(format!(
                "base and novel sets overlap on: {}",
                overlap.join(", ")
            )));
        }

        Ok(Self {
            types,
            base_ids,
            novel_ids,
        })
    }

    /// The ACE 2005 ontology with authored APEX descriptions for all 33 types.
    pub fn bundled_ace() -> Self {
        Self::from_toml_str(ACE_APEX).expect("bundled ACE ontology is valid")
    }

    pub fn bundled_ace_source() -> &'static str {
        ACE_APEX
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: OntologyFile = toml::from_str(text).map_err(|e| Error::Parse {
            context: "ontology".into(),
            message: e.to_string(),
        })?;
        if file.format_version != ONTOLOGY_FORMAT_VERSION {
            return Err(Error::Parse {
                context: "ontology".into(),
                message: format!(
                    "unsupported format_version {} (expected {ONTOLOGY_FORMAT_VERSION})",
                    file.format_version
                ),
            });
        }
        let mut types = Vec::with_capacity(file.types.len());
        for rec in file.types {
            let roles = rec
                .roles
                .into_iter()
                .map(ArgumentRole::new)
                .collect::<Result<Vec<_>>>()?;
            types.push(EventTypeDef {
                name_tokens: rec.name.split_whitespace().map(str::to_string).collect(),
                type_id: rec.type_id,
                definition: rec.definition,
                roles,
                seed_triggers: rec.seeds,
                apex_text: rec.apex,
            });
        }
        Self::new(types, file.base, file.novel)
    }

    pub fn to_toml_string(&self) -> String {
        let file = OntologyFile {
            format_version: ONTOLOGY_FORMAT_VERSION,
            base: self.base_ids.clone(),
            novel: self.novel_ids.clone(),
            types: self
                .types
                .iter()
                .map(|t| TypeRecord {
                    type_id: t.type_id.clone(),
                    name: t.name(),
                    definition: t.definition.clone(),
                    roles: t.roles.iter().map(|r| r.as_str().to_string()).collect(),
                    seeds: t.seed_triggers.clone(),
                    apex: t.apex_text.clone(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("ontology serializes to TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn types(&self) -> &[EventTypeDef] {
        &self.types
    }

    pub fn get(&self, type_id: &str) -> Option<&EventTypeDef> {
        self.types.iter().find(|t| t.type_id == type_id)
    }

    pub fn require(&self, type_id: &str) -> Result<&EventTypeDef> {
        self.get(type_id)
            .ok_or_else(|| Error::UnknownType(type_id.to_string()))
    }

    pub fn type_ids(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(|t| t.type_id.as_str())
    }

    pub fn contains(&self, type_id: &str) -> bool {
        self.get(type_id).is_some()
    }

    pub fn base_ids(&self) -> &[String] {
        &self.base_ids
    }

    pub fn novel_ids(&self) -> &[String] {
        &self.novel_ids
    }

    /// Replaces the base/novel partition, re-validating it.
    pub fn with_partition(self, base_ids: Vec<String>, novel_ids: Vec<String>) -> Result<Self> {
        Self::new(self.types, base_ids, novel_ids)
    }

    /// Sets the seed triggers of a type that has no authored APEX text.
    pub fn set_seed_triggers(&mut self, type_id: &str, seeds: Vec<String>) -> Result<()> {
        let ty = self
            .types
            .iter_mut()
            .find(|t| t.type_id == type_id)
            .ok_or_else(|| Error::UnknownType(type_id.to_string()))?;
        if ty.apex_text.is_some() {
            return Err(Error::Validation(format!(
                "seeds of `{type_id}` are fixed by its APEX text"
            )));
        }
        ty.seed_triggers = seeds;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attack() -> &'static str {
        r#"
format_version = 1

[[types]]
type_id = "Conflict:Attack"
name = "Attack"
definition = "Violent or physical act causing harm or damage"
roles = ["Attacker", "Instrument", "Victim", "Target", "Place"]

[[types]]
type_id = "Life:Die"
name = "Die"
roles = ["Victim"]
"#
    }

    #[test]
    fn bundled_ace_has_33_types() {
        let ont = EventOntology::bundled_ace();
        assert_eq!(ont.types().len(), 33);
        let attack = ont.get("Conflict:Attack").unwrap();
        assert_eq!(
            attack.apex_text.as_deref().unwrap(),
            "Attack [SEP] invaded airstrikes overthrew ambushed [SEP] An Attacker physically attacks a Target with Instrument at a Place"
        );
        assert_eq!(
            attack.seed_triggers,
            ["invaded", "airstrikes", "overthrew", "ambushed"]
        );
        assert!(ont
            .base_ids()
            .iter()
            .all(|id| !ont.novel_ids().contains(id)));
    }

    #[test]
    fn empty_partition_is_valid() {
        let ont = EventOntology::from_toml_str(attack()).unwrap();
        assert!(ont.base_ids().is_empty());
        assert!(ont.novel_ids().is_empty());
        assert_eq!(ont.types().len(), 2);
    }

    #[test]
    fn overlap_names_offending_id() {
        let text = format!(
            "base = [\"Life:Die\"]\nnovel = [\"Life:Die\"]\n{}",
            attack()
        );
        let err = EventOntology::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("Life:Die"), "{err}");
    }

    #[test]
    fn duplicate_type_rejected() {
        let text = format!(
            "{}\n[[types]]\ntype_id = \"Life:Die\"\nname = \"Die\"\n",
            attack()
        );
        let err = EventOntology::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate type_id `Life:Die`"));
    }

    #[test]
    fn reserved_other_rejected() {
        let text = format!("base = [\"Other\"]\n{}", attack());
        assert!(EventOntology::from_toml_str(&text).is_err());
    }

    #[test]
    fn malformed_apex_rejected() {
        let text = r#"
format_version = 1
[[types]]
type_id = "Life:Die"
name = "Die"
apex = "Die [SEP] deceased"
"#;
        assert!(EventOntology::from_toml_str(text).is_err());
    }

    #[test]
    fn round_trip_is_stable() {
        let ont = EventOntology::bundled_ace();
        let saved = ont.to_toml_string();
        let again = EventOntology::from_toml_str(&saved).unwrap();
        assert_eq!(ont, again);
        assert_eq!(saved, again.to_toml_string());
        let squash = |s: &str| s.split_whitespace().collect::<String>();
        assert_eq!(squash(&saved), squash(EventOntology::bundled_ace_source()));
    }
}
