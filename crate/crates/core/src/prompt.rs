//! Rendering event types into prompt token sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{select_prototype_triggers, FrequencyTable};
use crate::ontology::{EventOntology, EventTypeDef, SEGMENT_SEPARATOR};

/// Number of prototype seed triggers mined per type by default.
pub const DEFAULT_SEED_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptForm {
    TypeName,
    Definition,
    SeedTriggers,
    Structure,
    Apex,
    Soft,
}

impl PromptForm {
    pub const ALL: [PromptForm; 6] = [
        PromptForm::TypeName,
        PromptForm::Definition,
        PromptForm::SeedTriggers,
        PromptForm::Structure,
        PromptForm::Apex,
        PromptForm::Soft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptForm::TypeName => "name",
            PromptForm::Definition => "definition",
            PromptForm::SeedTriggers => "seeds",
            PromptForm::Structure => "structure",
            PromptForm::Apex => "apex",
            PromptForm::Soft => "soft",
        }
    }

    pub fn needs_seeds(self) -> bool {
        matches!(self, PromptForm::SeedTriggers | PromptForm::Apex)
    }
}

impl fmt::Display for PromptForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptForm::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown prompt form `{s}` (expected name, definition, seeds, structure, apex or soft)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub form: PromptForm,
    pub type_id: String,
    pub tokens: Vec<String>,
}

impl PromptText {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn is_soft(&self) -> bool {
        self.form == PromptForm::Soft
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_string)
}

pub fn render_prompt(ty: &EventTypeDef, form: PromptForm) -> Result<PromptText> {
    let missing = |field| Error::MissingField {
        type_id: ty.type_id.clone(),
        field,
    };
    let sep = || SEGMENT_SEPARATOR.to_string();
    let mut tokens = ty.name_tokens.clone();
    match form {
        PromptForm::TypeName => {}
        PromptForm::Definition => {
            if ty.definition.trim().is_empty() {
                return Err(missing("definition"));
            }
            tokens.push(sep());
            tokens.extend(words(&ty.definition));
        }
        PromptForm::SeedTriggers => {
            if ty.seed_triggers.is_empty() {
                return Err(missing("seeds"));
            }
            tokens.push(sep());
            tokens.extend(ty.seed_triggers.iter().cloned());
        }
        PromptForm::Structure => {
            if ty.roles.is_empty() {
                return Err(missing("roles"));
            }
            tokens.extend(ty.roles.iter().map(|r| r.as_str().to_string()));
        }
        PromptForm::Apex => {
            if ty.seed_triggers.is_empty() {
                return Err(missing("seeds"));
            }
            // The authored description carries the argument roles; fall back
            // to the plain definition when none was written.
            let description: Vec<String> = match ty.apex_segments() {
                Some(segments) => segments?
                    .description
                    .into_iter()
                    .map(str::to_string)
                    .collect(),
                None => words(&ty.definition).collect(),
            };
            if description.is_empty() {
                return Err(missing("definition"));
            }
            tokens.push(sep());
            tokens.extend(ty.seed_triggers.iter().cloned());
            tokens.push(sep());
            tokens.extend(description);
        }
        PromptForm::Soft => tokens.clear(),
    }
    Ok(PromptText {
        form,
        type_id: ty.type_id.clone(),
        tokens,
    })
}

/// Fills in mined seeds for every type that has none stored.
pub fn mine_missing_seeds(
    ontology: &mut EventOntology,
    table: &FrequencyTable,
    k: usize,
) -> Result<()> {
    let missing: Vec<String> = ontology
        .types()
        .iter()
        .filter(|t| t.seed_triggers.is_empty())
        .map(|t| t.type_id.clone())
        .collect();
    for type_id in missing {
        let seeds = if table.knows_type(&type_id) {
            select_prototype_triggers(table, &type_id, k)?
        } else {
            Vec::new()
        };
        ontology.set_seed_triggers(&type_id, seeds)?;
    }
    Ok(())
}

/// One rendered prompt per event type, all of the same form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    form: PromptForm,
    prompts: BTreeMap<String, PromptText>,
    order: Vec<String>,
}

impl PromptSet {
    pub fn render(ontology: &EventOntology, form: PromptForm) -> Result<Self> {
        let prompts = ontology
            .types()
            .iter()
            .map(|t| render_prompt(t, form))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_prompts(form, prompts))
    }

    pub fn from_prompts(form: PromptForm, prompts: Vec<PromptText>) -> Self {
        let order = prompts.iter().map(|p| p.type_id.clone()).collect();
        let prompts = prompts
            .into_iter()
            .map(|p| (p.type_id.clone(), p))
            .collect();
        Self {
            form,
            prompts,
            order,
        }
    }

    pub fn form(&self) -> PromptForm {
        self.form
    }

    pub fn get(&self, type_id: &str) -> Result<&PromptText> {
        self.prompts
            .get(type_id)
            .ok_or_else(|| Error::UnknownType(type_id.to_string()))
    }

    pub fn type_ids(&self) -> &[String] {
        &self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptText> {
        self.order.iter().map(|id| &self.prompts[id])
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Tab-separated `type_id`, form and prompt text, one type per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in self.iter() {
            out.push_str(&p.type_id);
            out.push('\t');
            out.push_str(p.form.as_str());
            out.push('\t');
            out.push_str(&p.text());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut prompts = Vec::new();
        let mut form = None;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(type_id), Some(f), Some(body)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Record {
                    line: idx + 1,
                    message: "expected `type_id<TAB>form<TAB>text`".into(),
                });
            };
            let f: PromptForm = f.parse()?;
            if *form.get_or_insert(f) != f {
                return Err(Error::Record {
                    line: idx + 1,
                    message: "prompt file mixes prompt forms".into(),
                });
            }
            prompts.push(PromptText {
                form: f,
                type_id: type_id.to_string(),
                tokens: words(body).collect(),
            });
        }
        let form = form.ok_or_else(|| Error::Parse {
            context: "prompt file".into(),
            message: "no prompts".into(),
        })?;
        Ok(Self::from_prompts(form, prompts))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ace(id: &str) -> EventTypeDef {
        EventOntology::bundled_ace().get(id).unwrap().clone()
    }

    #[test]
    fn attack_apex() {
        let p = render_prompt(&ace("Conflict:Attack"), PromptForm::Apex).unwrap();
        assert_eq!(
            p.text(),
            "Attack [SEP] invaded airstrikes overthrew ambushed [SEP] An Attacker physically attacks a Target with Instrument at a Place"
        );
    }

    #[test]
    fn be_born_apex() {
        let p = render_prompt(&ace("Life:Be-Born"), PromptForm::Apex).unwrap();
        assert_eq!(
            p.text(),
            "Be Born [SEP] childbirth [SEP] a Person is born at a Place"
        );
    }

    #[test]
    fn attack_structure_and_others() {
        let attack = ace("Conflict:Attack");
        let text = |f| render_prompt(&attack, f).unwrap().text();
        assert_eq!(
            text(PromptForm::Structure),
            "Attack Attacker Instrument Victim Target Place"
        );
        assert_eq!(text(PromptForm::TypeName), "Attack");
        assert_eq!(
            text(PromptForm::SeedTriggers),
            "Attack [SEP] invaded airstrikes overthrew ambushed"
        );
        assert_eq!(
            text(PromptForm::Definition),
            "Attack [SEP] Violent or physical act causing harm or damage"
        );
        let soft = render_prompt(&attack, PromptForm::Soft).unwrap();
        assert!(soft.tokens.is_empty());
        assert_eq!(soft.type_id, "Conflict:Attack");
    }

    #[test]
    fn missing_fields_are_named() {
        let mut ty = ace("Conflict:Attack");
        ty.seed_triggers.clear();
        ty.apex_text = None;
        ty.definition.clear();
        ty.roles.clear();
        for (form, field) in [
            (PromptForm::SeedTriggers, "seeds"),
            (PromptForm::Definition, "definition"),
            (PromptForm::Structure, "roles"),
            (PromptForm::Apex, "seeds"),
        ] {
            match render_prompt(&ty, form) {
                Err(Error::MissingField { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{form}: {other:?}"),
            }
        }
        assert!(render_prompt(&ty, PromptForm::TypeName).is_ok());
    }

    #[test]
    fn every_text_form_starts_with_name() {
        for ty in EventOntology::bundled_ace().types() {
            for form in PromptForm::ALL {
                let p = render_prompt(ty, form).unwrap();
                if form == PromptForm::Soft {
                    assert!(p.tokens.is_empty());
                } else {
                    assert_eq!(&p.tokens[..ty.name_tokens.len()], &ty.name_tokens[..]);
                    assert_eq!(p, render_prompt(ty, form).unwrap());
                }
            }
        }
    }

    #[test]
    fn tsv_round_trip() {
        let set = PromptSet::render(&EventOntology::bundled_ace(), PromptForm::Apex).unwrap();
        let again = PromptSet::from_tsv(&set.to_tsv()).unwrap();
        assert_eq!(set, again);
        let soft = PromptSet::render(&EventOntology::bundled_ace(), PromptForm::Soft).unwrap();
        assert_eq!(PromptSet::from_tsv(&soft.to_tsv()).unwrap(), soft);
    }
}
