//! Word statistics used to mine prototype seed triggers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};

/// Overall and per-type trigger frequencies over case-folded surface tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    /// `f_o`: occurrences of each word in the whole training data.
    pub overall: BTreeMap<String, u64>,
    /// `f_t`: occurrences of each word inside a trigger span of the type.
    pub tagged: BTreeMap<(String, String), u64>,
    types: BTreeSet<String>,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes types known to the table even if they carry no tagged words.
    pub fn register_types<I, S>(&mut self, type_ids: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.types.extend(type_ids.into_iter().map(Into::into));
    }

    pub fn knows_type(&self, type_id: &str) -> bool {
        self.types.contains(type_id)
    }

    pub fn overall_count(&self, word: &str) -> u64 {
        self.overall.get(word).copied().unwrap_or(0)
    }

    pub fn tagged_count(&self, type_id: &str, word: &str) -> u64 {
        self.tagged
            .get(&(type_id.to_string(), word.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Adds one sentence's counts.
    pub fn add_sentence(&mut self, sentence: &AnnotatedSentence) {
        let folded: Vec<String> = sentence.words().map(str::to_lowercase).collect();
        for w in &folded {
            *self.overall.entry(w.clone()).or_insert(0) += 1;
        }
        for m in &sentence.mentions {
            self.types.insert(m.type_id.clone());
            for w in &folded[m.start..m.end] {
                *self
                    .tagged
                    .entry((m.type_id.clone(), w.clone()))
                    .or_insert(0) += 1;
            }
        }
    }

    /// Validates `f_t(t, w) <= f_o(w)` for every entry.
    pub fn is_consistent(&self) -> bool {
        self.tagged
            .iter()
            .all(|((_, w), &c)| c <= self.overall_count(w))
    }
}

pub fn build_frequency_tables<'a>(
    sentences: impl IntoIterator<Item = &'a AnnotatedSentence>,
) -> FrequencyTable {
    let mut table = FrequencyTable::new();
    for s in sentences {
        table.add_sentence(s);
    }
    table
}

/// Top-`k` words for `type_id` ranked by `f_t / f_o`, ties broken by higher
/// `f_t` and then lexicographically.
pub fn select_prototype_triggers(
    table: &FrequencyTable,
    type_id: &str,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if !table.knows_type(type_id) {
        return Err(Error::UnknownType(type_id.to_string()));
    }
    let mut candidates: Vec<(&str, u64, u64)> = table
        .tagged
        .range((type_id.to_string(), String::new())..)
        .take_while(|((t, _), _)| t == type_id)
        .filter(|(_, &ft)| ft > 0)
        .map(|((_, w), &ft)| (w.as_str(), ft, table.overall_count(w).max(ft)))
        .collect();
    candidates.sort_by(|a, b| rank_order(*a, *b));
    Ok(candidates
        .into_iter()
        .take(k)
        .map(|(w, _, _)| w.to_string())
        .collect())
}

fn rank_order(a: (&str, u64, u64), b: (&str, u64, u64)) -> Ordering {
    // a.ft / a.fo vs b.ft / b.fo without floating point
    let lhs = a.1 as u128 * b.2 as u128;
    let rhs = b.1 as u128 * a.2 as u128;
    rhs.cmp(&lhs)
        .then_with(|| b.1.cmp(&a.1))
        .then_with(|| a.0.cmp(b.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TriggerMention;

    fn table(entries: &[(&str, u64, u64)]) -> FrequencyTable {
        let mut t = FrequencyTable::new();
        t.register_types(["T"]);
        for &(w, ft, fo) in entries {
            t.overall.insert(w.into(), fo);
            t.tagged.insert(("T".into(), w.into()), ft);
        }
        t
    }

    #[test]
    fn single_sentence_counts() {
        let s = AnnotatedSentence::from_words(
            "s",
            &["he", "Invaded", "twice"],
            &["PRP", "VBD", "RB"],
            vec![TriggerMention::new("Attack", 1, 2)],
        )
        .unwrap();
        let t = build_frequency_tables([&s]);
        assert_eq!(t.overall_count("invaded"), 1);
        assert_eq!(t.tagged_count("Attack", "invaded"), 1);
        assert_eq!(t.overall.len(), 3);
    }

    #[test]
    fn empty_corpus_gives_empty_tables() {
        let t = build_frequency_tables(std::iter::empty());
        assert!(t.overall.is_empty() && t.tagged.is_empty());
    }

    #[test]
    fn ties_prefer_higher_tagged_count() {
        let t = table(&[("w1", 2, 2), ("w2", 3, 6), ("w3", 1, 1)]);
        assert_eq!(select_prototype_triggers(&t, "T", 2).unwrap(), ["w1", "w3"]);
        assert_eq!(
            select_prototype_triggers(&t, "T", 10).unwrap(),
            ["w1", "w3", "w2"]
        );
    }

    #[test]
    fn lexicographic_last_resort() {
        let t = table(&[("b", 1, 2), ("a", 1, 2)]);
        assert_eq!(select_prototype_triggers(&t, "T", 2).unwrap(), ["a", "b"]);
    }

    #[test]
    fn type_without_triggers_is_empty_and_unknown_errors() {
        let mut t = table(&[]);
        t.register_types(["U"]);
        assert!(select_prototype_triggers(&t, "U", 4).unwrap().is_empty());
        assert!(matches!(
            select_prototype_triggers(&t, "Nope", 4),
            Err(Error::UnknownType(_))
        ));
        assert!(select_prototype_triggers(&t, "U", 0).is_err());
    }

    #[test]
    fn type_prefix_does_not_bleed() {
        let mut t = table(&[("x", 1, 1)]);
        t.register_types(["TT"]);
        t.tagged.insert(("TT".into(), "y".into()), 1);
        t.overall.insert("y".into(), 1);
        assert_eq!(select_prototype_triggers(&t, "T", 4).unwrap(), ["x"]);
    }
}
