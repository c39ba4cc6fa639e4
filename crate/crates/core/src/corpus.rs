//! Annotated corpora: tokenized, POS-tagged sentences with typed trigger spans.
//!
//! On disk a corpus is JSON Lines. An optional first line declares the POS
//! tagset; every other line is one sentence:
//!
//! ```text
//! {"version":1,"tagset":["NN","VBD"]}
//! {"version":1,"sent_id":"s1","tokens":["he","invaded"],"pos":["PRP","VBD"],"mentions":[{"type_id":"Conflict:Attack","start":1,"end":2}]}
//! ```
//!
//! Tags outside the tagset are read as [`UNK_TAG`]. Spans are token offsets,
//! `start` inclusive and `end` exclusive.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::EventOntology;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const UNK_TAG: &str = "UNK";

/// Penn Treebank tags, used when a corpus file declares no tagset.
pub const PENN_TAGSET: &[&str] = &[
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP", "NNPS",
    "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG",
    "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB", ".", ",", ":", "``", "''", "-LRB-", "-RRB-",
    "#", "$",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub pos: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TriggerMention {
    pub type_id: String,
    pub start: usize,
    pub end: usize,
}

impl TriggerMention {
    pub fn new(type_id: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            type_id: type_id.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    fn overlaps(&self, other: &TriggerMention) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub sent_id: String,
    pub tokens: Vec<Token>,
    pub mentions: Vec<TriggerMention>,
}

impl AnnotatedSentence {
    /// Builds a sentence and checks span bounds and same-type overlap.
    pub fn new(
        sent_id: impl Into<String>,
        tokens: Vec<Token>,
        mentions: Vec<TriggerMention>,
    ) -> Result<Self> {
        let sentence = Self {
            sent_id: sent_id.into(),
            tokens,
            mentions,
        };
        sentence.validate()?;
        Ok(sentence)
    }

    /// Convenience constructor from parallel word and tag slices.
    pub fn from_words(
        sent_id: impl Into<String>,
        words: &[&str],
        tags: &[&str],
        mentions: Vec<TriggerMention>,
    ) -> Result<Self> {
        let sent_id = sent_id.into();
        if words.len() != tags.len() {
            return Err(Error::Sentence {
                sent_id,
                message: "token and POS lists differ in length".into(),
            });
        }
        let tokens = words
            .iter()
            .zip(tags)
            .map(|(w, p)| Token {
                surface: w.to_string(),
                pos: p.to_string(),
            })
            .collect();
        Self::new(sent_id, tokens, mentions)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Sentence {
            sent_id: self.sent_id.clone(),
            message,
        };
        if self.sent_id.is_empty() {
            return Err(fail("empty sent_id".into()));
        }
        if self.tokens.is_empty() {
            return Err(fail("sentence has no tokens".into()));
        }
        if let Some(i) = self.tokens.iter().position(|t| t.surface.is_empty()) {
            return Err(fail(format!("token {i} has an empty surface")));
        }
        for m in &self.mentions {
            if m.start >= m.end || m.end > self.tokens.len() {
                return Err(fail(format!(
                    "mention {} [{}, {}) is out of bounds for {} tokens",
                    m.type_id,
                    m.start,
                    m.end,
                    self.tokens.len()
                )));
            }
        }
        for (i, a) in self.mentions.iter().enumerate() {
            for b in &self.mentions[i + 1..] {
                if a.type_id == b.type_id && a.overlaps(b) {
                    return Err(fail(format!(
                        "overlapping mentions of type {}: [{}, {}) and [{}, {})",
                        a.type_id, a.start, a.end, b.start, b.end
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn has_type(&self, type_id: &str) -> bool {
        self.mentions.iter().any(|m| m.type_id == type_id)
    }

    /// Binary label per token: 1 inside a mention of `type_id`, else 0.
    pub fn labels_for_type(&self, type_id: &str) -> Vec<u8> {
        let mut labels = vec![0u8; self.tokens.len()];
        for m in self.mentions.iter().filter(|m| m.type_id == type_id) {
            for l in &mut labels[m.start..m.end] {
                *l = 1;
            }
        }
        labels
    }
}

/// Free-function form of [`AnnotatedSentence::labels_for_type`].
pub fn labels_for_type(sentence: &AnnotatedSentence, type_id: &str) -> Vec<u8> {
    sentence.labels_for_type(type_id)
}

/// Gold labels of one sentence for an ordered list of event types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    pub type_ids: Vec<String>,
    /// `rows[t][i]` is the label of token `i` for `type_ids[t]`.
    pub rows: Vec<Vec<u8>>,
}

impl LabelMatrix {
    pub fn for_sentence(sentence: &AnnotatedSentence, type_ids: &[String]) -> Self {
        Self {
            type_ids: type_ids.to_vec(),
            rows: type_ids
                .iter()
                .map(|t| sentence.labels_for_type(t))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<AnnotatedSentence>,
    pub tagset: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    version: u32,
    tagset: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceRecord {
    version: u32,
    sent_id: String,
    tokens: Vec<String>,
    pos: Vec<String>,
    #[serde(default)]
    mentions: Vec<TriggerMention>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header(HeaderRecord),
    Sentence(SentenceRecord),
}

impl Corpus {
    /// Builds a corpus, mapping out-of-tagset POS tags to [`UNK_TAG`].
    pub fn new(sentences: Vec<AnnotatedSentence>, tagset: Vec<String>) -> Result<Self> {
        let mut corpus = Self { sentences, tagset };
        corpus.normalize_tags();
        corpus.check_unique_ids()?;
        for s in &corpus.sentences {
            s.validate()?;
        }
        Ok(corpus)
    }

    pub fn with_penn_tagset(sentences: Vec<AnnotatedSentence>) -> Result<Self> {
        Self::new(sentences, penn_tagset())
    }

    fn normalize_tags(&mut self) {
        let known: HashSet<&str> = self.tagset.iter().map(String::as_str).collect();
        for s in &mut self.sentences {
            for t in &mut s.tokens {
                if !known.contains(t.pos.as_str()) {
                    t.pos = UNK_TAG.to_string();
                }
            }
        }
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sentences {
            if !seen.insert(s.sent_id.as_str()) {
                return Err(Error::Sentence {
                    sent_id: s.sent_id.clone(),
                    message: "duplicate sent_id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut tagset: Option<Vec<String>> = None;
        let mut records: Vec<(usize, SentenceRecord)> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io("<corpus>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: line_no,
                message: e.to_string(),
            })?;
            match parsed {
                Line::Header(h) => {
                    if h.version != CORPUS_FORMAT_VERSION {
                        return Err(Error::Record {
                            line: line_no,
                            message: format!("unsupported version {}", h.version),
                        });
                    }
                    if tagset.is_some() || !records.is_empty() {
                        return Err(Error::Record {
                            line: line_no,
                            message: "tagset header must be the first record".into(),
                        });
                    }
                    tagset = Some(h.tagset);
                }
                Line::Sentence(rec) => {
                    if rec.version != CORPUS_FORMAT_VERSION {
                        return Err(Error::Record {
                            line: line_no,
                            message: format!("unsupported version {}", rec.version),
                        });
                    }
                    if rec.tokens.len() != rec.pos.len() {
                        return Err(Error::Record {
                            line: line_no,
                            message: format!(
                                "sentence `{}` has {} tokens but {} POS tags",
                                rec.sent_id,
                                rec.tokens.len(),
                                rec.pos.len()
                            ),
                        });
                    }
                    records.push((line_no, rec));
                }
            }
        }
        let mut sentences = Vec::with_capacity(records.len());
        for (_, rec) in records {
            let tokens = rec
                .tokens
                .into_iter()
                .zip(rec.pos)
                .map(|(surface, pos)| Token { surface, pos })
                .collect();
            sentences.push(AnnotatedSentence::new(rec.sent_id, tokens, rec.mentions)?);
        }
        Self::new(sentences, tagset.unwrap_or_else(penn_tagset))
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = HeaderRecord {
            version: CORPUS_FORMAT_VERSION,
            tagset: self.tagset.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for s in &self.sentences {
            let rec = SentenceRecord {
                version: CORPUS_FORMAT_VERSION,
                sent_id: s.sent_id.clone(),
                tokens: s.tokens.iter().map(|t| t.surface.clone()).collect(),
                pos: s.tokens.iter().map(|t| t.pos.clone()).collect(),
                mentions: s.mentions.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, sent_id: &str) -> Option<&AnnotatedSentence> {
        self.sentences.iter().find(|s| s.sent_id == sent_id)
    }

    /// Mention count per event type.
    pub fn mention_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for m in self.sentences.iter().flat_map(|s| &s.mentions) {
            *counts.entry(m.type_id.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn mention_total(&self) -> usize {
        self.sentences.iter().map(|s| s.mentions.len()).sum()
    }

    /// Fails if any mention uses a type the ontology does not define.
    pub fn check_types(&self, ontology: &EventOntology) -> Result<()> {
        for s in &self.sentences {
            if let Some(m) = s.mentions.iter().find(|m| !ontology.contains(&m.type_id)) {
                return Err(Error::Sentence {
                    sent_id: s.sent_id.clone(),
                    message: format!("mention type `{}` is not in the ontology", m.type_id),
                });
            }
        }
        Ok(())
    }

    /// Tagset extended with [`UNK_TAG`]; this is the POS one-hot vocabulary.
    pub fn pos_vocabulary(&self) -> Vec<String> {
        let mut vocab = self.tagset.clone();
        if !vocab.iter().any(|t| t == UNK_TAG) {
            vocab.push(UNK_TAG.to_string());
        }
        vocab
    }

    /// Sub-corpus of the given ids, in the order given.
    pub fn subset(&self, ids: &[String]) -> Result<Corpus> {
        let index: BTreeMap<&str, &AnnotatedSentence> = self
            .sentences
            .iter()
            .map(|s| (s.sent_id.as_str(), s))
            .collect();
        let sentences = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Sentence {
                        sent_id: id.clone(),
                        message: "not present in corpus".into(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            sentences,
            tagset: self.tagset.clone(),
        })
    }
}

pub fn penn_tagset() -> Vec<String> {
    PENN_TAGSET.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(mentions: Vec<TriggerMention>) -> AnnotatedSentence {
        AnnotatedSentence::from_words(
            "s",
            &["a", "b", "c", "d", "e"],
            &["DT", "NN", "VBD", "NN", "."],
            mentions,
        )
        .unwrap()
    }

    #[test]
    fn labels_without_mentions_are_zero() {
        assert_eq!(sentence(vec![]).labels_for_type("T"), vec![0; 5]);
    }

    #[test]
    fn labels_cover_span() {
        let s = sentence(vec![TriggerMention::new("T", 2, 4)]);
        assert_eq!(s.labels_for_type("T"), vec![0, 0, 1, 1, 0]);
        assert_eq!(s.labels_for_type("U"), vec![0; 5]);
    }

    #[test]
    fn labels_union_of_spans() {
        let s = sentence(vec![
            TriggerMention::new("T", 0, 1),
            TriggerMention::new("T", 3, 4),
        ]);
        // union-of-spans oracle
        let mut expect = vec![0u8; 5];
        for (a, b) in [(0, 1), (3, 4)] {
            (a..b).for_each(|i| expect[i] = 1);
        }
        assert_eq!(s.labels_for_type("T"), expect);
        assert_eq!(expect, vec![1, 0, 0, 1, 0]);
    }

    #[test]
    fn same_type_overlap_rejected_cross_type_allowed() {
        let err = AnnotatedSentence::from_words(
            "x",
            &["a", "b"],
            &["NN", "NN"],
            vec![
                TriggerMention::new("T", 0, 2),
                TriggerMention::new("T", 1, 2),
            ],
        );
        assert!(err.is_err());
        let ok = AnnotatedSentence::from_words(
            "x",
            &["a", "b"],
            &["NN", "NN"],
            vec![
                TriggerMention::new("T", 0, 2),
                TriggerMention::new("U", 1, 2),
            ],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn loads_three_sentences_and_maps_unknown_tags() {
        let text = r#"{"version":1,"sent_id":"a","tokens":["he","invaded"],"pos":["PRP","VBD"],"mentions":[{"type_id":"Conflict:Attack","start":1,"end":2}]}
{"version":1,"sent_id":"b","tokens":["ok"],"pos":["ZZZ"]}
{"version":1,"sent_id":"c","tokens":["x","y"],"pos":["NN","NN"],"mentions":[]}
"#;
        let corpus = Corpus::read(text.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.sentences[1].tokens[0].pos, UNK_TAG);
        assert_eq!(corpus.mention_counts()["Conflict:Attack"], 1);
    }

    #[test]
    fn out_of_bounds_names_sentence() {
        let text = r#"{"version":1,"sent_id":"bad-one","tokens":["a","b"],"pos":["NN","NN"],"mentions":[{"type_id":"T","start":1,"end":3}]}"#;
        let err = Corpus::read(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("bad-one"), "{err}");
    }

    #[test]
    fn malformed_record_reports_line() {
        let text =
            "{\"version\":1,\"sent_id\":\"a\",\"tokens\":[\"a\"],\"pos\":[\"NN\"]}\n{not json}\n";
        match Corpus::read(text.as_bytes()).unwrap_err() {
            Error::Record { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_version_rejected() {
        let text = r#"{"sent_id":"a","tokens":["a"],"pos":["NN"]}"#;
        assert!(Corpus::read(text.as_bytes()).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"version":1,"sent_id":"a","tokens":["a"],"pos":["NN"]}"#;
        let text = format!("{line}\n{line}\n");
        assert!(Corpus::read(text.as_bytes()).is_err());
    }
}
