//! Span decoding, exact-match scoring and majority-vote ensembling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, TriggerMention};
use crate::error::{Error, Result};
use crate::model::PredictionMatrix;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const PREDICTION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMention {
    pub mention: TriggerMention,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentencePredictions {
    pub sent_id: String,
    /// Sorted by `(type_id, start, end)`.
    pub mentions: Vec<ScoredMention>,
}

/// Predicted mentions for a fixed universe of sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// Prompt form and checkpoint that produced the predictions.
    pub provenance: String,
    pub sentences: Vec<SentencePredictions>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    version: u32,
    provenance: String,
    sentences: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MentionRecord {
    sent_id: String,
    type_id: String,
    start: usize,
    end: usize,
    confidence: f64,
    provenance: String,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie strictly between 0 and 1, got {threshold}"
        )));
    }
    Ok(())
}

/// Maximal runs of tokens with probability at least `threshold`, as
/// half-open `(start, end)` pairs.
pub fn threshold_runs(probs: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut open = None;
    for (i, &p) in probs.iter().enumerate() {
        match (p >= threshold, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, probs.len()));
    }
    runs
}

fn decode_matrix(matrix: &PredictionMatrix, threshold: f64) -> SentencePredictions {
    let mut mentions = Vec::new();
    for (type_id, probs) in matrix.type_ids.iter().zip(&matrix.probs) {
        for (start, end) in threshold_runs(probs, threshold) {
            let confidence = probs[start..end].iter().sum::<f64>() / (end - start) as f64;
            mentions.push(ScoredMention {
                mention: TriggerMention::new(type_id.clone(), start, end),
                confidence,
            });
        }
    }
    mentions.sort_by(|a, b| a.mention.cmp(&b.mention));
    SentencePredictions {
        sent_id: matrix.sent_id.clone(),
        mentions,
    }
}

/// Turns per-token probabilities into typed mentions; the confidence of a
/// mention is its mean positive probability.
pub fn decode_spans(
    matrices: &[PredictionMatrix],
    threshold: f64,
    provenance: impl Into<String>,
) -> Result<PredictionSet> {
    check_threshold(threshold)?;
    let set = PredictionSet {
        provenance: provenance.into(),
        sentences: matrices
            .iter()
            .map(|m| decode_matrix(m, threshold))
            .collect(),
    };
    set.check_unique_ids()?;
    Ok(set)
}

impl PredictionSet {
    pub fn empty(
        provenance: impl Into<String>,
        sent_ids: impl IntoIterator<Item = String>,
    ) -> Self {
        Self {
            provenance: provenance.into(),
            sentences: sent_ids
                .into_iter()
                .map(|sent_id| SentencePredictions {
                    sent_id,
                    mentions: Vec::new(),
                })
                .collect(),
        }
    }

    /// Gold mentions as a prediction set with confidence 1.
    pub fn from_gold<'a>(
        sentences: impl IntoIterator<Item = &'a AnnotatedSentence>,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            provenance: provenance.into(),
            sentences: sentences
                .into_iter()
                .map(|s| {
                    let mut mentions: Vec<ScoredMention> = s
                        .mentions
                        .iter()
                        .map(|m| ScoredMention {
                            mention: m.clone(),
                            confidence: 1.0,
                        })
                        .collect();
                    mentions.sort_by(|a, b| a.mention.cmp(&b.mention));
                    SentencePredictions {
                        sent_id: s.sent_id.clone(),
                        mentions,
                    }
                })
                .collect(),
        }
    }

    pub fn sent_ids(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.sent_id.as_str())
    }

    pub fn universe(&self) -> BTreeSet<&str> {
        self.sent_ids().collect()
    }

    pub fn mention_count(&self) -> usize {
        self.sentences.iter().map(|s| s.mentions.len()).sum()
    }

    /// Every predicted `(sent_id, mention)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ScoredMention)> {
        self.sentences
            .iter()
            .flat_map(|s| s.mentions.iter().map(move |m| (s.sent_id.as_str(), m)))
    }

    /// Per-token 0/1 labels implied by the predicted spans of one type.
    pub fn labels_for_type(&self, sent_id: &str, type_id: &str, len: usize) -> Option<Vec<u8>> {
        let s = self.sentences.iter().find(|s| s.sent_id == sent_id)?;
        let mut labels = vec![0u8; len];
        for m in s.mentions.iter().filter(|m| m.mention.type_id == type_id) {
            for l in &mut labels[m.mention.start..m.mention.end.min(len)] {
                *l = 1;
            }
        }
        Some(labels)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.sent_ids() {
            if !seen.insert(id) {
                return Err(Error::Validation(format!(
                    "sentence `{id}` appears twice in a prediction set"
                )));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = HeaderRecord {
            version: PREDICTION_FORMAT_VERSION,
            provenance: self.provenance.clone(),
            sentences: self.sent_ids().map(str::to_string).collect(),
        };
        let io = |e| Error::io("<prediction stream>", e);
        writeln!(
            out,
            "{}",
            serde_json::to_string(&header).expect("header serializes")
        )
        .map_err(io)?;
        for (sent_id, m) in self.iter() {
            let rec = MentionRecord {
                sent_id: sent_id.to_string(),
                type_id: m.mention.type_id.clone(),
                start: m.mention.start,
                end: m.mention.end,
                confidence: m.confidence,
                provenance: self.provenance.clone(),
            };
            writeln!(
                out,
                "{}",
                serde_json::to_string(&rec).expect("record serializes")
            )
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header: HeaderRecord = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("<prediction stream>", e))?;
                serde_json::from_str(&line).map_err(|e| Error::Record {
                    line: 1,
                    message: format!("bad prediction header: {e}"),
                })?
            }
            None => {
                return Err(Error::Record {
                    line: 1,
                    message: "missing prediction header".into(),
                })
            }
        };
        if header.version != PREDICTION_FORMAT_VERSION {
            return Err(Error::Record {
                line: 1,
                message: format!("unsupported prediction format version {}", header.version),
            });
        }
        let mut set = PredictionSet::empty(header.provenance, header.sentences);
        set.check_unique_ids()?;
        let index: BTreeMap<String, usize> = set
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sent_id.clone(), i))
            .collect();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<prediction stream>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Record {
                line: i + 1,
                message,
            };
            let rec: MentionRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let slot = *index
                .get(&rec.sent_id)
                .ok_or_else(|| bad(format!("sentence `{}` is not in the header", rec.sent_id)))?;
            if rec.start >= rec.end {
                return Err(bad(format!("empty span [{}, {})", rec.start, rec.end)));
            }
            set.sentences[slot].mentions.push(ScoredMention {
                mention: TriggerMention::new(rec.type_id, rec.start, rec.end),
                confidence: rec.confidence,
            });
        }
        for s in &mut set.sentences {
            s.mentions.sort_by(|a, b| a.mention.cmp(&b.mention));
            for pair in s.mentions.windows(2) {
                let (a, b) = (&pair[0].mention, &pair[1].mention);
                if a.type_id == b.type_id && b.start < a.end {
                    return Err(Error::Validation(format!(
                        "sentence `{}`: overlapping `{}` predictions",
                        s.sent_id, a.type_id
                    )));
                }
            }
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl Scores {
    pub fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            gold,
            predicted,
            matched,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub per_type: BTreeMap<String, Scores>,
}

impl EvalReport {
    pub fn to_json(&self, per_type: bool) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if !per_type {
            value.as_object_mut().unwrap().remove("per_type");
        }
        serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
    }

    /// `type_id\tP\tR\tF1\tgold\tpredicted\tmatched` rows.
    pub fn per_type_tsv(&self) -> String {
        let mut out = String::from("type_id\tprecision\trecall\tf1\tgold\tpredicted\tmatched\n");
        for (t, s) in &self.per_type {
            out.push_str(&format!(
                "{t}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
                s.precision, s.recall, s.f1, s.gold, s.predicted, s.matched
            ));
        }
        out
    }
}

/// Exact `(type, start, end)` matching over all types.
pub fn score(pred: &PredictionSet, gold: &[AnnotatedSentence]) -> Result<EvalReport> {
    score_types(pred, gold, None)
}

/// As [`score`], counting only mentions of `types` when given.
pub fn score_types(
    pred: &PredictionSet,
    gold: &[AnnotatedSentence],
    types: Option<&BTreeSet<String>>,
) -> Result<EvalReport> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|s| s.sent_id.as_str()).collect();
    if gold_ids.len() != gold.len() {
        return Err(Error::Validation("duplicate sentence ids in gold".into()));
    }
    pred.check_unique_ids()?;
    if gold_ids != pred.universe() {
        let missing = gold_ids.difference(&pred.universe()).count();
        let extra = pred.universe().difference(&gold_ids).count();
        return Err(Error::Validation(format!(
            "prediction and gold sentence sets differ ({missing} gold-only, {extra} prediction-only)"
        )));
    }
    let keep = |t: &str| types.is_none_or(|set| set.contains(t));
    let gold_by_id: BTreeMap<&str, &AnnotatedSentence> =
        gold.iter().map(|s| (s.sent_id.as_str(), s)).collect();
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for s in &pred.sentences {
        let g = gold_by_id[s.sent_id.as_str()];
        let gold_set: BTreeSet<&TriggerMention> =
            g.mentions.iter().filter(|m| keep(&m.type_id)).collect();
        for m in &gold_set {
            counts.entry(m.type_id.clone()).or_default().0 += 1;
        }
        let pred_set: BTreeSet<&TriggerMention> = s
            .mentions
            .iter()
            .map(|m| &m.mention)
            .filter(|m| keep(&m.type_id))
            .collect();
        for m in pred_set {
            let c = counts.entry(m.type_id.clone()).or_default();
            c.1 += 1;
            if gold_set.contains(m) {
                c.2 += 1;
            }
        }
    }
    let (mut g, mut p, mut m) = (0, 0, 0);
    let per_type = counts
        .into_iter()
        .map(|(t, (tg, tp, tm))| {
            g += tg;
            p += tp;
            m += tm;
            (t, Scores::from_counts(tg, tp, tm))
        })
        .collect();
    Ok(EvalReport {
        overall: Scores::from_counts(g, p, m),
        per_type,
    })
}

/// Keeps a mention when strictly more than half of the systems predict it
/// exactly; its confidence is the supporting fraction.
pub fn majority_vote(systems: &[PredictionSet]) -> Result<PredictionSet> {
    if systems.len() < 2 {
        return Err(Error::Validation(format!(
            "majority voting needs at least two systems, got {}",
            systems.len()
        )));
    }
    let universe = systems[0].universe();
    for (i, s) in systems.iter().enumerate() {
        s.check_unique_ids()?;
        if s.universe() != universe {
            return Err(Error::Validation(format!(
                "system {} (`{}`) covers a different sentence set than system 0",
                i, s.provenance
            )));
        }
    }
    let n = systems.len();
    let mut votes: BTreeMap<(&str, &TriggerMention), usize> = BTreeMap::new();
    for sys in systems {
        let unique: BTreeSet<(&str, &TriggerMention)> =
            sys.iter().map(|(id, m)| (id, &m.mention)).collect();
        for key in unique {
            *votes.entry(key).or_default() += 1;
        }
    }
    let provenance = format!(
        "vote({})",
        systems
            .iter()
            .map(|s| s.provenance.as_str())
            .collect::<Vec<_>>()
            .join(",")
    );
    let mut out = PredictionSet::empty(provenance, systems[0].sent_ids().map(str::to_string));
    let slot: BTreeMap<String, usize> = out
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sent_id.clone(), i))
        .collect();
    for ((id, mention), count) in votes {
        if 2 * count > n {
            out.sentences[slot[id]].mentions.push(ScoredMention {
                mention: mention.clone(),
                confidence: count as f64 / n as f64,
            });
        }
    }
    Ok(out)
}
