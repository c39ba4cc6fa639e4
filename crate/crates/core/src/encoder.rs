//! Joint encoding of a prompt and a sentence.
//!
//! The pair is laid out as `[CLS] prompt [SEP] sentence [SEP]`, split into
//! word pieces, contextualized, and pooled back to one vector per word by
//! averaging the word's pieces. The structural `[CLS]`/`[SEP]` positions are
//! dropped from both outputs; a literal `[SEP]` inside the prompt text is a
//! prompt token like any other and maps to the separator symbol.
//!
//! [`TinyEncoder`] is the reference implementation: a seeded embedding table
//! with learned position and segment embeddings followed by one single-head
//! self-attention block (residual + layer norm, then a tanh feed-forward
//! layer, residual + layer norm). Other encoders plug in through
//! [`ContextEncoder`].

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};
use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::ontology::SEGMENT_SEPARATOR;
use crate::prompt::PromptText;

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const UNK_TOKEN: &str = "[UNK]";
const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

/// Segment ids of the prompt side and the sentence side.
pub const PROMPT_SEGMENT: usize = 0;
pub const SENTENCE_SEGMENT: usize = 1;

/// Word-piece vocabulary with greedy longest-match-first segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Special symbols, then every distinct lower-cased word, then every
    /// character as a word-initial and a continuation piece so that any word
    /// over the seen alphabet can be segmented.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut whole = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for w in words {
            if w == SEGMENT_SEPARATOR {
                continue;
            }
            let w = w.to_lowercase();
            chars.extend(w.chars());
            whole.insert(w);
        }
        let mut tokens: Vec<String> = [CLS_TOKEN, SEP_TOKEN, UNK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for c in &chars {
            if !whole.contains(&c.to_string()) {
                tokens.push(c.to_string());
            }
        }
        tokens.extend(whole);
        tokens.extend(chars.iter().map(|c| format!("{CONTINUATION}{c}")));
        Self::from_tokens(tokens).expect("built vocabulary is well-formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("vocabulary repeats `{t}`")));
            }
        }
        for special in [CLS_TOKEN, SEP_TOKEN, UNK_TOKEN] {
            if !index.contains_key(special) {
                return Err(Error::Validation(format!("vocabulary lacks `{special}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn special(&self, token: &str) -> usize {
        self.index[token]
    }

    /// Piece ids of one word; never empty.
    pub fn subtokenize(&self, word: &str) -> Vec<usize> {
        if word == SEGMENT_SEPARATOR {
            return vec![self.special(SEP_TOKEN)];
        }
        let word = word.to_lowercase();
        if let Some(id) = self.id(&word) {
            return vec![id];
        }
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return vec![self.special(UNK_TOKEN)];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let body: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    body
                } else {
                    format!("{CONTINUATION}{body}")
                };
                if let Some(id) = self.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.special(UNK_TOKEN)],
            }
        }
        pieces
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_sequence_length: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            ffn_dim: 64,
            max_sequence_length: 128,
            seed: 13,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 2 {
            return Err(Error::Config("hidden_dim must be at least 2".into()));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if self.max_sequence_length < 4 {
            return Err(Error::Config(
                "max_sequence_length must be at least 4".into(),
            ));
        }
        Ok(())
    }
}

/// Word-level contextual vectors of a prompt (`T`) and a sentence (`W`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub prompt: Mat,
    pub sentence: Mat,
}

/// Contract shared by every encoder implementation.
pub trait ContextEncoder {
    fn hidden_dim(&self) -> usize;

    fn encode_pair(
        &self,
        params: &ParamStore,
        prompt: &PromptText,
        sentence: &AnnotatedSentence,
    ) -> Result<EncodedPair>;

    /// Pre-contextual embeddings of the sentence's word pieces.
    fn embed_tokens(&self, params: &ParamStore, sentence: &AnnotatedSentence) -> Result<Mat>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EncoderParams {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub seg_emb: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

const PARAM_NAMES: [&str; 15] = [
    "encoder.tok_emb",
    "encoder.pos_emb",
    "encoder.seg_emb",
    "encoder.wq",
    "encoder.wk",
    "encoder.wv",
    "encoder.wo",
    "encoder.ln1_gamma",
    "encoder.ln1_beta",
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "encoder.ln2_gamma",
    "encoder.ln2_beta",
];

/// Layout of one encoded sequence: piece ids, segments, and the pooling
/// matrices that average pieces back into words.
#[derive(Debug, Clone)]
pub struct SequenceLayout {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// `words × sequence` averaging matrix for the prompt (may have 0 rows).
    pub prompt_pool: Mat,
    /// `words × sequence` averaging matrix for the sentence.
    pub sentence_pool: Mat,
}

fn pool_matrix(spans: &[(usize, usize)], seq_len: usize) -> Mat {
    let mut pool = Mat::zeros((spans.len(), seq_len));
    for (row, &(start, end)) in spans.iter().enumerate() {
        let weight = 1.0 / (end - start) as f64;
        for col in start..end {
            pool[[row, col]] = weight;
        }
    }
    pool
}

#[derive(Debug, Clone)]
pub struct TinyEncoder {
    config: EncoderConfig,
    vocab: Vocabulary,
    pub(crate) params: EncoderParams,
}

impl TinyEncoder {
    /// Registers freshly initialized parameters in `store`.
    pub fn init(config: EncoderConfig, vocab: Vocabulary, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let shapes = [
            (vocab.len(), d),
            (config.max_sequence_length, d),
            (2, d),
            (d, d),
            (d, d),
            (d, d),
            (d, d),
            (1, d),
            (1, d),
            (d, f),
            (1, f),
            (f, d),
            (1, d),
            (1, d),
            (1, d),
        ];
        for (name, shape) in PARAM_NAMES.iter().zip(shapes) {
            let value = if name.ends_with("_gamma") {
                Mat::ones(shape)
            } else if name.ends_with("_beta") || name.ends_with(".b1") || name.ends_with(".b2") {
                Mat::zeros(shape)
            } else if name.ends_with("_emb") {
                uniform(&mut rng, shape, 0.5)
            } else {
                let bound = (6.0 / (shape.0 + shape.1) as f64).sqrt();
                uniform(&mut rng, shape, bound)
            };
            store.add(*name, value);
        }
        Self::attach(config, vocab, store)
    }

    /// Binds to parameters already present in `store` (e.g. after loading).
    pub fn attach(config: EncoderConfig, vocab: Vocabulary, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let lookup = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if store.get(id).dim() != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    store.get(id).dim()
                )));
            }
            Ok(id)
        };
        let f = config.ffn_dim;
        let params = EncoderParams {
            tok_emb: lookup(PARAM_NAMES[0], (vocab.len(), d))?,
            pos_emb: lookup(PARAM_NAMES[1], (config.max_sequence_length, d))?,
            seg_emb: lookup(PARAM_NAMES[2], (2, d))?,
            wq: lookup(PARAM_NAMES[3], (d, d))?,
            wk: lookup(PARAM_NAMES[4], (d, d))?,
            wv: lookup(PARAM_NAMES[5], (d, d))?,
            wo: lookup(PARAM_NAMES[6], (d, d))?,
            ln1_gamma: lookup(PARAM_NAMES[7], (1, d))?,
            ln1_beta: lookup(PARAM_NAMES[8], (1, d))?,
            w1: lookup(PARAM_NAMES[9], (d, f))?,
            b1: lookup(PARAM_NAMES[10], (1, f))?,
            w2: lookup(PARAM_NAMES[11], (f, d))?,
            b2: lookup(PARAM_NAMES[12], (1, d))?,
            ln2_gamma: lookup(PARAM_NAMES[13], (1, d))?,
            ln2_beta: lookup(PARAM_NAMES[14], (1, d))?,
        };
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn param_names() -> &'static [&'static str] {
        &PARAM_NAMES
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn check_length(&self, length: usize) -> Result<()> {
        let max = self.config.max_sequence_length;
        if length > max {
            return Err(Error::SequenceTooLong {
                length,
                max,
                overflow: length - max,
            });
        }
        Ok(())
    }

    fn pieces<'a>(
        &self,
        words: impl Iterator<Item = &'a str>,
        ids: &mut Vec<usize>,
    ) -> Vec<(usize, usize)> {
        words
            .map(|w| {
                let start = ids.len();
                ids.extend(self.vocab.subtokenize(w));
                (start, ids.len())
            })
            .collect()
    }

    /// `[CLS] prompt [SEP] sentence [SEP]`.
    pub fn layout_pair(
        &self,
        prompt: &PromptText,
        sentence: &AnnotatedSentence,
    ) -> Result<SequenceLayout> {
        let cls = self.vocab.special(CLS_TOKEN);
        let sep = self.vocab.special(SEP_TOKEN);
        let mut ids = vec![cls];
        let prompt_spans = self.pieces(prompt.tokens.iter().map(String::as_str), &mut ids);
        ids.push(sep);
        let prompt_end = ids.len();
        let sentence_spans = self.pieces(sentence.words(), &mut ids);
        ids.push(sep);
        self.check_length(ids.len())?;
        let segments = (0..ids.len())
            .map(|i| {
                if i < prompt_end {
                    PROMPT_SEGMENT
                } else {
                    SENTENCE_SEGMENT
                }
            })
            .collect();
        let n = ids.len();
        Ok(SequenceLayout {
            prompt_pool: pool_matrix(&prompt_spans, n),
            sentence_pool: pool_matrix(&sentence_spans, n),
            ids,
            segments,
        })
    }

    /// Sentence pieces only, optionally shifted right by `prefix` slots that
    /// the caller fills with its own embeddings.
    pub fn layout_sentence(
        &self,
        sentence: &AnnotatedSentence,
        prefix: usize,
    ) -> Result<SequenceLayout> {
        let mut ids = Vec::new();
        let spans = self.pieces(sentence.words(), &mut ids);
        let n = prefix + ids.len();
        self.check_length(n)?;
        let shifted: Vec<(usize, usize)> = spans
            .iter()
            .map(|&(a, b)| (a + prefix, b + prefix))
            .collect();
        let mut segments = vec![PROMPT_SEGMENT; prefix];
        segments.extend(std::iter::repeat_n(SENTENCE_SEGMENT, ids.len()));
        Ok(SequenceLayout {
            prompt_pool: Mat::zeros((0, n)),
            sentence_pool: pool_matrix(&shifted, n),
            ids,
            segments,
        })
    }

    /// Runs the attention block over `embeddings` (one row per position).
    pub fn contextualize(&self, tape: &mut Tape, embeddings: Var, segments: &[usize]) -> Var {
        let p = &self.params;
        let n = segments.len();
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather(p.pos_emb, &positions);
        let seg = tape.gather(p.seg_emb, segments);
        let x = tape.add(embeddings, pos);
        let x = tape.add(x, seg);

        let wq = tape.param(p.wq);
        let wk = tape.param(p.wk);
        let wv = tape.param(p.wv);
        let wo = tape.param(p.wo);
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        let scores = tape.matmul_t(q, k);
        let scores = tape.scale(scores, 1.0 / (self.config.hidden_dim as f64).sqrt());
        let weights = tape.softmax(scores);
        let ctx = tape.matmul(weights, v);
        let attn = tape.matmul(ctx, wo);
        let h = tape.add(x, attn);
        let g1 = tape.param(p.ln1_gamma);
        let b1n = tape.param(p.ln1_beta);
        let h = tape.layer_norm(h, g1, b1n);

        let w1 = tape.param(p.w1);
        let b1 = tape.param(p.b1);
        let w2 = tape.param(p.w2);
        let b2 = tape.param(p.b2);
        let f = tape.matmul(h, w1);
        let f = tape.add_row(f, b1);
        let f = tape.tanh(f);
        let f = tape.matmul(f, w2);
        let f = tape.add_row(f, b2);
        let out = tape.add(h, f);
        let g2 = tape.param(p.ln2_gamma);
        let b2n = tape.param(p.ln2_beta);
        tape.layer_norm(out, g2, b2n)
    }

    /// Records the pair encoding; returns `(T, W)` at word level.
    pub fn encode_pair_on(
        &self,
        tape: &mut Tape,
        prompt: &PromptText,
        sentence: &AnnotatedSentence,
    ) -> Result<(Var, Var)> {
        let layout = self.layout_pair(prompt, sentence)?;
        let emb = tape.gather(self.params.tok_emb, &layout.ids);
        let hidden = self.contextualize(tape, emb, &layout.segments);
        let t = tape.left_mul(layout.prompt_pool, hidden);
        let w = tape.left_mul(layout.sentence_pool, hidden);
        Ok((t, w))
    }

    /// Records `[prefix; sentence pieces]` through the encoder and pools the
    /// sentence words. `prefix` rows must have `hidden_dim` columns.
    pub fn encode_with_prefix_on(
        &self,
        tape: &mut Tape,
        prefix: Option<Var>,
        sentence: &AnnotatedSentence,
    ) -> Result<Var> {
        let prefix_rows = prefix.map_or(0, |p| tape.value(p).nrows());
        let layout = self.layout_sentence(sentence, prefix_rows)?;
        let emb = tape.gather(self.params.tok_emb, &layout.ids);
        let emb = match prefix {
            Some(p) => tape.concat_rows(&[p, emb]),
            None => emb,
        };
        let hidden = self.contextualize(tape, emb, &layout.segments);
        Ok(tape.left_mul(layout.sentence_pool, hidden))
    }

    /// Contextual vectors for arbitrary embedding rows (no pooling).
    pub fn encode_embeddings(
        &self,
        params: &ParamStore,
        embeddings: &Mat,
        segments: &[usize],
    ) -> Result<Mat> {
        self.check_length(embeddings.nrows())?;
        if embeddings.ncols() != self.config.hidden_dim || segments.len() != embeddings.nrows() {
            return Err(Error::Shape(format!(
                "embeddings {:?} with {} segments for hidden_dim {}",
                embeddings.dim(),
                segments.len(),
                self.config.hidden_dim
            )));
        }
        let mut tape = Tape::new(params);
        let emb = tape.input(embeddings.clone());
        let out = self.contextualize(&mut tape, emb, segments);
        Ok(tape.value(out).clone())
    }
}

impl ContextEncoder for TinyEncoder {
    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn encode_pair(
        &self,
        params: &ParamStore,
        prompt: &PromptText,
        sentence: &AnnotatedSentence,
    ) -> Result<EncodedPair> {
        let mut tape = Tape::new(params);
        let (t, w) = self.encode_pair_on(&mut tape, prompt, sentence)?;
        Ok(EncodedPair {
            prompt: tape.value(t).clone(),
            sentence: tape.value(w).clone(),
        })
    }

    fn embed_tokens(&self, params: &ParamStore, sentence: &AnnotatedSentence) -> Result<Mat> {
        let layout = self.layout_sentence(sentence, 0)?;
        Ok(params
            .get(self.params.tok_emb)
            .select(ndarray::Axis(0), &layout.ids))
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Mat {
    Mat::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}
