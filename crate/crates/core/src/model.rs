//! The detection head: cosine prompt attention, the shared two-way token
//! classifier, and the soft-prefix variant.

use ndarray::{concatenate, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_rows, Mat, ParamId, ParamStore, Tape, Var};
use crate::checkpoint::Container;
use crate::corpus::AnnotatedSentence;
use crate::encoder::{uniform, EncodedPair, EncoderConfig, TinyEncoder, Vocabulary};
use crate::error::{Error, Result};
use crate::prompt::{PromptSet, PromptText};

/// How the cosine scores between sentence and prompt tokens are used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// `α_ij = cos(w_i, T_j)` used directly.
    #[default]
    RawCosine,
    /// Cosines passed through a row-wise normalized exponential.
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `A`: one prompt summary per sentence token (`|W| × d`).
    pub summary: Mat,
    /// `α`: `|W| × |T|` weights.
    pub weights: Mat,
}

fn unit_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        } else {
            row.fill(0.0);
        }
    }
    out
}

pub fn prompt_attention(encoded: &EncodedPair) -> Result<AttentionOutput> {
    prompt_attention_with(encoded, AttentionMode::RawCosine)
}

pub fn prompt_attention_with(
    encoded: &EncodedPair,
    mode: AttentionMode,
) -> Result<AttentionOutput> {
    let (w, t) = (&encoded.sentence, &encoded.prompt);
    if w.nrows() == 0 || t.nrows() == 0 {
        return Err(Error::Shape(
            "prompt attention needs non-empty W and T".into(),
        ));
    }
    if w.ncols() != t.ncols() {
        return Err(Error::Shape(format!(
            "W has width {} but T has width {}",
            w.ncols(),
            t.ncols()
        )));
    }
    let mut weights = unit_rows(w).dot(&unit_rows(t).t());
    if mode == AttentionMode::Normalized {
        weights = softmax_rows(weights.view());
    }
    let summary = weights.dot(t);
    Ok(AttentionOutput { summary, weights })
}

/// One-hot POS rows over `pos_vocab`; tags outside it use the last slot.
pub fn pos_onehots(sentence: &AnnotatedSentence, pos_vocab: &[String]) -> Mat {
    let mut m = Mat::zeros((sentence.len(), pos_vocab.len()));
    for (i, tok) in sentence.tokens.iter().enumerate() {
        let j = pos_vocab
            .iter()
            .position(|p| *p == tok.pos)
            .unwrap_or(pos_vocab.len() - 1);
        m[[i, j]] = 1.0;
    }
    m
}

/// `U_o` together with the POS vocabulary that fixes its input width.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `2 × (2·hidden + |pos_vocab|)`; row 1 scores the trigger class.
    pub weight: Mat,
    pub pos_vocab: Vec<String>,
}

impl ClassifierParams {
    pub fn zeros(hidden_dim: usize, pos_vocab: Vec<String>) -> Self {
        Self {
            weight: Mat::zeros((2, 2 * hidden_dim + pos_vocab.len())),
            pos_vocab,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.ncols()
    }
}

/// Positive-class probability of every sentence token.
pub fn classify_tokens(
    encoded: &EncodedPair,
    attn: &AttentionOutput,
    pos_onehots: &Mat,
    params: &ClassifierParams,
) -> Result<Vec<f64>> {
    let n = encoded.sentence.nrows();
    if attn.summary.nrows() != n || pos_onehots.nrows() != n {
        return Err(Error::Shape("token counts of W, A and P differ".into()));
    }
    let width = encoded.sentence.ncols() + attn.summary.ncols() + pos_onehots.ncols();
    if params.weight.nrows() != 2 || width != params.input_width() {
        return Err(Error::Shape(format!(
            "classifier expects width {} but features have width {width}",
            params.input_width()
        )));
    }
    let features = concatenate(
        Axis(1),
        &[
            encoded.sentence.view(),
            attn.summary.view(),
            pos_onehots.view(),
        ],
    )
    .expect("row counts checked");
    let probs = softmax_rows(features.dot(&params.weight.t()).view());
    Ok(probs.column(1).to_vec())
}

/// Per-type trigger probabilities for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub sent_id: String,
    pub type_ids: Vec<String>,
    /// `probs[t][i]`: probability that token `i` triggers `type_ids[t]`.
    pub probs: Vec<Vec<f64>>,
}

/// Map from a prefix-table row to the prefix vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PrefixMap {
    Identity,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub encoder: EncoderConfig,
    pub attention: AttentionMode,
    pub prefix: PrefixMap,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            attention: AttentionMode::RawCosine,
            prefix: PrefixMap::Mlp { hidden: 32 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SoftIds {
    table: ParamId,
    mlp: Option<[ParamId; 4]>,
}

/// Optional dropout applied to the classifier features during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

pub const CLASSIFIER_PARAM: &str = "head.u_o";
const SOFT_TABLE: &str = "soft.table";
const SOFT_MLP: [&str; 4] = ["soft.mlp.w1", "soft.mlp.b1", "soft.mlp.w2", "soft.mlp.b2"];
pub const DETECTOR_KIND: &str = "detector";
pub const ENCODER_KIND: &str = "tiny-encoder";

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    config: DetectorConfig,
    vocab: Vec<String>,
    pos_vocab: Vec<String>,
    soft_types: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EncoderMeta {
    config: EncoderConfig,
    vocab: Vec<String>,
}

/// Encoder, classifier and soft-prompt parameters in one store.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    store: ParamStore,
    encoder: TinyEncoder,
    pos_vocab: Vec<String>,
    classifier: ParamId,
    soft_types: Vec<String>,
    soft: SoftIds,
}

impl Detector {
    /// Fresh parameters, seeded from the encoder seed.
    pub fn new(
        config: DetectorConfig,
        vocab: Vocabulary,
        pos_vocab: Vec<String>,
        soft_types: Vec<String>,
    ) -> Result<Self> {
        if pos_vocab.is_empty() {
            return Err(Error::Config("POS vocabulary is empty".into()));
        }
        let mut store = ParamStore::new();
        let encoder = TinyEncoder::init(config.encoder, vocab, &mut store)?;
        let d = config.encoder.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.encoder.seed.wrapping_add(1));
        let width = 2 * d + pos_vocab.len();
        let bound = (6.0 / (width + 2) as f64).sqrt();
        store.add(CLASSIFIER_PARAM, uniform(&mut rng, (2, width), bound));
        store.add(SOFT_TABLE, uniform(&mut rng, (soft_types.len(), d), 0.5));
        if let PrefixMap::Mlp { hidden } = config.prefix {
            let b1 = (6.0 / (d + hidden) as f64).sqrt();
            store.add(SOFT_MLP[0], uniform(&mut rng, (d, hidden), b1));
            store.add(SOFT_MLP[1], Mat::zeros((1, hidden)));
            store.add(SOFT_MLP[2], uniform(&mut rng, (hidden, d), b1));
            store.add(SOFT_MLP[3], Mat::zeros((1, d)));
        }
        Self::assemble(config, store, encoder, pos_vocab, soft_types)
    }

    fn assemble(
        config: DetectorConfig,
        store: ParamStore,
        encoder: TinyEncoder,
        pos_vocab: Vec<String>,
        soft_types: Vec<String>,
    ) -> Result<Self> {
        let d = config.encoder.hidden_dim;
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
        let classifier = lookup(CLASSIFIER_PARAM, (2, 2 * d + pos_vocab.len()))?;
        let table = lookup(SOFT_TABLE, (soft_types.len(), d))?;
        let mlp = match config.prefix {
            PrefixMap::Identity => None,
            PrefixMap::Mlp { hidden } => Some([
                lookup(SOFT_MLP[0], (d, hidden))?,
                lookup(SOFT_MLP[1], (1, hidden))?,
                lookup(SOFT_MLP[2], (hidden, d))?,
                lookup(SOFT_MLP[3], (1, d))?,
            ]),
        };
        Ok(Self {
            config,
            store,
            encoder,
            pos_vocab,
            classifier,
            soft_types,
            soft: SoftIds { table, mlp },
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &TinyEncoder {
        &self.encoder
    }

    pub fn pos_vocab(&self) -> &[String] {
        &self.pos_vocab
    }

    pub fn soft_types(&self) -> &[String] {
        &self.soft_types
    }

    pub fn classifier_id(&self) -> ParamId {
        self.classifier
    }

    pub fn soft_table_id(&self) -> ParamId {
        self.soft.table
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        ClassifierParams {
            weight: self.store.get(self.classifier).clone(),
            pos_vocab: self.pos_vocab.clone(),
        }
    }

    /// Records `A = α · T` with `α` from cosine similarity.
    pub fn attention_on(&self, tape: &mut Tape, w: Var, t: Var) -> Var {
        attention_on(tape, w, t, self.config.attention)
    }

    /// The prefix vector `q` for a type on the soft path.
    pub fn prefix_on(&self, tape: &mut Tape, type_id: &str) -> Result<Var> {
        let idx = self
            .soft_types
            .iter()
            .position(|t| t == type_id)
            .ok_or_else(|| Error::UnknownType(type_id.to_string()))?;
        let row = tape.gather(self.soft.table, &[idx]);
        Ok(match self.soft.mlp {
            None => row,
            Some([w1, b1, w2, b2]) => {
                let w1 = tape.param(w1);
                let b1 = tape.param(b1);
                let w2 = tape.param(w2);
                let b2 = tape.param(b2);
                let h = tape.matmul(row, w1);
                let h = tape.add_row(h, b1);
                let h = tape.tanh(h);
                let q = tape.matmul(h, w2);
                tape.add_row(q, b2)
            }
        })
    }

    /// Records the forward pass and returns `|sentence| × 2` logits.
    pub fn forward(
        &self,
        tape: &mut Tape,
        prompt: &PromptText,
        sentence: &AnnotatedSentence,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let n = sentence.len();
        let d = self.config.encoder.hidden_dim;
        let (w, a) = if prompt.is_soft() {
            let q = self.prefix_on(tape, &prompt.type_id)?;
            let w = self
                .encoder
                .encode_with_prefix_on(tape, Some(q), sentence)?;
            // no prompt summary on this path; its block of U_o sees zeros
            let a = tape.input(Mat::zeros((n, d)));
            (w, a)
        } else {
            let (t, w) = self.encoder.encode_pair_on(tape, prompt, sentence)?;
            (w, self.attention_on(tape, w, t))
        };
        let p = tape.input(pos_onehots(sentence, &self.pos_vocab));
        let mut x = tape.concat_cols(&[w, a, p]);
        if let Some(drop) = dropout {
            if drop.rate > 0.0 {
                let keep = 1.0 - drop.rate;
                let mask = Mat::from_shape_fn((n, 2 * d + self.pos_vocab.len()), |(_, j)| {
                    if j >= 2 * d {
                        1.0
                    } else if drop.rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                x = tape.mask(x, mask);
            }
        }
        let u = tape.param(self.classifier);
        Ok(tape.matmul_t(x, u))
    }

    /// Positive-class probability per token for one prompt.
    pub fn predict(&self, prompt: &PromptText, sentence: &AnnotatedSentence) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let logits = self.forward(&mut tape, prompt, sentence, None)?;
        Ok(softmax_rows(tape.value(logits).view()).column(1).to_vec())
    }

    pub fn soft_prompt_forward(
        &self,
        sentence: &AnnotatedSentence,
        type_id: &str,
    ) -> Result<Vec<f64>> {
        let prompt = PromptText {
            form: crate::prompt::PromptForm::Soft,
            type_id: type_id.to_string(),
            tokens: Vec::new(),
        };
        self.predict(&prompt, sentence)
    }

    pub fn predict_sentence(
        &self,
        prompts: &PromptSet,
        sentence: &AnnotatedSentence,
        type_ids: &[String],
    ) -> Result<PredictionMatrix> {
        let probs = type_ids
            .iter()
            .map(|t| self.predict(prompts.get(t)?, sentence))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionMatrix {
            sent_id: sentence.sent_id.clone(),
            type_ids: type_ids.to_vec(),
            probs,
        })
    }

    pub fn to_container(&self) -> Container {
        let meta = DetectorMeta {
            config: self.config,
            vocab: self.encoder.vocab().tokens().to_vec(),
            pos_vocab: self.pos_vocab.clone(),
            soft_types: self.soft_types.clone(),
        };
        Container {
            kind: DETECTOR_KIND.into(),
            meta: serde_json::to_value(meta).expect("meta serializes"),
            tensors: self
                .store
                .iter()
                .map(|(n, m)| (n.to_string(), m.clone()))
                .collect(),
        }
    }

    pub fn from_container(container: Container) -> Result<Self> {
        container.expect_kind(DETECTOR_KIND)?;
        let meta: DetectorMeta = serde_json::from_value(container.meta)
            .map_err(|e| Error::Checkpoint(format!("bad detector metadata: {e}")))?;
        let mut store = ParamStore::new();
        for (name, m) in container.tensors {
            store.add(name, m);
        }
        let vocab = Vocabulary::from_tokens(meta.vocab)?;
        let encoder = TinyEncoder::attach(meta.config.encoder, vocab, &store)?;
        Self::assemble(meta.config, store, encoder, meta.pos_vocab, meta.soft_types)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// Only the encoder part, as a stand-alone checkpoint.
    pub fn encoder_container(&self) -> Container {
        encoder_container(&self.encoder, &self.store)
    }
}

pub fn attention_on(tape: &mut Tape, w: Var, t: Var, mode: AttentionMode) -> Var {
    let wn = tape.row_normalize(w);
    let tn = tape.row_normalize(t);
    let mut alpha = tape.matmul_t(wn, tn);
    if mode == AttentionMode::Normalized {
        alpha = tape.softmax(alpha);
    }
    tape.matmul(alpha, t)
}

pub fn encoder_container(encoder: &TinyEncoder, store: &ParamStore) -> Container {
    let meta = EncoderMeta {
        config: *encoder.config(),
        vocab: encoder.vocab().tokens().to_vec(),
    };
    Container {
        kind: ENCODER_KIND.into(),
        meta: serde_json::to_value(meta).expect("meta serializes"),
        tensors: TinyEncoder::param_names()
            .iter()
            .map(|n| (n.to_string(), store.get(store.id(n).unwrap()).clone()))
            .collect(),
    }
}

pub fn encoder_from_container(container: Container) -> Result<(TinyEncoder, ParamStore)> {
    container.expect_kind(ENCODER_KIND)?;
    let meta: EncoderMeta = serde_json::from_value(container.meta)
        .map_err(|e| Error::Checkpoint(format!("bad encoder metadata: {e}")))?;
    let mut store = ParamStore::new();
    for (name, m) in container.tensors {
        store.add(name, m);
    }
    let encoder = TinyEncoder::attach(meta.config, Vocabulary::from_tokens(meta.vocab)?, &store)?;
    Ok((encoder, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ContextEncoder;
    use crate::prompt::PromptForm;
    use ndarray::array;

    #[test]
    fn identical_unit_vectors_attend_fully() {
        let u = array![[0.6, 0.8]];
        let out = prompt_attention(&EncodedPair {
            prompt: u.clone(),
            sentence: u.clone(),
        })
        .unwrap();
        assert!((out.weights[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((&out.summary - &u).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn orthogonal_token_gets_zero_summary() {
        let out = prompt_attention(&EncodedPair {
            prompt: array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
            sentence: array![[0.0, 0.0, 3.0], [0.0, 0.0, 0.0]],
        })
        .unwrap();
        assert!(out.summary.iter().all(|&v| v == 0.0));
        assert!(out.weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_rejects_mismatch_and_empty() {
        let bad = EncodedPair {
            prompt: Mat::zeros((2, 3)),
            sentence: Mat::zeros((2, 4)),
        };
        assert!(matches!(prompt_attention(&bad), Err(Error::Shape(_))));
        let empty = EncodedPair {
            prompt: Mat::zeros((0, 3)),
            sentence: Mat::zeros((2, 3)),
        };
        assert!(prompt_attention(&empty).is_err());
    }

    #[test]
    fn normalized_mode_rows_sum_to_one() {
        let pair = EncodedPair {
            prompt: array![[1.0, 0.5], [-0.3, 2.0], [0.2, 0.2]],
            sentence: array![[0.4, -1.0], [1.0, 1.0]],
        };
        let out = prompt_attention_with(&pair, AttentionMode::Normalized).unwrap();
        for row in out.weights.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    fn pair() -> (EncodedPair, AttentionOutput, Mat) {
        let pair = EncodedPair {
            prompt: array![[1.0, 0.5], [-0.3, 2.0]],
            sentence: array![[0.4, -1.0], [1.0, 1.0], [0.0, 0.3]],
        };
        let attn = prompt_attention(&pair).unwrap();
        let pos = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        (pair, attn, pos)
    }

    #[test]
    fn zero_classifier_gives_half() {
        let (pair, attn, pos) = pair();
        let params = ClassifierParams::zeros(2, vec!["NN".into(), "UNK".into()]);
        let p = classify_tokens(&pair, &attn, &pos, &params).unwrap();
        assert_eq!(p, vec![0.5; 3]);
    }

    #[test]
    fn saturated_logits_approach_one() {
        let (pair, attn, pos) = pair();
        let mut params = ClassifierParams::zeros(2, vec!["NN".into(), "UNK".into()]);
        // only the POS block is active: logits (−c, +c) with c = 50
        params.weight[[0, 4]] = -50.0;
        params.weight[[0, 5]] = -50.0;
        params.weight[[1, 4]] = 50.0;
        params.weight[[1, 5]] = 50.0;
        for p in classify_tokens(&pair, &attn, &pos, &params).unwrap() {
            assert!((1.0 - p) < 1e-6);
        }
    }

    #[test]
    fn classifier_width_mismatch() {
        let (pair, attn, pos) = pair();
        let params = ClassifierParams::zeros(3, vec!["NN".into()]);
        assert!(matches!(
            classify_tokens(&pair, &attn, &pos, &params),
            Err(Error::Shape(_))
        ));
    }

    fn tiny_detector(prefix: PrefixMap) -> Detector {
        let words = ["he", "invaded", "the", "city", "attack"];
        let config = DetectorConfig {
            encoder: EncoderConfig {
                hidden_dim: 6,
                ffn_dim: 8,
                max_sequence_length: 24,
                seed: 3,
            },
            attention: AttentionMode::RawCosine,
            prefix,
        };
        Detector::new(
            config,
            Vocabulary::build(words),
            vec!["NN".into(), "VBD".into(), "UNK".into()],
            vec!["A".into(), "B".into()],
        )
        .unwrap()
    }

    fn sentence() -> AnnotatedSentence {
        AnnotatedSentence::from_words(
            "s1",
            &["he", "invaded", "the", "city"],
            &["PRP", "VBD", "DT", "NN"],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn soft_types_with_identical_rows_agree() {
        let mut det = tiny_detector(PrefixMap::Mlp { hidden: 5 });
        let s = sentence();
        let a = det.soft_prompt_forward(&s, "A").unwrap();
        let b = det.soft_prompt_forward(&s, "B").unwrap();
        assert_ne!(a, b);
        let table = det.soft_table_id();
        let row0 = det.store().get(table).row(0).to_owned();
        det.store_mut().get_mut(table).row_mut(1).assign(&row0);
        assert_eq!(
            det.soft_prompt_forward(&s, "A").unwrap(),
            det.soft_prompt_forward(&s, "B").unwrap()
        );
        assert!(matches!(
            det.soft_prompt_forward(&s, "C"),
            Err(Error::UnknownType(_))
        ));
    }

    #[test]
    fn identity_prefix_with_zero_row_is_zero_embedding() {
        let mut det = tiny_detector(PrefixMap::Identity);
        let table = det.soft_table_id();
        det.store_mut().get_mut(table).row_mut(0).fill(0.0);
        let s = sentence();
        let got = det.soft_prompt_forward(&s, "A").unwrap();

        // encode [0; embeddings] directly and classify [w; 0; P]
        let emb = det.encoder().embed_tokens(det.store(), &s).unwrap();
        let full = concatenate(Axis(0), &[Mat::zeros((1, 6)).view(), emb.view()]).unwrap();
        let segments: Vec<usize> = std::iter::once(0)
            .chain(std::iter::repeat_n(1, 4))
            .collect();
        let hidden = det
            .encoder()
            .encode_embeddings(det.store(), &full, &segments)
            .unwrap();
        let w = hidden.slice(ndarray::s![1.., ..]).to_owned();
        let pair = EncodedPair {
            prompt: Mat::zeros((1, 6)),
            sentence: w,
        };
        let attn = AttentionOutput {
            summary: Mat::zeros((4, 6)),
            weights: Mat::zeros((4, 1)),
        };
        let pos = pos_onehots(&s, det.pos_vocab());
        let expect = classify_tokens(&pair, &attn, &pos, &det.classifier_params()).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn template_path_matches_stage_functions() {
        let det = tiny_detector(PrefixMap::Identity);
        let s = sentence();
        let prompt = PromptText {
            form: PromptForm::TypeName,
            type_id: "A".into(),
            tokens: vec!["attack".into()],
        };
        let encoded = det.encoder().encode_pair(det.store(), &prompt, &s).unwrap();
        let attn = prompt_attention(&encoded).unwrap();
        let pos = pos_onehots(&s, det.pos_vocab());
        let staged = classify_tokens(&encoded, &attn, &pos, &det.classifier_params()).unwrap();
        let fused = det.predict(&prompt, &s).unwrap();
        for (a, b) in staged.iter().zip(&fused) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn detector_checkpoint_round_trips_bit_exactly() {
        let det = tiny_detector(PrefixMap::Mlp { hidden: 5 });
        let bytes = det.to_container().to_bytes();
        let back = Detector::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_container().to_bytes(), bytes);
        let s = sentence();
        assert_eq!(
            back.soft_prompt_forward(&s, "A").unwrap(),
            det.soft_prompt_forward(&s, "A").unwrap()
        );

        let enc = det.encoder_container().to_bytes();
        let (encoder, store) =
            encoder_from_container(Container::from_bytes(&enc).unwrap()).unwrap();
        assert_eq!(encoder_container(&encoder, &store).to_bytes(), enc);
        assert!(Detector::from_container(Container::from_bytes(&enc).unwrap()).is_err());
    }
}
