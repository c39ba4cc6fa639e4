//! The experiment loop: batching, the supervised / few-shot / zero-shot
//! objectives on the tape, dev-based model selection and grid search.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape};
use crate::corpus::AnnotatedSentence;
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::{decode_spans, score_types, EvalReport, DEFAULT_THRESHOLD};
use crate::loss::{check_alpha, EPS};
use crate::model::{Detector, DetectorConfig, Dropout, PredictionMatrix};
use crate::optim::{Adam, AdamConfig};
use crate::prompt::PromptSet;
use crate::split::{DatasetBundle, Regime};

/// Which objective a run optimizes. `alpha` is present exactly for the
/// few-shot regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub regime: Regime,
    pub alpha: Option<f64>,
}

impl LossConfig {
    pub const DEFAULT_ALPHA: f64 = 1.0;

    pub fn supervised() -> Self {
        Self {
            regime: Regime::Supervised,
            alpha: None,
        }
    }

    pub fn few_shot(alpha: f64) -> Self {
        Self {
            regime: Regime::FewShot,
            alpha: Some(alpha),
        }
    }

    pub fn zero_shot() -> Self {
        Self {
            regime: Regime::ZeroShot,
            alpha: None,
        }
    }

    pub fn for_regime(regime: Regime, alpha: f64) -> Self {
        match regime {
            Regime::Supervised => Self::supervised(),
            Regime::FewShot => Self::few_shot(alpha),
            Regime::ZeroShot => Self::zero_shot(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.regime, self.alpha) {
            (Regime::FewShot, Some(a)) => check_alpha(a),
            (Regime::FewShot, None) => Err(Error::Config("few-shot training needs alpha".into())),
            (_, Some(_)) => Err(Error::Config(format!(
                "alpha only applies to few-shot training, not {}",
                self.regime
            ))),
            (_, None) => Ok(()),
        }
    }
}

/// Dev metric used to pick the best epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Micro F1 over every type in the bundle.
    #[default]
    Overall,
    /// Micro F1 over novel types only.
    NovelOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub rng_seed: u64,
    pub warmup: f64,
    pub weight_decay: f64,
    pub threshold: f64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 5e-5,
            batch_size: 16,
            dropout: 0.5,
            rng_seed: 42,
            warmup: 0.1,
            weight_decay: 0.01,
            threshold: DEFAULT_THRESHOLD,
            selection: Selection::Overall,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "warmup must lie in [0, 1] and weight decay be >= 0".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub wall_time_s: f64,
}

impl EpochRecord {
    /// The record with its timing zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn log_to_jsonl(log: &[EpochRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best dev score.
    pub detector: Detector,
    pub log: Vec<EpochRecord>,
    /// Index into `log` of the selected epoch.
    pub best: usize,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.log[self.best]
    }
}

/// A fresh detector whose vocabulary covers the given sentences and prompts.
pub fn init_detector<'a>(
    config: DetectorConfig,
    sentences: impl IntoIterator<Item = &'a AnnotatedSentence>,
    prompts: &PromptSet,
    pos_vocab: Vec<String>,
) -> Result<Detector> {
    let mut words: BTreeSet<String> = BTreeSet::new();
    for s in sentences {
        words.extend(s.words().map(str::to_lowercase));
    }
    for p in prompts.iter() {
        words.extend(p.tokens.iter().map(|t| t.to_lowercase()));
    }
    let vocab = Vocabulary::build(words.iter().map(String::as_str));
    Detector::new(config, vocab, pos_vocab, prompts.type_ids().to_vec())
}

/// Per-type probabilities for every sentence.
pub fn predict_all(
    detector: &Detector,
    prompts: &PromptSet,
    sentences: &[AnnotatedSentence],
    type_ids: &[String],
) -> Result<Vec<PredictionMatrix>> {
    sentences
        .iter()
        .map(|s| detector.predict_sentence(prompts, s, type_ids))
        .collect()
}

/// Dev report under the configured selection metric.
pub fn evaluate(
    detector: &Detector,
    prompts: &PromptSet,
    bundle: &DatasetBundle,
    sentences: &[AnnotatedSentence],
    config: &TrainConfig,
) -> Result<EvalReport> {
    let types = bundle.type_universe();
    let preds = predict_all(detector, prompts, sentences, &types)?;
    let set = decode_spans(&preds, config.threshold, prompts.form().as_str())?;
    let restrict: Option<BTreeSet<String>> = match config.selection {
        Selection::Overall => None,
        Selection::NovelOnly => Some(bundle.spec.novel_ids.clone()),
    };
    score_types(&set, sentences, restrict.as_ref())
}

/// One weighted term of the objective: sentences scored against `types`,
/// normalized by `|types| · tokens`, then scaled by `weight`.
struct Term<'a> {
    sentences: Vec<&'a AnnotatedSentence>,
    types: &'a [String],
    weight: f64,
}

/// Accumulates the gradient of `Σ terms` into `grads`; returns the value.
fn accumulate(
    detector: &Detector,
    prompts: &PromptSet,
    terms: &[Term<'_>],
    dropout: f64,
    rng: &mut ChaCha8Rng,
    grads: &mut Gradients,
) -> Result<f64> {
    let mut total = 0.0;
    for term in terms {
        let tokens: usize = term.sentences.iter().map(|s| s.len()).sum();
        let positions = tokens * term.types.len();
        if positions == 0 {
            continue;
        }
        let scale = term.weight / positions as f64;
        for s in &term.sentences {
            for t in term.types {
                let mut tape = Tape::new(detector.store());
                let mut drop = Dropout { rate: dropout, rng };
                let logits = detector.forward(&mut tape, prompts.get(t)?, s, Some(&mut drop))?;
                let loss = tape.nll(logits, &s.labels_for_type(t), EPS, scale);
                total += tape.value(loss)[[0, 0]];
                tape.backward(loss, grads);
            }
        }
    }
    Ok(total)
}

struct PhasePlan<'a> {
    name: &'static str,
    base: &'a [AnnotatedSentence],
    base_types: &'a [String],
    novel: &'a [AnnotatedSentence],
    novel_types: &'a [String],
    alpha: f64,
}

/// Trains `detector` on `bundle`. Few-shot runs first fit the base data
/// alone, then fine-tune on base and novel data jointly.
pub fn train(
    bundle: &DatasetBundle,
    prompts: &PromptSet,
    mut detector: Detector,
    loss: &LossConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    loss.validate()?;
    config.validate()?;
    bundle.check_invariants()?;
    if loss.regime != bundle.regime {
        return Err(Error::Config(format!(
            "bundle regime is {} but the objective is {}",
            bundle.regime, loss.regime
        )));
    }
    if bundle.train_len() == 0 {
        return Err(Error::Validation("the training set is empty".into()));
    }
    let universe = bundle.type_universe();
    for t in &universe {
        prompts.get(t)?;
    }
    let base_types: Vec<String> = bundle.spec.base_ids.iter().cloned().collect();
    let novel_types: Vec<String> = bundle.spec.novel_ids.iter().cloned().collect();
    let mut phases = vec![PhasePlan {
        name: match loss.regime {
            Regime::Supervised => "supervised",
            _ => "base",
        },
        base: &bundle.train_base,
        base_types: if loss.regime == Regime::Supervised {
            &universe
        } else {
            &base_types
        },
        novel: &[],
        novel_types: &[],
        alpha: 0.0,
    }];
    if loss.regime == Regime::FewShot {
        phases.push(PhasePlan {
            name: "joint",
            base: &bundle.train_base,
            base_types: &base_types,
            novel: &bundle.train_novel,
            novel_types: &novel_types,
            alpha: loss.alpha.unwrap_or(LossConfig::DEFAULT_ALPHA),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, crate::autograd::ParamStore)> = None;
    let started = Instant::now();
    let mut epoch_no = 0;
    for phase in &phases {
        let n_batches =
            phase
                .base
                .len()
                .div_ceil(config.batch_size)
                .max(if phase.base.is_empty() {
                    phase.novel.len().div_ceil(config.batch_size)
                } else {
                    0
                });
        let mut adam_config = AdamConfig::new(config.learning_rate, n_batches * config.epochs);
        adam_config.warmup = config.warmup;
        adam_config.weight_decay = config.weight_decay;
        let mut adam = Adam::new(adam_config, detector.store());
        let mut novel_cursor = 0usize;
        let mut novel_order: Vec<usize> = (0..phase.novel.len()).collect();
        for _ in 0..config.epochs {
            epoch_no += 1;
            let mut order: Vec<usize> = (0..phase.base.len()).collect();
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for b in 0..n_batches {
                let base_batch: Vec<&AnnotatedSentence> = order
                    .iter()
                    .skip(b * config.batch_size)
                    .take(config.batch_size)
                    .map(|&i| &phase.base[i])
                    .collect();
                let mut novel_batch = Vec::new();
                if !phase.novel.is_empty() {
                    for _ in 0..config.batch_size.min(phase.novel.len()) {
                        if novel_cursor == 0 {
                            novel_order.shuffle(&mut rng);
                        }
                        novel_batch.push(&phase.novel[novel_order[novel_cursor]]);
                        novel_cursor = (novel_cursor + 1) % novel_order.len();
                    }
                }
                let terms = [
                    Term {
                        sentences: base_batch,
                        types: phase.base_types,
                        weight: 1.0,
                    },
                    Term {
                        sentences: novel_batch,
                        types: phase.novel_types,
                        weight: phase.alpha,
                    },
                ];
                let mut grads = Gradients::for_store(detector.store());
                epoch_loss += accumulate(
                    &detector,
                    prompts,
                    &terms,
                    config.dropout,
                    &mut rng,
                    &mut grads,
                )?;
                adam.step(detector.store_mut(), &grads);
            }
            let dev = evaluate(&detector, prompts, bundle, &bundle.dev, config)?;
            let record = EpochRecord {
                epoch: epoch_no,
                phase: phase.name.to_string(),
                loss: epoch_loss / n_batches.max(1) as f64,
                dev_precision: dev.overall.precision,
                dev_recall: dev.overall.recall,
                dev_f1: dev.overall.f1,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            // ties go to the later epoch; with no dev data this keeps the last
            if best.as_ref().is_none_or(|(_, f1, _)| record.dev_f1 >= *f1) {
                best = Some((log.len(), record.dev_f1, detector.store().clone()));
            }
            log.push(record);
        }
    }
    let (best_idx, _, store) = best.expect("at least one epoch ran");
    *detector.store_mut() = store;
    Ok(TrainOutcome {
        detector,
        log,
        best: best_idx,
    })
}

/// Candidate values for each tuned hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub epochs: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Grid {
    /// The standard fine-tuning search space.
    pub fn full() -> Self {
        Self {
            epochs: vec![3],
            learning_rate: vec![3e-6, 1e-5, 3e-5, 1e-4],
            batch_size: vec![8, 12, 16, 24, 32],
            dropout: vec![0.4, 0.5, 0.6],
        }
    }

    pub fn single(config: &TrainConfig) -> Self {
        Self {
            epochs: vec![config.epochs],
            learning_rate: vec![config.learning_rate],
            batch_size: vec![config.batch_size],
            dropout: vec![config.dropout],
        }
    }

    /// Every combination, in lexicographic order of the axes above.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &epochs in &self.epochs {
            for &learning_rate in &self.learning_rate {
                for &batch_size in &self.batch_size {
                    for &dropout in &self.dropout {
                        out.push(TrainConfig {
                            epochs,
                            learning_rate,
                            batch_size,
                            dropout,
                            ..*base
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub cell: usize,
    pub config: TrainConfig,
    pub dev_f1: f64,
    pub best_epoch: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: TrainConfig,
    pub best_cell: usize,
    /// Sorted by dev F1, best first; ties keep cell order.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub outcome: TrainOutcome,
}

pub fn leaderboard_to_jsonl(entries: &[LeaderboardEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
        .collect()
}

/// Trains every grid cell from the same initial detector and keeps the cell
/// with the best dev score.
pub fn grid_search(
    bundle: &DatasetBundle,
    prompts: &PromptSet,
    initial: &Detector,
    loss: &LossConfig,
    base: &TrainConfig,
    grid: &Grid,
) -> Result<GridOutcome> {
    let cells = grid.cells(base);
    if cells.is_empty() {
        return Err(Error::Config("the grid has no cells".into()));
    }
    let mut leaderboard = Vec::new();
    let mut winner: Option<(usize, TrainOutcome)> = None;
    for (cell, config) in cells.iter().enumerate() {
        let outcome = train(bundle, prompts, initial.clone(), loss, config)?;
        let rec = outcome.best_record();
        leaderboard.push(LeaderboardEntry {
            cell,
            config: *config,
            dev_f1: rec.dev_f1,
            best_epoch: rec.epoch,
            final_loss: outcome.log.last().map_or(0.0, |r| r.loss),
        });
        let better = winner
            .as_ref()
            .is_none_or(|(_, w)| rec.dev_f1 > w.best_record().dev_f1);
        if better {
            winner = Some((cell, outcome));
        }
    }
    leaderboard.sort_by(|a, b| b.dev_f1.total_cmp(&a.dev_f1).then(a.cell.cmp(&b.cell)));
    let (best_cell, outcome) = winner.expect("non-empty grid");
    Ok(GridOutcome {
        best: cells[best_cell],
        best_cell,
        leaderboard,
        outcome,
    })
}

/// File stem for a trained detector, e.g. `few_shot-apex-seed7-cell03`.
pub fn checkpoint_name(
    regime: Regime,
    form: crate::prompt::PromptForm,
    seed: u64,
    cell: usize,
) -> String {
    format!("{}-{}-seed{}-cell{:02}", regime, form, seed, cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::encoder::EncoderConfig;
    use crate::model::{AttentionMode, PrefixMap};
    use crate::prompt::PromptForm;
    use crate::split::supervised_split;
    use crate::synthetic::{generate, SynthConfig};

    fn small_config() -> DetectorConfig {
        DetectorConfig {
            encoder: EncoderConfig {
                hidden_dim: 8,
                ffn_dim: 16,
                max_sequence_length: 64,
                seed: 5,
            },
            attention: AttentionMode::RawCosine,
            prefix: PrefixMap::Identity,
        }
    }

    fn fixture(n: usize) -> (DatasetBundle, PromptSet, Detector) {
        let data = generate(&SynthConfig {
            n_sentences: n,
            ..SynthConfig::smoke()
        })
        .unwrap();
        let corpus: Corpus = data.corpus;
        let types: Vec<String> = data.ontology.type_ids().map(String::from).collect();
        let bundle = supervised_split(&corpus, types, 0.0, 0.0, 1).unwrap();
        let prompts = PromptSet::render(&data.ontology, PromptForm::TypeName).unwrap();
        let det = init_detector(
            small_config(),
            &corpus.sentences,
            &prompts,
            corpus.pos_vocabulary(),
        )
        .unwrap();
        (bundle, prompts, det)
    }

    #[test]
    fn runs_are_deterministic() {
        let (bundle, prompts, det) = fixture(5);
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 1e-2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train(
            &bundle,
            &prompts,
            det.clone(),
            &LossConfig::supervised(),
            &config,
        )
        .unwrap();
        let b = train(&bundle, &prompts, det, &LossConfig::supervised(), &config).unwrap();
        assert_eq!(a.log[0].without_timing(), b.log[0].without_timing());
        assert_eq!(
            a.detector.store().iter().collect::<Vec<_>>(),
            b.detector.store().iter().collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let (bundle, prompts, det) = fixture(6);
        let config = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let out = train(
            &bundle,
            &prompts,
            det.clone(),
            &LossConfig::supervised(),
            &config,
        )
        .unwrap();
        assert_eq!(
            out.detector.store().iter().collect::<Vec<_>>(),
            det.store().iter().collect::<Vec<_>>()
        );
        // one batch per epoch and no dropout: both epochs see the same objective
        let flat = TrainConfig {
            dropout: 0.0,
            batch_size: 6,
            ..config
        };
        let out = train(&bundle, &prompts, det, &LossConfig::supervised(), &flat).unwrap();
        assert_eq!(out.log[0].loss, out.log[1].loss);
    }

    #[test]
    fn rejects_bad_setups() {
        let (mut bundle, prompts, det) = fixture(4);
        let config = TrainConfig::default();
        assert!(train(
            &bundle,
            &prompts,
            det.clone(),
            &LossConfig::zero_shot(),
            &config
        )
        .is_err());
        assert!(LossConfig::few_shot(-1.0).validate().is_err());
        assert!(LossConfig {
            regime: Regime::ZeroShot,
            alpha: Some(1.0)
        }
        .validate()
        .is_err());
        bundle.train_base.clear();
        assert!(matches!(
            train(&bundle, &prompts, det, &LossConfig::supervised(), &config),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn grid_cells_and_names() {
        let grid = Grid::full();
        assert_eq!(grid.cells(&TrainConfig::default()).len(), 4 * 5 * 3);
        assert_eq!(
            checkpoint_name(Regime::FewShot, PromptForm::Apex, 7, 3),
            "few_shot-apex-seed7-cell03"
        );
    }
}
