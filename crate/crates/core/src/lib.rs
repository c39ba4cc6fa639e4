//! Event trigger detection with event types expressed as prompts.
//!
//! An event type is rendered into a prompt (its name, definition, prototype
//! seed triggers, argument structure, an authored APEX description, or a
//! learned soft prefix). Each prompt is paired with a sentence, encoded
//! jointly, and every sentence token attends over the prompt tokens with raw
//! cosine weights. A shared two-way classifier over
//! `[token; prompt summary; POS one-hot]` then marks the token as a trigger of
//! that type or not.
//!
//! The crate covers the whole pipeline: ontology and corpus I/O
//! ([`ontology`], [`corpus`]), prompt rendering and seed mining ([`prompt`],
//! [`frequency`]), few-shot and zero-shot split construction ([`split`]), the
//! tiny reference encoder ([`encoder`]), the detection head ([`model`]),
//! objectives and the training loop ([`loss`], [`train`]), and span scoring
//! with majority-vote ensembling ([`eval`]).

pub mod autograd;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod frequency;
pub mod loss;
pub mod model;
pub mod ontology;
pub mod optim;
pub mod prompt;
pub mod split;
pub mod synthetic;
pub mod train;

pub use corpus::{AnnotatedSentence, Corpus, LabelMatrix, Token, TriggerMention};
pub use error::{Error, Result};
pub use frequency::{build_frequency_tables, select_prototype_triggers, FrequencyTable};

pub use eval::{decode_spans, majority_vote, score, EvalReport, PredictionSet};
pub use model::{prompt_attention, AttentionOutput, Detector, DetectorConfig, PredictionMatrix};
pub use ontology::{ArgumentRole, EventOntology, EventTypeDef};
pub use prompt::{render_prompt, PromptForm, PromptSet, PromptText};
pub use split::{make_split, validate_type_partition, DatasetBundle, Regime, SplitSpec};
pub use train::{grid_search, train, LossConfig, TrainConfig};
