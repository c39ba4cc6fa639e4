use std::path::{Path, PathBuf};

use eventprompt::encoder::EncoderConfig;
use eventprompt::prompt::mine_missing_seeds;
use eventprompt::split::supervised_split;
use eventprompt::train::init_detector;
use eventprompt::{
    build_frequency_tables, train, Corpus, DetectorConfig, EventOntology, LossConfig, PromptForm,
    PromptSet, TrainConfig,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn smoke_run(config: &TrainConfig) -> Vec<f64> {
    let corpus = Corpus::load(fixture("smoke50.jsonl")).unwrap();
    let mut ontology = EventOntology::load(fixture("smoke50_ontology.toml")).unwrap();
    mine_missing_seeds(&mut ontology, &build_frequency_tables(&corpus.sentences), 4).unwrap();
    let prompts = PromptSet::render(&ontology, PromptForm::Apex).unwrap();
    let types: Vec<String> = ontology.type_ids().map(String::from).collect();
    let bundle = supervised_split(&corpus, types, 0.0, 0.0, 1).unwrap();
    let detector = init_detector(
        DetectorConfig {
            encoder: EncoderConfig {
                hidden_dim: 16,
                ffn_dim: 32,
                max_sequence_length: 64,
                seed: 11,
            },
            ..DetectorConfig::default()
        },
        &corpus.sentences,
        &prompts,
        corpus.pos_vocabulary(),
    )
    .unwrap();
    let outcome = train(
        &bundle,
        &prompts,
        detector,
        &LossConfig::supervised(),
        config,
    )
    .unwrap();
    assert!(outcome.log.iter().all(|r| r.phase == "supervised"));
    outcome.log.iter().map(|r| r.loss).collect()
}

#[test]
fn loss_decreases_over_the_first_epochs() {
    let config = TrainConfig {
        epochs: 3,
        learning_rate: 3e-3,
        batch_size: 4,
        dropout: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let losses = smoke_run(&config);
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn seeded_training_is_repeatable() {
    let config = TrainConfig {
        epochs: 2,
        learning_rate: 3e-3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    assert_eq!(smoke_run(&config), smoke_run(&config));
}
