//! Shared setup for the benchmarks: a small synthetic task with a detector
//! and APEX prompts ready to run.

use eventprompt::encoder::EncoderConfig;
use eventprompt::prompt::mine_missing_seeds;
use eventprompt::synthetic::{generate, SynthConfig};
use eventprompt::train::init_detector;
use eventprompt::{
    build_frequency_tables, Corpus, Detector, DetectorConfig, PromptForm, PromptSet,
};

pub struct Workload {
    pub corpus: Corpus,
    pub prompts: PromptSet,
    pub type_ids: Vec<String>,
    pub detector: Detector,
}

pub fn workload(hidden_dim: usize) -> Workload {
    let data = generate(&SynthConfig::pipeline()).expect("preset generates");
    let mut ontology = data.ontology;
    let table = build_frequency_tables(&data.corpus.sentences);
    mine_missing_seeds(&mut ontology, &table, 4).expect("seeds mine");
    let prompts = PromptSet::render(&ontology, PromptForm::Apex).expect("prompts render");
    let type_ids: Vec<String> = ontology.type_ids().map(String::from).collect();
    let config = DetectorConfig {
        encoder: EncoderConfig {
            hidden_dim,
            ffn_dim: 2 * hidden_dim,
            ..EncoderConfig::default()
        },
        ..DetectorConfig::default()
    };
    let detector = init_detector(
        config,
        &data.corpus.sentences,
        &prompts,
        data.corpus.pos_vocabulary(),
    )
    .expect("detector initializes");
    Workload {
        corpus: data.corpus,
        prompts,
        type_ids,
        detector,
    }
}
