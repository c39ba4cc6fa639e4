use std::path::{Path, PathBuf};

use eventprompt::synthetic::{generate, SynthConfig};
use eventprompt::{Corpus, EventOntology};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn check_regenerates(config: SynthConfig, corpus_file: &str, ontology_file: &str) {
    let data = generate(&config).unwrap();
    let mut bytes = Vec::new();
    data.corpus.write(&mut bytes).unwrap();
    let committed = std::fs::read(fixture(corpus_file)).unwrap();
    assert!(
        bytes == committed,
        "{corpus_file} no longer matches the generator"
    );
    let committed = std::fs::read_to_string(fixture(ontology_file)).unwrap();
    assert_eq!(data.ontology.to_toml_string(), committed);
}

#[test]
fn smoke_fixture_matches_generator() {
    check_regenerates(
        SynthConfig::smoke(),
        "smoke50.jsonl",
        "smoke50_ontology.toml",
    );
}

#[test]
fn pipeline_fixture_matches_generator() {
    check_regenerates(
        SynthConfig::pipeline(),
        "synth1000.jsonl",
        "synth1000_ontology.toml",
    );
}

#[test]
fn fixtures_load_and_agree_with_their_ontologies() {
    for (corpus, ontology, sentences, types) in [
        ("smoke50.jsonl", "smoke50_ontology.toml", 50, 4),
        ("synth1000.jsonl", "synth1000_ontology.toml", 1000, 8),
    ] {
        let corpus = Corpus::load(fixture(corpus)).unwrap();
        let ontology = EventOntology::load(fixture(ontology)).unwrap();
        corpus.check_types(&ontology).unwrap();
        assert_eq!(corpus.sentences.len(), sentences);
        assert_eq!(ontology.types().len(), types);
        assert_eq!(corpus.mention_counts().len(), types);
    }
}
