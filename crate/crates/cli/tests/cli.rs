use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eventprompt::{Corpus, PredictionSet};

const BIN: &str = env!("CARGO_BIN_EXE_eventprompt");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("EVENTPROMPT_DATA_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Copies the 1000-sentence fixture into `dir/data` and builds a few-shot
/// bundle and APEX prompts from it.
fn prepare(dir: &Path) {
    fs::create_dir_all(dir.join("data")).unwrap();
    fs::copy(fixture("synth1000.jsonl"), dir.join("data/corpus.jsonl")).unwrap();
    fs::copy(
        fixture("synth1000_ontology.toml"),
        dir.join("data/ontology.toml"),
    )
    .unwrap();
    ok(
        dir,
        &[
            "split",
            "--corpus",
            "data/corpus.jsonl",
            "--ontology",
            "data/ontology.toml",
            "--regime",
            "few_shot",
            "--seed",
            "7",
            "--out",
            "splits/fs.json",
        ],
    );
    ok(
        dir,
        &[
            "prompts",
            "--ontology",
            "data/ontology.toml",
            "--corpus",
            "data/corpus.jsonl",
            "--bundle",
            "splits/fs.json",
            "--out",
            "prompts/apex.tsv",
        ],
    );
}

const SMALL_MODEL: &[&str] = &[
    "--epochs",
    "1",
    "--lr",
    "3e-3",
    "--batch-size",
    "8",
    "--hidden-dim",
    "16",
    "--ffn-dim",
    "32",
];

fn train_args(out_dir: &str) -> Vec<&str> {
    let mut args = vec![
        "train",
        "--bundle",
        "splits/fs.json",
        "--corpus",
        "data/corpus.jsonl",
        "--prompts",
        "prompts/apex.tsv",
        "--out-dir",
        out_dir,
    ];
    args.extend_from_slice(SMALL_MODEL);
    args
}

#[test]
fn pipeline_produces_every_artifact_with_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    ok(dir, &train_args("run"));
    let ckpt = "run/few_shot-apex-seed42-cell00.ckpt";
    assert!(dir.join(ckpt).is_file());
    ok(
        dir,
        &[
            "predict",
            "--checkpoint",
            ckpt,
            "--prompts",
            "prompts/apex.tsv",
            "--corpus",
            "data/corpus.jsonl",
            "--bundle",
            "splits/fs.json",
            "--out",
            "out/pred.jsonl",
        ],
    );
    let summary = ok(
        dir,
        &[
            "eval",
            "--predictions",
            "out/pred.jsonl",
            "--gold",
            "data/corpus.jsonl",
            "--bundle",
            "splits/fs.json",
            "--per-type",
            "--out",
            "out/report.json",
        ],
    );
    assert!(summary.contains("F1"));

    for path in [
        "splits/fs.json.run.json",
        "prompts/apex.tsv.run.json",
        "run/run.json",
        "out/pred.jsonl.run.json",
        "out/report.json.run.json",
    ] {
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join(path)).unwrap()).unwrap();
        for key in [
            "command",
            "tool_version",
            "config",
            "inputs",
            "outputs",
            "started_at",
            "finished_at",
        ] {
            assert!(manifest.get(key).is_some(), "{path} lacks {key}");
        }
    }
    let train_manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(train_manifest["rng_seed"], 42);
    assert_eq!(
        train_manifest["inputs"]["bundle"]["sha256"]
            .as_str()
            .unwrap()
            .len(),
        64
    );

    let log = fs::read_to_string(dir.join("run/train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in [
        "epoch",
        "phase",
        "loss",
        "dev_precision",
        "dev_recall",
        "dev_f1",
        "wall_time_s",
    ] {
        assert!(first.get(key).is_some(), "log lacks {key}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap();
    assert!(report["per_type"].is_object() || report["per_type"].is_array());
    assert!(dir.join("out/report.per_type.tsv").is_file());
    assert!(!dir.join("run/.eventprompt.lock").exists());
}

#[test]
fn gold_predictions_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = Corpus::load(fixture("smoke50.jsonl")).unwrap();
    PredictionSet::from_gold(&corpus.sentences, "gold")
        .save(dir.join("gold.jsonl"))
        .unwrap();
    let summary = ok(
        dir,
        &[
            "eval",
            "--predictions",
            "gold.jsonl",
            "--gold",
            fixture("smoke50.jsonl").to_str().unwrap(),
            "--out",
            "report.json",
        ],
    );
    assert!(
        summary.starts_with("P 1.0000 R 1.0000 F1 1.0000"),
        "{summary}"
    );
}

#[test]
fn vote_over_identical_systems_keeps_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = Corpus::load(fixture("smoke50.jsonl")).unwrap();
    let gold = PredictionSet::from_gold(&corpus.sentences, "gold");
    for name in ["a.jsonl", "b.jsonl", "c.jsonl"] {
        gold.save(dir.join(name)).unwrap();
    }
    ok(
        dir,
        &[
            "vote",
            "--predictions",
            "a.jsonl",
            "b.jsonl",
            "c.jsonl",
            "--out",
            "v.jsonl",
        ],
    );
    let voted = PredictionSet::load(dir.join("v.jsonl")).unwrap();
    assert_eq!(voted.mention_count(), gold.mention_count());
}

#[test]
fn edited_bundle_is_refused_as_stale() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let bundle = dir.join("splits/fs.json");
    let mut text = fs::read_to_string(&bundle).unwrap();
    text.push('\n');
    fs::write(&bundle, text).unwrap();
    let out = run(dir, &train_args("run"));
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("changed after it was produced"), "{stderr}");
}

#[test]
fn prompts_from_another_corpus_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let mut corpus = fs::read_to_string(dir.join("data/corpus.jsonl")).unwrap();
    let first_line_end = corpus.find('\n').unwrap();
    corpus.replace_range(..=first_line_end, "");
    fs::write(dir.join("data/other.jsonl"), &corpus).unwrap();
    let out = run(
        dir,
        &[
            "train",
            "--bundle",
            "splits/fs.json",
            "--corpus",
            "data/other.jsonl",
            "--prompts",
            "prompts/apex.tsv",
            "--out-dir",
            "run",
        ],
    );
    assert_ne!(code(&out), 0);
}

#[test]
fn held_lock_exits_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::create_dir_all(dir.join("data")).unwrap();
    fs::write(dir.join("data/.eventprompt.lock"), "1\n").unwrap();
    let out = run(dir, &["synth", "--preset", "smoke", "--out-dir", "data"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    assert!(!dir.join("data/corpus.jsonl").exists());
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&run(dir, &["--help"])), 0);
    assert_eq!(
        code(&run(
            dir,
            &["split", "--corpus", "x.jsonl", "--out", "b.json"]
        )),
        1
    );
    assert_eq!(code(&run(dir, &["no-such-command"])), 1);
    assert_eq!(
        code(&run(
            dir,
            &[
                "split",
                "--corpus",
                "missing.jsonl",
                "--seed",
                "1",
                "--out",
                "b.json"
            ]
        )),
        2
    );
    fs::write(dir.join("bad.jsonl"), "{not json}\n").unwrap();
    assert_eq!(
        code(&run(
            dir,
            &[
                "split",
                "--corpus",
                "bad.jsonl",
                "--seed",
                "1",
                "--out",
                "b.json"
            ]
        )),
        1
    );
    assert_eq!(
        code(&run(dir, &["prompts", "--form", "haiku", "--out", "p.tsv"])),
        1
    );
    fs::copy(fixture("smoke50.jsonl"), dir.join("c.jsonl")).unwrap();
    let out = run(
        dir,
        &[
            "split",
            "--corpus",
            "c.jsonl",
            "--ontology",
            fixture("smoke50_ontology.toml").to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            "b.json",
        ],
    );
    assert_eq!(
        code(&out),
        1,
        "a partition without novel types is a validation error"
    );
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("run.conf"),
        "# synthetic data\npreset = smoke\nseed = 99\n",
    )
    .unwrap();
    ok(dir, &["--config", "run.conf", "synth", "--out-dir", "a"]);
    ok(
        dir,
        &[
            "--config",
            "run.conf",
            "synth",
            "--seed",
            "5",
            "--out-dir",
            "b",
        ],
    );
    let seed = |d: &str| -> serde_json::Value {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join(d).join("run.json")).unwrap())
                .unwrap();
        m["rng_seed"].clone()
    };
    assert_eq!(seed("a"), 99);
    assert_eq!(seed("b"), 5);
    let corpus = Corpus::load(dir.join("a/corpus.jsonl")).unwrap();
    assert_eq!(corpus.sentences.len(), 50);

    fs::write(dir.join("bad.conf"), "colour = red\n").unwrap();
    assert_eq!(
        code(&run(
            dir,
            &["--config", "bad.conf", "synth", "--out-dir", "c"]
        )),
        1
    );
}

#[test]
fn data_root_resolves_relative_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    fs::create_dir_all(&root).unwrap();
    fs::copy(fixture("smoke50.jsonl"), root.join("c.jsonl")).unwrap();
    fs::copy(fixture("smoke50_ontology.toml"), root.join("o.toml")).unwrap();
    let work = tmp.path().join("work");
    fs::create_dir_all(&work).unwrap();
    let out = Command::new(BIN)
        .current_dir(&work)
        .env("EVENTPROMPT_DATA_ROOT", &root)
        .args([
            "split",
            "--corpus",
            "c.jsonl",
            "--ontology",
            "o.toml",
            "--regime",
            "supervised",
            "--seed",
            "3",
            "--out",
            "b.json",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(work.join("b.json").is_file());
}
