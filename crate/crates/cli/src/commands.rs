//! One function per subcommand. Each resolves its settings, checks that
//! tracked inputs are unchanged, writes outputs atomically under a directory
//! lock and finishes with a run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use eventprompt::checkpoint::Container;
use eventprompt::encoder::EncoderConfig;
use eventprompt::eval::{score_types, PredictionSet};
use eventprompt::model::{AttentionMode, PrefixMap};
use eventprompt::prompt::{mine_missing_seeds, DEFAULT_SEED_COUNT};
use eventprompt::split::{
    partition_by_frequency, supervised_split, BundleManifest, DEFAULT_MIN_INSTANCES, DEFAULT_SHOTS,
};
use eventprompt::synthetic::{generate, SynthConfig};
use eventprompt::train::{
    checkpoint_name, init_detector, leaderboard_to_jsonl, log_to_jsonl, predict_all, Grid,
    Selection,
};
use eventprompt::{
    build_frequency_tables, decode_spans, grid_search, majority_vote, make_split,
    validate_type_partition, AnnotatedSentence, Corpus, DatasetBundle, Detector, DetectorConfig,
    EventOntology, LossConfig, PromptForm, PromptSet, Regime, SplitSpec, TrainConfig,
};

use crate::artifacts::{
    atomic_write, check_fresh, manifest_path_for, DirLock, ManifestBuilder, DIR_MANIFEST,
};
use crate::exit::ValidationFailure;
use crate::settings::Settings;
use crate::{EvalArgs, PredictArgs, PromptsArgs, SplitArgs, SynthArgs, TrainArgs, VoteArgs};

fn invalid(message: impl Into<String>) -> anyhow::Error {
    ValidationFailure(message.into()).into()
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_ontology(
    settings: &Settings,
    path: Option<&Path>,
) -> Result<(EventOntology, Option<PathBuf>)> {
    match path {
        Some(p) => {
            let p = settings.input(p);
            Ok((EventOntology::load(&p)?, Some(p)))
        }
        None => Ok((EventOntology::bundled_ace(), None)),
    }
}

fn load_corpus(settings: &Settings, path: &Path) -> Result<(Corpus, PathBuf)> {
    let p = settings.input(path);
    Ok((Corpus::load(&p)?, p))
}

fn load_bundle(
    settings: &Settings,
    path: &Path,
    corpus: &Corpus,
) -> Result<(DatasetBundle, PathBuf)> {
    let p = settings.input(path);
    let manifest = BundleManifest::load(&p)?;
    Ok((DatasetBundle::from_manifest(&manifest, corpus)?, p))
}

fn bundle_set<'a>(bundle: &'a DatasetBundle, name: &str) -> Result<&'a [AnnotatedSentence]> {
    bundle
        .sets()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
        .ok_or_else(|| {
            invalid(format!(
                "unknown set `{name}` (train_base, train_novel, dev or test)"
            ))
        })
}

fn type_scope(
    scope: &str,
    bundle: Option<&DatasetBundle>,
    fallback: &[String],
) -> Result<Vec<String>> {
    let all = || bundle.map_or_else(|| fallback.to_vec(), |b| b.type_universe());
    match scope {
        "all" => Ok(all()),
        "base" | "novel" => {
            let b = bundle.ok_or_else(|| invalid(format!("--types {scope} needs --bundle")))?;
            let ids = if scope == "base" {
                &b.spec.base_ids
            } else {
                &b.spec.novel_ids
            };
            Ok(ids.iter().cloned().collect())
        }
        other => Err(invalid(format!(
            "unknown type scope `{other}` (all, base or novel)"
        ))),
    }
}

fn parse_form(raw: &str) -> Result<PromptForm> {
    Ok(raw.parse::<PromptForm>()?)
}

fn parse_regime(raw: &str) -> Result<Regime> {
    Ok(raw.parse::<Regime>()?)
}

pub fn synth(settings: &Settings, args: SynthArgs) -> Result<()> {
    let preset: String = settings.pick(args.preset, "preset", "pipeline".to_string())?;
    let mut config = match preset.as_str() {
        "smoke" => SynthConfig::smoke(),
        "pipeline" => SynthConfig::pipeline(),
        "ace" => SynthConfig::ace_shaped(0),
        other => bail!(invalid(format!(
            "unknown preset `{other}` (smoke, pipeline or ace)"
        ))),
    };
    if let Some(seed) = settings.pick_opt(args.seed, "seed")? {
        config.seed = seed;
    }
    let _lock = DirLock::acquire(&args.out_dir)?;
    let mut manifest = ManifestBuilder::new(
        "synth",
        Some(config.seed),
        json!({
            "preset": preset,
            "n_types": config.n_types,
            "n_novel": config.n_novel,
            "n_sentences": config.n_sentences,
            "empty_fraction": config.empty_fraction,
            "multi_fraction": config.multi_fraction,
        }),
    );
    let data = generate(&config)?;
    let corpus_path = args.out_dir.join("corpus.jsonl");
    let mut bytes = Vec::new();
    data.corpus.write(&mut bytes)?;
    atomic_write(&corpus_path, &bytes)?;
    let ontology_path = args.out_dir.join("ontology.toml");
    atomic_write(&ontology_path, data.ontology.to_toml_string().as_bytes())?;
    manifest.output("corpus", &corpus_path)?;
    manifest.output("ontology", &ontology_path)?;
    manifest.write(&args.out_dir.join(DIR_MANIFEST))?;
    println!(
        "wrote {} sentences over {} types to {}",
        data.corpus.sentences.len(),
        data.ontology.types().len(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn prompts(settings: &Settings, args: PromptsArgs) -> Result<()> {
    let form = parse_form(&settings.pick(args.form, "form", "apex".to_string())?)?;
    let k: usize = settings.pick(args.k, "k", DEFAULT_SEED_COUNT)?;
    let (mut ontology, ontology_path) = load_ontology(settings, args.ontology.as_deref())?;
    let mut manifest = ManifestBuilder::new(
        "prompts",
        None,
        json!({ "form": form.as_str(), "k": k, "bundled_ontology": ontology_path.is_none() }),
    );
    if let Some(p) = &ontology_path {
        manifest.input("ontology", p)?;
    }
    let missing = ontology.types().iter().any(|t| t.seed_triggers.is_empty());
    if form.needs_seeds() && missing {
        let corpus_arg = args.corpus.as_deref().ok_or_else(|| {
            invalid(format!(
                "the {form} form needs seed triggers; pass --corpus to mine them"
            ))
        })?;
        let (corpus, corpus_path) = load_corpus(settings, corpus_arg)?;
        manifest.input("corpus", &corpus_path)?;
        let table = match &args.bundle {
            Some(b) => {
                let (bundle, bundle_path) = load_bundle(settings, b, &corpus)?;
                check_fresh(&bundle_path, manifest.inputs())?;
                manifest.input("bundle", &bundle_path)?;
                build_frequency_tables(bundle.train())
            }
            None => build_frequency_tables(corpus.sentences.iter()),
        };
        mine_missing_seeds(&mut ontology, &table, k)?;
    }
    let prompts = PromptSet::render(&ontology, form)?;
    let _lock = DirLock::acquire(&parent_dir(&args.out))?;
    atomic_write(&args.out, prompts.to_tsv().as_bytes())?;
    manifest.output("prompts", &args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!(
        "wrote {} {form} prompts to {}",
        prompts.len(),
        args.out.display()
    );
    Ok(())
}

pub fn split(settings: &Settings, args: SplitArgs) -> Result<()> {
    let seed = args.seed.context("--seed is required")?;
    let regime = parse_regime(&settings.pick(args.regime, "regime", "few_shot".to_string())?)?;
    let shots: usize = settings.pick(args.shots, "shots", DEFAULT_SHOTS)?;
    let min_instances: usize =
        settings.pick(args.min_instances, "min-instances", DEFAULT_MIN_INSTANCES)?;
    let drop_thin = args.drop_thin || settings.pick(None, "drop-thin", false)?;
    let base_count: Option<usize> = settings.pick_opt(args.base_count, "base-count")?;
    let dev_fraction: f64 = settings.pick(args.dev_fraction, "dev-fraction", 0.1)?;
    let test_fraction: f64 = settings.pick(args.test_fraction, "test-fraction", 0.1)?;

    let (corpus, corpus_path) = load_corpus(settings, &args.corpus)?;
    let (ontology, ontology_path) = load_ontology(settings, args.ontology.as_deref())?;
    corpus.check_types(&ontology)?;
    let mut manifest = ManifestBuilder::new(
        "split",
        Some(seed),
        json!({
            "regime": regime.as_str(),
            "shots": shots,
            "min_instances": min_instances,
            "drop_thin": drop_thin,
            "base_count": base_count,
            "dev_fraction": dev_fraction,
            "test_fraction": test_fraction,
        }),
    );
    manifest.input("corpus", &corpus_path)?;
    if let Some(p) = &ontology_path {
        manifest.input("ontology", p)?;
    }

    let bundle = if regime == Regime::Supervised {
        supervised_split(
            &corpus,
            ontology.type_ids().map(String::from),
            dev_fraction,
            test_fraction,
            seed,
        )?
    } else {
        let (base, novel) = match base_count {
            Some(n) => partition_by_frequency(&corpus, n),
            None => (ontology.base_ids().to_vec(), ontology.novel_ids().to_vec()),
        };
        if base.is_empty() || novel.is_empty() {
            bail!(invalid(
                "few-shot and zero-shot splits need base and novel types (set them in the ontology or pass --base-count)"
            ));
        }
        let mut spec = SplitSpec::new(base, novel, seed)?
            .with_shots(shots)?
            .with_min_instances(min_instances)?;
        let report = validate_type_partition(&corpus, &spec);
        for row in report.failures() {
            eprintln!(
                "type {} has {} instances (minimum {})",
                row.type_id, row.instances, min_instances
            );
        }
        if drop_thin {
            for row in report.failures() {
                spec.base_ids.remove(&row.type_id);
                spec.novel_ids.remove(&row.type_id);
            }
        }
        make_split(&corpus, &spec, regime)?
    };
    let _lock = DirLock::acquire(&parent_dir(&args.out))?;
    atomic_write(&args.out, bundle.manifest_json().as_bytes())?;
    manifest.output("bundle", &args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!(
        "{} split: train_base {}, train_novel {}, dev {}, test {}",
        regime,
        bundle.train_base.len(),
        bundle.train_novel.len(),
        bundle.dev.len(),
        bundle.test.len()
    );
    Ok(())
}

fn parse_grid_axis(spec: &str, grid: &mut Grid) -> Result<()> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("grid axis `{spec}` should look like lr=1e-3,3e-3")))?;
    let values: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        bail!(invalid(format!("grid axis `{key}` has no values")));
    }
    fn all<T: std::str::FromStr>(key: &str, values: &[&str]) -> Result<Vec<T>> {
        values
            .iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| invalid(format!("bad value `{v}` on grid axis `{key}`")))
            })
            .collect()
    }
    match key.trim().replace('_', "-").as_str() {
        "epochs" => grid.epochs = all(key, &values)?,
        "lr" => grid.learning_rate = all(key, &values)?,
        "batch-size" => grid.batch_size = all(key, &values)?,
        "dropout" => grid.dropout = all(key, &values)?,
        other => bail!(invalid(format!(
            "unknown grid axis `{other}` (epochs, lr, batch-size or dropout)"
        ))),
    }
    Ok(())
}

pub fn train(settings: &Settings, args: TrainArgs) -> Result<()> {
    let defaults = TrainConfig::default();
    let selection = match settings
        .pick(args.selection, "selection", "overall".to_string())?
        .as_str()
    {
        "overall" => Selection::Overall,
        "novel" => Selection::NovelOnly,
        other => bail!(invalid(format!(
            "unknown selection `{other}` (overall or novel)"
        ))),
    };
    let config = TrainConfig {
        epochs: settings.pick(args.epochs, "epochs", defaults.epochs)?,
        learning_rate: settings.pick(args.lr, "lr", defaults.learning_rate)?,
        batch_size: settings.pick(args.batch_size, "batch-size", defaults.batch_size)?,
        dropout: settings.pick(args.dropout, "dropout", defaults.dropout)?,
        rng_seed: settings.pick(args.seed, "seed", defaults.rng_seed)?,
        warmup: settings.pick(args.warmup, "warmup", defaults.warmup)?,
        weight_decay: settings.pick(args.weight_decay, "weight-decay", defaults.weight_decay)?,
        threshold: settings.pick(args.threshold, "threshold", defaults.threshold)?,
        selection,
    };
    config.validate()?;
    let enc_defaults = EncoderConfig::default();
    let attention = match settings
        .pick(args.attention, "attention", "raw".to_string())?
        .as_str()
    {
        "raw" => AttentionMode::RawCosine,
        "normalized" => AttentionMode::Normalized,
        other => bail!(invalid(format!(
            "unknown attention mode `{other}` (raw or normalized)"
        ))),
    };
    let prefix_hidden: usize = settings.pick(args.prefix_hidden, "prefix-hidden", 32)?;
    let prefix = match settings
        .pick(args.prefix, "prefix", "mlp".to_string())?
        .as_str()
    {
        "identity" => PrefixMap::Identity,
        "mlp" => PrefixMap::Mlp {
            hidden: prefix_hidden,
        },
        other => bail!(invalid(format!(
            "unknown prefix map `{other}` (identity or mlp)"
        ))),
    };
    let detector_config = DetectorConfig {
        encoder: EncoderConfig {
            hidden_dim: settings.pick(args.hidden_dim, "hidden-dim", enc_defaults.hidden_dim)?,
            ffn_dim: settings.pick(args.ffn_dim, "ffn-dim", enc_defaults.ffn_dim)?,
            max_sequence_length: settings.pick(
                args.max_len,
                "max-len",
                enc_defaults.max_sequence_length,
            )?,
            seed: settings.pick(args.encoder_seed, "encoder-seed", enc_defaults.seed)?,
        },
        attention,
        prefix,
    };
    let mut grid = if args.full_grid {
        Grid::full()
    } else {
        Grid::single(&config)
    };
    for axis in &args.grid {
        parse_grid_axis(axis, &mut grid)?;
    }

    let (corpus, corpus_path) = load_corpus(settings, &args.corpus)?;
    let mut manifest = ManifestBuilder::new(
        "train",
        Some(config.rng_seed),
        json!({ "train": config, "detector": detector_config, "grid": grid, "alpha": args.alpha }),
    );
    manifest.input("corpus", &corpus_path)?;
    let (bundle, bundle_path) = load_bundle(settings, &args.bundle, &corpus)?;
    check_fresh(&bundle_path, manifest.inputs())?;
    manifest.input("bundle", &bundle_path)?;
    let prompts_path = settings.input(&args.prompts);
    let prompts = PromptSet::load(&prompts_path)?;
    check_fresh(&prompts_path, manifest.inputs())?;
    manifest.input("prompts", &prompts_path)?;

    let alpha: f64 = settings.pick(args.alpha, "alpha", LossConfig::DEFAULT_ALPHA)?;
    let loss = LossConfig::for_regime(bundle.regime, alpha);
    let initial = init_detector(
        detector_config,
        &corpus.sentences,
        &prompts,
        corpus.pos_vocabulary(),
    )?;

    let _lock = DirLock::acquire(&args.out_dir)?;
    let result = grid_search(&bundle, &prompts, &initial, &loss, &config, &grid)?;
    let name = checkpoint_name(
        bundle.regime,
        prompts.form(),
        result.best.rng_seed,
        result.best_cell,
    );
    let ckpt_path = args.out_dir.join(format!("{name}.ckpt"));
    atomic_write(
        &ckpt_path,
        &result.outcome.detector.to_container().to_bytes(),
    )?;
    let log_path = args.out_dir.join("train_log.jsonl");
    atomic_write(&log_path, log_to_jsonl(&result.outcome.log).as_bytes())?;
    let board_path = args.out_dir.join("leaderboard.jsonl");
    atomic_write(
        &board_path,
        leaderboard_to_jsonl(&result.leaderboard).as_bytes(),
    )?;
    manifest.output("checkpoint", &ckpt_path)?;
    manifest.output("log", &log_path)?;
    manifest.output("leaderboard", &board_path)?;
    manifest.write(&args.out_dir.join(DIR_MANIFEST))?;
    let best = result.outcome.best_record();
    println!(
        "best cell {} (epoch {}, dev F1 {:.4}) -> {}",
        result.best_cell,
        best.epoch,
        best.dev_f1,
        ckpt_path.display()
    );
    Ok(())
}

pub fn predict(settings: &Settings, args: PredictArgs) -> Result<()> {
    let threshold: f64 = settings.pick(
        args.threshold,
        "threshold",
        eventprompt::eval::DEFAULT_THRESHOLD,
    )?;
    let set_name: String = settings.pick(args.set, "set", "test".to_string())?;
    let scope: String = settings.pick(args.types, "types", "all".to_string())?;
    let (corpus, corpus_path) = load_corpus(settings, &args.corpus)?;
    let mut manifest = ManifestBuilder::new(
        "predict",
        None,
        json!({ "threshold": threshold, "set": set_name, "types": scope, "whole_corpus": args.bundle.is_none() }),
    );
    manifest.input("corpus", &corpus_path)?;
    let bundle = match &args.bundle {
        Some(b) => {
            let (bundle, path) = load_bundle(settings, b, &corpus)?;
            check_fresh(&path, manifest.inputs())?;
            manifest.input("bundle", &path)?;
            Some(bundle)
        }
        None => None,
    };
    let prompts_path = settings.input(&args.prompts);
    let prompts = PromptSet::load(&prompts_path)?;
    check_fresh(&prompts_path, manifest.inputs())?;
    manifest.input("prompts", &prompts_path)?;
    let ckpt_path = settings.input(&args.checkpoint);
    check_fresh(&ckpt_path, manifest.inputs())?;
    let bytes = std::fs::read(&ckpt_path)
        .map_err(|e| crate::exit::IoFailure(format!("cannot read {}: {e}", ckpt_path.display())))?;
    let detector = Detector::from_container(Container::from_bytes(&bytes)?)?;
    manifest.input("checkpoint", &ckpt_path)?;

    let sentences: &[AnnotatedSentence] = match &bundle {
        Some(b) => bundle_set(b, &set_name)?,
        None => &corpus.sentences,
    };
    let types = type_scope(&scope, bundle.as_ref(), prompts.type_ids())?;
    let matrices = predict_all(&detector, &prompts, sentences, &types)?;
    let ckpt_name = ckpt_path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    let set = decode_spans(
        &matrices,
        threshold,
        format!("{}@{ckpt_name}", prompts.form()),
    )?;
    let _lock = DirLock::acquire(&parent_dir(&args.out))?;
    atomic_write(&args.out, set.to_jsonl().as_bytes())?;
    manifest.output("predictions", &args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!(
        "wrote {} mentions over {} sentences to {}",
        set.mention_count(),
        set.sentences.len(),
        args.out.display()
    );
    Ok(())
}

pub fn eval(settings: &Settings, args: EvalArgs) -> Result<()> {
    let set_name: String = settings.pick(args.set, "set", "test".to_string())?;
    let scope: String = settings.pick(args.types, "types", "all".to_string())?;
    let (corpus, corpus_path) = load_corpus(settings, &args.gold)?;
    let mut manifest = ManifestBuilder::new(
        "eval",
        None,
        json!({ "set": set_name, "types": scope, "per_type": args.per_type, "whole_corpus": args.bundle.is_none() }),
    );
    manifest.input("corpus", &corpus_path)?;
    let bundle = match &args.bundle {
        Some(b) => {
            let (bundle, path) = load_bundle(settings, b, &corpus)?;
            check_fresh(&path, manifest.inputs())?;
            manifest.input("bundle", &path)?;
            Some(bundle)
        }
        None => None,
    };
    let pred_path = settings.input(&args.predictions);
    check_fresh(&pred_path, manifest.inputs())?;
    let predictions = PredictionSet::load(&pred_path)?;
    manifest.input("predictions", &pred_path)?;

    let gold: &[AnnotatedSentence] = match &bundle {
        Some(b) => bundle_set(b, &set_name)?,
        None => &corpus.sentences,
    };
    let restrict = match scope.as_str() {
        "all" => None,
        _ => Some(
            type_scope(&scope, bundle.as_ref(), &[])?
                .into_iter()
                .collect(),
        ),
    };
    let report = score_types(&predictions, gold, restrict.as_ref())?;
    let _lock = DirLock::acquire(&parent_dir(&args.out))?;
    atomic_write(&args.out, report.to_json(args.per_type).as_bytes())?;
    manifest.output("report", &args.out)?;
    if args.per_type {
        let table = args.out.with_extension("per_type.tsv");
        atomic_write(&table, report.per_type_tsv().as_bytes())?;
        manifest.output("per_type", &table)?;
    }
    manifest.write(&manifest_path_for(&args.out))?;
    let o = &report.overall;
    println!(
        "P {:.4} R {:.4} F1 {:.4} (gold {}, predicted {}, matched {})",
        o.precision, o.recall, o.f1, o.gold, o.predicted, o.matched
    );
    Ok(())
}

pub fn vote(settings: &Settings, args: VoteArgs) -> Result<()> {
    let mut manifest =
        ManifestBuilder::new("vote", None, json!({ "systems": args.predictions.len() }));
    let mut systems = Vec::new();
    for (i, p) in args.predictions.iter().enumerate() {
        let p = settings.input(p);
        check_fresh(&p, &BTreeMap::new())?;
        systems.push(PredictionSet::load(&p).with_context(|| format!("system {i}"))?);
        manifest.input(&format!("system{i}"), &p)?;
    }
    let voted = majority_vote(&systems)?;
    let _lock = DirLock::acquire(&parent_dir(&args.out))?;
    atomic_write(&args.out, voted.to_jsonl().as_bytes())?;
    manifest.output("predictions", &args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!(
        "kept {} mentions backed by a majority of {} systems",
        voted.mention_count(),
        systems.len()
    );
    Ok(())
}
