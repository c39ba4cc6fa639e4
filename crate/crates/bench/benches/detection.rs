use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eventprompt::autograd::Mat;
use eventprompt::encoder::EncodedPair;
use eventprompt::split::supervised_split;
use eventprompt::train::predict_all;
use eventprompt::{decode_spans, prompt_attention, score, train, LossConfig, TrainConfig};
use eventprompt_bench::workload;

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("prompt_attention");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [32, 128, 768] {
        let pair = EncodedPair {
            prompt: Mat::from_shape_fn((24, d), |_| rng.gen_range(-1.0..1.0)),
            sentence: Mat::from_shape_fn((30, d), |_| rng.gen_range(-1.0..1.0)),
        };
        group.bench_with_input(BenchmarkId::from_parameter(d), &pair, |b, pair| {
            b.iter(|| prompt_attention(black_box(pair)).unwrap())
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_sentence");
    for hidden in [16, 64] {
        let w = workload(hidden);
        let sentence = &w.corpus.sentences[0];
        group.bench_function(BenchmarkId::from_parameter(hidden), |b| {
            b.iter(|| {
                w.detector
                    .predict_sentence(&w.prompts, black_box(sentence), &w.type_ids)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn decode_and_score(c: &mut Criterion) {
    let w = workload(16);
    let sentences = &w.corpus.sentences[..200];
    let matrices = predict_all(&w.detector, &w.prompts, sentences, &w.type_ids).unwrap();
    c.bench_function("decode_and_score_200", |b| {
        b.iter(|| {
            let set = decode_spans(black_box(&matrices), 0.5, "bench").unwrap();
            score(&set, sentences).unwrap()
        })
    });
}

fn train_epoch(c: &mut Criterion) {
    let w = workload(16);
    let ids: Vec<String> = w
        .corpus
        .sentences
        .iter()
        .take(64)
        .map(|s| s.sent_id.clone())
        .collect();
    let small = w.corpus.subset(&ids).unwrap();
    let bundle = supervised_split(&small, w.type_ids.clone(), 0.0, 0.0, 1).unwrap();
    let config = TrainConfig {
        epochs: 1,
        learning_rate: 3e-3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one_epoch_64_sentences", |b| {
        b.iter(|| {
            train(
                &bundle,
                &w.prompts,
                w.detector.clone(),
                &LossConfig::supervised(),
                &config,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, attention, predict, decode_and_score, train_epoch);
criterion_main!(benches);
