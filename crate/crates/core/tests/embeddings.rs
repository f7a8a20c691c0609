use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrep::corpus::{Vocabulary, PAD_ID, UNK_ID};
use textrep::lda::TopicTaggedCorpus;
use textrep::twe::{train_twe, TweOptions};
use textrep::word2vec::{train, train_with_log, Architecture, SamplingTable, TrainConfig};

fn random_corpus(seed: u64, docs: usize, words: usize) -> (Vocabulary, Vec<Vec<u32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text: Vec<Vec<String>> = (0..docs)
        .map(|_| {
            (0..rng.random_range(3..20))
                .map(|_| format!("w{}", rng.random_range(0..words).min(rng.random_range(0..words))))
                .collect()
        })
        .collect();
    let vocab = Vocabulary::build(text.iter().map(Vec::as_slice), 1000, &HashSet::new()).unwrap();
    let ids = text
        .iter()
        .map(|d| d.iter().map(|t| vocab.id(t).unwrap()).collect())
        .collect();
    (vocab, ids)
}

#[test]
fn negative_draws_follow_the_table() {
    let counts = [0u64, 0, 100, 40, 10, 3, 1];
    let table = SamplingTable::from_counts(&counts, 0.75).unwrap();
    let z: f64 = counts[2..].iter().map(|&c| (c as f64).powf(0.75)).sum();
    let mut hits = [0u64; 7];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    for _ in 0..n {
        hits[table.sample(&mut rng) as usize] += 1;
    }
    assert_eq!(hits[PAD_ID as usize], 0);
    assert_eq!(hits[UNK_ID as usize], 0);
    for w in 2..7 {
        let p = (counts[w] as f64).powf(0.75) / z;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        let observed = hits[w] as f64 / n as f64;
        assert!((observed - p).abs() < 5.0 * sd, "word {w}: {observed} vs {p}");
        assert!((table.probability(w as u32) - p).abs() < 1e-12);
    }
}

#[test]
fn pad_row_stays_zero() {
    let (vocab, mut docs) = random_corpus(1, 40, 30);
    for d in docs.iter_mut() {
        d.extend([PAD_ID; 5]);
    }
    for arch in [Architecture::SkipGram, Architecture::Cbow] {
        let cfg = TrainConfig {
            dim: 8,
            epochs: 3,
            ..TrainConfig::default()
        };
        let emb = train::<f32>(&docs, &vocab, arch, &cfg).unwrap();
        assert!(emb.input.row(0).iter().all(|&x| x == 0.0));
        assert!(emb.output.row(0).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn same_seed_same_vectors() {
    let (vocab, docs) = random_corpus(2, 40, 30);
    let cfg = TrainConfig {
        dim: 8,
        epochs: 2,
        dynamic_window: true,
        subsample: Some(1e-2),
        ..TrainConfig::default()
    };
    let a = train_with_log::<f32>(&docs, &vocab, Architecture::SkipGram, &cfg).unwrap();
    let b = train_with_log::<f32>(&docs, &vocab, Architecture::SkipGram, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let c = train::<f32>(&docs, &vocab, Architecture::SkipGram, &TrainConfig { seed: 99, ..cfg }).unwrap();
    assert_ne!(a.0.input, c.input);
}

#[test]
fn training_loss_falls() {
    let (vocab, docs) = random_corpus(3, 200, 40);
    let cfg = TrainConfig {
        dim: 16,
        epochs: 8,
        ..TrainConfig::default()
    };
    for arch in [Architecture::SkipGram, Architecture::Cbow] {
        let (_, log) = train_with_log::<f32>(&docs, &vocab, arch, &cfg).unwrap();
        assert!(log.last().unwrap() < &log[0], "{arch:?}: {log:?}");
    }
}

#[test]
fn frozen_zero_topics_reduce_to_skipgram() {
    let (vocab, docs) = random_corpus(4, 50, 25);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tagged = TopicTaggedCorpus {
        topics: 3,
        docs: docs
            .iter()
            .map(|d| d.iter().map(|&w| (w, rng.random_range(0..3))).collect())
            .collect(),
    };
    let cfg = TrainConfig {
        dim: 8,
        epochs: 3,
        ..TrainConfig::default()
    };
    let plain = train::<f64>(&docs, &vocab, Architecture::SkipGram, &cfg).unwrap();
    let options = TweOptions {
        freeze_topics: true,
        zero_topics: true,
        ..TweOptions::default()
    };
    let twe = train_twe::<f64>(&tagged, &vocab, &cfg, &options).unwrap();
    assert_eq!(twe.words, plain.input);
    assert_eq!(twe.output, plain.output);
    assert!(twe.topics.as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn warm_start_seeds_the_word_vectors() {
    let (vocab, docs) = random_corpus(5, 30, 20);
    let cfg = TrainConfig {
        dim: 6,
        epochs: 2,
        ..TrainConfig::default()
    };
    let base = train::<f32>(&docs, &vocab, Architecture::SkipGram, &cfg).unwrap();
    let tagged = TopicTaggedCorpus {
        topics: 2,
        docs: docs.iter().map(|d| d.iter().map(|&w| (w, w % 2)).collect()).collect(),
    };
    let zero = TrainConfig { epochs: 0, ..cfg };
    let options = TweOptions {
        warm_start: Some(&base),
        ..TweOptions::default()
    };
    let twe = train_twe(&tagged, &vocab, &zero, &options).unwrap();
    assert_eq!(twe.words, base.input);
    assert_eq!(twe.output, base.output);
}

#[test]
fn threaded_training_stays_finite() {
    let (vocab, docs) = random_corpus(6, 80, 30);
    let cfg = TrainConfig {
        dim: 8,
        epochs: 2,
        threads: 3,
        ..TrainConfig::default()
    };
    let emb = train::<f32>(&docs, &vocab, Architecture::SkipGram, &cfg).unwrap();
    assert!(emb.input.is_finite() && emb.output.is_finite());
    assert!(emb.input.row(0).iter().all(|&x| x == 0.0));
}

proptest! {
    #[test]
    fn table_probabilities_sum_to_one(counts in prop::collection::vec(1u64..1000, 1..40), power in 0.0f64..1.5) {
        let mut all = vec![0u64, 0];
        all.extend(counts);
        let table = SamplingTable::from_counts(&all, power).unwrap();
        let total: f64 = (0..all.len() as u32).map(|w| table.probability(w)).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert_eq!(table.probability(PAD_ID), 0.0);
        prop_assert_eq!(table.probability(UNK_ID), 0.0);
    }

    #[test]
    fn negatives_never_hit_the_target(seed in 0u64..500, target in 2u32..8) {
        let table = SamplingTable::from_counts(&[0, 0, 5, 1, 1, 9, 2, 3], 0.75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        table.draw_negatives(&mut rng, target, 10, &mut out);
        prop_assert_eq!(out.len(), 10);
        prop_assert!(out.iter().all(|&n| n != target && n >= 2));
    }
}
