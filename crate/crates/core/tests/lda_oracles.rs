use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;
use textrep::lda::{
    heldout_perplexity, heldout_slice, perplexity_elbow, perplexity_minimum, select_topic_count, train, LdaConfig,
    LdaState, TagMode, FOLD_IN_SWEEPS,
};

/// Log of the collapsed joint `p(w, z)` with θ and φ integrated out.
fn log_joint(docs: &[Vec<u32>], z: &[Vec<u32>], k: usize, v: usize, alpha: f64, beta: f64) -> f64 {
    let mut n_kw = vec![vec![0usize; v]; k];
    let mut n_k = vec![0usize; k];
    let mut total = 0.0;
    for (words, topics) in docs.iter().zip(z) {
        let mut n_dk = vec![0usize; k];
        for (&w, &t) in words.iter().zip(topics) {
            n_kw[t as usize][w as usize] += 1;
            n_k[t as usize] += 1;
            n_dk[t as usize] += 1;
        }
        total += ln_gamma(k as f64 * alpha) - ln_gamma(words.len() as f64 + k as f64 * alpha);
        total += n_dk
            .iter()
            .map(|&c| ln_gamma(c as f64 + alpha) - ln_gamma(alpha))
            .sum::<f64>();
    }
    for t in 0..k {
        total += ln_gamma(v as f64 * beta) - ln_gamma(n_k[t] as f64 + v as f64 * beta);
        total += n_kw[t]
            .iter()
            .map(|&c| ln_gamma(c as f64 + beta) - ln_gamma(beta))
            .sum::<f64>();
    }
    total
}

fn oracle_conditional(state: &LdaState, d: usize, i: usize) -> Vec<f64> {
    let c = state.config();
    let mut z = state.assignments().to_vec();
    let logs: Vec<f64> = (0..c.topics)
        .map(|t| {
            z[d][i] = t as u32;
            log_joint(state.documents(), &z, c.topics, state.vocab_len(), c.alpha, c.beta)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| w / sum).collect()
}

fn toy() -> Vec<Vec<u32>> {
    vec![vec![2, 3, 4, 2, 7], vec![5, 6, 5, 0, 0, 7], vec![2, 1, 6, 4, 3, 5]]
}

fn toy_config(seed: u64) -> LdaConfig {
    LdaConfig {
        topics: 3,
        alpha: 0.7,
        beta: 0.2,
        sweeps: 10,
        burn_in: 1,
        seed,
    }
}

#[test]
fn counts_survive_200_sweeps() {
    let mut state = LdaState::init(&toy(), 8, &toy_config(4)).unwrap();
    for _ in 0..200 {
        state.sweep();
        state.check_invariants().unwrap();
    }
    assert_eq!(state.sweeps_done(), 200);
}

#[test]
fn conditional_matches_collapsed_joint_ratio() {
    for seed in 0..10 {
        let mut state = LdaState::init(&toy(), 8, &toy_config(seed)).unwrap();
        state.run(seed as usize % 4);
        for d in 0..state.num_docs() {
            for i in 0..state.documents()[d].len() {
                let got = state.conditional(d, i);
                let want = oracle_conditional(&state, d, i);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-10, "doc {d} token {i}: {got:?} vs {want:?}");
                }
            }
        }
    }
}

#[test]
fn argmax_tags_follow_the_oracle() {
    let mut state = LdaState::init(&toy(), 8, &toy_config(3)).unwrap();
    state.run(5);
    let tagged = state.tag_corpus(TagMode::ArgmaxConditional);
    for (d, doc) in tagged.docs.iter().enumerate() {
        for (i, &(w, t)) in doc.iter().enumerate() {
            assert_eq!(w, state.documents()[d][i]);
            let p = oracle_conditional(&state, d, i);
            let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let first = p.iter().position(|&x| x == best).unwrap();
            assert_eq!(t as usize, first);
        }
    }
    let sampled = state.tag_corpus(TagMode::FinalSample);
    for (d, doc) in sampled.docs.iter().enumerate() {
        let topics: Vec<u32> = doc.iter().map(|&(_, t)| t).collect();
        assert_eq!(topics, state.assignments()[d]);
    }
}

/// Documents drawn from the LDA generative process; word ids start at 2.
fn planted(phi: &[Vec<f64>], docs: usize, len: usize, alpha: f64, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = phi.len();
    let gamma = Gamma::new(alpha, 1.0).unwrap();
    (0..docs)
        .map(|_| {
            // symmetric Dirichlet via normalized gamma draws
            let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
            let sum: f64 = draws.iter().sum();
            let theta: Vec<f64> = draws.iter().map(|g| g / sum).collect();
            (0..len)
                .map(|_| {
                    let t = pick(&theta, rng.random());
                    pick(&phi[t], rng.random()) as u32 + 2
                })
                .collect()
        })
        .collect()
}

fn pick(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn two_topics() -> Vec<Vec<f64>> {
    let a = vec![0.3, 0.2, 0.15, 0.1, 0.1, 0.05, 0.04, 0.03, 0.02, 0.01];
    let b = a.iter().rev().copied().collect();
    vec![a, b]
}

/// Total-variation distance between estimated and planted topics over the
/// real words, minimized over topic permutations (K = 2).
fn recovery_error(state: &LdaState, truth: &[Vec<f64>]) -> f64 {
    let phi = state.estimate_phi();
    let est: Vec<Vec<f64>> = (0..2)
        .map(|t| {
            let row = &phi.row(t)[2..];
            let s: f64 = row.iter().sum();
            row.iter().map(|x| x / s).collect()
        })
        .collect();
    let tv = |a: &[f64], b: &[f64]| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let straight = tv(&est[0], &truth[0]).max(tv(&est[1], &truth[1]));
    let swapped = tv(&est[0], &truth[1]).max(tv(&est[1], &truth[0]));
    straight.min(swapped)
}

#[test]
fn planted_topics_are_recovered() {
    let truth = two_topics();
    let mut ok = 0;
    for seed in 0..5 {
        let corpus = planted(&truth, 200, 50, 0.5, 100 + seed);
        let cfg = LdaConfig {
            topics: 2,
            alpha: 0.5,
            beta: 0.01,
            sweeps: 200,
            burn_in: 50,
            seed,
        };
        let state = train(&corpus, 12, &cfg).unwrap();
        if recovery_error(&state, &truth) <= 0.1 {
            ok += 1;
        }
    }
    assert!(ok >= 4, "{ok}/5 seeds recovered the planted topics");
}

#[test]
fn heldout_perplexity_improves_with_sweeps() {
    let truth = two_topics();
    let mut gains = Vec::new();
    for seed in 0..5 {
        let corpus = planted(&truth, 200, 50, 0.5, 200 + seed);
        let (train_idx, held_idx) = heldout_slice(&corpus, 0.2, seed);
        let train_docs: Vec<Vec<u32>> = train_idx.iter().map(|&d| corpus[d].clone()).collect();
        let held: Vec<Vec<u32>> = held_idx.iter().map(|&d| corpus[d].clone()).collect();
        let cfg = LdaConfig {
            topics: 2,
            alpha: 0.5,
            beta: 0.01,
            sweeps: 200,
            burn_in: 50,
            seed,
        };
        let mut state = LdaState::init(&train_docs, 12, &cfg).unwrap();
        state.sweep();
        let early = heldout_perplexity(&state.estimate_phi(), &held, cfg.alpha, FOLD_IN_SWEEPS, seed).unwrap();
        state.run(cfg.sweeps - 1);
        let late = heldout_perplexity(&state.estimate_phi(), &held, cfg.alpha, FOLD_IN_SWEEPS, seed).unwrap();
        gains.push(early - late);
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[2] >= 0.0, "median perplexity change {}", -gains[2]);
}

#[test]
fn topic_count_sweep_finds_planted_three() {
    let truth: Vec<Vec<f64>> = (0..3)
        .map(|t| (0..15).map(|w| if w / 5 == t { 0.18 } else { 0.01 }).collect())
        .collect();
    let corpus = planted(&truth, 300, 60, 0.3, 5);
    let base = LdaConfig {
        topics: 3,
        alpha: 0.3,
        beta: 0.01,
        sweeps: 150,
        burn_in: 50,
        seed: 2,
    };
    let points = select_topic_count(&corpus, 17, &[1, 2, 3, 4, 5, 6, 8], &base, 0.2, &mut |_, _| Ok(0.0)).unwrap();
    let best = perplexity_minimum(&points).unwrap();
    let elbow = perplexity_elbow(&points, 0.01).unwrap();
    assert!((2..=5).contains(&best) || (2..=5).contains(&elbow), "{points:?}");
}
