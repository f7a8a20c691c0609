use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrep::cnnvae::{
    encode_corpus, encoder_forward, forward, kl_divergence, train, Mode, Noise, VaeConfig, VaeModel, Variant,
};
use textrep::Matrix;

/// Closed-form Gaussian KL, written independently of the library.
fn kl_oracle(mu: &[f64], sigma: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..mu.len() {
        let log_var = 2.0 * sigma[i].ln();
        acc += mu[i] * mu[i] + sigma[i] * sigma[i] - 1.0 - log_var;
    }
    acc / 2.0
}

#[test]
fn kl_is_nonnegative_and_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100_000 {
        let dim = rng.random_range(1..=4);
        let mu: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let sigma: Vec<f64> = (0..dim).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
        let kl = kl_divergence(&mu, &sigma).unwrap();
        assert!(kl >= 0.0, "{mu:?} {sigma:?} -> {kl}");
        let oracle = kl_oracle(&mu, &sigma);
        assert!((kl - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{kl} vs {oracle}");
        if kl == 0.0 {
            assert!(mu.iter().all(|&m| m == 0.0) && sigma.iter().all(|&s| s == 1.0));
        }
    }
    assert_eq!(kl_divergence(&[0.0; 5], &[1.0; 5]).unwrap(), 0.0);
}

fn tiny(seed: u64) -> VaeConfig {
    VaeConfig {
        input_rows: 6,
        input_cols: 4,
        kernel_widths: vec![2, 3],
        filters_per_width: 4,
        latent_dim: 3,
        hidden_dim: 16,
        learning_rate: 0.01,
        epochs: 50,
        batch_size: 16,
        seed,
        ..VaeConfig::default()
    }
}

fn toy_docs(n: usize, seed: u64) -> Vec<Matrix<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let base: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let data = (0..24).map(|i| base[i % 4] * (1.0 + 0.1 * (i / 4) as f32)).collect();
            Matrix::from_vec(6, 4, data).unwrap()
        })
        .collect()
}

#[test]
fn training_loss_decreases_on_toy_set() {
    let docs = toy_docs(64, 3);
    let mut drops: Vec<f64> = (0..5)
        .map(|seed| {
            let (_, log) = train(&docs, None, &tiny(seed), Variant::Vae).unwrap();
            log.last().unwrap().total - log[0].total
        })
        .collect();
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] < 0.0, "median change {}", drops[2]);
}

#[test]
fn ae_training_decreases_reconstruction() {
    let docs = toy_docs(64, 4);
    let (_, log) = train(&docs, None, &tiny(1), Variant::Ae).unwrap();
    assert!(log.last().unwrap().recon < log[0].recon);
    assert!(log.iter().all(|e| e.kl == 0.0));
}

#[test]
fn validation_curve_is_logged() {
    let docs = toy_docs(20, 5);
    let val = toy_docs(5, 6);
    let cfg = VaeConfig { epochs: 3, ..tiny(2) };
    let (_, log) = train(&docs, Some(&val), &cfg, Variant::Vae).unwrap();
    assert_eq!(log.len(), 3);
    assert!(log.iter().all(|e| e.validation_total.is_some_and(f64::is_finite)));
}

#[test]
fn exploding_rate_reports_divergence() {
    let docs: Vec<Matrix<f32>> = toy_docs(8, 9)
        .into_iter()
        .map(|m| Matrix::from_vec(6, 4, m.as_slice().iter().map(|v| v * 1e18).collect()).unwrap())
        .collect();
    let cfg = VaeConfig {
        learning_rate: 1e30,
        epochs: 5,
        ..tiny(1)
    };
    match train(&docs, None, &cfg, Variant::Vae) {
        Err(textrep::Error::Divergence { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn same_seed_same_model() {
    let docs = toy_docs(30, 8);
    let cfg = VaeConfig { epochs: 4, ..tiny(3) };
    let (a, la) = train(&docs, None, &cfg, Variant::Vae).unwrap();
    let (b, lb) = train(&docs, None, &cfg, Variant::Vae).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(la, lb);
    let ea = encode_corpus(&a, &docs).unwrap();
    assert_eq!(ea.shape(), (30, 3));
    let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ea), bits(&encode_corpus(&a, &docs).unwrap()));
}

#[test]
fn paper_scale_latent_width() {
    let cfg = VaeConfig {
        input_rows: 10,
        input_cols: 8,
        ..VaeConfig::default()
    };
    let model = VaeModel::<f32>::new(cfg, Variant::Vae, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let enc = encode_corpus(&model, &vec![Matrix::zeros(10, 8)]).unwrap();
    assert_eq!(enc.cols(), 128);
}

proptest! {
    #[test]
    fn pooling_ignores_row_order_within_single_row_kernels(seed in 0u64..200, perm_seed in 0u64..200) {
        // width-1 kernels see each row independently, so permuting rows only
        // permutes each filter's feature vector
        let cfg = VaeConfig {
            input_rows: 5,
            input_cols: 3,
            kernel_widths: vec![1],
            filters_per_width: 4,
            latent_dim: 2,
            hidden_dim: 3,
            ..VaeConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = VaeModel::<f64>::new(cfg, Variant::Vae, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut shuffled = rows.clone();
        let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..5).rev() {
            shuffled.swap(i, prng.random_range(0..=i));
        }
        let a = Matrix::from_rows(&rows).unwrap();
        let b = Matrix::from_rows(&shuffled).unwrap();
        let (mu_a, sigma_a, ta) = encoder_forward(&a, &model, Mode::Eval, &mut rng).unwrap();
        let (mu_b, sigma_b, tb) = encoder_forward(&b, &model, Mode::Eval, &mut rng).unwrap();
        prop_assert_eq!(ta.pooled, tb.pooled);
        prop_assert_eq!(mu_a, mu_b);
        prop_assert_eq!(sigma_a, sigma_b);
        for (f, feats) in ta.features.iter().enumerate() {
            let max = feats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(max, tb.features[f].iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }

    #[test]
    fn zero_noise_vae_equals_ae(seed in 0u64..200) {
        let cfg = tiny(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vae = VaeModel::<f64>::new(cfg.clone(), Variant::Vae, &mut rng).unwrap();
        let ae = VaeModel::from_params(cfg, Variant::Ae, vae.params().to_vec()).unwrap();
        let x = Matrix::from_vec(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let noise = Noise::none(3);
        let tv = forward(&x, &vae, &noise).unwrap();
        let ta = forward(&x, &ae, &noise).unwrap();
        prop_assert_eq!(tv.z, ta.z);
        prop_assert_eq!(tv.reconstruction, ta.reconstruction);
        prop_assert!(tv.kl >= 0.0);
    }
}
