use esdnet::loss::{FeatureExtractor, LossConfig};
use esdnet::model::{ModelConfig, ModelParams};
use esdnet::synth::gen_dataset;
use esdnet::train::*;
use esdnet::Tensor;
use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn schedule_starts_at_max_and_restarts_each_cycle() {
    let cfg = TrainConfig::default();
    assert_eq!(cosine_lr(0.0, &cfg), 2e-4);
    assert!(close(cosine_lr(25.0, &cfg), (2e-4 + 1e-6) / 2.0, 1e-15));
    for t in [0.0, 3.7, 12.5, 25.0, 49.0] {
        assert!(close(cosine_lr(t, &cfg), cosine_lr(t + 50.0, &cfg), 1e-15));
        assert!(close(cosine_lr(t, &cfg), cosine_lr(t + 100.0, &cfg), 1e-15));
    }
    // Just before the boundary the rate is near the floor; at it, back to the peak.
    assert!(cosine_lr(49.999, &cfg) < 1.01e-6);
    assert_eq!(cosine_lr(50.0, &cfg), 2e-4);
    assert_eq!(cosine_lr(100.0, &cfg), 2e-4);
    let within: Vec<f64> = (0..50).map(|e| cosine_lr(e as f64, &cfg)).collect();
    assert!(within.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn paper_and_desk_settings_differ_only_in_scale() {
    let desk = TrainConfig::default();
    let paper = TrainConfig::paper();
    assert_eq!((desk.epochs, desk.patch, desk.batch), (4, 64, 2));
    assert_eq!((paper.epochs, paper.patch), (150, 768));
    assert_eq!(paper.lr_max, desk.lr_max);
    assert!(TrainConfig { patch: 60, ..desk.clone() }.validate().is_err());
    assert!(TrainConfig { lr_min: 1.0, ..desk }.validate().is_err());
}

/// Textbook scalar Adam on `f(θ) = θ²`.
fn adam_oracle(theta0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        theta -= lr * mh / (vh.sqrt() + eps);
        out.push(theta);
    }
    out
}

#[test]
fn adam_matches_scalar_oracle_on_a_quadratic() {
    let want = adam_oracle(1.0, 0.1, 100);
    let mut adam = Adam::new(0.9, 0.999, 1e-8);
    let mut theta = Tensor::scalar(1.0f32);
    for (t, &expected) in want.iter().enumerate() {
        let g = Tensor::scalar(2.0 * theta.data()[0]);
        let grads: IndexMap<String, Tensor<f32>> = [("theta".to_string(), g)].into_iter().collect();
        adam.step([("theta", &mut theta)], &grads, 0.1).unwrap();
        assert!(close(theta.data()[0] as f64, expected, 1e-4), "step {}: {} vs {expected}", t + 1, theta.data()[0]);
    }
    assert_eq!(adam.steps(), 100);
    assert!(theta.data()[0].abs() < 0.05);
}

#[test]
fn adam_with_zero_gradients_leaves_parameters_unchanged() {
    let mut adam = Adam::new(0.9, 0.999, 1e-8);
    let mut p = Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5);
    let before = p.clone();
    let grads: IndexMap<String, Tensor<f32>> = [("p".to_string(), Tensor::zeros(&[2, 3]))].into_iter().collect();
    for _ in 0..5 {
        adam.step([("p", &mut p)], &grads, 1e-2).unwrap();
    }
    assert_eq!(p.data(), before.data());
}

#[test]
fn adam_rejects_bad_gradients_without_mutating() {
    let mut adam = Adam::new(0.9, 0.999, 1e-8);
    let mut p = Tensor::from_fn(&[3], |i| i as f32);
    let nan: IndexMap<String, Tensor<f32>> =
        [("p".to_string(), Tensor::new(&[3], vec![0.1, f32::NAN, 0.2]).unwrap())].into_iter().collect();
    let err = adam.step([("p", &mut p)], &nan, 1e-2).unwrap_err();
    assert!(err.to_string().contains('p'), "{err}");
    let wrong: IndexMap<String, Tensor<f32>> = [("p".to_string(), Tensor::zeros(&[4]))].into_iter().collect();
    assert!(adam.step([("p", &mut p)], &wrong, 1e-2).is_err());
    assert_eq!(p.data(), &[0.0, 1.0, 2.0]);
    assert_eq!(adam.steps(), 0);
}

#[test]
fn crops_cut_the_same_window_from_both_images() {
    let clean = Tensor::from_fn(&[1, 3, 40, 48], |i| i as f32);
    let moire = clean.map(|v| -v);
    let pair = ImagePair { clean: clean.clone(), moire };
    assert!(random_crop(&pair, 41, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let c = random_crop(&pair, 16, &mut rng).unwrap();
        assert_eq!(c.clean.shape(), &[1, 3, 16, 16]);
        assert!(c.clean.data().iter().zip(c.moire.data()).all(|(a, b)| *a == -*b));
        let origin = c.clean.data()[0] as usize;
        let (y0, x0) = (origin / 48, origin % 48);
        assert_eq!(c.clean.at4(0, 2, 15, 15) as usize, 2 * 40 * 48 + (y0 + 15) * 48 + x0 + 15);
    }
    let a = random_crop(&pair, 16, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = random_crop(&pair, 16, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a.clean.data(), b.clean.data());
    let square = ImagePair { clean: Tensor::zeros(&[1, 3, 16, 16]), moire: Tensor::ones(&[1, 3, 16, 16]) };
    let same = random_crop(&square, 16, &mut rng).unwrap();
    assert_eq!(same.moire.data(), square.moire.data());
}

fn tiny_run(seed: u64) -> (TrainState, ModelParams<f32>) {
    let pairs: Vec<ImagePair> = gen_dataset(4, 32, 32, 5).unwrap().into_iter().map(Into::into).collect();
    let mut model = ModelParams::build(ModelConfig::standard().reduced(8), seed).unwrap();
    let cfg = TrainConfig { epochs: 2, batch: 2, patch: 32, lr_max: 1e-3, seed, ..Default::default() };
    let lc = LossConfig { perceptual_block: 2, ..Default::default() };
    let ext = FeatureExtractor::from_config(&lc).unwrap();
    let mut seen = 0;
    let state = train(&mut model, &pairs, &cfg, &lc, &ext, |_| seen += 1).unwrap();
    assert_eq!(seen, 4);
    (state, model)
}

#[test]
fn identical_seeds_reproduce_identical_runs() {
    let (a, ma) = tiny_run(3);
    let (b, mb) = tiny_run(3);
    assert_eq!(loss_log_csv(&a.log), loss_log_csv(&b.log));
    assert!(ma.iter().zip(mb.iter()).all(|((_, x), (_, y))| x.data() == y.data()));
    let (c, _) = tiny_run(4);
    assert_ne!(loss_log_csv(&a.log), loss_log_csv(&c.log));
    assert_eq!(a.log.len(), 4);
    assert_eq!(a.log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert_eq!(a.log[2].epoch, 1);
    assert!(loss_log_csv(&a.log).starts_with(LOSS_CSV_HEADER));
}

#[test]
fn loss_falls_on_a_small_problem() {
    let pair: ImagePair = gen_dataset(1, 32, 32, 8).unwrap().remove(0).into();
    let mut model = ModelParams::build(ModelConfig::standard().reduced(8), 0).unwrap();
    let cfg = TrainConfig { epochs: 200, batch: 1, patch: 32, lr_max: 2e-3, cycle_epochs: 200.0, ..Default::default() };
    let lc = LossConfig { perceptual_block: 1, ..Default::default() };
    let ext = FeatureExtractor::from_config(&lc).unwrap();
    let state = train(&mut model, &[pair], &cfg, &lc, &ext, |_| {}).unwrap();
    let first = state.log[0].loss;
    let last = state.log[199].loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn identity_restoration_scores_perfectly() {
    let pairs: Vec<ImagePair> = gen_dataset(3, 40, 36, 1).unwrap().into_iter().map(Into::into).collect();
    let clean_lookup: Vec<Tensor<f32>> = pairs.iter().map(|p| center_crop(&p.clean).unwrap()).collect();
    let mut k = 0;
    let report = evaluate_with(&pairs, |_| {
        k += 1;
        Ok(clean_lookup[k - 1].clone())
    })
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.mean_psnr, esdnet::metrics::PSNR_CAP);
    assert!((report.mean_ssim - 1.0).abs() < 1e-12);
    assert!(report.mean_input_psnr < 40.0);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn center_crop_keeps_the_middle() {
    let img = Tensor::from_fn(&[1, 1, 20, 35], |i| i as f32);
    let c = center_crop(&img).unwrap();
    assert_eq!(c.shape(), &[1, 1, 16, 32]);
    assert_eq!(c.data()[0], (2 * 35 + 1) as f32);
    assert!(center_crop(&Tensor::<f32>::zeros(&[1, 3, 15, 40])).is_err());
}
