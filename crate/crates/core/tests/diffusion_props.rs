use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stmd::diffusion::{
    gaussian, loss_terms, run_chain, Condition, FeatureStats, LossReport, LossWeights, ModelConfig, MotionModel,
    NoiseSchedule, Target,
};
use stmd::fusion::FusionKind;
use stmd::motion::{ContactThresholds, MotionClip, MotionSequence, Skeleton};
use stmd::tensor::gradcheck::check;
use stmd::tensor::{Tape, Tensor};
use stmd::text::{TextPrompt, Vocabulary};

#[test]
fn alpha_bar_matches_independent_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let steps = rng.random_range(1..300);
        let a = rng.random_range(1e-5..0.3);
        let b = rng.random_range(a..0.99);
        let s = NoiseSchedule::build(steps, a, b).unwrap();
        let mut prod = 1.0;
        for t in 1..=steps {
            prod *= 1.0 - s.beta(t);
            assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
            assert!((s.one_minus_alpha_bar(t) - (1.0 - prod)).abs() < 1e-12);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert_eq!(s.one_minus_alpha_bar(1), s.beta(1));
    }
}

/// Simulates `x_t = √α_t x_{t−1} + √β_t ε` step by step and compares the
/// empirical mean and variance of every coordinate with the closed form.
#[test]
fn stepwise_chain_matches_closed_form_marginal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 10_000;
    for _ in 0..20 {
        let steps = rng.random_range(1..=50);
        let dim = rng.random_range(1..=8);
        let lo = rng.random_range(1e-4..0.05);
        let hi = rng.random_range(lo..0.5);
        let s = NoiseSchedule::build(steps, lo, hi).unwrap();
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(1..=steps);
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..draws {
            let mut x = x0.clone();
            for k in 1..=t {
                let (a, b) = (s.alpha(k).sqrt(), s.beta(k).sqrt());
                for v in x.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v = a * *v + b * e;
                }
            }
            for j in 0..dim {
                sum[j] += x[j];
                sq[j] += x[j] * x[j];
            }
        }
        let n = draws as f64;
        let var = 1.0 - s.alpha_bar(t);
        for j in 0..dim {
            let mean = sum[j] / n;
            let emp_var = sq[j] / n - mean * mean;
            let want = s.alpha_bar(t).sqrt() * x0[j];
            let se_mean = (var / n).sqrt();
            let se_var = var * (2.0 / (n - 1.0)).sqrt();
            assert!((mean - want).abs() < 3.0 * se_mean, "T={steps} t={t} mean {mean} vs {want}");
            assert!((emp_var - var).abs() < 3.0 * se_var, "T={steps} t={t} var {emp_var} vs {var}");
        }
    }
}

#[test]
fn oracle_chain_lands_on_the_target() {
    let s = NoiseSchedule::build(100, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = gaussian(&mut rng, 40, 51);
    let out = run_chain(&s, (40, 51), 9, |_, _| Ok(x0.clone())).unwrap();
    assert!(out.max_abs_diff(&x0) < 1e-5);
    assert_eq!(out, x0);
    // One step before the end the chain is within a few posterior deviations.
    let mut last_x1 = None;
    run_chain(&s, (40, 51), 9, |x, step| {
        if step == 1 {
            last_x1 = Some(x.clone());
        }
        Ok(x0.clone())
    })
    .unwrap();
    let x1 = last_x1.unwrap();
    let (_, _, var2) = s.posterior(2).unwrap();
    assert!(x1.max_abs_diff(&x0) < 6.0 * (var2 + s.one_minus_alpha_bar(1)).sqrt() + 1e-9);
}

#[test]
fn zero_noise_chain_is_repeatable() {
    let s = NoiseSchedule::build(20, 1e-3, 0.05).unwrap();
    let x = Tensor::row(vec![0.3, -0.7]);
    let x0 = Tensor::row(vec![1.0, 2.0]);
    let a = s.p_sample_step(&x, &x0, 10, None).unwrap();
    let b = s.p_sample_step(&x, &x0, 10, None).unwrap();
    assert_eq!(a, b);
}

fn walking_clip(seed: u64, frames: usize) -> MotionClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skel = Skeleton::default_chain();
    let trans: Vec<[f64; 3]> = (0..frames).map(|i| [0.1 * i as f64, 0.02 * i as f64, 0.9]).collect();
    let rots = (0..frames)
        .map(|i| {
            (0..skel.num_joints())
                .map(|j| {
                    let s = 0.3 * ((i as f64) * 0.6 + j as f64).sin();
                    [rng.random_range(-0.05..0.05), s, if j == 0 { 0.1 * i as f64 } else { 0.0 }]
                })
                .collect()
        })
        .collect();
    MotionSequence::new(10, trans, rots)
        .unwrap()
        .encode(&skel, ContactThresholds::default())
        .unwrap()
}

const FEET: [usize; 2] = [4, 6];

#[test]
fn perfect_prediction_has_zero_loss_and_offset_gives_c_squared() {
    let clip = walking_clip(4, 12);
    let stats = FeatureStats::fit([&clip.features]).unwrap();
    let target = Target::new(&clip.features, clip.root_init, &stats).unwrap();
    let mut t = Tape::new();
    let pred = t.leaf(target.features.clone());
    let terms = loss_terms(&mut t, pred, &target, &stats, FEET, LossWeights::default());
    let r = LossReport::read(&t, &terms);
    assert_eq!(r, LossReport::default());

    let c = 0.37;
    let shifted = target.features.map(|v| v + c);
    let pred = t.leaf(shifted);
    let terms = loss_terms(&mut t, pred, &target, &stats, FEET, LossWeights::default());
    let r = LossReport::read(&t, &terms);
    assert!((r.motion - c * c).abs() < 1e-12);
    assert!(r.is_valid());
    assert!((r.total - (r.motion + r.pos + r.vel + r.foot)).abs() < 1e-12);
}

#[test]
fn stats_round_trip_and_floor() {
    let clip = walking_clip(5, 20);
    let stats = FeatureStats::fit([&clip.features]).unwrap();
    assert!(stats.std.iter().all(|&s| s >= 0.01));
    let back = stats.denormalize(&stats.normalize(&clip.features));
    assert!(back.max_abs_diff(&clip.features) < 1e-12);
    let flat = Tensor::matrix(3, 2, vec![1.0, 5.0, 1.0, 5.0, 1.0, 5.0]);
    let s = FeatureStats::fit([&flat]).unwrap();
    assert_eq!(s.std, vec![0.01, 0.01]);
}

fn tiny_config(kind: FusionKind) -> ModelConfig {
    ModelConfig {
        fusion: kind,
        d_model: 4,
        d_text: 4,
        d_c: 4,
        heads: 1,
        text_layers: 1,
        denoiser_layers: 1,
        k_neighbors: 3,
        global_subset: 4,
        num_joints: 8,
    }
}

fn condition(config: &ModelConfig, vocab: &Vocabulary, m: usize, seed: u64) -> Condition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut r: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            r.extend((0..3).map(|_| rng.random_range(0.0..1.0)));
            r
        })
        .collect();
    let prompt = TextPrompt::new(vocab, "someone climbs the stairs").unwrap();
    Condition::new(&Tensor::from_rows(&rows), prompt, config).unwrap()
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let vocab = Vocabulary::from_lexicon();
    let config = tiny_config(FusionKind::ParallelCross);
    let (model, store) = MotionModel::new(config.clone(), vocab.len(), 6).unwrap();
    let cond = condition(&config, &vocab, 10, 7);
    let clip = walking_clip(8, 6);
    let stats = FeatureStats::fit([&clip.features]).unwrap();
    let target = Target::new(&clip.features, clip.root_init, &stats).unwrap();
    let s = NoiseSchedule::build(10, 1e-3, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let eps = gaussian(&mut rng, 6, config.d_pose());
    let report = check(
        &store,
        |t| {
            model
                .item_loss(t, &cond, &target, &s, 5, &eps, false, &stats, FEET, LossWeights::default())
                .unwrap()
                .total
        },
        3,
        10,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn sampling_is_deterministic_and_shaped() {
    let vocab = Vocabulary::from_lexicon();
    let mut config = tiny_config(FusionKind::Triple);
    config.d_model = 8;
    let (model, store) = MotionModel::new(config.clone(), vocab.len(), 11).unwrap();
    let cond = condition(&config, &vocab, 30, 12);
    let stats = FeatureStats::identity(config.d_pose());
    let s = NoiseSchedule::build(10, 1e-4, 0.02).unwrap();
    let z = model.condition_value(&store, &cond).unwrap();
    assert_eq!(z.shape(), &[1, 4]);
    let a = model.sample(&store, &s, &stats, &z, 40, 5, 1.0).unwrap();
    let b = model.sample(&store, &s, &stats, &z, 40, 5, 1.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[40, config.d_pose()]);
    assert!(a.is_finite());
    let c = model.sample(&store, &s, &stats, &z, 40, 6, 1.0).unwrap();
    assert_ne!(a, c);
    let g = model.sample(&store, &s, &stats, &z, 40, 5, 2.5).unwrap();
    assert!(g.is_finite());
    let clip = MotionClip::new(10, a, Default::default()).unwrap();
    let dec = clip.decode().unwrap();
    assert_eq!(&dec.root[0][..2], &[0.0, 0.0]);
}

#[test]
fn sample_depends_only_on_its_own_condition() {
    let vocab = Vocabulary::from_lexicon();
    let config = tiny_config(FusionKind::ConcatSelf);
    let (model, store) = MotionModel::new(config.clone(), vocab.len(), 13).unwrap();
    let s = NoiseSchedule::build(5, 1e-4, 0.02).unwrap();
    let stats = FeatureStats::identity(config.d_pose());
    let ca = condition(&config, &vocab, 12, 14);
    let cb = condition(&config, &vocab, 20, 15);
    let za = model.condition_value(&store, &ca).unwrap();
    let alone = model.sample(&store, &s, &stats, &za, 10, 3, 1.0).unwrap();
    // Computing another item first must not perturb this one.
    let zb = model.condition_value(&store, &cb).unwrap();
    let _ = model.sample(&store, &s, &stats, &zb, 10, 4, 1.0).unwrap();
    let again = model.sample(&store, &s, &stats, &model.condition_value(&store, &ca).unwrap(), 10, 3, 1.0).unwrap();
    assert_eq!(alone, again);
}
