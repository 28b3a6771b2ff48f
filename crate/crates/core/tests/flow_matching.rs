mod common;

use common::{max_abs, FlowOracle};
use pfgn::conditioning::TimeEmbedding;
use pfgn::flow_matching::{self, FlowSample, FlowMatchingSampler};
use pfgn::generator::FieldGenerator;
use pfgn::{SeededStream, Tensor};
use proptest::prelude::*;

fn clean_and_noise(seed: u64, n: usize) -> (Tensor, Tensor) {
    let mut rng = SeededStream::new(seed);
    let clean = Tensor::from_fn(&[n, 3], |i| ((i as f32) * 0.37).sin() * 0.8);
    (clean, rng.normal_tensor(&[n, 3]))
}

fn oracle(clean: &Tensor) -> FlowOracle {
    FlowOracle { clean: clean.clone(), coord_dims: 2, embed_dims: 32 }
}

fn coords(n: usize) -> Tensor {
    Tensor::from_fn(&[n, 2], |i| (i as f32 * 0.01) - 0.5)
}

#[test]
fn path_endpoints_are_bit_exact() {
    let (clean, noise) = clean_and_noise(1, 64);
    let start = FlowSample::at(clean.clone(), noise.clone(), 0.0).unwrap();
    let end = FlowSample::at(clean.clone(), noise.clone(), 1.0).unwrap();
    assert_eq!(start.y_tau, clean);
    assert_eq!(end.y_tau, noise);
}

#[test]
fn target_velocity_is_noise_minus_clean() {
    let (clean, noise) = clean_and_noise(2, 16);
    let s = FlowSample::at(clean.clone(), noise.clone(), 0.3).unwrap();
    for i in 0..clean.numel() {
        assert_eq!(s.f_target.data()[i], noise.data()[i] - clean.data()[i]);
    }
}

#[test]
fn tau_outside_unit_interval_is_rejected() {
    let (clean, noise) = clean_and_noise(3, 4);
    assert!(FlowSample::at(clean.clone(), noise.clone(), 1.5).is_err());
    assert!(FlowSample::at(clean, noise, -0.1).is_err());
}

#[test]
fn loss_is_the_mean_squared_velocity_error() {
    let (clean, noise) = clean_and_noise(4, 10);
    let s = FlowSample::at(clean, noise, 0.5).unwrap();
    let pred = Tensor::from_fn(&[10, 3], |i| i as f32 * 0.1);
    let want: f64 = pred
        .data()
        .iter()
        .zip(s.f_target.data())
        .map(|(p, f)| (*p as f64 - *f as f64).powi(2))
        .sum::<f64>()
        / 30.0;
    let got = flow_matching::loss(&pred, &s).unwrap() as f64;
    assert!((got - want).abs() <= 1e-6 * want);
}

#[test]
fn oracle_velocity_recovers_the_clean_fields() {
    let (clean, _) = clean_and_noise(5, 48);
    let net = oracle(&clean);
    for steps in [1, 10, 1000] {
        let mut rng = SeededStream::new(9);
        let out = flow_matching::sample(&net, &coords(48), steps, &TimeEmbedding::default(), &mut rng).unwrap();
        let err = max_abs(&out, &clean);
        assert!(err <= 1e-4, "{steps} steps: error {err}");
    }
}

#[test]
fn sampler_is_reproducible_and_seed_dependent() {
    let (clean, _) = clean_and_noise(6, 20);
    let sampler = FlowMatchingSampler { network: oracle(&clean), n_steps: 5, embedding: TimeEmbedding::default() };
    let run = |seed| sampler.generate(&coords(20), 3, &mut SeededStream::new(seed)).unwrap();
    assert_eq!(run(1), run(1));
    assert!(!sampler.is_deterministic());
    let (clean_dims, _) = clean_and_noise(6, 20);
    assert_eq!(run(1)[0].shape(), clean_dims.shape());
}

#[test]
fn batched_samples_match_sequential_draws() {
    let (clean, _) = clean_and_noise(7, 12);
    let net = oracle(&clean);
    let emb = TimeEmbedding::default();
    let many = flow_matching::sample_many(&net, &coords(12), 4, 3, &emb, &mut SeededStream::new(2)).unwrap();
    assert_eq!(many.len(), 4);
    for s in &many {
        assert!(max_abs(s, &clean) <= 1e-4);
    }
}

#[test]
fn training_sample_draws_tau_in_unit_interval() {
    let (clean, _) = clean_and_noise(8, 8);
    let mut rng = SeededStream::new(3);
    for _ in 0..200 {
        let s = flow_matching::make_training_sample(&clean, &mut rng).unwrap();
        assert!((0.0..1.0).contains(&s.tau));
    }
}

#[test]
fn non_finite_clean_fields_are_rejected() {
    let clean = Tensor::new(&[1, 3], vec![0.0, f32::NAN, 0.0]).unwrap();
    assert!(flow_matching::make_training_sample(&clean, &mut SeededStream::new(0)).is_err());
}

proptest! {
    #[test]
    fn interpolant_lies_on_the_straight_path(tau in 0.0f64..=1.0, seed in any::<u64>()) {
        let (clean, noise) = clean_and_noise(seed, 8);
        let s = FlowSample::at(clean.clone(), noise.clone(), tau).unwrap();
        for i in 0..clean.numel() {
            let (c, z) = (clean.data()[i] as f64, noise.data()[i] as f64);
            let want = c + tau * (z - c);
            prop_assert!((s.y_tau.data()[i] as f64 - want).abs() <= 1e-6 * (1.0 + want.abs()));
        }
    }
}
