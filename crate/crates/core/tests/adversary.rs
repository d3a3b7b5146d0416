mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posit::adversary::{
    adversary_objective, adversary_step, normalized_weights, objective_and_gradient, AdversaryNet,
    AdversaryOptimizer, Architecture, ItemFeatures,
};
use posit::dataset::InteractionMatrix;
use posit::Error;

use common::*;

fn toy_net(n_users: usize, hidden: usize, seed: u64) -> AdversaryNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = AdversaryNet::new(n_users, hidden, 1.5, Architecture::default(), seed);
    let p: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_params(&p).unwrap();
    net
}

#[test]
fn untrained_adversary_weights_every_item_equally() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_matrix(&mut rng, 30, 12, 0.3);
    let net = AdversaryNet::new(m.n_users(), 10, 1.5, Architecture::default(), 0);
    let raw = net.forward(&ItemFeatures::from_train(&m)).raw;
    assert!(raw.iter().all(|&a| a == 0.5));
    assert_eq!(normalized_weights(&raw).unwrap(), vec![1.0; 12]);
}

#[test]
fn gradient_of_composed_objective_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..10 {
        let m = random_matrix(&mut rng, 6, 5, 0.5);
        let features = ItemFeatures::from_train(&m);
        let net = toy_net(m.n_users(), 3, seed);
        let ema: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let (obj, grad) = objective_and_gradient(&net, &features, &ema).unwrap();
        assert!((obj - adversary_objective(&net.forward(&features).raw, &ema).unwrap()).abs() < 1e-12);
        let mut probe = net.clone();
        let fd = finite_difference(&net.params(), 1e-6, |p| {
            probe.set_params(p).unwrap();
            adversary_objective(&probe.forward(&features).raw, &ema).unwrap()
        });
        let err = relative_error(&grad.flatten(), &fd);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn tanh_output_layer_is_rejected_as_degenerate() {
    // normalization centers the output pre-activations, so tanh makes some
    // raw weights negative
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_matrix(&mut rng, 6, 5, 0.5);
    let arch: Architecture = "norm+sigmoid,norm+tanh".parse().unwrap();
    let mut net = AdversaryNet::new(m.n_users(), 3, 1.5, arch, 0);
    let p: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_params(&p).unwrap();
    let raw = net.forward(&ItemFeatures::from_train(&m)).raw;
    assert!(raw.iter().any(|&a| a < 0.0));
    assert!(matches!(normalized_weights(&raw), Err(Error::DegenerateAdversary(_))));
}

#[test]
fn ascent_shifts_weight_toward_low_advantage_items() {
    // two items, item 0 fully served (advantage 1), item 1 not at all
    let m = InteractionMatrix::from_rows(vec![vec![0], vec![0, 1], vec![1], vec![0]], 2).unwrap();
    let features = ItemFeatures::from_train(&m);
    let ema = [1.0, 0.0];
    let mut net = toy_net(m.n_users(), 2, 5);
    let before = normalized_weights(&net.forward(&features).raw).unwrap();
    let mut opt = AdversaryOptimizer::new(&net, 0.05, 0.0);
    for _ in 0..50 {
        adversary_step(&mut net, &mut opt, &features, &ema).unwrap();
    }
    let after = normalized_weights(&net.forward(&features).raw).unwrap();
    assert!(after[1] > before[1], "{before:?} -> {after:?}");
    assert!((after.iter().sum::<f64>() - 2.0).abs() < 1e-12);
}

#[test]
fn small_steps_increase_the_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let m = random_matrix(&mut rng, 10, 8, 0.4);
        let features = ItemFeatures::from_train(&m);
        let ema: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut net = toy_net(m.n_users(), 4, seed);
        let start = adversary_objective(&net.forward(&features).raw, &ema).unwrap();
        let mut opt = AdversaryOptimizer::new(&net, 1e-3, 0.0);
        let reported = adversary_step(&mut net, &mut opt, &features, &ema).unwrap();
        let end = adversary_objective(&net.forward(&features).raw, &ema).unwrap();
        assert_eq!(reported, start);
        assert!(end >= start, "seed {seed}: {start} -> {end}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = random_matrix(&mut rng, 10, 8, 0.4);
    let features = ItemFeatures::from_train(&m);
    let mut net = toy_net(m.n_users(), 4, 1);
    let params = net.params();
    let mut opt = AdversaryOptimizer::new(&net, 0.0, 0.9);
    for _ in 0..3 {
        adversary_step(&mut net, &mut opt, &features, &[0.3; 8]).unwrap();
    }
    assert_eq!(net.params(), params);
}
