mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posit::dataset::InteractionMatrix;
use posit::ease::{
    batch_scores, per_item_losses, solve_closed_form, weighted_data_loss, weighted_gradient, weighted_objective,
    EaseModel, LrSchedule, SgdTrainer, TrainConfig,
};
use posit::Error;

use common::*;

#[test]
fn closed_form_matches_kkt_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let m = random_matrix(&mut rng, 30, 12, 0.3);
        let lambda = 1e-3;
        let model = solve_closed_form(&m, lambda).unwrap();
        assert!(frobenius(model.weights(), &kkt_oracle(&m, lambda)) < 1e-8);
        assert_eq!(model.max_abs_diagonal(), 0.0);
    }
}

#[test]
fn closed_form_without_ridge_on_rank_deficient_data_fails() {
    // two identical columns make G singular
    let m = InteractionMatrix::from_rows(vec![vec![0, 1], vec![0, 1, 2], vec![2]], 3).unwrap();
    assert!(matches!(solve_closed_form(&m, 0.0), Err(Error::Singular { .. })));
}

#[test]
fn weighted_loss_matches_dense_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = random_matrix(&mut rng, 9, 7, 0.4);
    let rows: Vec<&[u32]> = m.rows().iter().map(Vec::as_slice).collect();
    let w = Array2::from_shape_fn((7, 7), |_| rng.random_range(-0.5..0.5));
    let a: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..2.0)).collect();
    let x = dense(&m);
    let mut want = 0.0;
    let mut per_item = [0.0; 7];
    for u in 0..9 {
        for j in 0..7 {
            let pred: f64 = (0..7).map(|l| x[(u, l)] * w[[l, j]]).sum();
            let r2 = (pred - x[(u, j)]).powi(2);
            want += a[j] * r2;
            per_item[j] += r2 / 9.0;
        }
    }
    want /= 63.0;
    let scores = batch_scores(&w, &rows);
    assert!((weighted_data_loss(&scores, &rows, &a) - want).abs() < 1e-12);
    for (got, want) in per_item_losses(&scores, &rows).iter().zip(per_item) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_matrix(&mut rng, 10, 6, 0.4);
    let rows: Vec<&[u32]> = m.rows().iter().map(Vec::as_slice).collect();
    let a: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..3.0)).collect();
    let w0: Vec<f64> = (0..36).map(|_| rng.random_range(-0.5..0.5)).collect();
    let w = Array2::from_shape_vec((6, 6), w0.clone()).unwrap();
    let mut grad = Array2::zeros((6, 6));
    weighted_gradient(&w, &batch_scores(&w, &rows), &rows, &a, 0.01, &mut grad);
    let fd = finite_difference(&w0, 1e-6, |p| {
        weighted_objective(&Array2::from_shape_vec((6, 6), p.to_vec()).unwrap(), &rows, &a, 0.01)
    });
    assert!(relative_error(grad.as_slice().unwrap(), &fd) < 1e-6);
}

#[test]
fn full_batch_descent_lowers_the_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = random_matrix(&mut rng, 40, 20, 0.3);
    let rows: Vec<&[u32]> = m.rows().iter().map(Vec::as_slice).collect();
    let cfg = TrainConfig {
        lr: 1.0,
        momentum: 0.0,
        epochs: 1,
        batch_size: 40,
        lr_schedule: LrSchedule::Constant,
        seed: 0,
    };
    let ones = vec![1.0; 20];
    let mut trainer = SgdTrainer::new(cfg, 20).unwrap();
    let mut model = EaseModel::zeros(20, 1e-3);
    let mut last = f64::INFINITY;
    for _ in 0..20 {
        let loss = trainer.step(&mut model, &rows, &ones);
        assert!(loss <= last + 1e-15);
        last = loss;
    }
}

#[test]
fn learning_rate_schedule_decays_per_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_matrix(&mut rng, 20, 10, 0.3);
    let cfg = TrainConfig {
        lr: 2.0,
        batch_size: 7,
        lr_schedule: LrSchedule::Exponential { decay: 0.5 },
        ..TrainConfig::default()
    };
    let mut trainer = SgdTrainer::new(cfg, 10).unwrap();
    let mut model = EaseModel::zeros(10, 1e-3);
    trainer.sgd_epoch(&mut model, &m, &[1.0; 10]).unwrap();
    trainer.sgd_epoch(&mut model, &m, &[1.0; 10]).unwrap();
    assert_eq!(trainer.epoch(), 2);
    assert_eq!(trainer.lr(), 0.5);
}

#[test]
fn invalid_item_weights_are_rejected() {
    let m = InteractionMatrix::from_rows(vec![vec![0, 1]], 2).unwrap();
    let mut trainer = SgdTrainer::new(TrainConfig::default(), 2).unwrap();
    let mut model = EaseModel::zeros(2, 1e-3);
    assert!(trainer.sgd_epoch(&mut model, &m, &[1.0]).is_err());
    assert!(trainer.sgd_epoch(&mut model, &m, &[1.0, -1.0]).is_err());
    assert!(trainer.sgd_epoch(&mut model, &m, &[1.0, f64::NAN]).is_err());
}

#[test]
fn divergence_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = random_matrix(&mut rng, 30, 10, 0.6);
    let cfg = TrainConfig {
        lr: 1e6,
        batch_size: 30,
        ..TrainConfig::default()
    };
    let mut trainer = SgdTrainer::new(cfg, 10).unwrap();
    let mut model = EaseModel::zeros(10, 1e-3);
    let err = (0..50).find_map(|_| trainer.sgd_epoch(&mut model, &m, &[1.0; 10]).err());
    assert!(matches!(err, Some(Error::Divergence { .. })), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sgd_keeps_the_diagonal_at_zero(seed in any::<u64>(), batch in 1usize..12, lr in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 12, 8, 0.4);
        let cfg = TrainConfig { lr, batch_size: batch, seed, ..TrainConfig::default() };
        let mut trainer = SgdTrainer::new(cfg, 8).unwrap();
        let mut model = EaseModel::zeros(8, 1e-3);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..3.0)).collect();
        for users in trainer.batches(12) {
            let rows: Vec<&[u32]> = users.iter().map(|&u| m.row(u)).collect();
            trainer.step(&mut model, &rows, &a);
            prop_assert_eq!(model.max_abs_diagonal(), 0.0);
        }
    }

    #[test]
    fn batches_partition_the_users(seed in any::<u64>(), n in 1usize..200, batch in 1usize..64) {
        let cfg = TrainConfig { batch_size: batch, seed, ..TrainConfig::default() };
        let mut trainer = SgdTrainer::new(cfg, 3).unwrap();
        let mut seen: Vec<usize> = trainer.batches(n).into_iter().flatten().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn closed_form_small_examples() {
    // identity data with a heavy ridge: nothing to explain, W shrinks to zero
    let eye = InteractionMatrix::from_rows(vec![vec![0], vec![1], vec![2]], 3).unwrap();
    assert!(solve_closed_form(&eye, 1e3).unwrap().weights().iter().all(|v| v.abs() < 1e-9));

    let toy = InteractionMatrix::from_dense(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 1]]).unwrap();
    let model = solve_closed_form(&toy, 1.0).unwrap();
    assert!(frobenius(model.weights(), &kkt_oracle(&toy, 1.0)) < 1e-8);
}

fn train_steps(m: &InteractionMatrix, a: &[f64], lr: f64, lambda: f64) -> Array2<f64> {
    let cfg = TrainConfig {
        lr,
        batch_size: 4,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut trainer = SgdTrainer::new(cfg, m.n_items()).unwrap();
    let mut model = EaseModel::zeros(m.n_items(), lambda);
    for _ in 0..3 {
        trainer.sgd_epoch(&mut model, m, a).unwrap();
    }
    model.weights().clone()
}

#[test]
fn zero_weight_item_keeps_its_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_matrix(&mut rng, 16, 6, 0.4);
    let mut a = vec![1.0; 6];
    a[2] = 0.0;
    let w = train_steps(&m, &a, 1.0, 0.0);
    assert!(w.column(2).iter().all(|&v| v == 0.0));
    assert!(w.iter().any(|&v| v != 0.0));
}

#[test]
fn doubling_weights_and_halving_lr_gives_the_same_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = random_matrix(&mut rng, 16, 6, 0.4);
    let a: Vec<f64> = (0..6).map(|_| rng.random_range(0.2..2.0)).collect();
    let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
    assert_eq!(train_steps(&m, &a, 1.0, 0.0), train_steps(&m, &a2, 0.5, 0.0));
}
