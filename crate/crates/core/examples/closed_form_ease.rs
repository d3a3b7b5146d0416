//! Fit EASE exactly, tune the ridge strength on validation users and report
//! test metrics. Also shows that momentum SGD reaches the same solution.
//!
//! cargo run --release --example closed_form_ease

use posit::dataset::{build_matrix, split_users, SplitSpec};
use posit::ease::{solve_closed_form, EaseModel, LrSchedule, SgdTrainer, TrainConfig};
use posit::metrics::{evaluate, model_recall, EvalOptions, RankedLists};
use posit::synthetic::{generate, SyntheticSpec};

fn main() -> posit::Result<()> {
    env_logger::init();
    let data = generate(&SyntheticSpec::default())?;
    let positives: Vec<_> = data.events.into_iter().filter(|e| e.rating.is_none_or(|r| r >= 3.5)).collect();
    let m = build_matrix(&positives, 5, 1)?;
    let splits = split_users(
        &m,
        &SplitSpec {
            n_val_users: 200,
            n_test_users: 300,
            heldout_fraction: 0.2,
            seed: 0,
        },
    )?;
    let train = &splits.train;
    let cells = (train.n_users() * train.n_items()) as f64;

    // lambda multiplies ||W||^2 against a loss averaged over |U||I| cells, so
    // the effective ridge on the Gram matrix is rho = lambda |U||I|
    let mut best = (f64::MIN, 0.0);
    for rho in [10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0] {
        let model = solve_closed_form(train, rho / cells)?;
        let r = model_recall(&model, &splits.val.foldin, &splits.val.heldout, 100);
        println!("rho {rho:>6}: validation recall@100 {r:.4}");
        if r > best.0 {
            best = (r, rho / cells);
        }
    }
    let model = solve_closed_form(train, best.1)?;
    let opts = EvalOptions::default();
    let ranked = RankedLists::from_model(&model, &splits.test.foldin, opts.depth());
    let report = evaluate(&ranked, &splits.test.heldout, train.item_freq(), &opts)?;
    println!("test: {}", serde_json::to_string_pretty(&report).expect("report serializes"));

    // the same objective by full-batch momentum SGD on a small slice
    let small = train.select_users(&(0..60).collect::<Vec<_>>());
    let lambda = 50.0 / (small.n_users() * small.n_items()) as f64;
    let exact = solve_closed_form(&small, lambda)?;
    let cfg = TrainConfig {
        lr: 20.0,
        epochs: 2000,
        batch_size: small.n_users(),
        lr_schedule: LrSchedule::Constant,
        ..TrainConfig::default()
    };
    let mut sgd = SgdTrainer::new(cfg, small.n_items())?;
    let mut fitted = EaseModel::zeros(small.n_items(), lambda);
    let ones = vec![1.0; small.n_items()];
    for _ in 0..cfg.epochs {
        sgd.sgd_epoch(&mut fitted, &small, &ones)?;
    }
    let gap = (fitted.weights() - exact.weights()).mapv(|v| v * v).sum().sqrt();
    println!("SGD vs closed form on {} users: ||dW||_F = {gap:.2e}", small.n_users());
    Ok(())
}
