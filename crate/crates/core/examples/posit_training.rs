//! Train POSIT next to a tuned EASE on desk-scale synthetic data and compare
//! accuracy against long-tail metrics.
//!
//! cargo run --release --example posit_training -- [seed] [tau]

use posit::adversary::{normalized_weights, train_posit_observed, ItemFeatures, PositConfig};
use posit::dataset::{build_matrix, split_users, SplitSpec};
use posit::ease::{solve_closed_form, LrSchedule, TrainConfig};
use posit::metrics::{evaluate, model_recall, EvalOptions, EvalReport, RankedLists};
use posit::synthetic::{generate, SyntheticSpec};

fn line(name: &str, r: &EvalReport) {
    println!(
        "{name:<6} recall@100 {:.4}  ndcg@100 {:.4}  coverage@100 {:>7.1}  item recall@100 {:.4}  gini ratio {:.3}",
        r.recall[&100], r.ndcg[&100], r.coverage[&100].mean, r.item_recall[&100], r.gini_ratio
    );
}

fn main() -> posit::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let tau: f64 = args.next().map_or(1.0, |s| s.parse().expect("tau"));

    let data = generate(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
    let positives: Vec<_> = data.events.into_iter().filter(|e| e.rating.is_none_or(|r| r >= 3.5)).collect();
    let m = build_matrix(&positives, 5, 1)?;
    let splits = split_users(
        &m,
        &SplitSpec {
            n_val_users: 200,
            n_test_users: 300,
            heldout_fraction: 0.2,
            seed,
        },
    )?;
    let (train, val, test) = (&splits.train, &splits.val, &splits.test);
    let cells = (train.n_users() * train.n_items()) as f64;

    let lambda = [10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0]
        .iter()
        .map(|rho| rho / cells)
        .map(|l| (model_recall(&solve_closed_form(train, l).unwrap(), &val.foldin, &val.heldout, 100), l))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, l)| l)
        .expect("non-empty grid");
    let ease = solve_closed_form(train, lambda)?;

    let cfg = PositConfig {
        ease: TrainConfig {
            lr: 20.0,
            epochs: 50,
            batch_size: 100,
            lr_schedule: LrSchedule::Exponential { decay: 0.95 },
            seed,
            ..TrainConfig::default()
        },
        lambda,
        tau,
        ..PositConfig::default()
    };
    let mut batches = 0usize;
    let out = train_posit_observed(train, val, &cfg, |_, _| batches += 1)?;
    println!("{batches} batches, best epoch {} of {}", out.best_epoch, cfg.ease.epochs);

    let opts = EvalOptions::default();
    let report = |model| {
        let ranked = RankedLists::from_model(model, &test.foldin, opts.depth());
        evaluate(&ranked, &test.heldout, train.item_freq(), &opts)
    };
    line("EASE", &report(&ease)?);
    line("POSIT", &report(&out.model)?);

    // items sorted by popularity: the adversary up-weights the tail
    let w = normalized_weights(&out.net.forward(&ItemFeatures::from_train(train)).raw)?;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by_key(|&j| std::cmp::Reverse(train.item_freq()[j]));
    let mean = |js: &[usize]| js.iter().map(|&j| w[j]).sum::<f64>() / js.len() as f64;
    let fifth = order.len() / 5;
    println!(
        "mean weight: top-20% popular items {:.3}, bottom-20% {:.3}",
        mean(&order[..fifth]),
        mean(&order[order.len() - fifth..])
    );
    Ok(())
}
