//! The popularity-bias baselines side by side: most popular, IPW, CVaR and
//! threshold reranking of an EASE model.
//!
//! cargo run --release --example baselines

use posit::baselines::{
    most_popular_lists, rerank_lists, train_cvar, train_ipw, CvarConfig, IpwConfig, RerankConfig,
};
use posit::dataset::{build_matrix, split_users, SplitSpec};
use posit::ease::{solve_closed_form, LrSchedule, TrainConfig};
use posit::metrics::{evaluate, EvalOptions, EvalReport, RankedLists};
use posit::synthetic::{generate, SyntheticSpec};

fn line(name: &str, r: &EvalReport) {
    println!(
        "{name:<22} recall@100 {:.4}  coverage@100 {:>7.1}  item recall@100 {:.4}",
        r.recall[&100], r.coverage[&100].mean, r.item_recall[&100]
    );
}

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
    let (train, val, test) = (&splits.train, &splits.val, &splits.test);
    let freq = train.item_freq();
    let opts = EvalOptions::default();
    let depth = opts.depth();
    let lambda = 300.0 / (train.n_users() * train.n_items()) as f64;
    let eval = |ranked: RankedLists| evaluate(&ranked, &test.heldout, freq, &opts);

    line("most popular", &eval(most_popular_lists(freq, test.n_users(), depth))?);
    let ease = solve_closed_form(train, lambda)?;
    line("EASE", &eval(RankedLists::from_model(&ease, &test.foldin, depth))?);

    let sgd = TrainConfig {
        lr: 20.0,
        epochs: 30,
        batch_size: 100,
        lr_schedule: LrSchedule::Exponential { decay: 0.95 },
        ..TrainConfig::default()
    };
    for beta in [-0.25, -0.5] {
        let fit = train_ipw(train, val, &sgd, lambda, IpwConfig { beta }, 100)?;
        line(&format!("IPW beta={beta}"), &eval(RankedLists::from_model(&fit.model, &test.foldin, depth))?);
    }
    for alpha in [0.5, 0.2] {
        let cvar = CvarConfig { alpha, ..CvarConfig::default() };
        let (fit, beta1) = train_cvar(train, val, &sgd, lambda, cvar, 100)?;
        let name = format!("CVaR alpha={alpha}");
        line(&name, &eval(RankedLists::from_model(&fit.model, &test.foldin, depth))?);
        println!("{:<22} final threshold {beta1:.4}", "");
    }
    for (t_high, t_low) in [(0.5, 0.05), (0.3, 0.05)] {
        let cfg = RerankConfig { t_high, t_low };
        line(&format!("rerank {t_high}/{t_low}"), &eval(rerank_lists(&ease, &test.foldin, freq, &cfg, depth))?);
    }
    Ok(())
}
