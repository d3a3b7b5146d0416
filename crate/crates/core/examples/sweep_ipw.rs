//! Grid search over the IPW exponent, selected on validation recall, with the
//! winner evaluated once on test.
//!
//! cargo run --release --example sweep_ipw -- [out_dir]

use std::path::PathBuf;

use posit::experiment::{sweep, ExperimentConfig, SelectionMetric, SweepSpec};
use posit::synthetic::{generate, write_events_csv, SyntheticSpec};

fn main() -> posit::Result<()> {
    env_logger::init();
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("posit-sweep"));
    std::fs::create_dir_all(&out).map_err(|e| posit::Error::Io { path: out.clone(), source: e })?;
    let data = generate(&SyntheticSpec::default())?;
    write_events_csv(&out.join("ratings.csv"), &data.events)?;

    // `beta` is required for IPW but comes from the grid, so the base is not
    // validated on its own
    let mut base = ExperimentConfig::load_unvalidated(
        None,
        &[
            format!("data={}", out.join("ratings.csv").display()),
            format!("out_dir={}", out.join("sweep").display()),
            "method=ipw".into(),
            "n_val_users=200".into(),
            "n_test_users=300".into(),
            "lambda=4e-4".into(),
            "lr=20".into(),
            "batch_size=100".into(),
            "epochs=15".into(),
        ],
    )?;
    base.seed = 1;
    let spec = SweepSpec::from_args(&["beta=0,-0.25,-0.5,-0.75"], SelectionMetric::Recall(100))?;
    let result = sweep(&base, &spec)?;
    for row in &result.rows {
        println!(
            "beta {:>5}: validation recall@100 {:.4}, coverage@100 {:.1} ({})",
            row.params["beta"],
            row.val_recall.unwrap_or(f64::NAN),
            row.val_coverage.unwrap_or(f64::NAN),
            row.status
        );
    }
    if let Some(best) = result.best {
        println!("best run: test recall@100 {:.4}", best.summary.test.recall[&100]);
    }
    println!("leaderboard: {}", result.leaderboard.display());
    Ok(())
}
