//! Run POSIT through the experiment layer, then export the figure data:
//! per-item advantage, per-category item recall, and adversary weights with
//! PCA coordinates of the items.
//!
//! cargo run --release --example export_weights -- [out_dir]

use std::path::PathBuf;

use posit::experiment::{export_figures_data, run, ExperimentConfig};
use posit::synthetic::{generate, write_events_csv, write_item_meta_csv, SyntheticSpec};

fn main() -> posit::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("posit-export"));
    std::fs::create_dir_all(&out).map_err(|e| posit::Error::Io { path: out.clone(), source: e })?;

    let data = generate(&SyntheticSpec::default())?;
    write_events_csv(&out.join("ratings.csv"), &data.events)?;
    write_item_meta_csv(&out.join("items.csv"), &data.items)?;

    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(&format!(
        "data = {}\nitem_meta = {}\nout_dir = {}\nmethod = posit\n\
         n_val_users = 200\nn_test_users = 300\n\
         lambda = 4e-4\nlr = 20\nbatch_size = 100\nepochs = 20\ntau = 1.0\n",
        out.join("ratings.csv").display(),
        out.join("items.csv").display(),
        out.join("run").display(),
    ))?;
    let outputs = run(&cfg)?;
    println!("run written to {}", outputs.out_dir.display());
    for file in export_figures_data(&outputs.checkpoint, &out.join("figures"))? {
        let lines = std::fs::read_to_string(&file).map(|t| t.lines().count()).unwrap_or(0);
        println!("{} ({} rows)", file.display(), lines.saturating_sub(1));
    }
    Ok(())
}
