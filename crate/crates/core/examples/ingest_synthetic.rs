//! Generate a MovieLens-shaped log, write it as CSV, ingest it back and split
//! the users.
//!
//! cargo run --release --example ingest_synthetic -- [out_dir]

use std::path::PathBuf;

use posit::dataset::{build_matrix, ingest_csv, read_matrix, split_users, write_matrix, SplitSpec};
use posit::synthetic::{generate, write_events_csv, write_item_meta_csv, SyntheticSpec};

fn main() -> posit::Result<()> {
    env_logger::init();
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("posit-ingest"));
    std::fs::create_dir_all(&out).map_err(|e| posit::Error::Io { path: out.clone(), source: e })?;

    let data = generate(&SyntheticSpec::default())?;
    let ratings = out.join("ratings.csv");
    write_events_csv(&ratings, &data.events)?;
    write_item_meta_csv(&out.join("items.csv"), &data.items)?;
    println!("{} rating events -> {}", data.events.len(), ratings.display());

    // ratings >= 3.5 become positives; users need 5 of them
    let events = ingest_csv(&ratings, 3.5)?;
    let m = build_matrix(&events, 5, 1)?;
    println!("matrix: {} users x {} items, {} positives", m.n_users(), m.n_items(), m.nnz());

    let path = out.join("matrix.bin");
    write_matrix(&path, &m)?;
    let back = read_matrix(&path)?;
    assert_eq!(back.content_hash(), m.content_hash());
    println!("wrote {} (hash {})", path.display(), &m.content_hash()[..12]);

    let splits = split_users(
        &m,
        &SplitSpec {
            n_val_users: 200,
            n_test_users: 300,
            heldout_fraction: 0.2,
            seed: 0,
        },
    )?;
    println!(
        "train {} users, validation {} (fold-in {} / held-out {} positives), test {}",
        splits.train.n_users(),
        splits.val.n_users(),
        splits.val.foldin.nnz(),
        splits.val.heldout.nnz(),
        splits.test.n_users()
    );
    Ok(())
}
