//! EASE recommender training with adversarial long-tail item reweighting
//! (POSIT), popularity-bias baselines, and long-tail evaluation metrics.
//!
//! The pieces, roughly in pipeline order:
//!
//! - [`dataset`]: rating logs to a binary user-item matrix, user-level splits.
//! - [`ease`]: the item-item model, closed-form solver and momentum SGD.
//! - [`advantage`]: per-item advantage scores from top-k hits.
//! - [`adversary`]: the weighting network and the POSIT training loop.
//! - [`baselines`]: IPW, CVaR, threshold reranking, most-popular.
//! - [`metrics`]: Recall, NDCG, Coverage, Item Recall, Gini ratio, PCA.
//! - [`experiment`]: configs, runs, sweeps and exports used by the binary.
//!
//! ```no_run
//! use posit::dataset::{read_matrix, split_users, SplitSpec};
//! use posit::ease::solve_closed_form;
//! use posit::metrics::{recall_at_k, RankedLists};
//!
//! # fn main() -> posit::Result<()> {
//! let m = read_matrix("data/ratings.bin".as_ref())?;
//! let splits = split_users(&m, &SplitSpec { n_val_users: 100, n_test_users: 100, heldout_fraction: 0.2, seed: 0 })?;
//! let model = solve_closed_form(&splits.train, 1e-4)?;
//! let ranked = RankedLists::from_model(&model, &splits.test.foldin, 100);
//! println!("recall@100 = {:.4}", recall_at_k(&ranked, &splits.test.heldout, 100));
//! # Ok(())
//! # }
//! ```

pub mod advantage;
pub mod adversary;
pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod ease;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod rank;
pub mod synthetic;

pub use error::{Error, Result};
