//! Per-item advantage scores derived from top-k hits, their moving average,
//! and the catalog-level Item Recall@k.
//!
//! During training the ranking runs over every item, positives included,
//! because the positives are the reconstruction targets. At evaluation the
//! fold-in items are excluded before ranking.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EvalSplit, InteractionMatrix};
use crate::ease::EaseModel;
use crate::error::{Error, Result};
use crate::metrics::{self, RankedLists};
use crate::rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageVariant {
    /// Hits divided by the number of batch users.
    #[default]
    WithPopularity,
    /// Hits divided by the item's positives in the batch.
    WithoutPopularity,
}

impl std::str::FromStr for AdvantageVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_popularity" => Ok(AdvantageVariant::WithPopularity),
            "without_popularity" => Ok(AdvantageVariant::WithoutPopularity),
            other => Err(Error::config(
                "advantage_variant",
                format!("unknown variant `{other}`"),
            )),
        }
    }
}

/// `R_ij = 1` iff user `i` interacted with `j` and `j` ranks within the top
/// `k` of the model's scores over all items. Returned as a sparse matrix.
pub fn hit_matrix(model: &EaseModel, batch: &InteractionMatrix, k: usize) -> Result<InteractionMatrix> {
    if model.n_items() != batch.n_items() {
        return Err(Error::Shape {
            expected: model.n_items(),
            actual: batch.n_items(),
        });
    }
    let rows: Vec<&[u32]> = batch.rows().iter().map(Vec::as_slice).collect();
    let scores = model.score_rows(&rows);
    InteractionMatrix::from_rows(hit_rows(&scores, &rows, k), batch.n_items())
}

/// Hit rows from precomputed scores, one per batch row.
pub fn hit_rows(scores: &Array2<f64>, rows: &[&[u32]], k: usize) -> Vec<Vec<u32>> {
    scores
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .map(|(s, row)| {
            if row.is_empty() {
                return Vec::new();
            }
            let s = s.as_slice().expect("score rows are contiguous");
            let mut top = rank::top_k(s, k);
            top.sort_unstable();
            row.iter()
                .copied()
                .filter(|j| top.binary_search(j).is_ok())
                .collect()
        })
        .collect()
}

/// Item advantage scores from a hit matrix and the batch it came from.
pub fn advantage_scores(
    hits: &InteractionMatrix,
    batch: &InteractionMatrix,
    variant: AdvantageVariant,
) -> Result<Vec<f64>> {
    if hits.n_users() != batch.n_users() || hits.n_items() != batch.n_items() {
        return Err(Error::Shape {
            expected: batch.n_users() * batch.n_items(),
            actual: hits.n_users() * hits.n_items(),
        });
    }
    Ok(scores_from_counts(
        hits.item_freq(),
        batch.item_freq(),
        batch.n_users(),
        variant,
    ))
}

pub(crate) fn scores_from_counts(
    hit_counts: &[u32],
    positive_counts: &[u32],
    n_users: usize,
    variant: AdvantageVariant,
) -> Vec<f64> {
    hit_counts
        .iter()
        .zip(positive_counts)
        .map(|(&h, &p)| match variant {
            AdvantageVariant::WithPopularity => h as f64 / n_users.max(1) as f64,
            AdvantageVariant::WithoutPopularity if p == 0 => 0.0,
            AdvantageVariant::WithoutPopularity => h as f64 / p as f64,
        })
        .collect()
}

/// Exponential moving average of advantage scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageState {
    pub ema: Vec<f64>,
    pub momentum: f64,
    pub k: usize,
    pub variant: AdvantageVariant,
}

impl AdvantageState {
    pub fn new(n_items: usize, momentum: f64, k: usize, variant: AdvantageVariant) -> Result<Self> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::config("m", "EMA momentum must be in (0, 1]"));
        }
        if k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        Ok(AdvantageState {
            ema: vec![0.0; n_items],
            momentum,
            k,
            variant,
        })
    }

    /// `ema <- (1 - m) ema + m S`, per item.
    pub fn ema_update(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.ema.len() {
            return Err(Error::Shape {
                expected: self.ema.len(),
                actual: scores.len(),
            });
        }
        let m = self.momentum;
        for (e, &s) in self.ema.iter_mut().zip(scores) {
            *e = (1.0 - m) * *e + m * s;
        }
        Ok(())
    }
}

/// Item Recall@k of a model on an evaluation split: per-item hit fraction of
/// held-out positives, averaged over the whole catalog.
pub fn item_recall_at_k(model: &EaseModel, split: &EvalSplit, k: usize) -> Result<f64> {
    if split.heldout.nnz() == 0 {
        return Err(Error::Metric("held-out matrix is empty".into()));
    }
    let ranked = RankedLists::from_model(model, &split.foldin, k);
    Ok(metrics::item_recall_at_k(&ranked, &split.heldout, k))
}
