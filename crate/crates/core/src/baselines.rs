//! Comparison methods: frequency-based reweighting (IPW), tail-loss
//! optimization (CVaR), threshold reranking and most-popular ranking.

use serde::{Deserialize, Serialize};

use crate::dataset::{EvalSplit, InteractionMatrix};
use crate::ease::{batch_scores, per_item_losses, EaseModel, EpochRecord, SgdTrainer, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, RankedLists};

/// A trained model chosen on validation, with its history.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: EaseModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Item-weighted EASE by momentum SGD; keeps the epoch with the best
/// validation Recall@`val_k`.
pub fn fit_weighted_sgd(
    train: &InteractionMatrix,
    val: &EvalSplit,
    cfg: &TrainConfig,
    lambda: f64,
    item_weights: &[f64],
    val_k: usize,
) -> Result<FitOutcome> {
    let mut trainer = SgdTrainer::new(*cfg, train.n_items())?;
    let mut model = EaseModel::zeros(train.n_items(), lambda);
    let mut selector = BestEpoch::default();
    for epoch in 0..cfg.epochs {
        let loss = trainer.sgd_epoch(&mut model, train, item_weights)?;
        selector.record(epoch, loss, None, &model, val, val_k);
    }
    Ok(selector.finish())
}

#[derive(Default)]
struct BestEpoch {
    history: Vec<EpochRecord>,
    best: Option<(f64, usize, EaseModel)>,
}

impl BestEpoch {
    fn record(
        &mut self,
        epoch: usize,
        loss: f64,
        adv_objective: Option<f64>,
        model: &EaseModel,
        val: &EvalSplit,
        val_k: usize,
    ) {
        let val_recall = metrics::model_recall(model, &val.foldin, &val.heldout, val_k);
        log::info!("epoch {epoch}: loss {loss:.6e} val recall@{val_k} {val_recall:.4}");
        self.history.push(EpochRecord {
            epoch,
            loss,
            adv_objective,
            val_recall,
        });
        if self.best.as_ref().is_none_or(|b| val_recall > b.0) {
            self.best = Some((val_recall, epoch, model.clone()));
        }
    }

    fn finish(self) -> FitOutcome {
        let (_, best_epoch, model) = self.best.expect("at least one epoch");
        FitOutcome {
            model,
            history: self.history,
            best_epoch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpwConfig {
    pub beta: f64,
}

/// `w_j = (freq_j / |U|)^beta`, rescaled to sum to `|I|`.
pub fn ipw_weights(item_freq: &[u32], n_users: usize, beta: f64) -> Result<Vec<f64>> {
    if n_users == 0 || item_freq.is_empty() {
        return Err(Error::Domain("IPW weights need users and items".into()));
    }
    if beta < 0.0 && item_freq.contains(&0) {
        return Err(Error::Domain(
            "an item with zero frequency gets infinite weight for beta < 0".into(),
        ));
    }
    let raw: Vec<f64> = item_freq
        .iter()
        .map(|&f| (f as f64 / n_users as f64).powf(beta))
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Domain(format!("IPW weights sum to {total}")));
    }
    let n = raw.len() as f64;
    Ok(raw.iter().map(|w| n * w / total).collect())
}

pub fn train_ipw(
    train: &InteractionMatrix,
    val: &EvalSplit,
    cfg: &TrainConfig,
    lambda: f64,
    ipw: IpwConfig,
    val_k: usize,
) -> Result<FitOutcome> {
    let weights = ipw_weights(train.item_freq(), train.n_users(), ipw.beta)?;
    fit_weighted_sgd(train, val, cfg, lambda, &weights, val_k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvarConfig {
    /// Fraction of worst items optimized, in `(0, 1]`.
    pub alpha: f64,
    pub beta1_init: f64,
    /// Step size of the threshold `beta1`.
    pub beta1_lr: f64,
}

impl Default for CvarConfig {
    fn default() -> Self {
        CvarConfig {
            alpha: 0.5,
            beta1_init: 0.0,
            beta1_lr: 0.01,
        }
    }
}

impl CvarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha", "must be in (0, 1]"));
        }
        if !(self.beta1_lr >= 0.0 && self.beta1_lr.is_finite()) {
            return Err(Error::config("beta1_lr", "must be finite and >= 0"));
        }
        if !self.beta1_init.is_finite() {
            return Err(Error::config("beta1_init", "must be finite"));
        }
        Ok(())
    }
}

/// `(1/|I|) sum_j { beta1 + (1/alpha) [L_j - beta1]_+ }` for per-item losses
/// `L_j`.
pub fn cvar_objective(losses: &[f64], beta1: f64, alpha: f64) -> f64 {
    let n = losses.len() as f64;
    losses
        .iter()
        .map(|l| beta1 + (l - beta1).max(0.0) / alpha)
        .sum::<f64>()
        / n
}

/// Subgradient pieces of [`cvar_objective`]: the per-item loss multipliers
/// and the derivative with respect to `beta1`. The subgradient of `[x]_+` at
/// zero is taken as zero.
pub fn cvar_subgradient(losses: &[f64], beta1: f64, alpha: f64) -> (Vec<f64>, f64) {
    let weights: Vec<f64> = losses
        .iter()
        .map(|&l| if l > beta1 { 1.0 / alpha } else { 0.0 })
        .collect();
    let above = losses.iter().filter(|&&l| l > beta1).count() as f64;
    (weights, 1.0 - above / (alpha * losses.len() as f64))
}

/// Joint subgradient descent on `W` and `beta1`, with the EASE squared error
/// as the per-item loss. Returns the best validation epoch and the final
/// threshold.
pub fn train_cvar(
    train: &InteractionMatrix,
    val: &EvalSplit,
    cfg: &TrainConfig,
    lambda: f64,
    cvar: CvarConfig,
    val_k: usize,
) -> Result<(FitOutcome, f64)> {
    cvar.validate()?;
    let mut trainer = SgdTrainer::new(*cfg, train.n_items())?;
    let mut model = EaseModel::zeros(train.n_items(), lambda);
    let mut beta1 = cvar.beta1_init;
    let mut selector = BestEpoch::default();
    for epoch in 0..cfg.epochs {
        let batches = trainer.batches(train.n_users());
        let mut total = 0.0;
        for (b, users) in batches.iter().enumerate() {
            let rows: Vec<&[u32]> = users.iter().map(|&u| train.row(u)).collect();
            let scores = batch_scores(model.weights(), &rows);
            let losses = per_item_losses(&scores, &rows);
            let (weights, d_beta1) = cvar_subgradient(&losses, beta1, cvar.alpha);
            let reg = lambda * model.weights().iter().map(|v| v * v).sum::<f64>();
            let objective = cvar_objective(&losses, beta1, cvar.alpha) + reg;
            if !objective.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    message: format!("objective is {objective}"),
                });
            }
            trainer.step_with_scores(&mut model, &rows, &scores, &weights);
            beta1 -= cvar.beta1_lr * d_beta1;
            total += objective;
        }
        trainer.end_epoch();
        let loss = total / batches.len().max(1) as f64;
        selector.record(epoch, loss, None, &model, val, val_k);
    }
    Ok((selector.finish(), beta1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub t_high: f64,
    pub t_low: f64,
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_high >= self.t_low) {
            return Err(Error::config("t_high", "must be >= t_low"));
        }
        Ok(())
    }
}

/// Items scoring at least `t_high` in score order, then items in
/// `[t_low, t_high)` by ascending training frequency; items below `t_low`
/// are dropped. The result may be shorter than `k`.
pub fn rerank(scores: &[f64], item_freq: &[u32], cfg: &RerankConfig, k: usize) -> Vec<u32> {
    rerank_excluding(scores, &[], item_freq, cfg, k)
}

/// [`rerank`] over the items not in `excluded` (sorted).
pub fn rerank_excluding(
    scores: &[f64],
    excluded: &[u32],
    item_freq: &[u32],
    cfg: &RerankConfig,
    k: usize,
) -> Vec<u32> {
    let candidates = (0..scores.len() as u32).filter(|j| excluded.binary_search(j).is_err());
    let (mut top, mut middle): (Vec<u32>, Vec<u32>) = candidates
        .filter(|&j| scores[j as usize] >= cfg.t_low)
        .partition(|&j| scores[j as usize] >= cfg.t_high);
    top = crate::rank::top_k_of(scores, top, k);
    if top.len() < k {
        middle.sort_unstable_by_key(|&j| (item_freq[j as usize], j));
        middle.truncate(k - top.len());
        top.extend(middle);
    }
    top
}

/// Every item by descending frequency, ties by ascending index.
pub fn most_popular(item_freq: &[u32]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..item_freq.len() as u32).collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(item_freq[j as usize]), j));
    order
}

/// The same popularity list for every evaluation user. Fold-in items are not
/// removed, so every user receives exactly the top `depth` items.
pub fn most_popular_lists(item_freq: &[u32], n_users: usize, depth: usize) -> RankedLists {
    let mut top = most_popular(item_freq);
    top.truncate(depth);
    RankedLists::new(vec![top; n_users], depth)
}

/// Reranked lists for every fold-in row of an evaluation split.
pub fn rerank_lists(
    model: &EaseModel,
    foldin: &InteractionMatrix,
    item_freq: &[u32],
    cfg: &RerankConfig,
    depth: usize,
) -> RankedLists {
    RankedLists::from_model_with(model, foldin, depth, |scores, excluded| {
        rerank_excluding(scores, excluded, item_freq, cfg, depth)
    })
}
