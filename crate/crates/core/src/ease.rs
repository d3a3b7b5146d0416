//! EASE: an item-item weight matrix `W` with a zero diagonal.
//!
//! Both training paths minimize the same objective
//!
//! ```text
//! J(W) = 1/(|U| |I|) * sum_i sum_j a_j (D_i W - D_i)_j^2  +  lambda * ||W||^2,   diag(W) = 0
//! ```
//!
//! i.e. an item-weighted mean squared reconstruction error plus a ridge term.
//! This is the classic EASE problem `||DW - D||^2 + rho ||W||^2` with
//! `rho = lambda * |U| * |I|`, which is what [`solve_closed_form`] inverts.
//! The SGD path estimates the data term on user batches.
//!
//! Memory: `W`, the momentum buffer and the gradient are dense, so training
//! needs about `3 * 8 * |I|^2` bytes.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EaseModel {
    w: Array2<f64>,
    lambda: f64,
}

impl EaseModel {
    /// All-zero model, the starting point of SGD training.
    pub fn zeros(n_items: usize, lambda: f64) -> Self {
        EaseModel {
            w: Array2::zeros((n_items, n_items)),
            lambda,
        }
    }

    /// Wraps an existing matrix; the diagonal is forced to zero.
    pub fn from_weights(mut w: Array2<f64>, lambda: f64) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::Shape {
                expected: w.nrows(),
                actual: w.ncols(),
            });
        }
        w.diag_mut().fill(0.0);
        Ok(EaseModel { w, lambda })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_items(&self) -> usize {
        self.w.nrows()
    }

    /// `history . W` for a dense 0/1 history vector.
    pub fn score(&self, history: &[f64]) -> Result<Vec<f64>> {
        if history.len() != self.n_items() {
            return Err(Error::Shape {
                expected: self.n_items(),
                actual: history.len(),
            });
        }
        let h = ndarray::ArrayView1::from(history);
        Ok(h.dot(&self.w).to_vec())
    }

    /// Scores for a sparse history given as item indices.
    pub fn score_items(&self, items: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_items()];
        for &l in items {
            for (o, &w) in out.iter_mut().zip(self.w.row(l as usize)) {
                *o += w;
            }
        }
        out
    }

    /// Scores for many sparse histories at once (one row per history).
    pub fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        batch_scores(&self.w, rows)
    }

    /// Largest absolute diagonal entry; zero for every valid model.
    pub fn max_abs_diagonal(&self) -> f64 {
        self.w.diag().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn reset_diagonal(&mut self) {
        self.w.diag_mut().fill(0.0);
    }
}

/// `X W` for sparse 0/1 rows `X`.
pub fn batch_scores(w: &Array2<f64>, rows: &[&[u32]]) -> Array2<f64> {
    let n = w.ncols();
    let mut out = Array2::<f64>::zeros((rows.len(), n));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .for_each(|(mut dst, row)| {
            for &l in row.iter() {
                dst += &w.row(l as usize);
            }
        });
    out
}

/// Solves the zero-diagonal ridge problem exactly through the inverse of the
/// regularized Gram matrix: `P = (D'D + rho I)^-1`, `W_ij = -P_ij / P_jj`.
pub fn solve_closed_form(train: &InteractionMatrix, lambda: f64) -> Result<EaseModel> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = train.n_items();
    let rho = lambda * train.n_users() as f64 * n as f64;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for row in train.rows() {
        for &a in row {
            for &b in row {
                gram[(a as usize, b as usize)] += 1.0;
            }
        }
    }
    for j in 0..n {
        gram[(j, j)] += rho;
    }
    let scale = (0..n).map(|j| gram[(j, j)]).fold(0.0, f64::max);
    let chol = gram.cholesky().ok_or(Error::Singular { lambda })?;
    // a pivot lost to rounding means the system is singular in exact arithmetic
    let tiny = n as f64 * f64::EPSILON * scale;
    if (0..n).any(|j| chol.l_dirty()[(j, j)].powi(2) <= tiny) {
        return Err(Error::Singular { lambda });
    }
    let p = chol.inverse();
    let mut w = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let pjj = p[(j, j)];
        if !(pjj.is_finite() && pjj > 0.0) {
            return Err(Error::Singular { lambda });
        }
        for i in 0..n {
            if i != j {
                w[[i, j]] = -p[(i, j)] / pjj;
            }
        }
    }
    Ok(EaseModel { w, lambda })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr <- lr * decay` after every epoch.
    Exponential { decay: f64 },
}

impl LrSchedule {
    pub fn next(&self, lr: f64) -> f64 {
        match *self {
            LrSchedule::Constant => lr,
            LrSchedule::Exponential { decay } => lr * decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2.0,
            momentum: 0.9,
            epochs: 50,
            batch_size: 1024,
            lr_schedule: LrSchedule::Exponential { decay: 0.95 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must be in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if let LrSchedule::Exponential { decay } = self.lr_schedule {
            if !(decay > 0.0) {
                return Err(Error::config("lr_decay", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Weighted squared error of precomputed batch scores `X W` against `X`,
/// averaged over the batch rows and items.
pub fn weighted_data_loss(scores: &Array2<f64>, rows: &[&[u32]], item_weights: &[f64]) -> f64 {
    let n_items = scores.ncols();
    let total: f64 = scores
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .map(|(s, row)| {
            let mut acc: f64 = s
                .iter()
                .zip(item_weights)
                .map(|(&v, &a)| a * v * v)
                .sum();
            // (s - 1)^2 - s^2 = 1 - 2 s on the positives
            for &j in row.iter() {
                let j = j as usize;
                acc += item_weights[j] * (1.0 - 2.0 * s[j]);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / (rows.len() as f64 * n_items as f64)
}

/// Per-item squared error `(1/|B|) sum_i (X W - X)_ij^2` for the batch.
pub fn per_item_losses(scores: &Array2<f64>, rows: &[&[u32]]) -> Vec<f64> {
    let mut losses = vec![0.0; scores.ncols()];
    for (s, row) in scores.axis_iter(Axis(0)).zip(rows) {
        for (l, &v) in losses.iter_mut().zip(s.iter()) {
            *l += v * v;
        }
        for &j in row.iter() {
            losses[j as usize] += 1.0 - 2.0 * s[j as usize];
        }
    }
    let b = rows.len() as f64;
    losses.iter_mut().for_each(|l| *l /= b);
    losses
}

/// Writes the full gradient of the batch objective into `grad`:
/// `2/(|B||I|) X'((XW - X) . a) + 2 lambda W`. The diagonal is included.
pub fn weighted_gradient(
    w: &Array2<f64>,
    scores: &Array2<f64>,
    rows: &[&[u32]],
    item_weights: &[f64],
    lambda: f64,
    grad: &mut Array2<f64>,
) {
    let n = w.ncols();
    let scale = 2.0 / (rows.len() as f64 * n as f64);
    let mut weighted = scores.clone();
    weighted
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .for_each(|(mut r, row)| {
            for &j in row.iter() {
                r[j as usize] -= 1.0;
            }
            for (v, &a) in r.iter_mut().zip(item_weights) {
                *v *= a * scale;
            }
        });
    let mut users_of: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (b, row) in rows.iter().enumerate() {
        for &j in row.iter() {
            users_of[j as usize].push(b as u32);
        }
    }
    grad.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(w.axis_iter(Axis(0)).into_par_iter())
        .zip(users_of.par_iter())
        .for_each(|((mut g, w_row), users)| {
            Zip::from(&mut g)
                .and(&w_row)
                .for_each(|g, &w| *g = 2.0 * lambda * w);
            for &b in users {
                g += &weighted.row(b as usize);
            }
        });
}

/// Full batch objective (data term + ridge) for a given `W`.
pub fn weighted_objective(
    w: &Array2<f64>,
    rows: &[&[u32]],
    item_weights: &[f64],
    lambda: f64,
) -> f64 {
    let scores = batch_scores(w, rows);
    weighted_data_loss(&scores, rows, item_weights) + lambda * w.iter().map(|v| v * v).sum::<f64>()
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch objective of the learner.
    pub loss: f64,
    /// Mean adversary objective, for methods that have one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv_objective: Option<f64>,
    pub val_recall: f64,
}

/// Momentum SGD state for one EASE model, carried across epochs.
#[derive(Debug, Clone)]
pub struct SgdTrainer {
    cfg: TrainConfig,
    velocity: Array2<f64>,
    grad: Array2<f64>,
    lr: f64,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl SgdTrainer {
    pub fn new(cfg: TrainConfig, n_items: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(SgdTrainer {
            cfg,
            velocity: Array2::zeros((n_items, n_items)),
            grad: Array2::zeros((n_items, n_items)),
            lr: cfg.lr,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// A fresh shuffled partition of `0..n_users` into batches.
    pub fn batches(&mut self, n_users: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n_users).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One momentum step on a batch whose scores `X W` were already computed.
    /// Returns the batch objective evaluated before the step. The update is
    /// skipped when the objective is not finite.
    pub fn step_with_scores(
        &mut self,
        model: &mut EaseModel,
        rows: &[&[u32]],
        scores: &Array2<f64>,
        item_weights: &[f64],
    ) -> f64 {
        let lambda = model.lambda;
        let reg = lambda * model.w.iter().map(|v| v * v).sum::<f64>();
        let loss = weighted_data_loss(scores, rows, item_weights) + reg;
        if !loss.is_finite() {
            return loss;
        }
        weighted_gradient(&model.w, scores, rows, item_weights, lambda, &mut self.grad);
        self.grad.diag_mut().fill(0.0);
        let (m, lr) = (self.cfg.momentum, self.lr);
        Zip::from(&mut model.w)
            .and(&mut self.velocity)
            .and(&self.grad)
            .par_for_each(|w, v, &g| {
                *v = m * *v + g;
                *w -= lr * *v;
            });
        model.reset_diagonal();
        loss
    }

    pub fn step(&mut self, model: &mut EaseModel, rows: &[&[u32]], item_weights: &[f64]) -> f64 {
        let scores = batch_scores(&model.w, rows);
        self.step_with_scores(model, rows, &scores, item_weights)
    }

    /// Advances the epoch counter and applies the learning-rate schedule.
    pub fn end_epoch(&mut self) {
        self.epoch += 1;
        self.lr = self.cfg.lr_schedule.next(self.lr);
    }

    /// One pass over shuffled user batches; returns the mean batch objective.
    pub fn sgd_epoch(
        &mut self,
        model: &mut EaseModel,
        train: &InteractionMatrix,
        item_weights: &[f64],
    ) -> Result<f64> {
        check_weights(item_weights, model.n_items())?;
        let batches = self.batches(train.n_users());
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let rows: Vec<&[u32]> = batch.iter().map(|&u| train.row(u)).collect();
            let loss = self.step(model, &rows, item_weights);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: self.epoch,
                    batch: b,
                    message: format!("loss is {loss}"),
                });
            }
            total += loss;
        }
        self.end_epoch();
        Ok(total / batches.len().max(1) as f64)
    }
}

pub(crate) fn check_weights(item_weights: &[f64], n_items: usize) -> Result<()> {
    if item_weights.len() != n_items {
        return Err(Error::Shape {
            expected: n_items,
            actual: item_weights.len(),
        });
    }
    if let Some(bad) = item_weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!(
            "item weights must be finite and non-negative, found {bad}"
        )));
    }
    Ok(())
}
