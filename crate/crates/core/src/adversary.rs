//! The item adversary and the POSIT training loop.
//!
//! The adversary maps an item's training interaction column `D[:, j]` to a
//! raw weight `a_j` through two linear layers, each followed by an optional
//! normalization across items and an activation. Raw weights are rescaled so
//! that they sum to `|I|` and then multiply the per-item EASE loss. The
//! adversary ascends `sum_j w_j * (-S_j)` where `S` is the moving average of
//! the item advantage, so items the learner already serves well lose weight.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{hit_rows, scores_from_counts, AdvantageState, AdvantageVariant};
use crate::dataset::{EvalSplit, InteractionMatrix};
use crate::ease::{batch_scores, EaseModel, EpochRecord, SgdTrainer, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics;

/// Variance floor inside the normalization.
const NORM_EPS: f64 = 1e-12;
/// Consecutive non-finite batches tolerated before training aborts.
const MAX_BAD_BATCHES: usize = 3;

/// `tau * (x - mean) / std` with the population standard deviation. A
/// (numerically) constant input maps to all zeros.
pub fn normalize(x: &[f64], tau: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var.sqrt() < 1e-12 {
        return vec![0.0; x.len()];
    }
    let s = (var + NORM_EPS).sqrt();
    x.iter().map(|v| tau * (v - mean) / s).collect()
}

/// Vector-Jacobian product of [`normalize`] at `x` for upstream gradient `g`.
pub fn normalize_backward(x: &[f64], g: &[f64], tau: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let s2 = c.iter().map(|v| v * v).sum::<f64>() / n + NORM_EPS;
    let s = s2.sqrt();
    let g_mean = g.iter().sum::<f64>() / n;
    let gc = g.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
    g.iter()
        .zip(&c)
        .map(|(gi, ci)| tau / s * (gi - g_mean - ci * gc / (n * s2)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub normalize: bool,
    pub activation: Activation,
}

/// What follows each of the two linear maps, written like
/// `norm+tanh,norm+sigmoid` (hidden layer first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Architecture {
    pub hidden: LayerSpec,
    pub output: LayerSpec,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: LayerSpec {
                normalize: true,
                activation: Activation::Tanh,
            },
            output: LayerSpec {
                normalize: true,
                activation: Activation::Sigmoid,
            },
        }
    }
}

fn parse_layer(s: &str) -> Result<LayerSpec> {
    let mut spec = LayerSpec {
        normalize: false,
        activation: Activation::Identity,
    };
    let mut seen_activation = false;
    for token in s.split('+').map(str::trim) {
        let act = match token {
            "norm" => {
                spec.normalize = true;
                continue;
            }
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" | "linear" => Activation::Identity,
            other => {
                return Err(Error::config(
                    "architecture",
                    format!("unknown layer token `{other}`"),
                ))
            }
        };
        if seen_activation {
            return Err(Error::config("architecture", "one activation per layer"));
        }
        seen_activation = true;
        spec.activation = act;
    }
    Ok(spec)
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::config(
                "architecture",
                format!("expected two comma-separated layers, got `{s}`"),
            ));
        }
        Ok(Architecture {
            hidden: parse_layer(parts[0])?,
            output: parse_layer(parts[1])?,
        })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layer = |l: &LayerSpec| {
            if l.normalize {
                format!("norm+{}", l.activation.name())
            } else {
                l.activation.name().to_string()
            }
        };
        write!(f, "{},{}", layer(&self.hidden), layer(&self.output))
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.to_string()
    }
}

/// Item feature vectors: the training interaction columns, plus the rows for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct ItemFeatures {
    n_users: usize,
    columns: Vec<Vec<u32>>,
    rows: Vec<Vec<u32>>,
}

impl ItemFeatures {
    pub fn from_train(train: &InteractionMatrix) -> Self {
        ItemFeatures {
            n_users: train.n_users(),
            columns: train.columns(),
            rows: train.rows().to_vec(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.columns.len()
    }
}

/// Intermediate values of one forward pass over all items.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Per hidden unit, pre-normalization values over items.
    z1: Vec<Vec<f64>>,
    /// Per hidden unit, activations over items.
    a1: Vec<Vec<f64>>,
    z2: Vec<f64>,
    /// Raw item weights.
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryGrad {
    /// `n_users x hidden`, same layout as the first layer.
    pub layer1: Array2<f64>,
    pub layer2: Vec<f64>,
}

impl AdversaryGrad {
    pub fn flatten(&self) -> Vec<f64> {
        self.layer1
            .iter()
            .copied()
            .chain(self.layer2.iter().copied())
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.layer1.iter().chain(&self.layer2).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryNet {
    /// First layer stored input-major: `n_users x hidden`.
    layer1: Array2<f64>,
    layer2: Vec<f64>,
    tau: f64,
    arch: Architecture,
}

impl AdversaryNet {
    /// First layer zero, second layer uniform in `[-0.1, 0.1]`.
    pub fn new(n_users: usize, hidden: usize, tau: f64, arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // separate stream so the learner's batch order does not depend on the adversary
        rng.set_stream(1);
        let layer2 = (0..hidden).map(|_| rng.random_range(-0.1..=0.1)).collect();
        AdversaryNet {
            layer1: Array2::zeros((n_users, hidden)),
            layer2,
            tau,
            arch,
        }
    }

    pub fn from_parts(
        layer1: Array2<f64>,
        layer2: Vec<f64>,
        tau: f64,
        arch: Architecture,
    ) -> Result<Self> {
        if layer1.ncols() != layer2.len() {
            return Err(Error::Shape {
                expected: layer1.ncols(),
                actual: layer2.len(),
            });
        }
        Ok(AdversaryNet {
            layer1,
            layer2,
            tau,
            arch,
        })
    }

    pub fn layer1(&self) -> &Array2<f64> {
        &self.layer1
    }

    pub fn layer2(&self) -> &[f64] {
        &self.layer2
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn hidden(&self) -> usize {
        self.layer2.len()
    }

    pub fn n_params(&self) -> usize {
        self.layer1.len() + self.layer2.len()
    }

    /// All parameters, first layer (row-major) then second layer.
    pub fn params(&self) -> Vec<f64> {
        AdversaryGrad {
            layer1: self.layer1.clone(),
            layer2: self.layer2.clone(),
        }
        .flatten()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Shape {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        let (a, b) = params.split_at(self.layer1.len());
        self.layer1.iter_mut().zip(a).for_each(|(p, v)| *p = *v);
        self.layer2.copy_from_slice(b);
        Ok(())
    }

    fn layer(&self, x: &[f64], spec: LayerSpec) -> Vec<f64> {
        let y = if spec.normalize {
            normalize(x, self.tau)
        } else {
            x.to_vec()
        };
        y.into_iter().map(|v| spec.activation.apply(v)).collect()
    }

    fn layer_backward(&self, x: &[f64], out: &[f64], g: &[f64], spec: LayerSpec) -> Vec<f64> {
        let g: Vec<f64> = g
            .iter()
            .zip(out)
            .map(|(g, y)| g * spec.activation.derivative_from_output(*y))
            .collect();
        if spec.normalize {
            normalize_backward(x, &g, self.tau)
        } else {
            g
        }
    }

    /// Raw weights for every item.
    pub fn forward(&self, features: &ItemFeatures) -> ForwardPass {
        let h = self.hidden();
        let z1t: Vec<Vec<f64>> = features
            .columns
            .par_iter()
            .map(|col| {
                let mut acc = vec![0.0; h];
                for &u in col {
                    for (a, w) in acc.iter_mut().zip(self.layer1.row(u as usize)) {
                        *a += w;
                    }
                }
                acc
            })
            .collect();
        let z1: Vec<Vec<f64>> = (0..h)
            .map(|k| z1t.iter().map(|r| r[k]).collect())
            .collect();
        let a1: Vec<Vec<f64>> = z1.iter().map(|z| self.layer(z, self.arch.hidden)).collect();
        let n_items = features.n_items();
        let z2: Vec<f64> = (0..n_items)
            .map(|j| (0..h).map(|k| a1[k][j] * self.layer2[k]).sum())
            .collect();
        let raw = self.layer(&z2, self.arch.output);
        ForwardPass { z1, a1, z2, raw }
    }

    /// Gradient of `sum_j g_raw[j] * raw[j]` with respect to the parameters.
    pub fn backward(&self, pass: &ForwardPass, g_raw: &[f64], features: &ItemFeatures) -> AdversaryGrad {
        let h = self.hidden();
        let g_z2 = self.layer_backward(&pass.z2, &pass.raw, g_raw, self.arch.output);
        let layer2: Vec<f64> = (0..h)
            .map(|k| pass.a1[k].iter().zip(&g_z2).map(|(a, g)| a * g).sum())
            .collect();
        let g_z1: Vec<Vec<f64>> = (0..h)
            .map(|k| {
                let g_a1: Vec<f64> = g_z2.iter().map(|g| g * self.layer2[k]).collect();
                self.layer_backward(&pass.z1[k], &pass.a1[k], &g_a1, self.arch.hidden)
            })
            .collect();
        let mut layer1 = Array2::<f64>::zeros((features.n_users, h));
        layer1
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(features.rows.par_iter())
            .for_each(|(mut g_row, items)| {
                for &j in items {
                    for (k, g) in g_row.iter_mut().enumerate() {
                        *g += g_z1[k][j as usize];
                    }
                }
            });
        AdversaryGrad { layer1, layer2 }
    }
}

/// `w_j = |I| a_j / sum(a)`.
pub fn normalized_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = raw.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::DegenerateAdversary(format!(
            "raw weights must be positive and finite, found {bad}"
        )));
    }
    let total: f64 = raw.iter().sum();
    if total < 1e-12 {
        return Err(Error::DegenerateAdversary(format!("raw weights sum to {total}")));
    }
    let n = raw.len() as f64;
    Ok(raw.iter().map(|a| n * a / total).collect())
}

/// The adversary's objective `sum_j w_j * (-ema_j)` for raw weights `raw`.
pub fn adversary_objective(raw: &[f64], ema: &[f64]) -> Result<f64> {
    let w = normalized_weights(raw)?;
    Ok(w.iter().zip(ema).map(|(w, s)| -w * s).sum())
}

/// Objective value and its gradient with respect to the adversary parameters.
pub fn objective_and_gradient(
    net: &AdversaryNet,
    features: &ItemFeatures,
    ema: &[f64],
) -> Result<(f64, AdversaryGrad)> {
    let pass = net.forward(features);
    objective_and_gradient_from(net, &pass, features, ema)
}

fn objective_and_gradient_from(
    net: &AdversaryNet,
    pass: &ForwardPass,
    features: &ItemFeatures,
    ema: &[f64],
) -> Result<(f64, AdversaryGrad)> {
    if ema.len() != pass.raw.len() {
        return Err(Error::Shape {
            expected: pass.raw.len(),
            actual: ema.len(),
        });
    }
    let obj = adversary_objective(&pass.raw, ema)?;
    let total: f64 = pass.raw.iter().sum();
    let n = pass.raw.len() as f64;
    let weighted: f64 = pass.raw.iter().zip(ema).map(|(a, s)| -a * s).sum::<f64>() / total;
    let g_raw: Vec<f64> = ema.iter().map(|s| n / total * (-s - weighted)).collect();
    Ok((obj, net.backward(pass, &g_raw, features)))
}

/// Momentum gradient ascent on the adversary parameters.
#[derive(Debug, Clone)]
pub struct AdversaryOptimizer {
    pub lr: f64,
    pub momentum: f64,
    velocity: AdversaryGrad,
}

impl AdversaryOptimizer {
    pub fn new(net: &AdversaryNet, lr: f64, momentum: f64) -> Self {
        AdversaryOptimizer {
            lr,
            momentum,
            velocity: AdversaryGrad {
                layer1: Array2::zeros(net.layer1.raw_dim()),
                layer2: vec![0.0; net.hidden()],
            },
        }
    }

    fn apply(&mut self, net: &mut AdversaryNet, grad: &AdversaryGrad) {
        let (m, lr) = (self.momentum, self.lr);
        ndarray::Zip::from(&mut net.layer1)
            .and(&mut self.velocity.layer1)
            .and(&grad.layer1)
            .par_for_each(|p, v, &g| {
                *v = m * *v + g;
                *p += lr * *v;
            });
        for ((p, v), g) in net
            .layer2
            .iter_mut()
            .zip(&mut self.velocity.layer2)
            .zip(&grad.layer2)
        {
            *v = m * *v + g;
            *p += lr * *v;
        }
    }
}

/// One ascent step on the adversary objective; returns the objective before
/// the step.
pub fn adversary_step(
    net: &mut AdversaryNet,
    opt: &mut AdversaryOptimizer,
    features: &ItemFeatures,
    ema: &[f64],
) -> Result<f64> {
    let pass = net.forward(features);
    adversary_step_from(net, opt, &pass, features, ema, 0, 0)
}

fn adversary_step_from(
    net: &mut AdversaryNet,
    opt: &mut AdversaryOptimizer,
    pass: &ForwardPass,
    features: &ItemFeatures,
    ema: &[f64],
    epoch: usize,
    batch: usize,
) -> Result<f64> {
    if let Some(bad) = ema.iter().find(|s| !s.is_finite()) {
        return Err(Error::Divergence {
            epoch,
            batch,
            message: format!("advantage average is {bad}"),
        });
    }
    let (obj, grad) = objective_and_gradient_from(net, pass, features, ema)?;
    if !grad.is_finite() {
        return Err(Error::Divergence {
            epoch,
            batch,
            message: "adversary gradient is not finite".into(),
        });
    }
    opt.apply(net, &grad);
    Ok(obj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositConfig {
    pub ease: TrainConfig,
    pub lambda: f64,
    pub adv_lr: f64,
    pub adv_momentum: f64,
    pub tau: f64,
    pub hidden: usize,
    pub k: usize,
    pub m: f64,
    pub advantage_variant: AdvantageVariant,
    pub architecture: Architecture,
    /// Cutoff of the validation Recall used for model selection.
    pub val_k: usize,
}

impl Default for PositConfig {
    fn default() -> Self {
        PositConfig {
            ease: TrainConfig::default(),
            lambda: 8e-6,
            adv_lr: 1.0,
            adv_momentum: 0.9,
            tau: 1.5,
            hidden: 10,
            k: 100,
            m: 0.9,
            advantage_variant: AdvantageVariant::WithPopularity,
            architecture: Architecture::default(),
            val_k: 100,
        }
    }
}

impl PositConfig {
    pub fn validate(&self) -> Result<()> {
        self.ease.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        if !(self.adv_lr >= 0.0 && self.adv_lr.is_finite()) {
            return Err(Error::config("adv_lr", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.adv_momentum) {
            return Err(Error::config("adv_momentum", "must be in [0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.k == 0 || self.val_k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(Error::config("m", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// What one POSIT batch produced, for logging and invariant checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub adv_objective: f64,
    pub skipped: bool,
}

/// Learner, adversary and advantage average advanced together batch by batch.
#[derive(Debug, Clone)]
pub struct PositTrainer {
    pub model: EaseModel,
    pub net: AdversaryNet,
    pub state: AdvantageState,
    cfg: PositConfig,
    learner: SgdTrainer,
    adv_opt: AdversaryOptimizer,
    features: ItemFeatures,
    weights: Vec<f64>,
    bad_batches: usize,
}

impl PositTrainer {
    pub fn new(train: &InteractionMatrix, cfg: PositConfig) -> Result<Self> {
        cfg.validate()?;
        let n_items = train.n_items();
        let net = AdversaryNet::new(train.n_users(), cfg.hidden, cfg.tau, cfg.architecture, cfg.ease.seed);
        let adv_opt = AdversaryOptimizer::new(&net, cfg.adv_lr, cfg.adv_momentum);
        Ok(PositTrainer {
            model: EaseModel::zeros(n_items, cfg.lambda),
            state: AdvantageState::new(n_items, cfg.m, cfg.k, cfg.advantage_variant)?,
            learner: SgdTrainer::new(cfg.ease, n_items)?,
            features: ItemFeatures::from_train(train),
            weights: vec![1.0; n_items],
            net,
            adv_opt,
            cfg,
            bad_batches: 0,
        })
    }

    pub fn config(&self) -> &PositConfig {
        &self.cfg
    }

    /// Normalized item weights used by the most recent learner step.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn features(&self) -> &ItemFeatures {
        &self.features
    }

    pub fn epoch(&self) -> usize {
        self.learner.epoch()
    }

    /// One batch: advantage estimate, moving average, weights, learner step,
    /// adversary step.
    pub fn step(&mut self, rows: &[&[u32]], batch: usize) -> Result<BatchStats> {
        let epoch = self.learner.epoch();
        let n_items = self.model.n_items();
        let scores = batch_scores(self.model.weights(), rows);
        let hits = hit_rows(&scores, rows, self.cfg.k);
        let mut hit_counts = vec![0u32; n_items];
        let mut pos_counts = vec![0u32; n_items];
        for (h, r) in hits.iter().zip(rows) {
            h.iter().for_each(|&j| hit_counts[j as usize] += 1);
            r.iter().for_each(|&j| pos_counts[j as usize] += 1);
        }
        let s = scores_from_counts(&hit_counts, &pos_counts, rows.len(), self.cfg.advantage_variant);
        self.state.ema_update(&s)?;

        let pass = self.net.forward(&self.features);
        self.weights = normalized_weights(&pass.raw)?;
        let loss = self
            .learner
            .step_with_scores(&mut self.model, rows, &scores, &self.weights);
        if !loss.is_finite() {
            self.bad_batches += 1;
            log::warn!("epoch {epoch} batch {batch}: loss is {loss}, update skipped");
            if self.bad_batches >= MAX_BAD_BATCHES {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    message: format!("{MAX_BAD_BATCHES} consecutive non-finite batches"),
                });
            }
            return Ok(BatchStats {
                epoch,
                batch,
                loss,
                adv_objective: f64::NAN,
                skipped: true,
            });
        }
        self.bad_batches = 0;
        let adv_objective = adversary_step_from(
            &mut self.net,
            &mut self.adv_opt,
            &pass,
            &self.features,
            &self.state.ema,
            epoch,
            batch,
        )?;
        Ok(BatchStats {
            epoch,
            batch,
            loss,
            adv_objective,
            skipped: false,
        })
    }

    /// One full pass over shuffled training users. `observe` sees the trainer
    /// after every batch. Returns mean loss and mean adversary objective.
    pub fn run_epoch<F>(&mut self, train: &InteractionMatrix, mut observe: F) -> Result<(f64, f64)>
    where
        F: FnMut(&PositTrainer, &BatchStats),
    {
        let batches = self.learner.batches(train.n_users());
        let (mut loss, mut obj, mut n) = (0.0, 0.0, 0usize);
        for (b, users) in batches.iter().enumerate() {
            let rows: Vec<&[u32]> = users.iter().map(|&u| train.row(u)).collect();
            let stats = self.step(&rows, b)?;
            observe(self, &stats);
            if !stats.skipped {
                loss += stats.loss;
                obj += stats.adv_objective;
                n += 1;
            }
        }
        self.learner.end_epoch();
        let n = n.max(1) as f64;
        Ok((loss / n, obj / n))
    }
}

/// The model selected on validation together with its training history.
#[derive(Debug, Clone)]
pub struct PositOutcome {
    pub model: EaseModel,
    pub net: AdversaryNet,
    pub state: AdvantageState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains POSIT for the configured number of epochs and keeps the epoch with
/// the best validation Recall.
pub fn train_posit(train: &InteractionMatrix, val: &EvalSplit, cfg: &PositConfig) -> Result<PositOutcome> {
    train_posit_observed(train, val, cfg, |_, _| {})
}

pub fn train_posit_observed<F>(
    train: &InteractionMatrix,
    val: &EvalSplit,
    cfg: &PositConfig,
    mut observe: F,
) -> Result<PositOutcome>
where
    F: FnMut(&PositTrainer, &BatchStats),
{
    let mut trainer = PositTrainer::new(train, *cfg)?;
    let mut history = Vec::with_capacity(cfg.ease.epochs);
    let mut best: Option<(f64, usize, EaseModel, AdversaryNet, AdvantageState)> = None;
    for epoch in 0..cfg.ease.epochs {
        let (loss, adv_objective) = trainer.run_epoch(train, &mut observe)?;
        let val_recall = metrics::model_recall(&trainer.model, &val.foldin, &val.heldout, cfg.val_k);
        log::info!("epoch {epoch}: loss {loss:.6e} adversary {adv_objective:.4} val recall@{} {val_recall:.4}", cfg.val_k);
        history.push(EpochRecord {
            epoch,
            loss,
            adv_objective: Some(adv_objective),
            val_recall,
        });
        if best.as_ref().is_none_or(|b| val_recall > b.0) {
            best = Some((
                val_recall,
                epoch,
                trainer.model.clone(),
                trainer.net.clone(),
                trainer.state.clone(),
            ));
        }
    }
    let (_, best_epoch, model, net, state) = best.expect("at least one epoch");
    Ok(PositOutcome {
        model,
        net,
        state,
        history,
        best_epoch,
    })
}
