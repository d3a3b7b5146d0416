//! Experiment orchestration behind the `posit` binary: configuration files,
//! training any method, evaluation, sweeps and data exports.
//!
//! A configuration is a plain `key = value` file (`#` starts a comment).
//! Command-line overrides take precedence over the file, which takes
//! precedence over the defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::advantage::{hit_rows, scores_from_counts, AdvantageState, AdvantageVariant};
use crate::adversary::{normalized_weights, train_posit, AdversaryNet, Architecture, ItemFeatures, PositConfig};
use crate::baselines::{
    fit_weighted_sgd, most_popular_lists, rerank_lists, train_cvar, train_ipw, CvarConfig, IpwConfig,
    RerankConfig,
};
use crate::checkpoint::Checkpoint;
use crate::dataset::{
    build_matrix, ingest_csv, read_matrix, split_users, EvalSplit, InteractionMatrix, SplitSpec, Splits,
};
use crate::ease::{batch_scores, solve_closed_form, EaseModel, EpochRecord, LrSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, evaluate, EvalOptions, EvalReport, ItemMeta, RankedLists};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ease,
    Posit,
    Ipw,
    Cvar,
    Rerank,
    Mp,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ease" => Method::Ease,
            "posit" => Method::Posit,
            "ipw" => Method::Ipw,
            "cvar" => Method::Cvar,
            "rerank" => Method::Rerank,
            "mp" => Method::Mp,
            other => {
                return Err(Error::config(
                    "method",
                    format!("unknown method `{other}` (ease|posit|ipw|cvar|rerank|mp)"),
                ))
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Ease => "ease",
            Method::Posit => "posit",
            Method::Ipw => "ipw",
            Method::Cvar => "cvar",
            Method::Rerank => "rerank",
            Method::Mp => "mp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Interaction data: a matrix written by `posit ingest`, or a ratings CSV.
    pub data: PathBuf,
    /// Optional `item_id,year,genres` CSV for per-category reports.
    pub item_meta: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub method: Method,
    pub seed: u64,

    pub rating_threshold: f64,
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,
    pub n_val_users: usize,
    pub n_test_users: usize,
    pub heldout_fraction: f64,

    /// EASE only: solve exactly instead of SGD.
    pub closed_form: bool,
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-epoch learning-rate multiplier; 1 keeps it constant.
    pub lr_decay: f64,

    pub adv_lr: f64,
    pub adv_momentum: f64,
    pub tau: f64,
    pub hidden: usize,
    pub k: usize,
    pub m: f64,
    pub advantage_variant: AdvantageVariant,
    pub architecture: Architecture,

    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub beta1_init: f64,
    pub beta1_lr: f64,
    pub t_high: Option<f64>,
    pub t_low: Option<f64>,

    pub eval_ks: Vec<usize>,
    pub coverage_batch_sizes: Vec<usize>,
    pub gini_k: usize,
    pub val_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let posit = PositConfig::default();
        let train = TrainConfig::default();
        let eval = EvalOptions::default();
        ExperimentConfig {
            data: PathBuf::new(),
            item_meta: None,
            out_dir: PathBuf::from("runs/default"),
            method: Method::Ease,
            seed: 0,
            rating_threshold: crate::dataset::DEFAULT_RATING_THRESHOLD,
            min_user_interactions: 5,
            min_item_interactions: 1,
            n_val_users: 10_000,
            n_test_users: 10_000,
            heldout_fraction: 0.2,
            closed_form: true,
            lambda: posit.lambda,
            lr: train.lr,
            momentum: train.momentum,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr_decay: 0.95,
            adv_lr: posit.adv_lr,
            adv_momentum: posit.adv_momentum,
            tau: posit.tau,
            hidden: posit.hidden,
            k: posit.k,
            m: posit.m,
            advantage_variant: posit.advantage_variant,
            architecture: posit.architecture,
            beta: None,
            alpha: None,
            beta1_init: 0.0,
            beta1_lr: CvarConfig::default().beta1_lr,
            t_high: None,
            t_low: None,
            eval_ks: eval.ks,
            coverage_batch_sizes: eval.coverage_batch_sizes,
            gini_k: eval.gini_k,
            val_k: posit.val_k,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{value}`"))),
    }
}

impl ExperimentConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data = PathBuf::from(v),
            "item_meta" => self.item_meta = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "method" => self.method = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "rating_threshold" => self.rating_threshold = parse(key, v)?,
            "min_user_interactions" => self.min_user_interactions = parse(key, v)?,
            "min_item_interactions" => self.min_item_interactions = parse(key, v)?,
            "n_val_users" => self.n_val_users = parse(key, v)?,
            "n_test_users" => self.n_test_users = parse(key, v)?,
            "heldout_fraction" => self.heldout_fraction = parse(key, v)?,
            "closed_form" => self.closed_form = parse_bool(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "adv_lr" => self.adv_lr = parse(key, v)?,
            "adv_momentum" => self.adv_momentum = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "advantage_variant" => self.advantage_variant = v.parse()?,
            "architecture" => self.architecture = v.parse()?,
            "beta" => self.beta = Some(parse(key, v)?),
            "alpha" => self.alpha = Some(parse(key, v)?),
            "beta1_init" => self.beta1_init = parse(key, v)?,
            "beta1_lr" => self.beta1_lr = parse(key, v)?,
            "t_high" => self.t_high = Some(parse(key, v)?),
            "t_low" => self.t_low = Some(parse(key, v)?),
            "eval_ks" => self.eval_ks = parse_list(key, v)?,
            "coverage_batch_sizes" => self.coverage_batch_sizes = parse_list(key, v)?,
            "gini_k" => self.gini_k = parse(key, v)?,
            "val_k" => self.val_k = parse(key, v)?,
            other => return Err(Error::config(other, "unknown configuration key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides, typically from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_ref(), "override must look like key=value"))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the overrides; validated.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let cfg = Self::load_unvalidated(file, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Like [`ExperimentConfig::load`] without validation, for sweep bases
    /// whose required fields come from the grid.
    pub fn load_unvalidated(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    /// The configuration in the same `key = value` form it is read from.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (key, v) in value.as_object().expect("config is an object") {
            let text = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{key} = {text}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.as_os_str().is_empty() {
            return Err(Error::config("data", "required"));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::config("heldout_fraction", "must be in (0, 1)"));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::config("eval_ks", "need at least one positive cutoff"));
        }
        if self.coverage_batch_sizes.is_empty() || self.coverage_batch_sizes.contains(&0) {
            return Err(Error::config("coverage_batch_sizes", "need at least one positive size"));
        }
        if self.gini_k == 0 {
            return Err(Error::config("gini_k", "must be at least 1"));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::config("lr_decay", "must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be >= 0"));
        }
        match self.method {
            Method::Ease if self.closed_form => {}
            Method::Ease | Method::Ipw | Method::Cvar => self.train_config().validate()?,
            Method::Posit => self.posit_config().validate()?,
            Method::Rerank => {
                if !self.closed_form {
                    self.train_config().validate()?;
                }
            }
            Method::Mp => {}
        }
        match self.method {
            Method::Ipw if self.beta.is_none() => Err(Error::config("beta", "required for ipw")),
            Method::Cvar => self.cvar_config()?.validate(),
            Method::Rerank => self.rerank_config()?.validate(),
            _ => Ok(()),
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            n_val_users: self.n_val_users,
            n_test_users: self.n_test_users,
            heldout_fraction: self.heldout_fraction,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_schedule: if self.lr_decay == 1.0 {
                LrSchedule::Constant
            } else {
                LrSchedule::Exponential {
                    decay: self.lr_decay,
                }
            },
            seed: self.seed,
        }
    }

    pub fn posit_config(&self) -> PositConfig {
        PositConfig {
            ease: self.train_config(),
            lambda: self.lambda,
            adv_lr: self.adv_lr,
            adv_momentum: self.adv_momentum,
            tau: self.tau,
            hidden: self.hidden,
            k: self.k,
            m: self.m,
            advantage_variant: self.advantage_variant,
            architecture: self.architecture,
            val_k: self.val_k,
        }
    }

    pub fn cvar_config(&self) -> Result<CvarConfig> {
        Ok(CvarConfig {
            alpha: self.alpha.ok_or_else(|| Error::config("alpha", "required for cvar"))?,
            beta1_init: self.beta1_init,
            beta1_lr: self.beta1_lr,
        })
    }

    pub fn rerank_config(&self) -> Result<RerankConfig> {
        Ok(RerankConfig {
            t_high: self.t_high.ok_or_else(|| Error::config("t_high", "required for rerank"))?,
            t_low: self.t_low.ok_or_else(|| Error::config("t_low", "required for rerank"))?,
        })
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.eval_ks.clone(),
            coverage_batch_sizes: self.coverage_batch_sizes.clone(),
            gini_k: self.gini_k,
        }
    }
}

/// The full interaction matrix, its split, and optional item metadata.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub matrix: InteractionMatrix,
    pub splits: Splits,
    pub meta: Option<ItemMeta>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let is_csv = cfg
        .data
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let matrix = if is_csv {
        let events = ingest_csv(&cfg.data, cfg.rating_threshold)?;
        build_matrix(&events, cfg.min_user_interactions, cfg.min_item_interactions)?
    } else {
        read_matrix(&cfg.data)?
    };
    let splits = split_users(&matrix, &cfg.split_spec())?;
    let meta = match &cfg.item_meta {
        Some(path) => match ItemMeta::from_csv(path) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("item metadata unavailable, per-category report skipped: {e}");
                None
            }
        },
        None => None,
    };
    Ok(Dataset {
        matrix,
        splits,
        meta,
    })
}

/// A trained method, whatever its parts.
#[derive(Debug, Clone)]
pub struct Trained {
    pub method: Method,
    pub model: Option<EaseModel>,
    pub adversary: Option<AdversaryNet>,
    pub advantage: Option<AdvantageState>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl Trained {
    fn plain(method: Method, model: EaseModel) -> Self {
        Trained {
            method,
            model: Some(model),
            adversary: None,
            advantage: None,
            history: Vec::new(),
            best_epoch: None,
        }
    }

    fn from_fit(method: Method, fit: crate::baselines::FitOutcome) -> Self {
        Trained {
            method,
            model: Some(fit.model),
            adversary: None,
            advantage: None,
            history: fit.history,
            best_epoch: Some(fit.best_epoch),
        }
    }

    pub fn to_checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        Checkpoint {
            method: self.method.to_string(),
            best_epoch: self.best_epoch,
            epochs_run: self.history.len(),
            n_items: self
                .model
                .as_ref()
                .map(EaseModel::n_items)
                .or(self.advantage.as_ref().map(|s| s.ema.len()))
                .unwrap_or(0),
            model: self.model.clone(),
            adversary: self.adversary.clone(),
            advantage: self.advantage.clone(),
            extra: serde_json::to_value(cfg).expect("config serializes"),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Ok(Trained {
            method: ckpt.method.parse()?,
            model: ckpt.model,
            adversary: ckpt.adversary,
            advantage: ckpt.advantage,
            history: Vec::new(),
            best_epoch: ckpt.best_epoch,
        })
    }
}

fn ease_model(cfg: &ExperimentConfig, splits: &Splits) -> Result<Trained> {
    if cfg.closed_form {
        return Ok(Trained::plain(cfg.method, solve_closed_form(&splits.train, cfg.lambda)?));
    }
    let ones = vec![1.0; splits.train.n_items()];
    let fit = fit_weighted_sgd(&splits.train, &splits.val, &cfg.train_config(), cfg.lambda, &ones, cfg.val_k)?;
    Ok(Trained::from_fit(cfg.method, fit))
}

/// Trains the configured method on the training users, selecting epochs on
/// the validation users.
pub fn train(cfg: &ExperimentConfig, splits: &Splits) -> Result<Trained> {
    let (train, val) = (&splits.train, &splits.val);
    match cfg.method {
        Method::Ease | Method::Rerank => ease_model(cfg, splits),
        Method::Mp => Ok(Trained {
            method: Method::Mp,
            model: None,
            adversary: None,
            advantage: None,
            history: Vec::new(),
            best_epoch: None,
        }),
        Method::Ipw => {
            let ipw = IpwConfig {
                beta: cfg.beta.ok_or_else(|| Error::config("beta", "required for ipw"))?,
            };
            let fit = train_ipw(train, val, &cfg.train_config(), cfg.lambda, ipw, cfg.val_k)?;
            Ok(Trained::from_fit(Method::Ipw, fit))
        }
        Method::Cvar => {
            let (fit, beta1) = train_cvar(train, val, &cfg.train_config(), cfg.lambda, cfg.cvar_config()?, cfg.val_k)?;
            log::info!("cvar threshold after training: {beta1}");
            Ok(Trained::from_fit(Method::Cvar, fit))
        }
        Method::Posit => {
            let out = train_posit(train, val, &cfg.posit_config())?;
            Ok(Trained {
                method: Method::Posit,
                model: Some(out.model),
                adversary: Some(out.net),
                advantage: Some(out.state),
                history: out.history,
                best_epoch: Some(out.best_epoch),
            })
        }
    }
}

fn require_model(trained: &Trained) -> Result<&EaseModel> {
    trained
        .model
        .as_ref()
        .ok_or_else(|| Error::config("method", format!("{} has no model weights", trained.method)))
}

/// Top-`depth` lists for an evaluation split.
pub fn ranked_lists(
    trained: &Trained,
    cfg: &ExperimentConfig,
    train_freq: &[u32],
    split: &EvalSplit,
    depth: usize,
) -> Result<RankedLists> {
    Ok(match trained.method {
        Method::Mp => most_popular_lists(train_freq, split.n_users(), depth),
        Method::Rerank => rerank_lists(
            require_model(trained)?,
            &split.foldin,
            train_freq,
            &cfg.rerank_config()?,
            depth,
        ),
        _ => RankedLists::from_model(require_model(trained)?, &split.foldin, depth),
    })
}

/// Every configured metric on one split, plus the per-category table when
/// metadata is available.
pub fn evaluate_split(
    trained: &Trained,
    cfg: &ExperimentConfig,
    data: &Dataset,
    split: &EvalSplit,
) -> Result<EvalReport> {
    let opts = cfg.eval_options();
    let freq = data.splits.train.item_freq();
    let ranked = ranked_lists(trained, cfg, freq, split, opts.depth())?;
    let mut report = evaluate(&ranked, &split.heldout, freq, &opts)?;
    if let Some(meta) = &data.meta {
        let k = opts.ks.iter().copied().max().unwrap_or(100);
        match metrics::per_category_report(&ranked, &split.heldout, meta, k) {
            Ok(rows) => report.per_category = Some(rows),
            Err(e) => log::warn!("per-category report skipped: {e}"),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub best_epoch: Option<usize>,
    pub best_val_recall: Option<f64>,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub method: Method,
    pub seed: u64,
    pub data: PathBuf,
    pub data_hash: String,
    pub n_users: usize,
    pub n_items: usize,
    pub config: ExperimentConfig,
}

/// Where a run wrote its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutputs {
    pub out_dir: PathBuf,
    pub report: PathBuf,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub history: PathBuf,
    pub summary: RunReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "adv_objective", "val_recall"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.loss.to_string(),
            h.adv_objective.map(|v| v.to_string()).unwrap_or_default(),
            h.val_recall.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Evaluates on test and writes report, checkpoint, manifest, effective
/// configuration and history into `cfg.out_dir`.
pub fn write_run(cfg: &ExperimentConfig, data: &Dataset, trained: &Trained) -> Result<RunOutputs> {
    let test = evaluate_split(trained, cfg, data, &data.splits.test)?;
    let summary = RunReport {
        method: trained.method,
        best_epoch: trained.best_epoch,
        best_val_recall: trained
            .best_epoch
            .and_then(|e| trained.history.get(e))
            .map(|h| h.val_recall),
        test,
    };
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = RunOutputs {
        out_dir: dir.clone(),
        report: dir.join("report.json"),
        checkpoint: dir.join("checkpoint.bin"),
        manifest: dir.join("manifest.json"),
        history: dir.join("history.csv"),
        summary,
    };
    write_json(&out.report, &out.summary)?;
    trained.to_checkpoint(cfg).save(&out.checkpoint)?;
    write_json(
        &out.manifest,
        &Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            method: cfg.method,
            seed: cfg.seed,
            data: cfg.data.clone(),
            data_hash: data.matrix.content_hash(),
            n_users: data.matrix.n_users(),
            n_items: data.matrix.n_items(),
            config: cfg.clone(),
        },
    )?;
    let cfg_path = dir.join("config.cfg");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    write_history(&out.history, &trained.history)?;
    Ok(out)
}

/// Trains, selects on validation, evaluates once on test and writes outputs.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let trained = train(cfg, &data.splits)?;
    write_run(cfg, &data, &trained)
}

/// Loads a checkpoint and the configuration stored in it.
pub fn load_checkpoint(path: &Path) -> Result<(Trained, ExperimentConfig)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg: ExperimentConfig = serde_json::from_value(ckpt.extra.clone())?;
    Ok((Trained::from_checkpoint(ckpt)?, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Val,
    Test,
}

impl FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

/// Metrics of a saved checkpoint on the validation or test users.
pub fn evaluate_checkpoint(path: &Path, split: SplitName) -> Result<EvalReport> {
    let (trained, cfg) = load_checkpoint(path)?;
    let data = load_dataset(&cfg)?;
    let s = match split {
        SplitName::Val => &data.splits.val,
        SplitName::Test => &data.splits.test,
    };
    evaluate_split(&trained, &cfg, &data, s)
}

/// Writes the figure data for a checkpoint: `item_advantage.csv` (models
/// with weights), `per_category.csv` (when metadata is configured) and
/// `pca_weights.csv` (POSIT only). Returns the files written.
pub fn export_figures_data(checkpoint: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (trained, cfg) = load_checkpoint(checkpoint)?;
    let data = load_dataset(&cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train = &data.splits.train;
    let item_ids = train.item_ids();
    let mut written = Vec::new();

    if let Some(model) = &trained.model {
        let path = out_dir.join("item_advantage.csv");
        let k = trained.advantage.as_ref().map_or(cfg.k, |s| s.k);
        let (hits, positives) = training_hits(model, train, k);
        let with = scores_from_counts(&hits, &positives, train.n_users(), AdvantageVariant::WithPopularity);
        let without = scores_from_counts(&hits, &positives, train.n_users(), AdvantageVariant::WithoutPopularity);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["item_id", "frequency", "s_with_popularity", "s_without_popularity", "s_ema"])?;
        for j in 0..train.n_items() {
            let ema = trained
                .advantage
                .as_ref()
                .map(|s| s.ema[j].to_string())
                .unwrap_or_default();
            w.write_record([
                item_ids[j].clone(),
                positives[j].to_string(),
                with[j].to_string(),
                without[j].to_string(),
                ema,
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    } else {
        log::warn!("{} has no model weights; advantage export skipped", trained.method);
    }

    if let Some(meta) = &data.meta {
        let split = &data.splits.test;
        let k = cfg.eval_ks.iter().copied().max().unwrap_or(100);
        let ranked = ranked_lists(&trained, &cfg, train.item_freq(), split, k)?;
        match metrics::per_category_report(&ranked, &split.heldout, meta, k) {
            Ok(rows) => {
                let path = out_dir.join("per_category.csv");
                let mut w = csv::Writer::from_path(&path)?;
                for row in rows {
                    w.serialize(row)?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            Err(e) => log::warn!("per-category export skipped: {e}"),
        }
    }

    match (&trained.adversary, &trained.advantage) {
        (Some(net), Some(state)) if net.layer1().nrows() == train.n_users() => {
            let weights = normalized_weights(&net.forward(&ItemFeatures::from_train(train)).raw)?;
            let pca = metrics::pca_project(train)?;
            let path = out_dir.join("pca_weights.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["item_id", "weight", "advantage_ema", "pca_x", "pca_y"])?;
            for j in 0..train.n_items() {
                w.write_record([
                    item_ids[j].clone(),
                    weights[j].to_string(),
                    state.ema[j].to_string(),
                    pca.coords[j][0].to_string(),
                    pca.coords[j][1].to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        (Some(_), _) => log::warn!("adversary does not match the training users; weight export skipped"),
        _ => log::warn!("checkpoint has no adversary; weight export skipped"),
    }
    Ok(written)
}

/// Per item: training positives ranked within the top `k` over all items,
/// and training positives.
fn training_hits(model: &EaseModel, train: &InteractionMatrix, k: usize) -> (Vec<u32>, Vec<u32>) {
    let mut hits = vec![0u32; train.n_items()];
    for chunk in train.rows().chunks(1024) {
        let rows: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
        let scores = batch_scores(model.weights(), &rows);
        for row in hit_rows(&scores, &rows, k) {
            row.iter().for_each(|&j| hits[j as usize] += 1);
        }
    }
    (hits, train.item_freq().to_vec())
}

/// Metric used to rank sweep runs on the validation users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMetric {
    Recall(usize),
    Ndcg(usize),
    ItemRecall(usize),
    Coverage(usize),
}

impl Default for SelectionMetric {
    fn default() -> Self {
        SelectionMetric::Recall(100)
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .split_once('@')
            .ok_or_else(|| Error::config("metric", format!("expected name@k, got `{s}`")))?;
        let k: usize = parse("metric", k)?;
        match name {
            "recall" => Ok(SelectionMetric::Recall(k)),
            "ndcg" => Ok(SelectionMetric::Ndcg(k)),
            "item_recall" => Ok(SelectionMetric::ItemRecall(k)),
            "coverage" => Ok(SelectionMetric::Coverage(k)),
            other => Err(Error::config("metric", format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMetric::Recall(k) => write!(f, "recall@{k}"),
            SelectionMetric::Ndcg(k) => write!(f, "ndcg@{k}"),
            SelectionMetric::ItemRecall(k) => write!(f, "item_recall@{k}"),
            SelectionMetric::Coverage(k) => write!(f, "coverage@{k}"),
        }
    }
}

impl SelectionMetric {
    fn k(&self) -> usize {
        match *self {
            SelectionMetric::Recall(k)
            | SelectionMetric::Ndcg(k)
            | SelectionMetric::ItemRecall(k)
            | SelectionMetric::Coverage(k) => k,
        }
    }

    fn compute(&self, ranked: &RankedLists, heldout: &InteractionMatrix, batch: usize) -> Result<f64> {
        Ok(match *self {
            SelectionMetric::Recall(k) => metrics::recall_at_k(ranked, heldout, k),
            SelectionMetric::Ndcg(k) => metrics::ndcg_at_k(ranked, heldout, k),
            SelectionMetric::ItemRecall(k) => metrics::item_recall_at_k(ranked, heldout, k),
            SelectionMetric::Coverage(k) => metrics::coverage_at_k(ranked, k, batch)?.mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Parameter name and the values to try, in order.
    pub grid: Vec<(String, Vec<String>)>,
    pub metric: SelectionMetric,
}

impl SweepSpec {
    /// Parses `key=v1,v2,...` entries.
    pub fn from_args<S: AsRef<str>>(entries: &[S], metric: SelectionMetric) -> Result<Self> {
        let mut grid = Vec::new();
        for e in entries {
            let (key, values) = e
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::config(e.as_ref(), "grid entries look like key=v1,v2"))?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::config(key, "grid has no values"));
            }
            grid.push((key.trim().to_string(), values));
        }
        if grid.is_empty() {
            return Err(Error::config("grid", "sweep needs at least one parameter"));
        }
        Ok(SweepSpec { grid, metric })
    }

    /// Every combination, first parameter varying slowest.
    pub fn combinations(&self) -> Vec<Vec<(String, String)>> {
        let mut out = vec![Vec::new()];
        for (key, values) in &self.grid {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    pub run: usize,
    pub params: BTreeMap<String, String>,
    pub status: String,
    pub val_metric: Option<f64>,
    pub val_recall: Option<f64>,
    pub val_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutputs {
    pub leaderboard: PathBuf,
    pub frontier: Option<PathBuf>,
    pub rows: Vec<LeaderboardRow>,
    pub best: Option<RunOutputs>,
}

/// Trains every grid combination, ranks them on validation, and writes the
/// winner's full run (test evaluation included) to `<out_dir>/best`. CVaR and
/// Rerank sweeps also write a test-set coverage/recall frontier.
pub fn sweep(base: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepOutputs> {
    if base.data.as_os_str().is_empty() {
        return Err(Error::config("data", "required"));
    }
    let data = load_dataset(base)?;
    let out_dir = base.out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let batch = base.coverage_batch_sizes[0];
    let probe_k = 100.max(spec.metric.k());
    let frontier_wanted = matches!(base.method, Method::Cvar | Method::Rerank);
    let mut rows = Vec::new();
    let mut frontier: Vec<(usize, f64, f64)> = Vec::new();
    let mut best: Option<(f64, ExperimentConfig, Trained)> = None;

    for (run, combo) in spec.combinations().into_iter().enumerate() {
        let params: BTreeMap<String, String> = combo.iter().cloned().collect();
        let mut cfg = base.clone();
        let attempt = (|| -> Result<(f64, f64, Option<f64>, Trained)> {
            for (k, v) in &combo {
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            let trained = train(&cfg, &data.splits)?;
            let freq = data.splits.train.item_freq();
            let val = &data.splits.val;
            let ranked = ranked_lists(&trained, &cfg, freq, val, probe_k)?;
            let metric = spec.metric.compute(&ranked, &val.heldout, batch)?;
            let recall = metrics::recall_at_k(&ranked, &val.heldout, 100);
            let coverage = metrics::coverage_at_k(&ranked, 100, batch).ok().map(|c| c.mean);
            if frontier_wanted {
                let test = &data.splits.test;
                let ranked = ranked_lists(&trained, &cfg, freq, test, 100)?;
                let cov = metrics::coverage_at_k(&ranked, 100, batch)?.mean;
                frontier.push((run, cov, metrics::recall_at_k(&ranked, &test.heldout, 100)));
            }
            Ok((metric, recall, coverage, trained))
        })();
        match attempt {
            Ok((metric, recall, coverage, trained)) => {
                log::info!("run {run} {params:?}: {} = {metric:.4}", spec.metric);
                rows.push(LeaderboardRow {
                    run,
                    params,
                    status: "ok".into(),
                    val_metric: Some(metric),
                    val_recall: Some(recall),
                    val_coverage: coverage,
                });
                if best.as_ref().is_none_or(|b| metric > b.0) {
                    best = Some((metric, cfg, trained));
                }
            }
            Err(e) => {
                log::warn!("run {run} {params:?} failed: {e}");
                rows.push(LeaderboardRow {
                    run,
                    params,
                    status: format!("failed: {e}"),
                    val_metric: None,
                    val_recall: None,
                    val_coverage: None,
                });
            }
        }
    }

    rows.sort_by(|a, b| match (a.val_metric, b.val_metric) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.run.cmp(&b.run)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.run.cmp(&b.run),
    });
    let keys: Vec<String> = spec.grid.iter().map(|(k, _)| k.clone()).collect();
    let leaderboard = out_dir.join("leaderboard.csv");
    let mut w = csv::Writer::from_path(&leaderboard)?;
    let mut header = vec!["run".to_string()];
    header.extend(keys.iter().cloned());
    header.extend([
        "status".to_string(),
        "selection_score".to_string(),
        "val_recall@100".to_string(),
        "val_coverage@100".to_string(),
    ]);
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        let mut rec = vec![r.run.to_string()];
        rec.extend(keys.iter().map(|k| r.params[k].clone()));
        rec.extend([r.status.clone(), opt(r.val_metric), opt(r.val_recall), opt(r.val_coverage)]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&leaderboard, e))?;

    let frontier_path = if frontier_wanted {
        let path = out_dir.join("frontier_test.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["run".to_string()];
        header.extend(keys.iter().cloned());
        header.extend(["test_coverage@100".to_string(), "test_recall@100".to_string()]);
        w.write_record(&header)?;
        for (run, cov, rec) in &frontier {
            let params = &rows.iter().find(|r| r.run == *run).expect("row per run").params;
            let mut out = vec![run.to_string()];
            out.extend(keys.iter().map(|k| params[k].clone()));
            out.extend([cov.to_string(), rec.to_string()]);
            w.write_record(&out)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Some(path)
    } else {
        None
    };

    let best = match best {
        Some((_, mut cfg, trained)) => {
            cfg.out_dir = out_dir.join("best");
            Some(write_run(&cfg, &data, &trained)?)
        }
        None => None,
    };
    Ok(SweepOutputs {
        leaderboard,
        frontier: frontier_path,
        rows,
        best,
    })
}
