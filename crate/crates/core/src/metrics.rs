//! Ranking accuracy and long-tail metrics over top-K lists.
//!
//! All metrics take [`RankedLists`] built once per evaluation, so every
//! metric sees the same rankings. Lists are produced with the user's fold-in
//! items excluded.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::ease::EaseModel;
use crate::error::{Error, Result};
use crate::rank;

/// Users are scored in chunks of this many rows to bound memory.
const SCORE_CHUNK: usize = 512;

/// Per evaluation user, the ordered top-K item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedLists {
    pub lists: Vec<Vec<u32>>,
    pub depth: usize,
}

impl RankedLists {
    pub fn new(lists: Vec<Vec<u32>>, depth: usize) -> Self {
        RankedLists { lists, depth }
    }

    /// Top-`depth` lists of an EASE model for each fold-in row, with the
    /// fold-in items removed from the candidates.
    pub fn from_model(model: &EaseModel, foldin: &InteractionMatrix, depth: usize) -> Self {
        Self::from_model_with(model, foldin, depth, |scores, excluded| {
            rank::top_k_excluding(scores, excluded, depth)
        })
    }

    /// Like [`RankedLists::from_model`] but with a custom list builder that
    /// receives the raw scores and the user's (sorted) fold-in items.
    pub fn from_model_with<F>(
        model: &EaseModel,
        foldin: &InteractionMatrix,
        depth: usize,
        build: F,
    ) -> Self
    where
        F: Fn(&[f64], &[u32]) -> Vec<u32> + Sync,
    {
        let mut lists = Vec::with_capacity(foldin.n_users());
        for chunk in foldin.rows().chunks(SCORE_CHUNK) {
            let rows: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
            let scores = model.score_rows(&rows);
            let part: Vec<Vec<u32>> = scores
                .axis_iter(Axis(0))
                .into_par_iter()
                .zip(rows.par_iter())
                .map(|(s, row)| build(s.as_slice().expect("contiguous rows"), row))
                .collect();
            lists.extend(part);
        }
        RankedLists { lists, depth }
    }

    pub fn n_users(&self) -> usize {
        self.lists.len()
    }

    fn top(&self, user: usize, k: usize) -> &[u32] {
        let l = &self.lists[user];
        &l[..k.min(l.len())]
    }
}

fn check_users(ranked: &RankedLists, heldout: &InteractionMatrix) {
    assert_eq!(
        ranked.n_users(),
        heldout.n_users(),
        "ranked lists and held-out rows must cover the same users"
    );
}

/// Mean over users of `hits@k / min(k, |held-out|)`; users with no held-out
/// items are skipped.
pub fn recall_at_k(ranked: &RankedLists, heldout: &InteractionMatrix, k: usize) -> f64 {
    check_users(ranked, heldout);
    let mut total = 0.0;
    let mut n = 0usize;
    for u in 0..ranked.n_users() {
        let truth = heldout.row(u);
        if truth.is_empty() {
            continue;
        }
        let hits = ranked
            .top(u, k)
            .iter()
            .filter(|j| truth.binary_search(j).is_ok())
            .count();
        total += hits as f64 / k.min(truth.len()) as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Binary-gain NDCG@k with a `1/log2(rank + 1)` discount.
pub fn ndcg_at_k(ranked: &RankedLists, heldout: &InteractionMatrix, k: usize) -> f64 {
    check_users(ranked, heldout);
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut total = 0.0;
    let mut n = 0usize;
    for u in 0..ranked.n_users() {
        let truth = heldout.row(u);
        if truth.is_empty() {
            continue;
        }
        let dcg: f64 = ranked
            .top(u, k)
            .iter()
            .enumerate()
            .filter(|(_, j)| truth.binary_search(j).is_ok())
            .map(|(pos, _)| discount(pos + 1))
            .sum();
        let idcg: f64 = (1..=k.min(truth.len())).map(discount).sum();
        total += dcg / idcg;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Per item, (held-out positives ranked within top k, held-out positives).
pub fn item_hit_counts(
    ranked: &RankedLists,
    heldout: &InteractionMatrix,
    k: usize,
) -> (Vec<u32>, Vec<u32>) {
    check_users(ranked, heldout);
    let mut hits = vec![0u32; heldout.n_items()];
    for u in 0..ranked.n_users() {
        let truth = heldout.row(u);
        for &j in ranked.top(u, k) {
            if truth.binary_search(&j).is_ok() {
                hits[j as usize] += 1;
            }
        }
    }
    (hits, heldout.item_freq().to_vec())
}

/// Per-item hit fraction averaged over the whole catalog; items without
/// held-out positives contribute zero.
pub fn item_recall_at_k(ranked: &RankedLists, heldout: &InteractionMatrix, k: usize) -> f64 {
    let (hits, positives) = item_hit_counts(ranked, heldout, k);
    let n_items = heldout.n_items();
    if n_items == 0 {
        return 0.0;
    }
    hits.iter()
        .zip(&positives)
        .filter(|(_, &p)| p > 0)
        .map(|(&h, &p)| h as f64 / p as f64)
        .sum::<f64>()
        / n_items as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStat {
    pub mean: f64,
    pub std: f64,
    pub chunks: usize,
}

/// Unique items in the union of top-k lists of consecutive user chunks.
/// Returns the mean and population standard deviation over full chunks.
pub fn coverage_at_k(ranked: &RankedLists, k: usize, batch_size: usize) -> Result<CoverageStat> {
    if batch_size == 0 {
        return Err(Error::Metric("coverage batch size must be positive".into()));
    }
    let n_chunks = ranked.n_users() / batch_size;
    if n_chunks == 0 {
        return Err(Error::Metric(format!(
            "{} users cannot fill one chunk of {batch_size}",
            ranked.n_users()
        )));
    }
    let counts: Vec<f64> = (0..n_chunks)
        .map(|c| {
            let mut seen: Vec<u32> = (c * batch_size..(c + 1) * batch_size)
                .flat_map(|u| ranked.top(u, k).iter().copied())
                .collect();
            seen.sort_unstable();
            seen.dedup();
            seen.len() as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / n_chunks as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n_chunks as f64;
    Ok(CoverageStat {
        mean,
        std: var.sqrt(),
        chunks: n_chunks,
    })
}

/// Coverage relative to its upper bound `min(k * batch, |I|)`.
pub fn coverage_ratio(coverage_mean: f64, k: usize, batch_size: usize, n_items: usize) -> f64 {
    coverage_mean / (k * batch_size).min(n_items) as f64
}

/// Gini coefficient `sum_i sum_j |x_i - x_j| / (2 n sum x)`.
pub fn gini(values: &[f64]) -> Result<f64> {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total <= 0.0 {
        return Err(Error::Metric("gini of an all-zero vector".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // sum_i sum_j |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i), 1-based i
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x)
        .sum();
    Ok(weighted / (n as f64 * total))
}

/// Gini of top-k recommendation counts divided by Gini of training counts.
pub fn gini_ratio(ranked: &RankedLists, train_freq: &[u32], k: usize) -> Result<f64> {
    let mut rec = vec![0.0; train_freq.len()];
    for u in 0..ranked.n_users() {
        for &j in ranked.top(u, k) {
            rec[j as usize] += 1.0;
        }
    }
    let train: Vec<f64> = train_freq.iter().map(|&f| f as f64).collect();
    let base = gini(&train)?;
    if base == 0.0 {
        return Err(Error::Metric("training counts are uniform; Gini ratio undefined".into()));
    }
    Ok(gini(&rec)? / base)
}

/// Item metadata: release year and genres, keyed by item id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemMeta {
    pub entries: HashMap<String, (Option<i32>, Vec<String>)>,
}

impl ItemMeta {
    /// Reads `item_id,year,genres` rows; genres are `|`-separated. A header
    /// row is skipped when its year column is not numeric.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Metric(format!("{other:?}")),
            })?;
        let mut entries = HashMap::new();
        for (idx, rec) in reader.records().enumerate() {
            let rec = rec?;
            let year_field = rec.get(1).unwrap_or("");
            let year = year_field.parse::<i32>().ok();
            if idx == 0 && year.is_none() && !year_field.is_empty() {
                continue;
            }
            let genres = rec
                .get(2)
                .unwrap_or("")
                .split('|')
                .filter(|g| !g.is_empty())
                .map(str::to_string)
                .collect();
            entries.insert(rec.get(0).unwrap_or("").to_string(), (year, genres));
        }
        Ok(ItemMeta { entries })
    }

    /// Category labels for an item as `(grouping, label)` pairs.
    fn categories(&self, item_id: &str) -> Vec<(&'static str, String)> {
        let unknown = || "unknown".to_string();
        match self.entries.get(item_id) {
            None => vec![("year", unknown()), ("genre", unknown())],
            Some((year, genres)) => {
                let mut out = vec![(
                    "year",
                    year.map_or_else(unknown, |y| format!("{}s", y.div_euclid(10) * 10)),
                )];
                if genres.is_empty() {
                    out.push(("genre", unknown()));
                }
                out.extend(genres.iter().map(|g| ("genre", g.clone())));
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub grouping: String,
    pub category: String,
    pub n_items: usize,
    pub n_items_with_positives: usize,
    pub item_recall: f64,
}

/// Item Recall@k restricted to each year-decade and genre, sorted ascending
/// within each grouping. Multi-genre items count toward every genre.
pub fn per_category_report(
    ranked: &RankedLists,
    heldout: &InteractionMatrix,
    meta: &ItemMeta,
    k: usize,
) -> Result<Vec<CategoryRow>> {
    let item_ids = heldout.item_ids();
    let covered = item_ids
        .iter()
        .filter(|id| meta.entries.contains_key(*id))
        .count();
    if (covered as f64) < 0.9 * item_ids.len() as f64 {
        return Err(Error::Metric(format!(
            "metadata covers {covered} of {} items (< 90%)",
            item_ids.len()
        )));
    }
    let (hits, positives) = item_hit_counts(ranked, heldout, k);
    let mut groups: BTreeMap<(&'static str, String), (usize, usize, f64)> = BTreeMap::new();
    for (j, id) in item_ids.iter().enumerate() {
        let frac = if positives[j] > 0 {
            hits[j] as f64 / positives[j] as f64
        } else {
            0.0
        };
        for key in meta.categories(id) {
            let e = groups.entry(key).or_default();
            e.0 += 1;
            e.1 += usize::from(positives[j] > 0);
            e.2 += frac;
        }
    }
    let mut rows: Vec<CategoryRow> = groups
        .into_iter()
        .map(|((grouping, category), (n, with_pos, sum))| CategoryRow {
            grouping: grouping.to_string(),
            category,
            n_items: n,
            n_items_with_positives: with_pos,
            item_recall: sum / n as f64,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.grouping
            .cmp(&b.grouping)
            .then(a.item_recall.total_cmp(&b.item_recall))
            .then(a.category.cmp(&b.category))
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// Per item `(pc1, pc2)` scores.
    pub coords: Vec<[f64; 2]>,
    /// Eigenvalues of the centered item Gram matrix, largest first.
    pub eigenvalues: [f64; 2],
    /// True when the second component was zeroed for lack of variance.
    pub degenerate: bool,
}

/// Leading eigenpairs of a symmetric matrix by power iteration with
/// deflation. Eigenvectors are unit length with their largest-magnitude
/// entry positive.
pub fn top_eigenpairs(matrix: &ndarray::Array2<f64>, count: usize) -> Vec<(f64, Vec<f64>)> {
    const MAX_ITER: usize = 20_000;
    const TOL: f64 = 1e-13;
    let n = matrix.nrows();
    let mut deflated = matrix.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(n) {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        normalize_unit(&mut v);
        let mut lambda = 0.0;
        for _ in 0..MAX_ITER {
            let mut next = mat_vec(&deflated, &v);
            lambda = dot(&next, &v);
            let norm = normalize_unit(&mut next);
            if norm < 1e-300 {
                lambda = 0.0;
                break;
            }
            // fix the sign so convergence is measurable for negative eigenvalues too
            if dot(&next, &v) < 0.0 {
                next.iter_mut().for_each(|x| *x = -*x);
            }
            let delta = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            if delta < TOL {
                break;
            }
        }
        let (pivot, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..n {
            for j in 0..n {
                deflated[[i, j]] -= lambda * v[i] * v[j];
            }
        }
        out.push((lambda, v));
    }
    out
}

fn mat_vec(m: &ndarray::Array2<f64>, v: &[f64]) -> Vec<f64> {
    m.axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize_unit(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Item-item Gram matrix of the interaction columns after centering them
/// across items.
pub fn centered_item_gram(train: &InteractionMatrix) -> ndarray::Array2<f64> {
    let n = train.n_items();
    let mut gram = ndarray::Array2::<f64>::zeros((n, n));
    for row in train.rows() {
        for &a in row {
            for &b in row {
                gram[[a as usize, b as usize]] += 1.0;
            }
        }
    }
    let row_mean: Vec<f64> = gram
        .axis_iter(Axis(0))
        .map(|r| r.sum() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            gram[[i, j]] += grand - row_mean[i] - row_mean[j];
        }
    }
    gram
}

/// Two-dimensional PCA of the items, using each item's interaction column as
/// its feature vector.
pub fn pca_project(train: &InteractionMatrix) -> Result<PcaProjection> {
    let n = train.n_items();
    if n < 2 {
        return Err(Error::Metric("PCA needs at least two items".into()));
    }
    let pairs = top_eigenpairs(&centered_item_gram(train), 2);
    let l1 = pairs[0].0.max(0.0);
    let l2 = pairs[1].0.max(0.0);
    let degenerate = l2 <= 1e-10 * l1.max(1.0);
    if degenerate {
        log::warn!("PCA: second component has no variance; zeroing it");
    }
    let coords = (0..n)
        .map(|j| {
            let x = l1.sqrt() * pairs[0].1[j];
            let y = if degenerate {
                0.0
            } else {
                l2.sqrt() * pairs[1].1[j]
            };
            [x, y]
        })
        .collect();
    Ok(PcaProjection {
        coords,
        eigenvalues: [l1, if degenerate { 0.0 } else { l2 }],
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_users: usize,
    pub n_items: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    /// Coverage at the primary user-batch size.
    pub coverage: BTreeMap<usize, CoverageStat>,
    pub coverage_batch_size: usize,
    pub coverage_ratio: BTreeMap<usize, f64>,
    /// Coverage@max(k) for every configured user-batch size.
    pub coverage_by_batch_size: BTreeMap<usize, CoverageStat>,
    pub item_recall: BTreeMap<usize, f64>,
    pub gini_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_category: Option<Vec<CategoryRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// The first entry is the primary batch size used for `coverage`.
    pub coverage_batch_sizes: Vec<usize>,
    pub gini_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![20, 50, 100],
            coverage_batch_sizes: vec![100],
            gini_k: 100,
        }
    }
}

impl EvalOptions {
    pub fn depth(&self) -> usize {
        self.ks
            .iter()
            .copied()
            .chain(std::iter::once(self.gini_k))
            .max()
            .unwrap_or(100)
    }
}

/// Computes every metric of the report from one set of ranked lists.
pub fn evaluate(
    ranked: &RankedLists,
    heldout: &InteractionMatrix,
    train_freq: &[u32],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let n_items = heldout.n_items();
    let primary = *opts
        .coverage_batch_sizes
        .first()
        .ok_or_else(|| Error::Metric("no coverage batch size".into()))?;
    let mut report = EvalReport {
        n_users: ranked.n_users(),
        n_items,
        recall: BTreeMap::new(),
        ndcg: BTreeMap::new(),
        coverage: BTreeMap::new(),
        coverage_batch_size: primary,
        coverage_ratio: BTreeMap::new(),
        coverage_by_batch_size: BTreeMap::new(),
        item_recall: BTreeMap::new(),
        gini_ratio: gini_ratio(ranked, train_freq, opts.gini_k)?,
        per_category: None,
    };
    for &k in &opts.ks {
        report.recall.insert(k, recall_at_k(ranked, heldout, k));
        report.ndcg.insert(k, ndcg_at_k(ranked, heldout, k));
        report.item_recall.insert(k, item_recall_at_k(ranked, heldout, k));
        let cov = coverage_at_k(ranked, k, primary)?;
        report
            .coverage_ratio
            .insert(k, coverage_ratio(cov.mean, k, primary, n_items));
        report.coverage.insert(k, cov);
    }
    let k_max = opts.ks.iter().copied().max().unwrap_or(100);
    for &b in &opts.coverage_batch_sizes {
        match coverage_at_k(ranked, k_max, b) {
            Ok(stat) => {
                report.coverage_by_batch_size.insert(b, stat);
            }
            Err(e) => log::warn!("skipping coverage at batch size {b}: {e}"),
        }
    }
    Ok(report)
}

/// Recall@k of a model on an evaluation split (validation selection).
pub fn model_recall(model: &EaseModel, foldin: &InteractionMatrix, heldout: &InteractionMatrix, k: usize) -> f64 {
    recall_at_k(&RankedLists::from_model(model, foldin, k), heldout, k)
}
