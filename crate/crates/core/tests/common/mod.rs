// Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use posit::dataset::InteractionMatrix;

/// A random evaluation instance: scores, fold-in and held-out sets per user.
pub struct Instance {
    pub n_items: usize,
    pub scores: Vec<Vec<f64>>,
    pub foldin: Vec<Vec<u32>>,
    pub heldout: Vec<Vec<u32>>,
    pub train_freq: Vec<u32>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_users: usize, max_items: usize) -> Instance {
    let n_users = rng.random_range(1..=max_users);
    let n_items = rng.random_range(2..=max_items);
    let mut scores = Vec::new();
    let mut foldin = Vec::new();
    let mut heldout = Vec::new();
    for _ in 0..n_users {
        // coarse grid so ties are common
        scores.push((0..n_items).map(|_| rng.random_range(0..6) as f64 * 0.25).collect());
        let mut f = Vec::new();
        let mut h = Vec::new();
        for j in 0..n_items as u32 {
            match rng.random_range(0..10) {
                0..=1 => f.push(j),
                2..=3 => h.push(j),
                _ => {}
            }
        }
        foldin.push(f);
        heldout.push(h);
    }
    let mut train_freq: Vec<u32> = (0..n_items).map(|_| rng.random_range(0..20)).collect();
    if train_freq.iter().all(|&f| f == train_freq[0]) {
        train_freq[0] += 1;
    }
    Instance {
        n_items,
        scores,
        foldin,
        heldout,
        train_freq,
    }
}

/// Whether `j` lands in the top `k` among the non-excluded items, by counting
/// the candidates that beat it (higher score, or equal score and lower index).
pub fn in_top_k(scores: &[f64], excluded: &[u32], j: u32, k: usize) -> bool {
    if excluded.contains(&j) {
        return false;
    }
    let better = (0..scores.len() as u32)
        .filter(|l| !excluded.contains(l))
        .filter(|&l| {
            scores[l as usize] > scores[j as usize] || (scores[l as usize] == scores[j as usize] && l < j)
        })
        .count();
    better < k
}

/// 1-based position of `j` among non-excluded items.
pub fn position(scores: &[f64], excluded: &[u32], j: u32) -> usize {
    1 + (0..scores.len() as u32)
        .filter(|l| !excluded.contains(l))
        .filter(|&l| {
            scores[l as usize] > scores[j as usize] || (scores[l as usize] == scores[j as usize] && l < j)
        })
        .count()
}

pub fn oracle_recall(inst: &Instance, k: usize) -> f64 {
    let mut vals = Vec::new();
    for u in 0..inst.scores.len() {
        let h = &inst.heldout[u];
        if h.is_empty() {
            continue;
        }
        let hits = h
            .iter()
            .filter(|&&j| in_top_k(&inst.scores[u], &inst.foldin[u], j, k))
            .count();
        vals.push(hits as f64 / k.min(h.len()) as f64);
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn oracle_ndcg(inst: &Instance, k: usize) -> f64 {
    let mut vals = Vec::new();
    for u in 0..inst.scores.len() {
        let h = &inst.heldout[u];
        if h.is_empty() {
            continue;
        }
        let mut dcg = 0.0;
        for &j in h {
            let p = position(&inst.scores[u], &inst.foldin[u], j);
            if p <= k {
                dcg += 1.0 / (p as f64 + 1.0).log2();
            }
        }
        let mut idcg = 0.0;
        for p in 1..=k.min(h.len()) {
            idcg += 1.0 / (p as f64 + 1.0).log2();
        }
        vals.push(dcg / idcg);
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn oracle_item_recall(inst: &Instance, k: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..inst.n_items as u32 {
        let users: Vec<usize> = (0..inst.scores.len())
            .filter(|&u| inst.heldout[u].contains(&j))
            .collect();
        if users.is_empty() {
            continue;
        }
        let hits = users
            .iter()
            .filter(|&&u| in_top_k(&inst.scores[u], &inst.foldin[u], j, k))
            .count();
        total += hits as f64 / users.len() as f64;
    }
    total / inst.n_items as f64
}

/// Mean distinct items over consecutive full chunks of `batch` users.
pub fn oracle_coverage(inst: &Instance, k: usize, batch: usize) -> Option<f64> {
    let chunks = inst.scores.len() / batch;
    if chunks == 0 {
        return None;
    }
    let mut total = 0.0;
    for c in 0..chunks {
        let mut set = HashSet::new();
        for u in c * batch..(c + 1) * batch {
            for j in 0..inst.n_items as u32 {
                if in_top_k(&inst.scores[u], &inst.foldin[u], j, k) {
                    set.insert(j);
                }
            }
        }
        total += set.len() as f64;
    }
    Some(total / chunks as f64)
}

/// Gini from its pairwise definition.
pub fn oracle_gini(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut s = 0.0;
    for a in x {
        for b in x {
            s += (a - b).abs();
        }
    }
    s / (2.0 * n * x.iter().sum::<f64>())
}

pub fn oracle_gini_ratio(inst: &Instance, k: usize) -> Option<f64> {
    let mut rec = vec![0.0; inst.n_items];
    for u in 0..inst.scores.len() {
        for j in 0..inst.n_items as u32 {
            if in_top_k(&inst.scores[u], &inst.foldin[u], j, k) {
                rec[j as usize] += 1.0;
            }
        }
    }
    if rec.iter().sum::<f64>() == 0.0 {
        return None;
    }
    let train: Vec<f64> = inst.train_freq.iter().map(|&f| f as f64).collect();
    Some(oracle_gini(&rec) / oracle_gini(&train))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n_users: usize, n_items: usize, density: f64) -> InteractionMatrix {
    let rows: Vec<Vec<u32>> = (0..n_users)
        .map(|_| {
            (0..n_items as u32)
                .filter(|_| rng.random_bool(density))
                .collect()
        })
        .collect();
    InteractionMatrix::from_rows(rows, n_items).unwrap()
}

pub fn dense(m: &InteractionMatrix) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(m.n_users(), m.n_items());
    for u in 0..m.n_users() {
        for &j in m.row(u) {
            x[(u, j as usize)] = 1.0;
        }
    }
    x
}

/// Solves the stationarity conditions of
/// `min ||X - XW||^2/(|U||I|) + lambda ||W||^2  s.t. diag(W) = 0`
/// column by column: `[(G + rho I) e_j; e_j' 0] [w_j; mu_j] = [G_j; 0]`.
pub fn kkt_oracle(m: &InteractionMatrix, lambda: f64) -> DMatrix<f64> {
    let x = dense(m);
    let n = m.n_items();
    let g = x.transpose() * &x;
    let rho = lambda * (m.n_users() * n) as f64;
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut a = DMatrix::zeros(n + 1, n + 1);
        let mut b = DVector::zeros(n + 1);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] = g[(r, c)] + if r == c { rho } else { 0.0 };
            }
            b[r] = g[(r, j)];
        }
        a[(j, n)] = 1.0;
        a[(n, j)] = 1.0;
        let sol = a.lu().solve(&b).expect("KKT system is nonsingular");
        for r in 0..n {
            w[(r, j)] = sol[r];
        }
    }
    w
}

/// Central differences of `f` at `x`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn frobenius(a: &ndarray::Array2<f64>, b: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for ((r, c), v) in a.indexed_iter() {
        s += (v - b[(r, c)]).powi(2);
    }
    s.sqrt()
}
