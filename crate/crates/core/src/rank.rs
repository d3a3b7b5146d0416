//! Top-k selection with a deterministic order: descending score, then
//! ascending item index.

use std::cmp::Ordering;

#[inline]
fn before(scores: &[f64], a: u32, b: u32) -> Ordering {
    scores[b as usize]
        .total_cmp(&scores[a as usize])
        .then(a.cmp(&b))
}

/// The `k` best items among `candidates`, best first.
pub fn top_k_of(scores: &[f64], mut candidates: Vec<u32>, k: usize) -> Vec<u32> {
    if k == 0 {
        return Vec::new();
    }
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| before(scores, a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| before(scores, a, b));
    candidates
}

/// The `k` best items over the whole catalog.
pub fn top_k(scores: &[f64], k: usize) -> Vec<u32> {
    top_k_of(scores, (0..scores.len() as u32).collect(), k)
}

/// The `k` best items, never returning an item from `excluded` (sorted).
pub fn top_k_excluding(scores: &[f64], excluded: &[u32], k: usize) -> Vec<u32> {
    let candidates = (0..scores.len() as u32)
        .filter(|j| excluded.binary_search(j).is_err())
        .collect();
    top_k_of(scores, candidates, k)
}

/// 1-based rank of `item` over all items.
pub fn rank_of(scores: &[f64], item: u32) -> usize {
    1 + (0..scores.len() as u32)
        .filter(|&l| before(scores, l, item) == Ordering::Less)
        .count()
}
