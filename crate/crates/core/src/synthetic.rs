//! A MovieLens-shaped synthetic rating log with genre and year metadata.
//!
//! Item popularity follows a power law, users prefer a few genres and a few
//! sub-clusters inside them, and activity is log-normal with a floor, which
//! is enough structure for popularity bias and long-tail effects to show up
//! at desk scale.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::RawEvent;
use crate::error::{Error, Result};
use crate::metrics::ItemMeta;

pub const GENRES: [&str; 18] = [
    "Action", "Adventure", "Animation", "Children", "Comedy", "Crime", "Documentary", "Drama",
    "Fantasy", "FilmNoir", "Horror", "Musical", "Mystery", "Romance", "SciFi", "Thriller", "War",
    "Western",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    /// Median number of positive interactions per user.
    pub median_activity: f64,
    pub min_activity: usize,
    /// Power-law exponent of item popularity.
    pub popularity_exponent: f64,
    /// Strength of genre / cluster preference relative to popularity.
    pub taste_strength: f64,
    pub clusters_per_genre: usize,
    /// Low-rating events emitted per positive event (dropped by the rating
    /// threshold at ingest).
    pub negative_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 1000,
            n_items: 1500,
            median_activity: 50.0,
            min_activity: 20,
            popularity_exponent: 1.0,
            taste_strength: 3.0,
            clusters_per_genre: 3,
            negative_ratio: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub year: i32,
    pub genres: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub events: Vec<RawEvent>,
    pub items: Vec<ItemRecord>,
}

impl SyntheticData {
    pub fn item_meta(&self) -> ItemMeta {
        ItemMeta {
            entries: self
                .items
                .iter()
                .map(|r| (r.item_id.clone(), (Some(r.year), r.genres.clone())))
                .collect(),
        }
    }
}

struct Item {
    genres: Vec<usize>,
    cluster: usize,
    popularity: f64,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_users == 0 || spec.n_items < 2 {
        return Err(Error::config("synthetic", "need users and at least two items"));
    }
    if spec.min_activity >= spec.n_items {
        return Err(Error::config("min_activity", "must be below the number of items"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_genres = GENRES.len();
    let clusters = spec.clusters_per_genre.max(1);

    // uneven genre sizes
    let genre_share: Vec<f64> = (0..n_genres).map(|g| 1.0 / (1.0 + g as f64 * 0.3)).collect();
    let mut popularity_rank: Vec<usize> = (0..spec.n_items).collect();
    popularity_rank.shuffle(&mut rng);
    let items: Vec<Item> = (0..spec.n_items)
        .map(|j| {
            let primary = weighted_index(&genre_share, &mut rng);
            let mut genres = vec![primary];
            if rng.random_bool(0.3) {
                let second = rng.random_range(0..n_genres);
                if second != primary {
                    genres.push(second);
                }
            }
            Item {
                genres,
                cluster: rng.random_range(0..clusters),
                popularity: (popularity_rank[j] as f64 + 10.0).powf(-spec.popularity_exponent),
            }
        })
        .collect();

    let age = Exp::new(1.0 / 12.0).expect("positive rate");
    let records = items
        .iter()
        .enumerate()
        .map(|(j, it)| ItemRecord {
            item_id: format!("i{j}"),
            year: 1998 - (age.sample(&mut rng) as i32).min(78),
            genres: it.genres.iter().map(|&g| GENRES[g].to_string()).collect(),
        })
        .collect();

    let activity = LogNormal::new(spec.median_activity.ln(), 0.8)
        .map_err(|e| Error::config("median_activity", e.to_string()))?;
    let max_activity = spec.n_items / 2;
    let genre_ids: Vec<usize> = (0..n_genres).collect();
    let mut events = Vec::new();
    for u in 0..spec.n_users {
        let n_fav = rng.random_range(1..=3);
        let favourites: Vec<usize> = genre_ids.choose_multiple(&mut rng, n_fav).copied().collect();
        let mut pref = vec![0.0; n_genres];
        let mut cluster_pref = vec![vec![0.0; clusters]; n_genres];
        for &g in &favourites {
            pref[g] = rng.random_range(0.5..1.0);
            cluster_pref[g][rng.random_range(0..clusters)] = 1.0;
        }
        let weights: Vec<f64> = items
            .iter()
            .map(|it| {
                let taste: f64 = it
                    .genres
                    .iter()
                    .map(|&g| pref[g] + 0.5 * cluster_pref[g][it.cluster])
                    .fold(0.0, f64::max);
                it.popularity * (spec.taste_strength * taste).exp()
            })
            .collect();
        let n_u = (activity.sample(&mut rng).round() as usize).clamp(spec.min_activity, max_activity);
        for j in sample_without_replacement(&weights, n_u, &mut rng) {
            let rating = if rng.random_bool(0.6) { 4.0 } else { 5.0 };
            events.push(rated(u, j, rating));
        }
        let n_neg = (n_u as f64 * spec.negative_ratio).round() as usize;
        let pops: Vec<f64> = items.iter().map(|it| it.popularity).collect();
        for j in sample_without_replacement(&pops, n_neg, &mut rng) {
            events.push(rated(u, j, rng.random_range(1..=3) as f64));
        }
    }
    Ok(SyntheticData {
        events,
        items: records,
    })
}

fn rated(u: usize, j: usize, rating: f64) -> RawEvent {
    RawEvent {
        user_id: format!("u{u}"),
        item_id: format!("i{j}"),
        rating: Some(rating),
        timestamp: None,
    }
}

fn weighted_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        x -= w;
        if x < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Weighted sampling without replacement (exponential-key method).
fn sample_without_replacement(weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(j, &w)| (-rng.random::<f64>().ln() / w, j))
        .collect();
    let n = n.min(keys.len());
    if n == 0 {
        return Vec::new();
    }
    keys.select_nth_unstable_by(n - 1, |a, b| a.0.total_cmp(&b.0));
    keys.truncate(n);
    keys.sort_by(|a, b| a.0.total_cmp(&b.0));
    keys.into_iter().map(|(_, j)| j).collect()
}

/// Writes `user_id,item_id,rating` with a header row.
pub fn write_events_csv(path: &Path, events: &[RawEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["user_id", "item_id", "rating"])?;
    for ev in events {
        let rating = ev.rating.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([ev.user_id.as_str(), ev.item_id.as_str(), rating.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `item_id,year,genres` with `|`-separated genres.
pub fn write_item_meta_csv(path: &Path, items: &[ItemRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["item_id", "year", "genres"])?;
    for it in items {
        w.write_record([it.item_id.clone(), it.year.to_string(), it.genres.join("|")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}
