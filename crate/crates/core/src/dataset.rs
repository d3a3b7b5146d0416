//! Interaction logs, the binary user-item matrix and user-level splits.
//!
//! Evaluation follows the strong-generalization protocol: validation and test
//! users are disjoint from training users, and each evaluation user's row is
//! split into a fold-in part (model input) and a held-out part (ground truth).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default preference threshold for 0.5-5 star scales.
pub const DEFAULT_RATING_THRESHOLD: f64 = 3.5;

const MATRIX_MAGIC: &[u8; 8] = b"POSITMTX";
const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub user_id: String,
    pub item_id: String,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

impl RawEvent {
    pub fn implicit(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        RawEvent {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating: None,
            timestamp: None,
        }
    }
}

/// Sparse binary user x item matrix. Rows hold sorted, unique item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    rows: Vec<Vec<u32>>,
    n_items: usize,
    item_freq: Vec<u32>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl InteractionMatrix {
    /// Builds a matrix from per-user item lists. Rows are sorted and
    /// deduplicated; ids default to the decimal index when not given.
    pub fn from_rows(rows: Vec<Vec<u32>>, n_items: usize) -> Result<Self> {
        let user_ids = (0..rows.len()).map(|i| i.to_string()).collect();
        let item_ids = (0..n_items).map(|j| j.to_string()).collect();
        Self::with_ids(rows, n_items, user_ids, item_ids)
    }

    pub fn with_ids(
        mut rows: Vec<Vec<u32>>,
        n_items: usize,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        if user_ids.len() != rows.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                actual: user_ids.len(),
            });
        }
        if item_ids.len() != n_items {
            return Err(Error::Shape {
                expected: n_items,
                actual: item_ids.len(),
            });
        }
        let mut item_freq = vec![0u32; n_items];
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            for &j in row.iter() {
                let j = j as usize;
                if j >= n_items {
                    return Err(Error::Shape {
                        expected: n_items,
                        actual: j + 1,
                    });
                }
                item_freq[j] += 1;
            }
        }
        Ok(InteractionMatrix {
            rows,
            n_items,
            item_freq,
            user_ids,
            item_ids,
        })
    }

    /// Dense 0/1 constructor, mostly for small hand-written fixtures.
    pub fn from_dense(dense: &[Vec<u8>]) -> Result<Self> {
        let n_items = dense.first().map_or(0, Vec::len);
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(j, _)| j as u32)
                    .collect()
            })
            .collect();
        Self::from_rows(rows, n_items)
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn item_freq(&self) -> &[u32] {
        &self.item_freq
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.rows[user].binary_search(&(item as u32)).is_ok()
    }

    /// Column view: for each item, the sorted list of users that touched it.
    pub fn columns(&self) -> Vec<Vec<u32>> {
        let mut cols: Vec<Vec<u32>> = self
            .item_freq
            .iter()
            .map(|&f| Vec::with_capacity(f as usize))
            .collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                cols[j as usize].push(i as u32);
            }
        }
        cols
    }

    /// Sub-matrix over the given users (in the given order), same item space.
    pub fn select_users(&self, users: &[usize]) -> InteractionMatrix {
        let rows: Vec<Vec<u32>> = users.iter().map(|&u| self.rows[u].clone()).collect();
        let mut item_freq = vec![0u32; self.n_items];
        for row in &rows {
            for &j in row {
                item_freq[j as usize] += 1;
            }
        }
        InteractionMatrix {
            rows,
            n_items: self.n_items,
            item_freq,
            user_ids: users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            item_ids: self.item_ids.clone(),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.n_items];
                for &j in row {
                    dense[j as usize] = 1.0;
                }
                dense
            })
            .collect()
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + 4 * (self.nnz() + self.n_users()));
        buf.extend_from_slice(MATRIX_MAGIC);
        buf.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_users() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_items as u64).to_le_bytes());
        buf.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for row in &self.rows {
            buf.extend_from_slice(&(row.len() as u32).to_le_bytes());
            for &j in row {
                buf.extend_from_slice(&j.to_le_bytes());
            }
        }
        buf
    }

    /// SHA-256 over the binary encoding plus both id maps.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.encode());
        for id in self.user_ids.iter().chain(&self.item_ids) {
            hasher.update(id.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

fn sidecar(path: &Path, kind: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{kind}.json"))
}

/// Writes the matrix in the versioned binary format plus `<stem>.users.json`
/// and `<stem>.items.json` id-map sidecars.
pub fn write_matrix(path: &Path, m: &InteractionMatrix) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&m.encode()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))?;
    for (kind, ids) in [("users", &m.user_ids), ("items", &m.item_ids)] {
        let p = sidecar(path, kind);
        let file = File::create(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::to_writer(BufWriter::new(file), ids)?;
    }
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<InteractionMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut cursor = ByteCursor::new(&bytes);
    if cursor.take(8).ok_or_else(|| bad("truncated header"))? != MATRIX_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cursor.u32().ok_or_else(|| bad("truncated header"))?;
    if version != MATRIX_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n_users = cursor.u64().ok_or_else(|| bad("truncated header"))? as usize;
    let n_items = cursor.u64().ok_or_else(|| bad("truncated header"))? as usize;
    let nnz = cursor.u64().ok_or_else(|| bad("truncated header"))? as usize;
    let mut rows = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let len = cursor.u32().ok_or_else(|| bad("truncated row"))? as usize;
        let row = (0..len)
            .map(|_| cursor.u32())
            .collect::<Option<Vec<u32>>>()
            .ok_or_else(|| bad("truncated row"))?;
        rows.push(row);
    }
    if rows.iter().map(Vec::len).sum::<usize>() != nnz {
        return Err(bad("nnz mismatch"));
    }
    let mut ids = Vec::new();
    for kind in ["users", "items"] {
        let p = sidecar(path, kind);
        let ids_for: Vec<String> = match File::open(&p) {
            Ok(f) => serde_json::from_reader(BufReader::new(f))?,
            Err(_) => {
                let n = if kind == "users" { n_users } else { n_items };
                (0..n).map(|i| i.to_string()).collect()
            }
        };
        ids.push(ids_for);
    }
    let item_ids = ids.pop().unwrap_or_default();
    let user_ids = ids.pop().unwrap_or_default();
    InteractionMatrix::with_ids(rows, n_items, user_ids, item_ids)
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

fn looks_like_header(record: &csv::StringRecord) -> bool {
    match record.get(2) {
        Some(rating) => rating.trim().parse::<f64>().is_err(),
        None => record
            .get(0)
            .is_some_and(|f| f.trim().to_ascii_lowercase().contains("user")),
    }
}

/// Reads `user,item[,rating[,timestamp]]` rows. Events with a rating below
/// `rating_threshold` are dropped; events without a rating are kept.
pub fn ingest_csv(path: &Path, rating_threshold: f64) -> Result<Vec<RawEvent>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut events = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if line == 1 && looks_like_header(&record) {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let event = parse_event(&record).map_err(|message| Error::Parse { line, message })?;
        if event.rating.is_none_or(|r| r >= rating_threshold) {
            events.push(event);
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no events survived in {}",
            path.display()
        )));
    }
    Ok(events)
}

fn parse_event(record: &csv::StringRecord) -> std::result::Result<RawEvent, String> {
    if record.len() < 2 || record.len() > 4 {
        return Err(format!("expected 2-4 columns, found {}", record.len()));
    }
    let user_id = record[0].to_string();
    let item_id = record[1].to_string();
    if user_id.is_empty() || item_id.is_empty() {
        return Err("empty user or item id".into());
    }
    let rating = match record.get(2).filter(|s| !s.is_empty()) {
        Some(s) => Some(
            s.parse::<f64>()
                .map_err(|_| format!("rating `{s}` is not a number"))?,
        ),
        None => None,
    };
    let timestamp = match record.get(3).filter(|s| !s.is_empty()) {
        Some(s) => Some(
            s.parse::<i64>()
                .map_err(|_| format!("timestamp `{s}` is not an integer"))?,
        ),
        None => None,
    };
    Ok(RawEvent {
        user_id,
        item_id,
        rating,
        timestamp,
    })
}

/// Deduplicates events, iteratively drops sparse users and items, and
/// re-indexes items by descending frequency (ties: first appearance).
/// Users keep their first-appearance order.
pub fn build_matrix(
    events: &[RawEvent],
    min_user_interactions: usize,
    min_item_interactions: usize,
) -> Result<InteractionMatrix> {
    if events.is_empty() {
        return Err(Error::EmptyDataset("no events".into()));
    }
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_names: Vec<&str> = Vec::new();
    let mut item_names: Vec<&str> = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for ev in events {
        let u = *user_index.entry(&ev.user_id).or_insert_with(|| {
            user_names.push(&ev.user_id);
            rows.push(Vec::new());
            user_names.len() - 1
        });
        let j = *item_index.entry(&ev.item_id).or_insert_with(|| {
            item_names.push(&ev.item_id);
            item_names.len() - 1
        });
        rows[u].push(j);
    }
    for row in &mut rows {
        row.sort_unstable();
        row.dedup();
    }

    let mut user_alive = vec![true; rows.len()];
    let mut item_alive = vec![true; item_names.len()];
    loop {
        let mut freq = vec![0usize; item_names.len()];
        for (u, row) in rows.iter().enumerate() {
            if user_alive[u] {
                for &j in row.iter().filter(|&&j| item_alive[j]) {
                    freq[j] += 1;
                }
            }
        }
        let mut changed = false;
        for (j, alive) in item_alive.iter_mut().enumerate() {
            if *alive && freq[j] < min_item_interactions.max(1) {
                *alive = false;
                changed = true;
            }
        }
        for (u, row) in rows.iter().enumerate() {
            if user_alive[u] {
                let len = row.iter().filter(|&&j| item_alive[j]).count();
                if len < min_user_interactions.max(1) {
                    user_alive[u] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut freq = vec![0usize; item_names.len()];
    for (u, row) in rows.iter().enumerate() {
        if user_alive[u] {
            for &j in row.iter().filter(|&&j| item_alive[j]) {
                freq[j] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..item_names.len()).filter(|&j| item_alive[j]).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let mut new_index = vec![u32::MAX; item_names.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new as u32;
    }

    let mut out_rows = Vec::new();
    let mut out_users = Vec::new();
    for (u, row) in rows.iter().enumerate() {
        if !user_alive[u] {
            continue;
        }
        out_rows.push(
            row.iter()
                .filter(|&&j| item_alive[j])
                .map(|&j| new_index[j])
                .collect(),
        );
        out_users.push(user_names[u].to_string());
    }
    if out_rows.is_empty() || order.is_empty() {
        return Err(Error::EmptyDataset(
            "every user or item was removed by the interaction filters".into(),
        ));
    }
    let out_items = order.iter().map(|&j| item_names[j].to_string()).collect();
    InteractionMatrix::with_ids(out_rows, order.len(), out_users, out_items)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_val_users: usize,
    pub n_test_users: usize,
    pub heldout_fraction: f64,
    pub seed: u64,
}

/// Fold-in rows (model input) and held-out rows (ground truth) for the same
/// evaluation users, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub foldin: InteractionMatrix,
    pub heldout: InteractionMatrix,
}

impl EvalSplit {
    pub fn new(foldin: InteractionMatrix, heldout: InteractionMatrix) -> Result<Self> {
        if foldin.n_users() != heldout.n_users() {
            return Err(Error::Shape {
                expected: foldin.n_users(),
                actual: heldout.n_users(),
            });
        }
        if foldin.n_items() != heldout.n_items() {
            return Err(Error::Shape {
                expected: foldin.n_items(),
                actual: heldout.n_items(),
            });
        }
        Ok(EvalSplit { foldin, heldout })
    }

    pub fn n_users(&self) -> usize {
        self.foldin.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.foldin.n_items()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: InteractionMatrix,
    pub val: EvalSplit,
    pub test: EvalSplit,
}

/// Number of held-out items for a row of length `len`.
pub fn heldout_count(len: usize, heldout_fraction: f64) -> usize {
    let n = ((heldout_fraction * len as f64).floor() as usize).max(1);
    n.min(len.saturating_sub(1))
}

/// Splits users into train / validation / test.
///
/// Items that no training user touched are removed from every part (item
/// indices are compacted, order preserved), so every item of the result has
/// positive training frequency. Evaluation users whose remaining row has
/// fewer than two items are dropped.
pub fn split_users(m: &InteractionMatrix, spec: &SplitSpec) -> Result<Splits> {
    if !(spec.heldout_fraction > 0.0 && spec.heldout_fraction < 1.0) {
        return Err(Error::Split(format!(
            "heldout_fraction must be in (0,1), got {}",
            spec.heldout_fraction
        )));
    }
    if spec.n_val_users + spec.n_test_users >= m.n_users() {
        return Err(Error::Split(format!(
            "{} validation + {} test users leaves no training users out of {}",
            spec.n_val_users,
            spec.n_test_users,
            m.n_users()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut perm: Vec<usize> = (0..m.n_users()).collect();
    perm.shuffle(&mut rng);
    let val_users = &perm[..spec.n_val_users];
    let test_users = &perm[spec.n_val_users..spec.n_val_users + spec.n_test_users];
    let mut train_users = perm[spec.n_val_users + spec.n_test_users..].to_vec();
    train_users.sort_unstable();

    let mut train_freq = vec![0u32; m.n_items()];
    for &u in &train_users {
        for &j in m.row(u) {
            train_freq[j as usize] += 1;
        }
    }
    let mut remap = vec![u32::MAX; m.n_items()];
    let mut kept_items = Vec::new();
    for (j, &f) in train_freq.iter().enumerate() {
        if f > 0 {
            remap[j] = kept_items.len() as u32;
            kept_items.push(m.item_ids()[j].clone());
        }
    }
    let n_items = kept_items.len();
    let remap_row = |u: usize| -> Vec<u32> {
        m.row(u)
            .iter()
            .map(|&j| remap[j as usize])
            .filter(|&j| j != u32::MAX)
            .collect()
    };

    let train = InteractionMatrix::with_ids(
        train_users.iter().map(|&u| remap_row(u)).collect(),
        n_items,
        train_users.iter().map(|&u| m.user_ids()[u].clone()).collect(),
        kept_items.clone(),
    )?;

    let mut eval_split = |users: &[usize]| -> Result<EvalSplit> {
        let mut foldin = Vec::new();
        let mut heldout = Vec::new();
        let mut ids = Vec::new();
        for &u in users {
            let mut row = remap_row(u);
            if row.len() < 2 {
                log::debug!("dropping evaluation user {} with {} items", u, row.len());
                continue;
            }
            let n_out = heldout_count(row.len(), spec.heldout_fraction);
            row.shuffle(&mut rng);
            let mut out = row.split_off(row.len() - n_out);
            row.sort_unstable();
            out.sort_unstable();
            foldin.push(row);
            heldout.push(out);
            ids.push(m.user_ids()[u].clone());
        }
        EvalSplit::new(
            InteractionMatrix::with_ids(foldin, n_items, ids.clone(), kept_items.clone())?,
            InteractionMatrix::with_ids(heldout, n_items, ids, kept_items.clone())?,
        )
    };
    let val = eval_split(val_users)?;
    let test = eval_split(test_users)?;
    Ok(Splits { train, val, test })
}
