//! Versioned single-file checkpoints.
//!
//! Layout (little endian): magic `POSITCKP`, `u32` version, `u64` length of a
//! JSON metadata block, the JSON, then raw `f64` sections in this order: the
//! EASE matrix (row-major, if present), the adversary's first layer
//! (`n_users x hidden`, row-major) and second layer (if present), and the
//! advantage moving average (if present).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageState;
use crate::adversary::{AdversaryNet, Architecture};
use crate::ease::EaseModel;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"POSITCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdversaryShape {
    n_users: usize,
    hidden: usize,
    tau: f64,
    architecture: Architecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdvantageShape {
    momentum: f64,
    k: usize,
    variant: crate::advantage::AdvantageVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    method: String,
    best_epoch: Option<usize>,
    epochs_run: usize,
    n_items: usize,
    lambda: Option<f64>,
    adversary: Option<AdversaryShape>,
    advantage: Option<AdvantageShape>,
    /// Free-form run information (the experiment configuration).
    extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: String,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub n_items: usize,
    pub model: Option<EaseModel>,
    pub adversary: Option<AdversaryNet>,
    pub advantage: Option<AdvantageState>,
    pub extra: serde_json::Value,
}

fn write_f64s<'a>(w: &mut impl Write, values: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Metadata {
            method: self.method.clone(),
            best_epoch: self.best_epoch,
            epochs_run: self.epochs_run,
            n_items: self.n_items,
            lambda: self.model.as_ref().map(EaseModel::lambda),
            adversary: self.adversary.as_ref().map(|a| AdversaryShape {
                n_users: a.layer1().nrows(),
                hidden: a.hidden(),
                tau: a.tau(),
                architecture: a.architecture(),
            }),
            advantage: self.advantage.as_ref().map(|s| AdvantageShape {
                momentum: s.momentum,
                k: s.k,
                variant: s.variant,
            }),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&meta)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        if let Some(m) = &self.model {
            write_f64s(&mut w, m.weights().iter()).map_err(io)?;
        }
        if let Some(a) = &self.adversary {
            write_f64s(&mut w, a.layer1().iter()).map_err(io)?;
            write_f64s(&mut w, a.layer2().iter()).map_err(io)?;
        }
        if let Some(s) = &self.advantage {
            write_f64s(&mut w, s.ema.iter()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let truncated = |e: std::io::Error| format(format!("truncated checkpoint: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(format("not a checkpoint file".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(truncated)?;
        let version = u32::from_le_bytes(u32b);
        if version != VERSION {
            return Err(format(format!("unsupported checkpoint version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(truncated)?;
        let mut json = vec![0u8; u64::from_le_bytes(u64b) as usize];
        r.read_exact(&mut json).map_err(truncated)?;
        let meta: Metadata = serde_json::from_slice(&json)?;
        let n = meta.n_items;

        let model = match meta.lambda {
            Some(lambda) => {
                let w = read_f64s(&mut r, n * n).map_err(truncated)?;
                let w = Array2::from_shape_vec((n, n), w).map_err(|e| format(e.to_string()))?;
                Some(EaseModel::from_weights(w, lambda)?)
            }
            None => None,
        };
        let adversary = match &meta.adversary {
            Some(s) => {
                let l1 = read_f64s(&mut r, s.n_users * s.hidden).map_err(truncated)?;
                let l2 = read_f64s(&mut r, s.hidden).map_err(truncated)?;
                let l1 = Array2::from_shape_vec((s.n_users, s.hidden), l1)
                    .map_err(|e| format(e.to_string()))?;
                Some(AdversaryNet::from_parts(l1, l2, s.tau, s.architecture)?)
            }
            None => None,
        };
        let advantage = match &meta.advantage {
            Some(s) => {
                let mut state = AdvantageState::new(n, s.momentum, s.k, s.variant)?;
                state.ema = read_f64s(&mut r, n).map_err(truncated)?;
                Some(state)
            }
            None => None,
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        if !rest.is_empty() {
            return Err(format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint {
            method: meta.method,
            best_epoch: meta.best_epoch,
            epochs_run: meta.epochs_run,
            n_items: n,
            model,
            adversary,
            advantage,
            extra: meta.extra,
        })
    }
}
