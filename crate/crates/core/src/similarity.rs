//! Token-averaged cosine similarity between block-input hidden states.
//!
//! Each token's layer vectors are scaled by `1 / (||h|| + eps)` and every
//! layer pair contributes the dot product of its scaled vectors. Sums are
//! kept in f64 over the upper triangle only and mirrored on finalize.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation_store::{TokenSlice, TokenSource};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Symmetry and magnitude slack accepted when loading a matrix.
pub const MATRIX_TOLERANCE: f64 = 1e-9;

/// Scales each layer vector of `slice` by `1 / (||h|| + epsilon)`.
pub fn normalize_token(slice: &TokenSlice, epsilon: f64) -> Result<Vec<Vec<f64>>> {
    check_epsilon(epsilon)?;
    let d = slice.d_model();
    let mut out = vec![0.0; slice.n_layers() * d];
    normalize_into(slice.values(), d, epsilon, &mut out);
    Ok(out.chunks(d.max(1)).map(<[f64]>::to_vec).collect())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidMatrix(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    Ok(())
}

fn normalize_into(values: &[f32], d: usize, epsilon: f64, out: &mut [f64]) {
    for (src, dst) in values.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let norm = src
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            dst.fill(0.0);
            continue;
        }
        let scale = 1.0 / (norm + epsilon);
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = f64::from(v) * scale;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Running pairwise sums for one shard of the token stream.
#[derive(Debug, Clone)]
pub struct SimilarityAccumulator {
    n_layers: usize,
    d_model: usize,
    epsilon: f64,
    // Row-major N x N; only i <= j is populated.
    partial_sums: Vec<f64>,
    token_count: u64,
    scratch: Vec<f64>,
}

impl SimilarityAccumulator {
    pub fn new(n_layers: usize, d_model: usize, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            n_layers,
            d_model,
            epsilon,
            partial_sums: vec![0.0; n_layers * n_layers],
            token_count: 0,
            scratch: vec![0.0; n_layers * d_model],
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Upper-triangle partial sum for layers `i <= j` (0-based).
    pub fn partial_sum(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.partial_sums[i * self.n_layers + j]
    }

    pub fn accumulate(&mut self, slice: &TokenSlice) -> Result<()> {
        if slice.n_layers() != self.n_layers {
            return Err(Error::DimensionMismatch {
                what: "token slice n_layers",
                expected: self.n_layers,
                found: slice.n_layers(),
            });
        }
        if slice.d_model() != self.d_model {
            return Err(Error::DimensionMismatch {
                what: "token slice d_model",
                expected: self.d_model,
                found: slice.d_model(),
            });
        }
        let (n, d) = (self.n_layers, self.d_model);
        normalize_into(slice.values(), d, self.epsilon, &mut self.scratch);
        for i in 0..n {
            let hi = &self.scratch[i * d..(i + 1) * d];
            let row = &mut self.partial_sums[i * n..(i + 1) * n];
            for (j, cell) in row.iter_mut().enumerate().skip(i) {
                *cell += dot(hi, &self.scratch[j * d..(j + 1) * d]);
            }
        }
        self.token_count += 1;
        Ok(())
    }

    pub fn merge(mut self, other: &SimilarityAccumulator) -> Result<Self> {
        if other.n_layers != self.n_layers {
            return Err(Error::DimensionMismatch {
                what: "accumulator n_layers",
                expected: self.n_layers,
                found: other.n_layers,
            });
        }
        if other.d_model != self.d_model {
            return Err(Error::DimensionMismatch {
                what: "accumulator d_model",
                expected: self.d_model,
                found: other.d_model,
            });
        }
        for (a, b) in self.partial_sums.iter_mut().zip(&other.partial_sums) {
            *a += b;
        }
        self.token_count += other.token_count;
        Ok(self)
    }

    pub fn finalize(&self) -> Result<SimilarityMatrix> {
        if self.token_count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let n = self.n_layers;
        let total = self.token_count as f64;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = self.partial_sums[i * n + j] / total;
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        Ok(SimilarityMatrix {
            n_layers: n,
            entries,
            token_total: self.token_count,
            epsilon: self.epsilon,
        })
    }
}

/// Streams every token of `source` through `workers` shard accumulators.
///
/// Tokens are read in batches and each batch is cut into `workers`
/// contiguous pieces. Shards merge in index order.
pub fn accumulate_source<S: TokenSource>(
    source: &mut S,
    epsilon: f64,
    workers: usize,
) -> Result<SimilarityAccumulator> {
    let header = source.header();
    let (n, d) = (header.n_layers(), header.d_model());
    let workers = workers.max(1);

    if workers == 1 {
        let mut acc = SimilarityAccumulator::new(n, d, epsilon)?;
        let mut slice = TokenSlice::zeroed(n, d);
        while source.read_into(&mut slice)? {
            acc.accumulate(&slice)?;
        }
        return Ok(acc);
    }

    let per_worker = 64;
    let mut shards = (0..workers)
        .map(|_| SimilarityAccumulator::new(n, d, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let mut batch: Vec<TokenSlice> = (0..workers * per_worker)
        .map(|_| TokenSlice::zeroed(n, d))
        .collect();
    loop {
        let mut filled = 0;
        while filled < batch.len() && source.read_into(&mut batch[filled])? {
            filled += 1;
        }
        if filled == 0 {
            break;
        }
        let piece = filled.div_ceil(workers);
        shards
            .par_iter_mut()
            .zip(batch[..filled].par_chunks(piece))
            .try_for_each(|(acc, tokens)| tokens.iter().try_for_each(|t| acc.accumulate(t)))?;
        if filled < batch.len() {
            break;
        }
    }
    let mut iter = shards.into_iter();
    let first = iter.next().expect("at least one worker");
    iter.try_fold(first, |acc, next| acc.merge(&next))
}

/// Token-averaged cosine similarity between all layer pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n_layers: usize,
    entries: Vec<f64>,
    token_total: u64,
    epsilon: f64,
}

impl SimilarityMatrix {
    pub fn new(n_layers: usize, entries: Vec<f64>, token_total: u64, epsilon: f64) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::InvalidMatrix("matrix has no layers".into()));
        }
        if entries.len() != n_layers * n_layers {
            return Err(Error::DimensionMismatch {
                what: "matrix entry count",
                expected: n_layers * n_layers,
                found: entries.len(),
            });
        }
        let m = Self {
            n_layers,
            entries,
            token_total,
            epsilon,
        };
        if let Some(failure) = m
            .check_invariants()
            .into_iter()
            .find(|c| c.hard && !c.passed)
        {
            return Err(Error::InvalidMatrix(failure.detail));
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>], token_total: u64, epsilon: f64) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "matrix row length",
                expected: n,
                found: bad.len(),
            });
        }
        Self::new(n, rows.concat(), token_total, epsilon)
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn token_total(&self) -> u64 {
        self.token_total
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Entry for 0-based layers `i`, `j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_layers + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.n_layers)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Applies `f` to every entry and revalidates.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.n_layers,
            self.entries.iter().map(|&v| f(v)).collect(),
            self.token_total,
            self.epsilon,
        )
    }

    /// SHA-256 over the row-major little-endian f64 entries.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n_layers as u64).to_le_bytes());
        for v in &self.entries {
            hasher.update(v.to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }

    /// Raw row-major little-endian f64 values.
    pub fn to_sidecar_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_sidecar_bytes(
        n_layers: usize,
        bytes: &[u8],
        token_total: u64,
        epsilon: f64,
    ) -> Result<Self> {
        if bytes.len() != n_layers * n_layers * 8 {
            return Err(Error::DimensionMismatch {
                what: "sidecar byte length",
                expected: n_layers * n_layers * 8,
                found: bytes.len(),
            });
        }
        let entries = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(n_layers, entries, token_total, epsilon)
    }

    pub fn to_document(&self) -> SimilarityDocument {
        SimilarityDocument {
            n_layers: self.n_layers,
            epsilon: self.epsilon,
            token_total: self.token_total,
            rows: self.rows(),
            config: None,
        }
    }

    pub fn from_document(doc: &SimilarityDocument) -> Result<Self> {
        if doc.rows.len() != doc.n_layers {
            return Err(Error::DimensionMismatch {
                what: "row count vs n_layers",
                expected: doc.n_layers,
                found: doc.rows.len(),
            });
        }
        Self::from_rows(&doc.rows, doc.token_total, doc.epsilon)
    }

    /// Runs the full invariant battery. Hard checks gate construction; the
    /// diagonal check only holds when epsilon is small relative to norms.
    pub fn check_invariants(&self) -> Vec<InvariantCheck> {
        check_entries(self.n_layers, &self.entries)
    }
}

/// Invariant battery over raw row-major entries, usable on matrices that
/// would be rejected by [`SimilarityMatrix::new`].
pub fn check_entries(n: usize, entries: &[f64]) -> Vec<InvariantCheck> {
    let mut checks = Vec::new();
    if entries.len() != n * n {
        checks.push(InvariantCheck {
            name: "shape",
            hard: true,
            passed: false,
            detail: format!("{} entries for {n} layers", entries.len()),
        });
        return checks;
    }
    let get = |i: usize, j: usize| entries[i * n + j];
    {
        let non_finite = entries.iter().position(|v| !v.is_finite());
        checks.push(InvariantCheck {
            name: "finite",
            hard: true,
            passed: non_finite.is_none(),
            detail: match non_finite {
                Some(p) => format!("entry ({}, {}) is not finite", p / n + 1, p % n + 1),
                None => "all entries finite".into(),
            },
        });

        let mut worst_asym = (0.0f64, 0, 0);
        let mut worst_mag = (0.0f64, 0, 0);
        for i in 0..n {
            for j in 0..n {
                let v = get(i, j);
                let asym = (v - get(j, i)).abs();
                if asym > worst_asym.0 {
                    worst_asym = (asym, i, j);
                }
                if v.abs() > worst_mag.0 {
                    worst_mag = (v.abs(), i, j);
                }
            }
        }
        checks.push(InvariantCheck {
            name: "symmetric",
            hard: true,
            passed: worst_asym.0 <= MATRIX_TOLERANCE,
            detail: format!(
                "max |S_ij - S_ji| = {:e} at ({}, {})",
                worst_asym.0,
                worst_asym.1 + 1,
                worst_asym.2 + 1
            ),
        });
        checks.push(InvariantCheck {
            name: "bounded",
            hard: true,
            passed: worst_mag.0 <= 1.0 + MATRIX_TOLERANCE,
            detail: format!(
                "max |S_ij| = {} at ({}, {})",
                worst_mag.0,
                worst_mag.1 + 1,
                worst_mag.2 + 1
            ),
        });

        let (min_diag, at) = (0..n)
            .map(|i| (get(i, i), i))
            .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
        checks.push(InvariantCheck {
            name: "diagonal",
            hard: false,
            passed: min_diag >= 1.0 - 1e-3,
            detail: format!("min S_ii = {min_diag} at layer {}", at + 1),
        });
        checks
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub hard: bool,
    pub passed: bool,
    pub detail: String,
}

/// JSON form of a [`SimilarityMatrix`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityDocument {
    pub n_layers: usize,
    pub epsilon: f64,
    pub token_total: u64,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
