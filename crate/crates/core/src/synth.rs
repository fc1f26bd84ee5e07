//! Synthetic activations and similarity matrices with planted clusters.
//!
//! Dumps: every token draws `K` cluster latents whose expected Gram matrix
//! is `G = (1 - rho) I + rho 11^T` with `rho = cross / within`, realised
//! through a (semi-definite) Cholesky factor of `G`. Layer `l` in cluster
//! `c` receives `sqrt(within) * u_c + sqrt(1 - within) * e_l` with fresh
//! Gaussian `e_l`, so pairwise inner products hit the targets in
//! expectation. `noise_scale` then multiplies each layer vector by a
//! log-normal norm factor, which varies magnitudes without moving cosines.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_store::{DumpHeader, DumpWriter, SampleChunk};
use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n_layers: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    /// Disjoint 1-based layer sets covering `1..=n_layers`.
    pub cluster_layout: Vec<Vec<usize>>,
    pub within_similarity: f64,
    pub cross_similarity: f64,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_d_model() -> usize {
    64
}

impl PlantedSpec {
    /// Consecutive blocks of the given sizes.
    pub fn contiguous(sizes: &[usize], within: f64, cross: f64) -> Self {
        let mut next = 1;
        let layout = sizes
            .iter()
            .map(|&s| {
                let block: Vec<usize> = (next..next + s).collect();
                next += s;
                block
            })
            .collect();
        Self {
            n_layers: next - 1,
            d_model: default_d_model(),
            cluster_layout: layout,
            within_similarity: within,
            cross_similarity: cross,
            noise_scale: 0.0,
            seed: 0,
        }
    }

    /// Layer `l` goes to cluster `(l - 1) % k`.
    pub fn interleaved(n_layers: usize, k: usize, within: f64, cross: f64) -> Self {
        let layout = (0..k)
            .map(|c| (1..=n_layers).filter(|l| (l - 1) % k == c).collect())
            .collect();
        Self {
            n_layers,
            d_model: default_d_model(),
            cluster_layout: layout,
            within_similarity: within,
            cross_similarity: cross,
            noise_scale: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_layers < 3 {
            return bad(format!("n_layers = {} (need at least 3)", self.n_layers));
        }
        if self.d_model < 1 {
            return bad("d_model must be at least 1".into());
        }
        let mut seen = vec![false; self.n_layers];
        for (c, set) in self.cluster_layout.iter().enumerate() {
            if set.is_empty() {
                return bad(format!("cluster {} is empty", c + 1));
            }
            for &l in set {
                if l == 0 || l > self.n_layers {
                    return bad(format!("layer {l} outside 1..={}", self.n_layers));
                }
                if seen[l - 1] {
                    return bad(format!("layer {l} is listed twice"));
                }
                seen[l - 1] = true;
            }
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return bad(format!("layer {} is not in any cluster", l + 1));
        }
        let (w, x) = (self.within_similarity, self.cross_similarity);
        if !(w > 0.0 && w <= 1.0) {
            return bad(format!("within_similarity {w} must lie in (0, 1]"));
        }
        if !(x > -1.0 && x < 1.0) {
            return bad(format!("cross_similarity {x} must lie in (-1, 1)"));
        }
        if w < x {
            return bad(format!(
                "within_similarity {w} is below cross_similarity {x}"
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!(
                "noise_scale {} must be non-negative",
                self.noise_scale
            ));
        }
        Ok(())
    }

    /// 0-based cluster of every 0-based layer.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n_layers];
        for (c, set) in self.cluster_layout.iter().enumerate() {
            for &l in set {
                labels[l - 1] = c;
            }
        }
        labels
    }

    /// Lower-triangular factor `L` with `L L^T = G`, row-major `K x K`.
    pub fn latent_factor(&self) -> Result<Vec<f64>> {
        let k = self.cluster_layout.len();
        let rho = self.cross_similarity / self.within_similarity;
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InfeasibleTargets(format!(
                "cross/within ratio {rho} is not a valid latent correlation"
            )));
        }
        let gram: Vec<f64> = (0..k * k)
            .map(|p| if p / k == p % k { 1.0 } else { rho })
            .collect();
        semidefinite_cholesky(&gram, k).ok_or_else(|| {
            Error::InfeasibleTargets(format!(
                "{k} clusters with latent correlation {rho:.4} give a Gram matrix that is not \
                 positive semidefinite (need correlation >= {:.4})",
                -1.0 / (k as f64 - 1.0).max(1.0)
            ))
        })
    }
}

const PIVOT_TOLERANCE: f64 = 1e-12;

/// Cholesky that tolerates zero pivots; `None` if `a` is indefinite.
fn semidefinite_cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let pivot = a[j * k + j] - (0..j).map(|p| l[j * k + p] * l[j * k + p]).sum::<f64>();
        if pivot < -PIVOT_TOLERANCE {
            return None;
        }
        let diag = pivot.max(0.0).sqrt();
        l[j * k + j] = diag;
        for i in j + 1..k {
            let off = a[i * k + j] - (0..j).map(|p| l[i * k + p] * l[j * k + p]).sum::<f64>();
            if diag <= PIVOT_TOLERANCE {
                if off.abs() > 1e-9 {
                    return None;
                }
                l[i * k + j] = 0.0;
            } else {
                l[i * k + j] = off / diag;
            }
        }
    }
    Some(l)
}

/// Draws one calibration sample from its own RNG stream.
pub fn generate_sample(
    spec: &PlantedSpec,
    factor: &[f64],
    sample_index: u64,
    tokens: usize,
) -> SampleChunk {
    let (n, d, k) = (spec.n_layers, spec.d_model, spec.cluster_layout.len());
    let labels = spec.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(sample_index);
    let scale = 1.0 / (d as f64).sqrt();
    let signal = spec.within_similarity.sqrt();
    let noise = (1.0 - spec.within_similarity).max(0.0).sqrt();

    let mut base = vec![0.0f64; k * d];
    let mut latents = vec![0.0f64; k * d];
    let mut payload = Vec::with_capacity(tokens * n * d);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };

    for _ in 0..tokens {
        base.iter_mut().for_each(|v| *v = gauss() * scale);
        for c in 0..k {
            let dst = &mut latents[c * d..(c + 1) * d];
            dst.fill(0.0);
            for j in 0..=c {
                let w = factor[c * k + j];
                if w != 0.0 {
                    dst.iter_mut()
                        .zip(&base[j * d..(j + 1) * d])
                        .for_each(|(o, b)| *o += w * b);
                }
            }
        }
        for &c in &labels {
            let magnitude = if spec.noise_scale > 0.0 {
                (spec.noise_scale * gauss()).exp()
            } else {
                1.0
            };
            let u = &latents[c * d..(c + 1) * d];
            for &uv in u {
                let e = if noise > 0.0 { gauss() * scale } else { 0.0 };
                payload.push((magnitude * (signal * uv + noise * e)) as f32);
            }
        }
    }
    SampleChunk::new(tokens as u32, payload)
}

/// Streams `n_samples` planted samples of `tokens_per_sample` tokens as a
/// LADF dump. Samples are generated in parallel but written in order.
pub fn generate_dump<W: Write>(
    spec: &PlantedSpec,
    n_samples: usize,
    tokens_per_sample: usize,
    sink: W,
) -> Result<u64> {
    spec.validate()?;
    if n_samples == 0 || tokens_per_sample == 0 {
        return Err(Error::InvalidSpec(
            "sample count and tokens per sample must be at least 1".into(),
        ));
    }
    let factor = spec.latent_factor()?;
    let header = DumpHeader::new(spec.n_layers as u32, spec.d_model as u32)?;
    let mut writer = DumpWriter::new(sink, header)?;
    let batch = rayon::current_num_threads().max(1);
    for start in (0..n_samples).step_by(batch) {
        let end = (start + batch).min(n_samples);
        let chunks: Vec<SampleChunk> = (start..end)
            .into_par_iter()
            .map(|m| generate_sample(spec, &factor, m as u64, tokens_per_sample))
            .collect();
        for chunk in &chunks {
            writer.write_chunk(chunk)?;
        }
    }
    Ok(writer.finish()?.1)
}

/// Idealised block-structured similarity with optional Gaussian jitter on
/// the off-diagonal, clipped to `[-1, 1]`.
pub fn generate_similarity(spec: &PlantedSpec) -> Result<SimilarityMatrix> {
    spec.validate()?;
    let n = spec.n_layers;
    let labels = spec.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in i + 1..n {
            let target = if labels[i] == labels[j] {
                spec.within_similarity
            } else {
                spec.cross_similarity
            };
            let jitter = if spec.noise_scale > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.noise_scale * z
            } else {
                0.0
            };
            let v = (target + jitter).clamp(-1.0, 1.0);
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    SimilarityMatrix::new(n, entries, 0, 0.0)
}
