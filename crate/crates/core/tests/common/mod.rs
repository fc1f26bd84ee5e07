//! Reference implementations written straight from the defining formulas.
//! They share no code with the library beyond plain data types.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `tokens[t][l]` is the raw hidden state entering layer `l` at token `t`.
pub type Tokens = Vec<Vec<Vec<f32>>>;

pub fn random_tokens(seed: u64, count: usize, n: usize, d: usize) -> Tokens {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-3.0f32..3.0)).collect())
                .collect()
        })
        .collect()
}

/// Batch evaluation: normalise every vector, then average every pairwise
/// dot product over all tokens, every entry computed independently.
pub fn batch_similarity(tokens: &Tokens, epsilon: f64) -> Vec<Vec<f64>> {
    let n = tokens[0].len();
    let normalized: Vec<Vec<Vec<f64>>> = tokens
        .iter()
        .map(|token| {
            token
                .iter()
                .map(|h| {
                    let norm: f64 = h.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                    h.iter().map(|&v| v as f64 / (norm + epsilon)).collect()
                })
                .collect()
        })
        .collect();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut total = 0.0;
            for token in &normalized {
                total += token[i]
                    .iter()
                    .zip(&token[j])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            s[i][j] = total / tokens.len() as f64;
        }
    }
    s
}

pub fn random_symmetric(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(lo..hi);
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

pub fn naive_off_diagonal_mean(s: &[Vec<f64>]) -> f64 {
    let n = s.len();
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += s[i][j];
                count += 1;
            }
        }
    }
    total / count as f64
}

pub fn naive_profile(s: &[Vec<f64>]) -> Vec<(f64, f64, usize)> {
    let n = s.len();
    let mut out = Vec::new();
    for delta in 1..n {
        let mut vals = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if j > i && j - i == delta {
                    vals.push(s[i][j]);
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        out.push((delta as f64 / (n - 1) as f64, mean, vals.len()));
    }
    out
}

/// Redundancy of a 1-based layer over its full cluster, if defined.
fn redundancy(s: &[Vec<f64>], clusters: &[Vec<usize>], layer: usize) -> Option<f64> {
    let members = clusters.iter().find(|c| c.contains(&layer)).unwrap();
    if members.len() < 2 {
        return None;
    }
    let others: Vec<f64> = members
        .iter()
        .filter(|&&m| m != layer)
        .map(|&m| s[layer - 1][m - 1])
        .collect();
    Some(others.iter().sum::<f64>() / others.len() as f64)
}

fn rank_key(r: Option<f64>) -> f64 {
    r.unwrap_or(f64::NEG_INFINITY)
}

/// Sorts layers best-first: redundancy descending, then layer ascending.
fn by_redundancy(s: &[Vec<f64>], clusters: &[Vec<usize>], layers: &mut [usize]) {
    layers.sort_by(|&a, &b| {
        rank_key(redundancy(s, clusters, b))
            .partial_cmp(&rank_key(redundancy(s, clusters, a)))
            .unwrap()
            .then(a.cmp(&b))
    });
}

/// Straight greedy re-simulation of both allocation stages. Clusters are
/// 1-based layer lists in depth order. Returns the removal order.
pub fn naive_allocation(s: &[Vec<f64>], clusters: &[Vec<usize>], budget: usize) -> Vec<usize> {
    let n = s.len();
    let boundary = [1, n];

    // Stage 1: best eligible layer of every cluster.
    let mut candidates: Vec<usize> = Vec::new();
    for members in clusters {
        let mut eligible: Vec<usize> = members
            .iter()
            .copied()
            .filter(|l| !boundary.contains(l))
            .collect();
        if eligible.is_empty() {
            continue;
        }
        by_redundancy(s, clusters, &mut eligible);
        candidates.push(eligible[0]);
    }
    if budget < candidates.len() {
        let mut ranked = candidates.clone();
        by_redundancy(s, clusters, &mut ranked);
        ranked.truncate(budget);
        candidates.retain(|l| ranked.contains(l));
    }
    let mut pruned = candidates;

    // Stage 2: residual mean per cluster, recomputed from scratch.
    while pruned.len() < budget {
        let remaining: Vec<Vec<usize>> = clusters
            .iter()
            .map(|members| {
                members
                    .iter()
                    .copied()
                    .filter(|l| !boundary.contains(l) && !pruned.contains(l))
                    .collect()
            })
            .collect();
        let mus: Vec<Option<f64>> = remaining
            .iter()
            .map(|rem| {
                if rem.len() < 2 {
                    return None;
                }
                let mut pairs = Vec::new();
                for a in 0..rem.len() {
                    for b in a + 1..rem.len() {
                        pairs.push(s[rem[a] - 1][rem[b] - 1]);
                    }
                }
                Some(pairs.iter().sum::<f64>() / pairs.len() as f64)
            })
            .collect();
        let best_mu = mus
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut pool: Vec<usize> = if best_mu > f64::NEG_INFINITY {
            let k = mus.iter().position(|m| *m == Some(best_mu)).unwrap();
            remaining[k].clone()
        } else {
            remaining.concat()
        };
        assert!(!pool.is_empty(), "oracle ran out of layers");
        by_redundancy(s, clusters, &mut pool);
        pruned.push(pool[0]);
    }
    pruned
}

/// Scans every window of `budget` inner layers.
pub fn exhaustive_window(s: &[Vec<f64>], budget: usize) -> Vec<usize> {
    let n = s.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in 1..=n {
        let window: Vec<usize> = (start..start + budget).collect();
        if window.iter().any(|&l| l <= 1 || l >= n) {
            continue;
        }
        let before = start - 1;
        let after = start + budget;
        let score = s[before - 1][after - 1];
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, window));
        }
    }
    best.unwrap().1
}
