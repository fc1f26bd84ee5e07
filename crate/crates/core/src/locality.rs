//! Global off-diagonal similarity, the representation locality score, the
//! similarity-vs-depth-distance profile, and the cluster-count policy.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

/// Locality at or above this uses the coarsest partition.
pub const COARSE_BREAKPOINT: f64 = 1.0;
/// Locality below this uses the finest partition.
pub const FINE_BREAKPOINT: f64 = 0.7;
/// Cluster count used when locality is undefined.
pub const FALLBACK_K: usize = 2;

/// Mean of `S_ij` over all pairs `i < j`.
pub fn off_diagonal_mean(s: &SimilarityMatrix) -> Result<f64> {
    let n = s.n_layers();
    if n < 2 {
        return Err(Error::InvalidMatrix(
            "off-diagonal mean needs at least 2 layers".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += s.get(i, j);
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// `-log2(off_diag_mean)`; undefined for non-positive means.
pub fn rls(off_diag_mean: f64) -> Result<f64> {
    if off_diag_mean.is_nan() || off_diag_mean <= 0.0 {
        return Err(Error::LocalityUndefined(off_diag_mean));
    }
    Ok(-off_diag_mean.log2())
}

pub fn recommend_k(rls: f64) -> usize {
    if rls >= COARSE_BREAKPOINT {
        2
    } else if rls >= FINE_BREAKPOINT {
        3
    } else {
        4
    }
}

/// `(delta / (N-1), mean S_ij over |i-j| = delta)` for each delta in 1..N.
pub fn distance_profile(s: &SimilarityMatrix) -> Vec<(f64, f64)> {
    let n = s.n_layers();
    if n < 2 {
        return Vec::new();
    }
    (1..n)
        .map(|delta| {
            let sum: f64 = (0..n - delta).map(|i| s.get(i, i + delta)).sum();
            (delta as f64 / (n - 1) as f64, sum / (n - delta) as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub distance: f64,
    pub mean_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub off_diag_mean: f64,
    /// `None` when the off-diagonal mean is not positive.
    pub rls: Option<f64>,
    pub recommended_k: usize,
    pub distance_profile: Vec<ProfilePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl LocalityReport {
    pub fn from_matrix(s: &SimilarityMatrix) -> Result<Self> {
        let off = off_diagonal_mean(s)?;
        let mut warnings = Vec::new();
        let (rls, recommended_k) = match rls(off) {
            Ok(v) => (Some(v), recommend_k(v)),
            Err(_) => {
                let msg = format!(
                    "off-diagonal mean {off} is not positive; locality score undefined, \
                     falling back to K={FALLBACK_K}"
                );
                warn!("{msg}");
                warnings.push(msg);
                (None, FALLBACK_K)
            }
        };
        Ok(Self {
            off_diag_mean: off,
            rls,
            recommended_k,
            distance_profile: distance_profile(s)
                .into_iter()
                .map(|(distance, mean_similarity)| ProfilePoint {
                    distance,
                    mean_similarity,
                })
                .collect(),
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: &[Vec<f64>]) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(rows, 1, 0.0).unwrap()
    }

    fn constant(n: usize, c: f64) -> SimilarityMatrix {
        let rows: Vec<_> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { c }).collect())
            .collect();
        matrix(&rows)
    }

    #[test]
    fn off_diagonal_examples() {
        assert!((off_diagonal_mean(&constant(5, 0.5)).unwrap() - 0.5).abs() < 1e-15);
        let s = matrix(&[
            vec![1.0, 0.2, 0.4],
            vec![0.2, 1.0, 0.6],
            vec![0.4, 0.6, 1.0],
        ]);
        assert!((off_diagonal_mean(&s).unwrap() - 0.4).abs() < 1e-15);
        assert!(off_diagonal_mean(&matrix(&[vec![1.0]])).is_err());
    }

    #[test]
    fn rls_examples() {
        assert_eq!(rls(0.5).unwrap(), 1.0);
        assert!((rls(2f64.powf(-1.149)).unwrap() - 1.149).abs() < 1e-3);
        assert!((rls(2f64.powf(-0.644)).unwrap() - 0.644).abs() < 1e-3);
        assert!(matches!(rls(0.0), Err(Error::LocalityUndefined(_))));
        assert!(rls(-0.2).is_err());
    }

    #[test]
    fn k_policy_breakpoints() {
        assert_eq!(recommend_k(1.149), 2);
        assert_eq!(recommend_k(0.941), 3);
        assert_eq!(recommend_k(0.685), 4);
        assert_eq!(recommend_k(1.0), 2);
        assert_eq!(recommend_k(0.7), 3);
        assert_eq!(recommend_k(1.0 - 1e-12), 3);
        assert_eq!(recommend_k(0.7 - 1e-12), 4);
        assert_eq!(recommend_k(-3.0), 4);
    }

    #[test]
    fn profile_examples() {
        let s = matrix(&[
            vec![1.0, 0.8, 0.2],
            vec![0.8, 1.0, 0.8],
            vec![0.2, 0.8, 1.0],
        ]);
        assert_eq!(distance_profile(&s), vec![(0.5, 0.8), (1.0, 0.2)]);
        let flat = distance_profile(&constant(6, 0.3));
        assert_eq!(flat.len(), 5);
        assert!(flat.iter().all(|&(_, v)| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn negative_mean_falls_back() {
        let report = LocalityReport::from_matrix(&constant(4, -0.2)).unwrap();
        assert_eq!(report.rls, None);
        assert_eq!(report.recommended_k, FALLBACK_K);
        assert_eq!(report.warnings.len(), 1);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["rls"].is_null());
    }

    proptest! {
        #[test]
        fn rls_strictly_decreasing(a in 1e-6f64..1.0, b in 1e-6f64..1.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(rls(lo).unwrap() > rls(hi).unwrap());
        }
    }
}
