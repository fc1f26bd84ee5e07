//! End-to-end planning from a similarity matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocation::{contiguous_window_plan, plan, Method, PruneBudget, PruningPlan};
use crate::clustering::{spectral_cluster, to_affinity};
use crate::error::Result;
use crate::locality::LocalityReport;
use crate::similarity::SimilarityMatrix;

/// Cluster count: explicit, or taken from the locality policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterCount {
    Fixed(usize),
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected \"auto\" or an integer, got {s:?}"
            )))
        }
    }
}

impl fmt::Display for ClusterCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterCount::Fixed(k) => write!(f, "{k}"),
            ClusterCount::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for ClusterCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(ClusterCount::Auto);
        }
        s.parse()
            .map(ClusterCount::Fixed)
            .map_err(|_| format!("expected \"auto\" or an integer, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub method: Method,
    pub k: ClusterCount,
    pub budget: usize,
    pub seed: u64,
}

/// Locality report, resolved cluster count and plan for one matrix.
pub fn plan_from_similarity(
    s: &SimilarityMatrix,
    options: &PlanOptions,
) -> Result<(LocalityReport, PruningPlan)> {
    let budget = PruneBudget::new(options.budget, s.n_layers())?;
    let report = LocalityReport::from_matrix(s)?;
    let mut out = match options.method {
        Method::Lorp => {
            let k = match options.k {
                ClusterCount::Fixed(k) => k,
                ClusterCount::Auto => report.recommended_k.min(s.n_layers()),
            };
            let part = spectral_cluster(&to_affinity(s), k, options.seed)?;
            plan(s, &part, budget)?
        }
        Method::Contiguous => contiguous_window_plan(s, budget)?,
    };
    out.rls = report.rls;
    out.warnings.extend(report.warnings.iter().cloned());
    Ok((report, out))
}
