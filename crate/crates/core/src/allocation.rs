//! Two-stage redundancy-aware allocation of a depth-pruning budget.
//!
//! Stage 1 takes the most redundant eligible layer of every cluster (or
//! the top-ranked subset when the budget is smaller than the cluster
//! count). Stage 2 repeatedly picks the cluster whose remaining eligible
//! layers are most similar to each other and removes its most redundant
//! layer. Boundary layers `1` and `N` are never eligible. Every argmax
//! breaks ties toward the lower index.
//!
//! Layer redundancy `r(l)` is the mean similarity of `l` to the other
//! members of its full cluster and is not recomputed as layers are removed;
//! only the per-cluster residual means are.

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterPartition;
use crate::error::{Error, Result};
use crate::similarity::{hex_string, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneBudget {
    k_prune: usize,
}

impl PruneBudget {
    pub fn new(k_prune: usize, n_layers: usize) -> Result<Self> {
        if k_prune < 1 || k_prune + 2 > n_layers {
            return Err(Error::InvalidBudget {
                budget: k_prune,
                n_layers,
            });
        }
        Ok(Self { k_prune })
    }

    pub fn get(self) -> usize {
        self.k_prune
    }

    fn digest(self) -> String {
        hex_string(&Sha256::digest((self.k_prune as u64).to_le_bytes()))
    }
}

/// Per-layer redundancy, `None` for members of singleton clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyTable {
    values: Vec<Option<f64>>,
}

impl RedundancyTable {
    /// Redundancy of 1-based `layer`.
    pub fn get(&self, layer: usize) -> Option<f64> {
        self.values[layer - 1]
    }

    /// Redundancy with singleton members ranked below everything else.
    pub fn score(&self, layer: usize) -> f64 {
        self.get(layer).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }
}

pub fn intra_cluster_redundancy(
    s: &SimilarityMatrix,
    part: &ClusterPartition,
) -> Result<(RedundancyTable, Vec<String>)> {
    check_consistent(s, part)?;
    let mut values = vec![None; s.n_layers()];
    let mut warnings = Vec::new();
    for (c, members) in part.clusters.iter().enumerate() {
        if members.len() < 2 {
            warnings.push(format!(
                "cluster {} is a singleton (layer {}); its redundancy is undefined",
                c + 1,
                members[0]
            ));
            continue;
        }
        for &l in members {
            let sum: f64 = members
                .iter()
                .filter(|&&m| m != l)
                .map(|&m| s.get(l - 1, m - 1))
                .sum();
            values[l - 1] = Some(sum / (members.len() - 1) as f64);
        }
    }
    Ok((RedundancyTable { values }, warnings))
}

fn check_consistent(s: &SimilarityMatrix, part: &ClusterPartition) -> Result<()> {
    if part.n_layers() != s.n_layers() {
        return Err(Error::DimensionMismatch {
            what: "partition layer count",
            expected: s.n_layers(),
            found: part.n_layers(),
        });
    }
    part.validate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lorp,
    Contiguous,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Lorp => "lorp",
            Method::Contiguous => "contiguous",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lorp" => Ok(Method::Lorp),
            "contiguous" => Ok(Method::Contiguous),
            other => Err(format!(
                "unknown method {other:?} (expected lorp or contiguous)"
            )),
        }
    }
}

/// One removal decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub stage: u8,
    pub layer: usize,
    pub cluster: usize,
    /// `None` when the layer's cluster is a singleton.
    pub r_value: Option<f64>,
    /// Residual redundancy of every cluster when this step was chosen;
    /// `None` entries are clusters with fewer than two eligible layers.
    /// Absent for stage-1 steps.
    pub mu_values_at_selection: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputsDigest {
    pub similarity: String,
    pub partition: Option<String>,
    pub budget: String,
}

/// Removed block `[start, end]` (1-based) chosen by the window comparator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub start: usize,
    pub end: usize,
    pub boundary_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub method: Method,
    pub n_layers: usize,
    pub k_clusters: Option<usize>,
    pub budget: usize,
    pub rls: Option<f64>,
    pub pruned_layers_1based: Vec<usize>,
    pub pruned_layers_0based: Vec<usize>,
    pub steps: Vec<PlanStep>,
    pub warnings: Vec<String>,
    pub inputs_digest: InputsDigest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<ClusterPartition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl PruningPlan {
    /// Checks the structural plan invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_layers;
        let p = &self.pruned_layers_1based;
        let bad = |msg: String| Err(Error::InvalidPartition(msg));
        if p.len() != self.budget {
            return bad(format!(
                "{} layers pruned for budget {}",
                p.len(),
                self.budget
            ));
        }
        let mut sorted = p.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != p.len() {
            return bad("pruned layers contain duplicates".into());
        }
        if p.iter().any(|&l| l <= 1 || l >= n) {
            return bad("a boundary or out-of-range layer was pruned".into());
        }
        if self
            .pruned_layers_0based
            .iter()
            .zip(p)
            .any(|(z, o)| z + 1 != *o)
            || self.pruned_layers_0based.len() != p.len()
        {
            return bad("0-based indices disagree with 1-based indices".into());
        }
        let mut stage1: Vec<usize> = self
            .steps
            .iter()
            .filter(|s| s.stage == 1)
            .map(|s| s.cluster)
            .collect();
        let count = stage1.len();
        stage1.sort_unstable();
        stage1.dedup();
        if stage1.len() != count {
            return bad("stage 1 removed two layers from one cluster".into());
        }
        Ok(())
    }

    /// One character per layer: `X` pruned, `.` kept.
    pub fn pattern(&self) -> String {
        (1..=self.n_layers)
            .map(|l| {
                if self.pruned_layers_1based.contains(&l) {
                    'X'
                } else {
                    '.'
                }
            })
            .collect()
    }
}

/// Eligible (non-boundary) layers of a cluster.
fn eligible(members: &[usize], n: usize) -> impl Iterator<Item = usize> + '_ {
    members.iter().copied().filter(move |&l| l != 1 && l != n)
}

/// Picks the layer with the highest score, lowest layer on ties.
fn best_layer(layers: impl Iterator<Item = usize>, table: &RedundancyTable) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for l in layers {
        let r = table.score(l);
        match best {
            Some((bl, br)) if r < br || (r == br && l > bl) => {}
            _ => best = Some((l, r)),
        }
    }
    best.map(|(l, _)| l)
}

pub struct Stage1 {
    pub pruned: Vec<usize>,
    pub steps: Vec<PlanStep>,
    pub warnings: Vec<String>,
}

pub fn stage1_coverage(
    s: &SimilarityMatrix,
    part: &ClusterPartition,
    budget: PruneBudget,
    table: &RedundancyTable,
) -> Result<Stage1> {
    check_consistent(s, part)?;
    let n = s.n_layers();
    let mut warnings = Vec::new();
    let mut candidates = Vec::new();
    for (c, members) in part.clusters.iter().enumerate() {
        match best_layer(eligible(members, n), table) {
            Some(l) => candidates.push((c + 1, l)),
            None => {
                let msg = format!(
                    "cluster {} has no eligible layer outside the boundary; skipped",
                    c + 1
                );
                warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoEligibleLayer);
    }
    if budget.get() < candidates.len() {
        let mut ranked = candidates.clone();
        ranked.sort_by(|a, b| {
            table
                .score(b.1)
                .total_cmp(&table.score(a.1))
                .then(a.1.cmp(&b.1))
        });
        ranked.truncate(budget.get());
        candidates.retain(|c| ranked.contains(c));
    }
    let steps = candidates
        .iter()
        .map(|&(cluster, layer)| PlanStep {
            stage: 1,
            layer,
            cluster,
            r_value: table.get(layer),
            mu_values_at_selection: None,
            fallback: false,
        })
        .collect();
    Ok(Stage1 {
        pruned: candidates.iter().map(|&(_, l)| l).collect(),
        steps,
        warnings,
    })
}

/// Mean pairwise similarity of `layers`, `None` below two members.
pub fn residual_redundancy(s: &SimilarityMatrix, layers: &[usize]) -> Option<f64> {
    let m = layers.len();
    if m < 2 {
        return None;
    }
    let mut sum = 0.0;
    for (a, &i) in layers.iter().enumerate() {
        for &j in &layers[a + 1..] {
            sum += s.get(i - 1, j - 1);
        }
    }
    Some(2.0 * sum / (m * (m - 1)) as f64)
}

/// Continues from the stage-1 set until the budget is met.
pub fn stage2_residual(
    s: &SimilarityMatrix,
    part: &ClusterPartition,
    budget: PruneBudget,
    table: &RedundancyTable,
    stage1: Stage1,
) -> Result<(Vec<usize>, Vec<PlanStep>, Vec<String>)> {
    let n = s.n_layers();
    let Stage1 {
        mut pruned,
        mut steps,
        mut warnings,
    } = stage1;
    if pruned.len() > budget.get() {
        return Err(Error::BudgetUnreachable {
            budget: budget.get(),
            eligible: pruned.len(),
        });
    }
    let total_eligible = n.saturating_sub(2);
    if budget.get() > total_eligible {
        return Err(Error::BudgetUnreachable {
            budget: budget.get(),
            eligible: total_eligible,
        });
    }

    let mut removed = vec![false; n + 1];
    pruned.iter().for_each(|&l| removed[l] = true);

    while pruned.len() < budget.get() {
        let remaining: Vec<Vec<usize>> = part
            .clusters
            .iter()
            .map(|members| eligible(members, n).filter(|&l| !removed[l]).collect())
            .collect();
        let mu: Vec<Option<f64>> = remaining
            .iter()
            .map(|layers| residual_redundancy(s, layers))
            .collect();

        let mut chosen: Option<(usize, f64)> = None;
        for (c, m) in mu.iter().enumerate() {
            if let Some(v) = *m {
                if chosen.is_none_or(|(_, best)| v > best) {
                    chosen = Some((c, v));
                }
            }
        }

        let (layer, cluster, fallback) = match chosen {
            Some((c, _)) => {
                let l = best_layer(remaining[c].iter().copied(), table)
                    .expect("cluster with a residual mean has eligible layers");
                (l, c + 1, false)
            }
            None => {
                let l = best_layer(remaining.iter().flatten().copied(), table).ok_or(
                    Error::BudgetUnreachable {
                        budget: budget.get(),
                        eligible: pruned.len(),
                    },
                )?;
                let msg = format!(
                    "no cluster has two eligible layers left; removed layer {l} by global redundancy"
                );
                warn!("{msg}");
                warnings.push(msg);
                (l, part.cluster_of(l), true)
            }
        };
        removed[layer] = true;
        pruned.push(layer);
        steps.push(PlanStep {
            stage: 2,
            layer,
            cluster,
            r_value: table.get(layer),
            mu_values_at_selection: Some(mu),
            fallback,
        });
    }
    Ok((pruned, steps, warnings))
}

/// Runs both stages and assembles the plan.
pub fn plan(
    s: &SimilarityMatrix,
    part: &ClusterPartition,
    budget: PruneBudget,
) -> Result<PruningPlan> {
    let (table, mut warnings) = intra_cluster_redundancy(s, part)?;
    let stage1 = stage1_coverage(s, part, budget, &table)?;
    let (pruned, steps, stage_warnings) = stage2_residual(s, part, budget, &table, stage1)?;
    warnings.extend(stage_warnings);
    warnings.extend(part.warnings.iter().cloned());
    let plan = PruningPlan {
        method: Method::Lorp,
        n_layers: s.n_layers(),
        k_clusters: Some(part.k),
        budget: budget.get(),
        rls: None,
        pruned_layers_0based: pruned.iter().map(|l| l - 1).collect(),
        pruned_layers_1based: pruned,
        steps,
        warnings,
        inputs_digest: InputsDigest {
            similarity: s.digest(),
            partition: Some(part.digest()),
            budget: budget.digest(),
        },
        window: None,
        partition: Some(part.clone()),
        config: None,
    };
    plan.validate()?;
    Ok(plan)
}

/// Removes the contiguous run of `budget` non-boundary layers whose
/// neighbours on either side are most similar.
pub fn contiguous_window_plan(s: &SimilarityMatrix, budget: PruneBudget) -> Result<PruningPlan> {
    let n = s.n_layers();
    let b = budget.get();
    if b + 2 > n {
        return Err(Error::BudgetUnreachable {
            budget: b,
            eligible: n.saturating_sub(2),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for start in 2..=n - b {
        // Layers before and after the removed block, 1-based.
        let score = s.get(start - 2, start + b - 1);
        if best.is_none_or(|(_, v)| score > v) {
            best = Some((start, score));
        }
    }
    let (start, score) = best.expect("at least one window");
    let pruned: Vec<usize> = (start..start + b).collect();
    let plan = PruningPlan {
        method: Method::Contiguous,
        n_layers: n,
        k_clusters: None,
        budget: b,
        rls: None,
        pruned_layers_0based: pruned.iter().map(|l| l - 1).collect(),
        pruned_layers_1based: pruned,
        steps: Vec::new(),
        warnings: Vec::new(),
        inputs_digest: InputsDigest {
            similarity: s.digest(),
            partition: None,
            budget: budget.digest(),
        },
        window: Some(WindowChoice {
            start,
            end: start + b - 1,
            boundary_similarity: score,
        }),
        partition: None,
        config: None,
    };
    plan.validate()?;
    Ok(plan)
}
