//! Plain-text artefacts for external plotting: heatmap and distance-profile
//! CSVs and a one-character-per-layer pruning strip.

use std::fmt::Write as _;

use crate::allocation::PruningPlan;
use crate::locality::LocalityReport;
use crate::similarity::SimilarityMatrix;

/// Full matrix with a header row and a leading layer column, 1-based.
pub fn heatmap_csv(s: &SimilarityMatrix) -> String {
    let n = s.n_layers();
    let mut out = String::from("layer");
    for j in 1..=n {
        write!(out, ",{j}").unwrap();
    }
    out.push('\n');
    for i in 0..n {
        write!(out, "{}", i + 1).unwrap();
        for j in 0..n {
            write!(out, ",{}", s.get(i, j)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn distance_profile_csv(report: &LocalityReport) -> String {
    let mut out = String::from("normalized_distance,mean_similarity\n");
    for p in &report.distance_profile {
        writeln!(out, "{},{}", p.distance, p.mean_similarity).unwrap();
    }
    out
}

fn cluster_char(c: usize) -> char {
    std::char::from_digit(c as u32, 36)
        .map(|ch| ch.to_ascii_uppercase())
        .unwrap_or('*')
}

/// Pruning mask under a layer ruler, plus cluster membership when known.
pub fn pattern_strip(plan: &PruningPlan) -> String {
    let n = plan.n_layers;
    let ruler: String = (1..=n)
        .map(|l| {
            if l % 10 == 0 {
                char::from_digit(((l / 10) % 10) as u32, 10).unwrap()
            } else if l % 5 == 0 {
                '+'
            } else {
                '.'
            }
        })
        .collect();
    let mut out = String::new();
    writeln!(out, "layers  {ruler}").unwrap();
    writeln!(out, "pruned  {}", plan.pattern()).unwrap();
    if let Some(part) = &plan.partition {
        let clusters: String = part.assignment.iter().map(|&c| cluster_char(c)).collect();
        writeln!(out, "cluster {clusters}").unwrap();
    }
    writeln!(
        out,
        "method={} budget={} pruned={:?}",
        plan.method, plan.budget, plan.pruned_layers_1based
    )
    .unwrap();
    out
}
