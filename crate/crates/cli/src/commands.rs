use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::warn;
use lorp_core::activation_store::MultiDumpReader;
use lorp_core::clustering::{laplacian_spectrum, to_affinity, SpectralOptions};
use lorp_core::report::{distance_profile_csv, heatmap_csv, pattern_strip};
use lorp_core::similarity::{accumulate_source, check_entries, InvariantCheck, SimilarityDocument};
use lorp_core::synth::{generate_dump, generate_similarity};
use lorp_core::{plan_from_similarity, LocalityReport, PlanOptions, PlantedSpec, SimilarityMatrix};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, SynthMode};
use crate::error::CliError;

pub const SIMILARITY_JSON: &str = "similarity.json";
pub const HEATMAP_CSV: &str = "similarity_heatmap.csv";
pub const LOCALITY_JSON: &str = "locality.json";
pub const PROFILE_CSV: &str = "distance_profile.csv";
pub const PLAN_JSON: &str = "plan.json";
pub const PATTERN_TXT: &str = "pattern.txt";
pub const CHECK_JSON: &str = "check.json";
pub const SYNTH_DUMP: &str = "synth.ladf";
pub const SYNTH_JSON: &str = "synth.json";

/// Raw row-major little-endian f64 copy of a matrix, stored next to its JSON.
pub fn sidecar_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("f64.bin")
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    Ok(dir)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn with_config<T: Serialize>(value: &T, cfg: &RunConfig) -> Value {
    let mut doc = serde_json::to_value(value).expect("output serializes");
    if let Value::Object(map) = &mut doc {
        map.insert("config".into(), cfg.to_value());
    }
    doc
}

fn read_document(path: &Path) -> Result<SimilarityDocument, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Core {
        context: format!("{}: not a similarity matrix document", path.display()),
        source: e.into(),
    })
}

/// Loads a matrix document, taking entries from the binary sidecar when one
/// sits next to it.
pub fn load_matrix(path: &Path) -> Result<SimilarityMatrix, CliError> {
    let doc = read_document(path)?;
    let context = format!("{}", path.display());
    let sidecar = sidecar_path(path);
    if sidecar.is_file() {
        let bytes = fs::read(&sidecar).map_err(CliError::io(&sidecar))?;
        SimilarityMatrix::from_sidecar_bytes(doc.n_layers, &bytes, doc.token_total, doc.epsilon)
            .map_err(CliError::core(sidecar.display().to_string()))
    } else {
        SimilarityMatrix::from_document(&doc).map_err(CliError::core(context))
    }
}

fn save_matrix(dir: &Path, s: &SimilarityMatrix, cfg: &RunConfig) -> Result<(), CliError> {
    let mut doc = s.to_document();
    doc.config = Some(cfg.to_value());
    let json_path = dir.join(SIMILARITY_JSON);
    write_json(&json_path, &doc)?;
    write_bytes(&sidecar_path(&json_path), &s.to_sidecar_bytes())?;
    if cfg.heatmap {
        write_bytes(&dir.join(HEATMAP_CSV), heatmap_csv(s).as_bytes())?;
    }
    Ok(())
}

pub fn sim(cfg: &RunConfig, dumps: &[PathBuf]) -> Result<(), CliError> {
    let mut reader = MultiDumpReader::open(dumps).map_err(CliError::core("opening dumps"))?;
    let acc = accumulate_source(&mut reader, cfg.epsilon, cfg.workers)
        .map_err(CliError::core("reading dumps"))?;
    let s = acc
        .finalize()
        .map_err(CliError::core("finalizing similarity"))?;
    for check in s.check_invariants() {
        if !check.passed {
            warn!("{}: {}", check.name, check.detail);
        }
    }
    let dir = prepare_out(cfg)?;
    save_matrix(&dir, &s, cfg)?;
    println!(
        "similarity: {} layers over {} tokens -> {}",
        s.n_layers(),
        s.token_total(),
        dir.join(SIMILARITY_JSON).display()
    );
    Ok(())
}

fn save_locality(dir: &Path, report: &LocalityReport, cfg: &RunConfig) -> Result<(), CliError> {
    write_json(&dir.join(LOCALITY_JSON), &with_config(report, cfg))?;
    if cfg.profile {
        write_bytes(
            &dir.join(PROFILE_CSV),
            distance_profile_csv(report).as_bytes(),
        )?;
    }
    Ok(())
}

pub fn locality(cfg: &RunConfig, matrix: &Path) -> Result<(), CliError> {
    let s = load_matrix(matrix)?;
    let report = LocalityReport::from_matrix(&s).map_err(CliError::core("locality"))?;
    for w in &report.warnings {
        warn!("{w}");
    }
    let dir = prepare_out(cfg)?;
    save_locality(&dir, &report, cfg)?;
    match report.rls {
        Some(rls) => println!("rls={rls:.6} recommended_k={}", report.recommended_k),
        None => println!("rls=undefined recommended_k={}", report.recommended_k),
    }
    Ok(())
}

pub fn plan(cfg: &RunConfig, matrix: &Path) -> Result<(), CliError> {
    let budget = cfg
        .budget
        .ok_or_else(|| CliError::Usage("plan needs --budget".into()))?;
    let s = load_matrix(matrix)?;
    let options = PlanOptions {
        method: cfg.method,
        k: cfg.k,
        budget,
        seed: cfg.seed,
    };
    let (report, mut plan) =
        plan_from_similarity(&s, &options).map_err(CliError::core("planning"))?;
    plan.config = Some(cfg.to_value());
    for w in &plan.warnings {
        warn!("{w}");
    }
    let dir = prepare_out(cfg)?;
    write_json(&dir.join(PLAN_JSON), &plan)?;
    write_bytes(&dir.join(PATTERN_TXT), pattern_strip(&plan).as_bytes())?;
    save_locality(&dir, &report, cfg)?;
    println!(
        "method={} k={} pruned_1based={:?}",
        plan.method,
        plan.k_clusters.map_or("-".to_string(), |k| k.to_string()),
        plan.pruned_layers_1based
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig, spec_path: &Path, seed_flag: Option<u64>) -> Result<(), CliError> {
    let text = fs::read_to_string(spec_path).map_err(CliError::io(spec_path))?;
    let mut spec: PlantedSpec = serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!("invalid planted spec {}: {e}", spec_path.display()))
    })?;
    if let Some(seed) = seed_flag {
        spec.seed = seed;
    }
    spec.validate().map_err(CliError::core("planted spec"))?;
    let cfg = &RunConfig {
        seed: spec.seed,
        ..cfg.clone()
    };
    let dir = prepare_out(cfg)?;
    match cfg.mode.unwrap_or(SynthMode::Dump) {
        SynthMode::Dump => {
            let samples = cfg.samples.expect("synth config carries samples");
            let tokens = cfg.tokens.expect("synth config carries tokens");
            let path = dir.join(SYNTH_DUMP);
            let file = File::create(&path).map_err(CliError::io(&path))?;
            let bytes = generate_dump(&spec, samples, tokens, BufWriter::new(file))
                .map_err(CliError::core("generating dump"))?;
            let summary = json!({
                "dump": path.display().to_string(),
                "bytes": bytes,
                "labels": spec.labels(),
                "spec": spec,
                "config": cfg.to_value(),
            });
            write_json(&dir.join(SYNTH_JSON), &summary)?;
            println!("synth: wrote {bytes} bytes to {}", path.display());
        }
        SynthMode::Matrix => {
            let s = generate_similarity(&spec).map_err(CliError::core("generating matrix"))?;
            save_matrix(&dir, &s, cfg)?;
            println!(
                "synth: wrote {} x {} matrix to {}",
                s.n_layers(),
                s.n_layers(),
                dir.join(SIMILARITY_JSON).display()
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckLine {
    name: &'static str,
    hard: bool,
    passed: bool,
    detail: String,
}

impl From<InvariantCheck> for CheckLine {
    fn from(c: InvariantCheck) -> Self {
        CheckLine {
            name: c.name,
            hard: c.hard,
            passed: c.passed,
            detail: c.detail,
        }
    }
}

fn spectrum_check(s: &SimilarityMatrix) -> CheckLine {
    const SLACK: f64 = 1e-8;
    let cap = SpectralOptions::default().eigen_max_iterations;
    match laplacian_spectrum(&to_affinity(s), cap) {
        Ok((values, _)) => {
            let lo = values.first().copied().unwrap_or(0.0);
            let hi = values.last().copied().unwrap_or(0.0);
            CheckLine {
                name: "laplacian_spectrum",
                hard: true,
                passed: (-SLACK..=SLACK).contains(&lo) && hi <= 2.0 + SLACK,
                detail: format!("eigenvalues span [{lo:.3e}, {hi:.6}]"),
            }
        }
        Err(e) => CheckLine {
            name: "laplacian_spectrum",
            hard: true,
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn check(cfg: &RunConfig, matrix: &Path) -> Result<(), CliError> {
    let doc = read_document(matrix)?;
    let sidecar = sidecar_path(matrix);
    let entries = if sidecar.is_file() {
        let bytes = fs::read(&sidecar).map_err(CliError::io(&sidecar))?;
        bytes
            .chunks(8)
            .map(|c| c.try_into().map(f64::from_le_bytes).unwrap_or(f64::NAN))
            .collect()
    } else {
        doc.rows.concat()
    };
    let ragged = doc.rows.len() != doc.n_layers || doc.rows.iter().any(|r| r.len() != doc.n_layers);
    let mut lines: Vec<CheckLine> = Vec::new();
    if ragged {
        lines.push(CheckLine {
            name: "shape",
            hard: true,
            passed: false,
            detail: format!("rows do not form a {0} x {0} matrix", doc.n_layers),
        });
    }
    lines.extend(
        check_entries(doc.n_layers, &entries)
            .into_iter()
            .map(CheckLine::from),
    );
    if lines.iter().all(|l| !l.hard || l.passed) {
        match SimilarityMatrix::new(doc.n_layers, entries, doc.token_total, doc.epsilon) {
            Ok(s) => lines.push(spectrum_check(&s)),
            Err(e) => lines.push(CheckLine {
                name: "construct",
                hard: true,
                passed: false,
                detail: e.to_string(),
            }),
        }
    }
    for l in &lines {
        let status = match (l.passed, l.hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        println!("{status}  {}: {}", l.name, l.detail);
    }
    let dir = prepare_out(cfg)?;
    write_json(
        &dir.join(CHECK_JSON),
        &json!({ "checks": lines, "config": cfg.to_value() }),
    )?;
    let failed: Vec<&str> = lines
        .iter()
        .filter(|l| l.hard && !l.passed)
        .map(|l| l.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "hard invariants violated: {}",
            failed.join(", ")
        )))
    }
}
