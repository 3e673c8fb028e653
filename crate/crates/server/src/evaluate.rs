//! Re-identification scoring of simulator fixtures against their ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use mmtl_core::ingest::load_manifest;
use mmtl_core::reid::{evaluate_tracking, group_by_frame, parse_corrections, run_tracker, ReidScore};
use mmtl_sim::GroundTruth;
use serde::Serialize;

use crate::pipeline::{load_config, PipelineError};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub score: ReidScore,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteScore {
    pub scenarios: Vec<ScenarioScore>,
    pub correct: usize,
    pub total: usize,
    /// Detections correct over detections total, across every scenario.
    pub pooled_rate: f64,
}

/// Score one fixture directory (manifest plus ground truth), tracking with
/// the settings the manifest names.
pub fn evaluate_fixture(dir: &Path) -> Result<ScenarioScore, PipelineError> {
    let manifest = load_manifest(&dir.join("manifest.json"))?;
    let truth_path = dir.join(GROUND_TRUTH_FILE);
    let text = fs::read_to_string(&truth_path).map_err(|e| PipelineError::io(&truth_path, e))?;
    let truth: GroundTruth = serde_json::from_str(&text).map_err(|e| PipelineError::io(&truth_path, e))?;
    let stream = manifest
        .stream(&truth.stream_id)
        .ok_or_else(|| PipelineError::io(&truth_path, format!("stream `{}` not in manifest", truth.stream_id)))?;

    let file = fs::File::open(&stream.detections).map_err(|e| PipelineError::io(&stream.detections, e))?;
    let records = mmtl_core::ingest::parse_detections(file)?.strict()?;
    let corrections = match &stream.corrections {
        Some(p) => parse_corrections(std::io::BufReader::new(fs::File::open(p).map_err(|e| PipelineError::io(p, e))?))?,
        None => Vec::new(),
    };
    let params = load_config(&manifest)?.tracker;
    let tracks = run_tracker(group_by_frame(&records), params, &corrections)?;
    let score = evaluate_tracking(&tracks, &truth.identities)?;
    Ok(ScenarioScore { scenario: truth.scenario, score })
}

/// Fixture directories at `dir`: the directory itself if it holds ground
/// truth, else its immediate subdirectories that do, sorted.
pub fn fixture_dirs(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if dir.join(GROUND_TRUTH_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(GROUND_TRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(PipelineError::io(dir, "no fixtures with ground truth found"));
    }
    Ok(dirs)
}

pub fn evaluate_suite(dir: &Path) -> Result<SuiteScore, PipelineError> {
    let scenarios = fixture_dirs(dir)?
        .iter()
        .map(|d| evaluate_fixture(d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pool(scenarios))
}

pub fn pool(scenarios: Vec<ScenarioScore>) -> SuiteScore {
    let correct = scenarios.iter().map(|s| s.score.correct).sum();
    let total: usize = scenarios.iter().map(|s| s.score.total).sum();
    let pooled_rate = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    SuiteScore { scenarios, correct, total, pooled_rate }
}
