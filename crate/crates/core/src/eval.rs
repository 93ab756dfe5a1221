//! Evaluation: keep the top-scoring window per image, sweep a score
//! threshold, and report mean overlap as a function of coverage.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{overlap, Window};
use crate::model::LocalizerModel;
use crate::synth::SceneInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: u64,
    pub window_index: usize,
    pub window: Window,
    pub score: f64,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    /// Scenes without ground truth.
    pub skipped: usize,
}

/// Localizes every scene with ground truth; scenes without it are counted
/// in `skipped`. Records follow dataset order.
pub fn evaluate_model(model: &LocalizerModel, scenes: &[SceneInstance]) -> Result<EvalReport> {
    let records: Vec<Option<EvalRecord>> = scenes
        .par_iter()
        .map(|s| -> Result<Option<EvalRecord>> {
            let Some(gt) = s.ground_truth else {
                return Ok(None);
            };
            let res = model.localize(s)?;
            let window = s.windows[res.best_index];
            Ok(Some(EvalRecord {
                scene_id: s.id,
                window_index: res.best_index,
                window,
                score: res.best_score,
                overlap: overlap(&window, &gt),
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = records.iter().filter(|r| r.is_none()).count();
    Ok(EvalReport {
        records: records.into_iter().flatten().collect(),
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub coverage: f64,
    pub mean_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapCurve {
    pub points: Vec<CurvePoint>,
}

/// Coverage grid resolution.
pub const CURVE_STEPS: usize = 100;

/// Coverages reported in the evaluation summary.
pub const SUMMARY_COVERAGES: [f64; 4] = [0.1, 0.35, 0.5, 1.0];

/// Records ordered by descending score, ties by ascending scene id.
fn ranked(records: &[EvalRecord]) -> Vec<&EvalRecord> {
    let mut r: Vec<&EvalRecord> = records.iter().collect();
    r.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.scene_id.cmp(&b.scene_id),
        o => o,
    });
    r
}

/// Number of top-ranked records covering fraction `coverage` of `n`.
fn prefix_len(coverage: f64, n: usize) -> usize {
    ((coverage * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

fn prefix_means(ranked: &[&EvalRecord]) -> Vec<f64> {
    let mut sum = 0.0;
    ranked
        .iter()
        .enumerate()
        .map(|(i, r)| {
            sum += r.overlap;
            sum / (i + 1) as f64
        })
        .collect()
}

pub fn overlap_curve(records: &[EvalRecord]) -> Result<OverlapCurve> {
    if records.is_empty() {
        return Err(Error::Invalid("overlap curve needs at least one record".into()));
    }
    let means = prefix_means(&ranked(records));
    let n = records.len();
    let points = (1..=CURVE_STEPS)
        .map(|k| {
            let coverage = k as f64 / CURVE_STEPS as f64;
            CurvePoint {
                coverage,
                mean_overlap: means[prefix_len(coverage, n) - 1],
            }
        })
        .collect();
    Ok(OverlapCurve { points })
}

/// Mean overlap of the top `coverage` fraction of records.
pub fn mean_overlap_at(records: &[EvalRecord], coverage: f64) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let ranked = ranked(records);
    let m = prefix_len(coverage, records.len());
    Some(ranked[..m].iter().map(|r| r.overlap).sum::<f64>() / m as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub coverage: f64,
    pub mean_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: String,
    pub num_scenes: usize,
    pub skipped: usize,
    pub mean_overlap: Option<f64>,
    pub at_coverage: Vec<CoveragePoint>,
}

pub const SUMMARY_SCHEMA: &str = "1.0";

pub fn summarize(report: &EvalReport) -> EvalSummary {
    let recs = &report.records;
    EvalSummary {
        schema_version: SUMMARY_SCHEMA.to_string(),
        num_scenes: recs.len(),
        skipped: report.skipped,
        mean_overlap: mean_overlap_at(recs, 1.0),
        at_coverage: SUMMARY_COVERAGES
            .iter()
            .map(|&c| CoveragePoint {
                coverage: c,
                mean_overlap: mean_overlap_at(recs, c),
            })
            .collect(),
    }
}

pub fn write_curve_csv<W: Write>(out: W, curve: &OverlapCurve) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "coverage,mean_overlap")?;
    for p in &curve.points {
        writeln!(out, "{:.2},{}", p.coverage, p.mean_overlap)?;
    }
    out.flush()
}
