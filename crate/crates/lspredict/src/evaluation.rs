//! Segmented temporal evaluation over a finished trace.
//!
//! After a warmup prefix, the remaining jobs (in submit order) are cut into
//! fixed-size segments. For each segment, models are trained on the window
//! of jobs that had finished strictly before the segment's first submission,
//! then scored on the segment's jobs. This mirrors deployment: nothing that
//! finished at or after a job's context instant can influence its
//! prediction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{accuracy, poll_votes, RankedModels};
use crate::featurization::{encode_dataset, EncodedDataset};
use crate::learners::Method;
use crate::pipeline::{
    assemble_window, split_window_relaxed, train_model_set, ModelSet, PipelineConfig,
    PipelineError, WindowAudit,
};
use crate::workload::JobRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace too short: need {needed} finished jobs, got {got}")]
    TraceTooShort { needed: usize, got: usize },
    #[error("temporal leakage: {0}")]
    Leakage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub warmup: usize,
    pub segment_size: usize,
    pub segments: usize,
    pub pipeline: PipelineConfig,
    /// Audit every window job against every test job's submit time, rather
    /// than only against the segment boundary.
    pub strict_per_job: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            warmup: 10_000,
            segment_size: 5_000,
            segments: 5,
            pipeline: PipelineConfig::default(),
            strict_per_job: false,
        }
    }
}

/// Per-method and ensemble accuracies for one segment, on one of the two
/// scored sets (validation or test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScores {
    pub mode: f64,
    pub per_method: Vec<(Method, f64)>,
}

impl SegmentScores {
    pub fn method_accuracy(&self, method: Method) -> f64 {
        self.per_method
            .iter()
            .find(|(m, _)| *m == method)
            .map(|&(_, a)| a)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPrediction {
    pub job_id: String,
    pub actual_bin: usize,
    pub poll_bin: usize,
    pub per_method: Vec<(Method, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: usize,
    pub as_of: i64,
    pub window_len: usize,
    pub validation: SegmentScores,
    pub test: SegmentScores,
    /// Poll accuracy on the test set at each n in 1..=methods, then with
    /// every model voting.
    pub topn: Vec<f64>,
    pub poll_validation_weights: f64,
    pub poll_perfect_weights: f64,
    pub audit: WindowAudit,
    pub predictions: Vec<JobPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub segments: Vec<SegmentReport>,
}

fn predictions_for(
    ranked: &RankedModels,
    set: &EncodedDataset,
) -> Result<Vec<Vec<usize>>, PipelineError> {
    ranked
        .entries
        .par_iter()
        .map(|entry| {
            set.rows
                .iter()
                .map(|row| entry.model.predict(row))
                .collect::<Result<Vec<_>, _>>()
                .map_err(PipelineError::from)
        })
        .collect()
}

fn scores_from(
    ranked: &RankedModels,
    preds: &[Vec<usize>],
    labels: &[usize],
    mode_bin: usize,
) -> Result<SegmentScores, PipelineError> {
    let mode_hits = labels.iter().filter(|&&l| l == mode_bin).count();
    let per_method = ranked
        .entries
        .iter()
        .zip(preds)
        .map(|(entry, p)| Ok((entry.method, accuracy(p, labels)?)))
        .collect::<Result<Vec<_>, crate::ensemble::EnsembleError>>()
        .map_err(PipelineError::from)?;
    Ok(SegmentScores {
        mode: mode_hits as f64 / labels.len() as f64,
        per_method,
    })
}

/// Poll accuracy with the given per-voter weights, using the first `top_n`
/// entries of `order` (indices into `preds`).
fn poll_accuracy(
    order: &[usize],
    weights: &[f64],
    preds: &[Vec<usize>],
    labels: &[usize],
    top_n: usize,
) -> f64 {
    let n = top_n.min(order.len()).max(1);
    let mut hits = 0usize;
    for (j, &label) in labels.iter().enumerate() {
        let votes: Vec<(usize, f64)> = order[..n]
            .iter()
            .map(|&m| (preds[m][j], weights[m]))
            .collect();
        if poll_votes(&votes) == Some(label) {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// Voter order ranked by the given per-method score, descending, with the
/// fixed method order breaking ties.
fn rank_order(ranked: &RankedModels, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(ranked.entries[a].method.order_index().cmp(&ranked.entries[b].method.order_index()))
    });
    order
}

pub fn run_segmented_evaluation(
    records: &[JobRecord],
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let mut finished: Vec<&JobRecord> = records.iter().filter(|r| r.is_finished()).collect();
    let needed = config.warmup + config.segments * config.segment_size;
    if finished.len() < needed {
        return Err(EvalError::TraceTooShort {
            needed,
            got: finished.len(),
        });
    }
    // Segments are defined over submit order of finished jobs.
    finished.sort_by(|a, b| (a.submit_time, &a.job_id).cmp(&(b.submit_time, &b.job_id)));
    let finished_owned: Vec<JobRecord> = finished.iter().map(|r| (*r).clone()).collect();

    let mut segments = Vec::new();
    for seg in 0..config.segments {
        let start = config.warmup + seg * config.segment_size;
        let test_jobs = &finished_owned[start..start + config.segment_size];
        let as_of = test_jobs[0].submit_time;

        let window = assemble_window(&finished_owned, as_of, config.pipeline.window_size);
        let (train_jobs, valid_jobs) =
            split_window_relaxed(&window, config.pipeline.valid_size)?;
        let set = train_model_set(
            train_jobs,
            valid_jobs,
            as_of,
            window.len() as u64,
            &config.pipeline,
        )?;
        audit_segment(&set, test_jobs, as_of, config.strict_per_job)?;
        let valid_mode_acc = {
            let valid_set =
                encode_dataset(valid_jobs, &set.encoder).map_err(PipelineError::from)?;
            let hits = valid_set.labels.iter().filter(|&&l| l == set.mode_bin).count();
            hits as f64 / valid_set.labels.len() as f64
        };
        segments.push(score_segment(
            seg,
            &set,
            test_jobs,
            window.len(),
            valid_mode_acc,
            config,
        )?);
    }
    Ok(EvalReport {
        config: config.clone(),
        segments,
    })
}

fn audit_segment(
    set: &ModelSet,
    test_jobs: &[JobRecord],
    as_of: i64,
    strict_per_job: bool,
) -> Result<(), EvalError> {
    let violations = set.audit.violations();
    if !violations.is_empty() {
        return Err(EvalError::Leakage(format!(
            "{} window jobs finished at or after as_of {as_of}",
            violations.len()
        )));
    }
    if strict_per_job {
        for job in test_jobs {
            if let Some((id, ft)) = set
                .audit
                .jobs
                .iter()
                .find(|(_, ft)| *ft >= job.submit_time)
            {
                return Err(EvalError::Leakage(format!(
                    "window job {id} finished at {ft}, at or after submission of {}",
                    job.job_id
                )));
            }
        }
    }
    Ok(())
}

fn score_segment(
    seg: usize,
    set: &ModelSet,
    test_jobs: &[JobRecord],
    window_len: usize,
    valid_mode_acc: f64,
    config: &EvalConfig,
) -> Result<SegmentReport, EvalError> {
    let encoder = &set.encoder;
    let test_set = encode_dataset(test_jobs, encoder).map_err(PipelineError::from)?;

    let test_preds = predictions_for(&set.ranked, &test_set)?;
    let test_scores = scores_from(&set.ranked, &test_preds, &test_set.labels, set.mode_bin)?;

    // The ranking entries already carry each model's validation accuracy.
    let validation = SegmentScores {
        mode: valid_mode_acc,
        per_method: set
            .ranked
            .entries
            .iter()
            .map(|e| (e.method, e.validation_accuracy))
            .collect(),
    };

    let valid_weights: Vec<f64> = set
        .ranked
        .entries
        .iter()
        .map(|e| e.validation_accuracy)
        .collect();
    let valid_order: Vec<usize> = (0..valid_weights.len()).collect(); // already rank order

    let methods = set.ranked.len();
    let mut topn = Vec::with_capacity(methods);
    for n in 1..=methods {
        topn.push(poll_accuracy(
            &valid_order,
            &valid_weights,
            &test_preds,
            &test_set.labels,
            n,
        ));
    }

    let poll_validation = poll_accuracy(
        &valid_order,
        &valid_weights,
        &test_preds,
        &test_set.labels,
        config.pipeline.top_n,
    );
    // Hindsight bound: weights and ranking taken from test accuracy itself.
    let test_accs: Vec<f64> = test_scores.per_method.iter().map(|&(_, a)| a).collect();
    let perfect_order = rank_order(&set.ranked, &test_accs);
    let poll_perfect = poll_accuracy(
        &perfect_order,
        &test_accs,
        &test_preds,
        &test_set.labels,
        config.pipeline.top_n,
    );

    let n_poll = config.pipeline.top_n.min(methods).max(1);
    let predictions = test_jobs
        .iter()
        .enumerate()
        .map(|(j, job)| {
            let votes: Vec<(usize, f64)> = (0..n_poll)
                .map(|m| (test_preds[m][j], valid_weights[m]))
                .collect();
            JobPrediction {
                job_id: job.job_id.clone(),
                actual_bin: test_set.labels[j],
                poll_bin: poll_votes(&votes).unwrap(),
                per_method: set
                    .ranked
                    .entries
                    .iter()
                    .enumerate()
                    .map(|(m, e)| (e.method, test_preds[m][j]))
                    .collect(),
            }
        })
        .collect();

    Ok(SegmentReport {
        segment: seg,
        as_of: set.audit.as_of,
        window_len,
        validation,
        test: test_scores,
        topn,
        poll_validation_weights: poll_validation,
        poll_perfect_weights: poll_perfect,
        audit: set.audit.clone(),
        predictions,
    })
}

/// Per-segment poll accuracy as the number of voters grows: one row per
/// segment, entries for n = 1..=methods (the last entry lets every model
/// vote).
pub fn top_n_sweep(report: &EvalReport) -> Vec<(usize, Vec<f64>)> {
    report
        .segments
        .iter()
        .map(|s| (s.segment, s.topn.clone()))
        .collect()
}

/// Per-segment (validation-weighted, hindsight-weighted) poll accuracy
/// pairs. The hindsight figure weights and ranks voters by their accuracy
/// on the test set itself, bounding what better weighting could buy.
pub fn perfect_weight_comparison(report: &EvalReport) -> Vec<(usize, f64, f64)> {
    report
        .segments
        .iter()
        .map(|s| (s.segment, s.poll_validation_weights, s.poll_perfect_weights))
        .collect()
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn scores_csv(report: &EvalReport, pick: impl Fn(&SegmentReport) -> &SegmentScores) -> String {
    let mut out = String::from("segment,mode");
    for method in Method::ALL {
        let _ = write!(out, ",{}", method.name());
    }
    out.push('\n');
    for seg in &report.segments {
        let scores = pick(seg);
        let _ = write!(out, "{},{}", seg.segment, fmt4(scores.mode));
        for method in Method::ALL {
            let _ = write!(out, ",{}", fmt4(scores.method_accuracy(method)));
        }
        out.push('\n');
    }
    out
}

fn topn_csv(report: &EvalReport) -> String {
    let methods = Method::ALL.len();
    let mut out = String::from("segment");
    for n in 1..methods {
        let _ = write!(out, ",top{n}");
    }
    out.push_str(",all\n");
    for seg in &report.segments {
        let _ = write!(out, "{}", seg.segment);
        for v in &seg.topn {
            let _ = write!(out, ",{}", fmt4(*v));
        }
        out.push('\n');
    }
    out
}

fn poll_csv(report: &EvalReport) -> String {
    let mut out = String::from("segment,mode,poll_validation,poll_perfect\n");
    for seg in &report.segments {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            seg.segment,
            fmt4(seg.test.mode),
            fmt4(seg.poll_validation_weights),
            fmt4(seg.poll_perfect_weights)
        );
    }
    out
}

fn predictions_jsonl(report: &EvalReport) -> String {
    let mut out = String::new();
    for seg in &report.segments {
        for p in &seg.predictions {
            let line = serde_json::json!({
                "segment": seg.segment,
                "job_id": p.job_id,
                "actual_bin": p.actual_bin,
                "poll_bin": p.poll_bin,
                "per_method": p.per_method
                    .iter()
                    .map(|(m, b)| (m.name(), *b))
                    .collect::<HashMap<_, _>>(),
            });
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

/// Write the report artifacts into `out_dir`: validation.csv, test.csv,
/// topn.csv, poll.csv, report.json, predictions.jsonl, audit.json.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("validation.csv"), scores_csv(report, |s| &s.validation))?;
    fs::write(out_dir.join("test.csv"), scores_csv(report, |s| &s.test))?;
    fs::write(out_dir.join("topn.csv"), topn_csv(report))?;
    fs::write(out_dir.join("poll.csv"), poll_csv(report))?;
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_vec_pretty(report).map_err(|e| {
            EvalError::Pipeline(PipelineError::StoreCorrupt(e.to_string()))
        })?,
    )?;
    fs::write(out_dir.join("predictions.jsonl"), predictions_jsonl(report))?;
    let audits: Vec<&WindowAudit> = report.segments.iter().map(|s| &s.audit).collect();
    fs::write(
        out_dir.join("audit.json"),
        serde_json::to_vec_pretty(&audits).map_err(|e| {
            EvalError::Pipeline(PipelineError::StoreCorrupt(e.to_string()))
        })?,
    )?;
    Ok(())
}
