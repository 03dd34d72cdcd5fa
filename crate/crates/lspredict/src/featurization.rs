//! Turns job records into the numeric design matrix the learners consume:
//! dictionary-backed one-hot encoding for categoricals, z-score
//! normalization for numerics, and 512 MiB binning of the memory label.
//!
//! The encoder is fit on a training window and frozen into an
//! [`EncoderSnapshot`]; encoding any future job against a snapshot yields a
//! vector of exactly the snapshot's width. Unseen or rare categories land in
//! a reserved OTHER column rather than erroring.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{derive_calendar_features, JobRecord};

pub const DEFAULT_BIN_SIZE_MIB: u64 = 512;
pub const DEFAULT_MAX_BIN: usize = 256;
pub const DEFAULT_CARDINALITY_CAP: usize = 1024;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("job {0} has no label (unfinished job in a labeled set)")]
    MissingLabel(String),
    #[error("invalid feature selection: {0}")]
    InvalidSelection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatFeature {
    User,
    Group,
    Queue,
    Cwd,
    Resreq,
    Command,
}

impl CatFeature {
    pub const ALL: [CatFeature; 6] = [
        CatFeature::User,
        CatFeature::Group,
        CatFeature::Queue,
        CatFeature::Cwd,
        CatFeature::Resreq,
        CatFeature::Command,
    ];

    fn value<'a>(&self, job: &'a JobRecord) -> &'a str {
        match self {
            CatFeature::User => &job.user,
            CatFeature::Group => &job.group,
            CatFeature::Queue => &job.queue,
            CatFeature::Cwd => &job.cwd,
            CatFeature::Resreq => &job.resreq,
            CatFeature::Command => &job.command,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumFeature {
    Priority,
    SubmitTime,
    ReqTime,
    ReqProcs,
    Weekday,
    TimeSinceMidnight,
}

impl NumFeature {
    pub const ALL: [NumFeature; 6] = [
        NumFeature::Priority,
        NumFeature::SubmitTime,
        NumFeature::ReqTime,
        NumFeature::ReqProcs,
        NumFeature::Weekday,
        NumFeature::TimeSinceMidnight,
    ];

    fn value(&self, job: &JobRecord) -> f64 {
        match self {
            NumFeature::Priority => job.priority as f64,
            NumFeature::SubmitTime => job.submit_time as f64,
            NumFeature::ReqTime => job.req_time as f64,
            NumFeature::ReqProcs => job.req_procs as f64,
            NumFeature::Weekday => derive_calendar_features(job.submit_time).0 as f64,
            NumFeature::TimeSinceMidnight => derive_calendar_features(job.submit_time).1 as f64,
        }
    }
}

/// Which of the twelve features feed the predictors. Defaults to all twelve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub categorical: Vec<CatFeature>,
    pub numeric: Vec<NumFeature>,
}

impl Default for FeatureSelection {
    fn default() -> Self {
        FeatureSelection {
            categorical: CatFeature::ALL.to_vec(),
            numeric: NumFeature::ALL.to_vec(),
        }
    }
}

impl FeatureSelection {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.categorical.is_empty() && self.numeric.is_empty() {
            return Err(FeatureError::InvalidSelection(
                "at least one feature must be selected".into(),
            ));
        }
        for (i, f) in self.categorical.iter().enumerate() {
            if self.categorical[..i].contains(f) {
                return Err(FeatureError::InvalidSelection(format!(
                    "duplicate categorical feature {f:?}"
                )));
            }
        }
        for (i, f) in self.numeric.iter().enumerate() {
            if self.numeric[..i].contains(f) {
                return Err(FeatureError::InvalidSelection(format!(
                    "duplicate numeric feature {f:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Per categorical feature: dense category -> id map plus a reserved OTHER
/// id at the `len` slot. Built only from training-window jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    /// One map per categorical feature, in selection order.
    pub maps: Vec<HashMap<String, usize>>,
}

impl FeatureDictionary {
    /// Number of kept ids for a feature; the OTHER id equals this value.
    pub fn cardinality(&self, feature_idx: usize) -> usize {
        self.maps[feature_idx].len()
    }

    pub fn id_or_other(&self, feature_idx: usize, category: &str) -> usize {
        *self.maps[feature_idx]
            .get(category)
            .unwrap_or(&self.cardinality(feature_idx))
    }
}

/// Most frequent categories get dense ids (frequency descending, ties by
/// lexicographic category string); everything else maps to OTHER.
pub fn build_dictionary(
    training_jobs: &[JobRecord],
    selection: &FeatureSelection,
    cardinality_cap: usize,
) -> Result<FeatureDictionary, FeatureError> {
    if training_jobs.is_empty() {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let mut maps = Vec::with_capacity(selection.categorical.len());
    for feature in &selection.categorical {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for job in training_jobs {
            *counts.entry(feature.value(job)).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cardinality_cap);
        maps.push(
            ranked
                .into_iter()
                .enumerate()
                .map(|(id, (cat, _))| (cat.to_string(), id))
                .collect(),
        );
    }
    Ok(FeatureDictionary { maps })
}

/// Frozen encoder: dictionary, per-numeric training statistics, binning
/// parameters, and the resulting column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSnapshot {
    pub selection: FeatureSelection,
    pub dictionary: FeatureDictionary,
    /// (population mean, population std) per numeric feature, selection order.
    pub numeric_stats: Vec<(f64, f64)>,
    pub bin_size_mib: u64,
    pub max_bin: usize,
}

impl EncoderSnapshot {
    /// Total encoded width: one indicator column per kept id plus one OTHER
    /// column per categorical, then one column per numeric feature.
    pub fn width(&self) -> usize {
        let cat: usize = (0..self.selection.categorical.len())
            .map(|i| self.dictionary.cardinality(i) + 1)
            .sum();
        cat + self.selection.numeric.len()
    }
}

/// One encoded job. `scaled` carries z-scored numerics (what the SVMs, MLPs
/// and kNN consume); `raw` carries the same one-hot block with un-normalized
/// numerics (what the random forest consumes).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub scaled: Vec<f64>,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub rows: Vec<FeatureRow>,
    /// Label bin per row.
    pub labels: Vec<usize>,
    /// Raw peak memory per row (knn-2 regresses on this).
    pub mem_mib: Vec<f64>,
    pub job_ids: Vec<String>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, |r| r.scaled.len())
    }

    pub fn distinct_labels(&self) -> Vec<usize> {
        let mut labels = self.labels.clone();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

/// Half-open bins [k*size, (k+1)*size); values above the cap clamp to max_bin.
pub fn memory_to_bin(mem_mib: f64, bin_size_mib: u64, max_bin: usize) -> usize {
    let bin = (mem_mib.max(0.0) / bin_size_mib as f64).floor() as usize;
    bin.min(max_bin)
}

/// The bin's upper edge: a request at this value covers any usage in the bin.
pub fn bin_to_request_mib(bin: usize, bin_size_mib: u64) -> f64 {
    ((bin + 1) as u64 * bin_size_mib) as f64
}

/// Fit the encoder on a training window: dictionary from category
/// frequencies, population mean/std per numeric feature.
pub fn fit_encoder(
    training_jobs: &[JobRecord],
    selection: &FeatureSelection,
    bin_size_mib: u64,
    max_bin: usize,
    cardinality_cap: usize,
) -> Result<EncoderSnapshot, FeatureError> {
    selection.validate()?;
    if training_jobs.is_empty() {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let dictionary = build_dictionary(training_jobs, selection, cardinality_cap)?;
    let n = training_jobs.len() as f64;
    let numeric_stats = selection
        .numeric
        .iter()
        .map(|feature| {
            let mean = training_jobs.iter().map(|j| feature.value(j)).sum::<f64>() / n;
            let var = training_jobs
                .iter()
                .map(|j| {
                    let d = feature.value(j) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect();
    Ok(EncoderSnapshot {
        selection: selection.clone(),
        dictionary,
        numeric_stats,
        bin_size_mib,
        max_bin,
    })
}

pub fn encode_job(job: &JobRecord, snapshot: &EncoderSnapshot) -> FeatureRow {
    let width = snapshot.width();
    let mut scaled = Vec::with_capacity(width);
    let mut raw = Vec::with_capacity(width);
    for (i, feature) in snapshot.selection.categorical.iter().enumerate() {
        let card = snapshot.dictionary.cardinality(i);
        let id = snapshot.dictionary.id_or_other(i, feature.value(job));
        for slot in 0..=card {
            let v = if slot == id { 1.0 } else { 0.0 };
            scaled.push(v);
            raw.push(v);
        }
    }
    for (feature, &(mean, std)) in snapshot
        .selection
        .numeric
        .iter()
        .zip(&snapshot.numeric_stats)
    {
        let x = feature.value(job);
        raw.push(x);
        scaled.push(if std == 0.0 { 0.0 } else { (x - mean) / std });
    }
    FeatureRow { scaled, raw }
}

/// Encode a labeled set: every job must be finished.
pub fn encode_dataset(
    jobs: &[JobRecord],
    snapshot: &EncoderSnapshot,
) -> Result<EncodedDataset, FeatureError> {
    let mut rows = Vec::with_capacity(jobs.len());
    let mut labels = Vec::with_capacity(jobs.len());
    let mut mem_mib = Vec::with_capacity(jobs.len());
    let mut job_ids = Vec::with_capacity(jobs.len());
    for job in jobs {
        let mem = job
            .max_mem_mib
            .ok_or_else(|| FeatureError::MissingLabel(job.job_id.clone()))?;
        rows.push(encode_job(job, snapshot));
        labels.push(memory_to_bin(mem, snapshot.bin_size_mib, snapshot.max_bin));
        mem_mib.push(mem);
        job_ids.push(job.job_id.clone());
    }
    Ok(EncodedDataset {
        rows,
        labels,
        mem_mib,
        job_ids,
    })
}
