//! Lifecycle orchestration: sliding training window over finished jobs,
//! temporal 9,000/1,000 split, retraining every 5,000 finished jobs, model
//! persistence with atomic snapshot swap, and the prediction entry point
//! with its cold-start fallback tiers.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{
    accuracy, mode_baseline, rank_models, weighted_poll, PollConfig, RankedModels,
};
use crate::featurization::{
    bin_to_request_mib, encode_dataset, encode_job, fit_encoder, EncoderSnapshot,
    FeatureSelection, DEFAULT_CARDINALITY_CAP,
};
use crate::learners::{self, GridProfile, LearnerSpec, Method, TrainedModel};
use crate::workload::{EventKind, JobRecord};

pub const SCHEMA_VERSION: u32 = 1;
pub const CV_FOLDS: usize = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("window too short: {0} jobs")]
    ShortWindow(usize),
    #[error("model store corrupt: {0}")]
    StoreCorrupt(String),
    #[error("store schema version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model store not found at {0}")]
    NotFound(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Feature(#[from] crate::featurization::FeatureError),
    #[error(transparent)]
    Learner(#[from] crate::learners::LearnerError),
    #[error(transparent)]
    Ensemble(#[from] crate::ensemble::EnsembleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window_size: usize,
    pub train_size: usize,
    pub valid_size: usize,
    pub retrain_every: usize,
    pub bin_size_mib: u64,
    pub max_bin: usize,
    pub top_n: usize,
    pub seed: u64,
    pub grid_profile: GridProfile,
    pub enable_lbfgs: bool,
    pub features: FeatureSelection,
    pub default_bin: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_size: 10_000,
            train_size: 9_000,
            valid_size: 1_000,
            retrain_every: 5_000,
            bin_size_mib: 512,
            max_bin: 256,
            top_n: 4,
            seed: 0,
            grid_profile: GridProfile::Fast,
            enable_lbfgs: false,
            features: FeatureSelection::default(),
            default_bin: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.train_size + self.valid_size != self.window_size {
            return Err(PipelineError::StoreCorrupt(format!(
                "train_size ({}) + valid_size ({}) must equal window_size ({})",
                self.train_size, self.valid_size, self.window_size
            )));
        }
        if self.window_size == 0 || self.retrain_every == 0 || self.top_n == 0 {
            return Err(PipelineError::StoreCorrupt(
                "window_size, retrain_every and top_n must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<PipelineConfig, PipelineError> {
        let config: PipelineConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::StoreCorrupt(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: &Path) -> Result<PipelineConfig, PipelineError> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

/// Introspection hook for temporal-leakage audits: which jobs made up the
/// training window and when each finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAudit {
    pub as_of: i64,
    pub jobs: Vec<(String, i64)>,
}

impl WindowAudit {
    /// Job ids whose finish_time violates the availability rule
    /// (finish_time >= as_of must never appear in a training window).
    pub fn violations(&self) -> Vec<&str> {
        self.jobs
            .iter()
            .filter(|(_, ft)| *ft >= self.as_of)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Everything the prediction path needs, frozen at one retrain instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub schema_version: u32,
    pub encoder: EncoderSnapshot,
    pub ranked: RankedModels,
    pub mode_bin: usize,
    /// Logical creation instant: the finish_time of the newest window job.
    /// Keeps stores byte-identical across reruns, unlike wall-clock time.
    pub created_at: i64,
    pub finished_consumed: u64,
    pub audit: WindowAudit,
}

/// The oldest `window_size` rule: the most recent window_size jobs with
/// finish_time strictly before `as_of`, ordered oldest to newest.
pub fn assemble_window(finished: &[JobRecord], as_of: i64, window_size: usize) -> Vec<JobRecord> {
    let mut eligible: Vec<&JobRecord> = finished
        .iter()
        .filter(|r| r.finish_time.is_some_and(|ft| ft < as_of))
        .collect();
    eligible.sort_by(|a, b| {
        (a.finish_time.unwrap(), a.job_id.as_str())
            .cmp(&(b.finish_time.unwrap(), b.job_id.as_str()))
    });
    let skip = eligible.len().saturating_sub(window_size);
    eligible[skip..].iter().map(|r| (*r).clone()).collect()
}

/// Temporal split: oldest `train_size` jobs train, newest `valid_size`
/// validate.
pub fn split_window(
    window: &[JobRecord],
    train_size: usize,
    valid_size: usize,
) -> Result<(&[JobRecord], &[JobRecord]), PipelineError> {
    if window.len() != train_size + valid_size {
        return Err(PipelineError::ShortWindow(window.len()));
    }
    Ok((&window[..train_size], &window[train_size..]))
}

/// Split a possibly short window: the newest `valid_size` jobs validate,
/// everything older trains. Used by the evaluation replay, where early
/// segments can see slightly fewer than window_size finished jobs because
/// warmup jobs are still running at the segment boundary.
pub fn split_window_relaxed(
    window: &[JobRecord],
    valid_size: usize,
) -> Result<(&[JobRecord], &[JobRecord]), PipelineError> {
    if window.len() < 2 * valid_size {
        return Err(PipelineError::ShortWindow(window.len()));
    }
    let train_size = window.len() - valid_size;
    Ok((&window[..train_size], &window[train_size..]))
}

/// Fit the encoder and all seven models on a (train, validation) split and
/// rank them by validation accuracy.
pub fn train_model_set(
    train_jobs: &[JobRecord],
    valid_jobs: &[JobRecord],
    as_of: i64,
    finished_consumed: u64,
    config: &PipelineConfig,
) -> Result<ModelSet, PipelineError> {
    let encoder = fit_encoder(
        train_jobs,
        &config.features,
        config.bin_size_mib,
        config.max_bin,
        DEFAULT_CARDINALITY_CAP,
    )?;
    let train_set = encode_dataset(train_jobs, &encoder)?;
    let valid_set = encode_dataset(valid_jobs, &encoder)?;

    let fitted: Vec<(Method, TrainedModel, f64)> = Method::ALL
        .par_iter()
        .map(|&method| {
            let spec: LearnerSpec = match LearnerSpec::fixed(method) {
                Some(spec) => spec,
                None => learners::grid_search(
                    method,
                    &train_set,
                    CV_FOLDS,
                    config.seed,
                    config.grid_profile,
                    config.enable_lbfgs,
                )?,
            };
            let model = learners::train(&spec, &train_set, config.seed)?;
            let predictions: Vec<usize> = valid_set
                .rows
                .iter()
                .map(|row| model.predict(row))
                .collect::<Result<_, _>>()?;
            let acc = accuracy(&predictions, &valid_set.labels)
                .map_err(|_| crate::learners::LearnerError::EmptyTrainingSet)?;
            Ok((method, model, acc))
        })
        .collect::<Result<_, PipelineError>>()?;

    let ranked = rank_models(fitted)?;
    let mode_bin = mode_baseline(&train_set.labels)?;
    let audit = WindowAudit {
        as_of,
        jobs: train_jobs
            .iter()
            .chain(valid_jobs)
            .map(|r| (r.job_id.clone(), r.finish_time.unwrap()))
            .collect(),
    };
    let created_at = audit.jobs.iter().map(|&(_, ft)| ft).max().unwrap_or(0);
    Ok(ModelSet {
        schema_version: SCHEMA_VERSION,
        encoder,
        ranked,
        mode_bin,
        created_at,
        finished_consumed,
        audit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Model,
    Mode,
    Default,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::Model => "model",
            Tier::Mode => "mode",
            Tier::Default => "default",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteBreakdown {
    pub method: Method,
    pub bin: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bin: usize,
    pub request_mib: f64,
    pub tier: Tier,
    pub votes: Vec<VoteBreakdown>,
}

#[derive(Debug, Default)]
pub struct PipelineState {
    /// Finished jobs, sorted by finish_time.
    pub finished: Vec<JobRecord>,
    pub since_last_train: usize,
    pub model_set: Option<ModelSet>,
}

#[derive(Debug, PartialEq)]
pub enum RetrainOutcome {
    Unchanged,
    Retrained,
}

impl PipelineState {
    pub fn push_finished(&mut self, job: JobRecord) {
        debug_assert!(job.is_finished());
        let pos = self
            .finished
            .partition_point(|r| r.finish_time <= job.finish_time);
        self.finished.insert(pos, job);
        self.since_last_train += 1;
    }

    /// Retrain when `retrain_every` new finished jobs have accumulated and
    /// a full window exists. The first-ever train fires as soon as a full
    /// window exists.
    pub fn retrain_if_due(
        &mut self,
        as_of: i64,
        config: &PipelineConfig,
    ) -> Result<RetrainOutcome, PipelineError> {
        let due = if self.model_set.is_none() {
            true
        } else {
            self.since_last_train >= config.retrain_every
        };
        if !due {
            return Ok(RetrainOutcome::Unchanged);
        }
        let window = assemble_window(&self.finished, as_of, config.window_size);
        if window.len() < config.window_size {
            return Ok(RetrainOutcome::Unchanged);
        }
        let (train_jobs, valid_jobs) =
            split_window(&window, config.train_size, config.valid_size)?;
        let set = train_model_set(
            train_jobs,
            valid_jobs,
            as_of,
            self.finished.len() as u64,
            config,
        )?;
        self.model_set = Some(set);
        self.since_last_train = 0;
        Ok(RetrainOutcome::Retrained)
    }

    /// Prediction always answers: model poll, then global mode of finished
    /// labels, then the configured default bin.
    pub fn predict_job(
        &self,
        job: &JobRecord,
        config: &PipelineConfig,
    ) -> Result<Prediction, PipelineError> {
        if let Some(set) = &self.model_set {
            return predict_with_model_set(set, job, config.top_n);
        }
        if !self.finished.is_empty() {
            let labels: Vec<usize> = self
                .finished
                .iter()
                .map(|r| {
                    crate::featurization::memory_to_bin(
                        r.max_mem_mib.unwrap(),
                        config.bin_size_mib,
                        config.max_bin,
                    )
                })
                .collect();
            let bin = mode_baseline(&labels)?;
            return Ok(Prediction {
                bin,
                request_mib: bin_to_request_mib(bin, config.bin_size_mib),
                tier: Tier::Mode,
                votes: Vec::new(),
            });
        }
        Ok(Prediction {
            bin: config.default_bin,
            request_mib: bin_to_request_mib(config.default_bin, config.bin_size_mib),
            tier: Tier::Default,
            votes: Vec::new(),
        })
    }
}

pub fn predict_with_model_set(
    set: &ModelSet,
    job: &JobRecord,
    top_n: usize,
) -> Result<Prediction, PipelineError> {
    let row = encode_job(job, &set.encoder);
    let poll = PollConfig { top_n };
    let bin = weighted_poll(&set.ranked, &poll, &row)?;
    let n = top_n.min(set.ranked.len()).max(1);
    let votes = set.ranked.entries[..n]
        .iter()
        .map(|e| {
            Ok(VoteBreakdown {
                method: e.method,
                bin: e.model.predict(&row)?,
                weight: e.validation_accuracy,
            })
        })
        .collect::<Result<_, crate::learners::LearnerError>>()?;
    Ok(Prediction {
        bin,
        request_mib: bin_to_request_mib(bin, set.encoder.bin_size_mib),
        tier: Tier::Model,
        votes,
    })
}

// ---------------------------------------------------------------------------
// Persistence: a directory with a manifest plus one JSON file per model and
// one for the encoder. Every file is written to a .tmp sibling and renamed;
// the manifest is swapped last, so a reader keyed off the manifest never
// observes a partial store.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreManifest {
    schema_version: u32,
    created_at: i64,
    finished_consumed: u64,
    mode_bin: usize,
    /// method name -> (file, validation accuracy), in rank order.
    ranking: Vec<(String, String, f64)>,
    encoder_file: String,
    audit_file: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn persist_model_set(set: &ModelSet, store_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(store_dir)?;
    let encoder_file = "encoder.json".to_string();
    write_atomic(
        &store_dir.join(&encoder_file),
        &serde_json::to_vec_pretty(&set.encoder)
            .map_err(|e| PipelineError::StoreCorrupt(e.to_string()))?,
    )?;
    let audit_file = "window_audit.json".to_string();
    write_atomic(
        &store_dir.join(&audit_file),
        &serde_json::to_vec_pretty(&set.audit)
            .map_err(|e| PipelineError::StoreCorrupt(e.to_string()))?,
    )?;

    let mut ranking = Vec::new();
    for entry in &set.ranked.entries {
        let file = format!("model-{}.json", entry.method.name());
        write_atomic(
            &store_dir.join(&file),
            &serde_json::to_vec_pretty(&entry.model)
                .map_err(|e| PipelineError::StoreCorrupt(e.to_string()))?,
        )?;
        ranking.push((
            entry.method.name().to_string(),
            file,
            entry.validation_accuracy,
        ));
    }

    let manifest = StoreManifest {
        schema_version: set.schema_version,
        created_at: set.created_at,
        finished_consumed: set.finished_consumed,
        mode_bin: set.mode_bin,
        ranking,
        encoder_file,
        audit_file,
    };
    write_atomic(
        &store_dir.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest)
            .map_err(|e| PipelineError::StoreCorrupt(e.to_string()))?,
    )?;
    Ok(())
}

/// Parse a manifest document. Split out so untrusted manifest bytes can be
/// exercised directly (see the fuzz targets).
pub fn parse_manifest_bytes(bytes: &[u8]) -> Result<(), String> {
    let _: StoreManifest = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    Ok(())
}

pub fn load_model_set(store_dir: &Path) -> Result<ModelSet, PipelineError> {
    let manifest_path = store_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(PipelineError::NotFound(store_dir.to_path_buf()));
    }
    let manifest: StoreManifest = serde_json::from_slice(&fs::read(&manifest_path)?)
        .map_err(|e| PipelineError::StoreCorrupt(format!("manifest: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(PipelineError::VersionMismatch {
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let encoder: EncoderSnapshot =
        serde_json::from_slice(&fs::read(store_dir.join(&manifest.encoder_file))?)
            .map_err(|e| PipelineError::StoreCorrupt(format!("encoder: {e}")))?;
    let audit: WindowAudit =
        serde_json::from_slice(&fs::read(store_dir.join(&manifest.audit_file))?)
            .map_err(|e| PipelineError::StoreCorrupt(format!("audit: {e}")))?;

    let name_to_method: HashMap<&str, Method> =
        Method::ALL.iter().map(|m| (m.name(), *m)).collect();
    let mut entries = Vec::new();
    for (name, file, acc) in &manifest.ranking {
        let method = *name_to_method
            .get(name.as_str())
            .ok_or_else(|| PipelineError::StoreCorrupt(format!("unknown method {name}")))?;
        let model: TrainedModel = serde_json::from_slice(&fs::read(store_dir.join(file))?)
            .map_err(|e| PipelineError::StoreCorrupt(format!("{file}: {e}")))?;
        entries.push(crate::ensemble::RankedEntry {
            method,
            model,
            validation_accuracy: *acc,
        });
    }
    // Ranking consistency: stored order must match accuracy-desc with the
    // fixed method tie order.
    let consistent = entries.windows(2).all(|w| {
        w[0].validation_accuracy > w[1].validation_accuracy
            || (w[0].validation_accuracy == w[1].validation_accuracy
                && w[0].method.order_index() < w[1].method.order_index())
    });
    if !consistent {
        return Err(PipelineError::StoreCorrupt(
            "stored ranking is not sorted by validation accuracy".into(),
        ));
    }
    Ok(ModelSet {
        schema_version: manifest.schema_version,
        encoder,
        ranked: RankedModels { entries },
        mode_bin: manifest.mode_bin,
        created_at: manifest.created_at,
        finished_consumed: manifest.finished_consumed,
        audit,
    })
}

// ---------------------------------------------------------------------------
// Event replay: drives the pipeline over a trace's event stream, serving
// predictions at submissions and checking the retrain cadence at finishes.
// The replay ends at the last submission; jobs still running after it never
// feed a retrain, mirroring an operational deployment that exists to serve
// submissions.
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ReplayResult {
    /// Finished-job counts at which a retrain fired, in order.
    pub retrain_at: Vec<u64>,
    pub predictions: Vec<(String, Prediction)>,
}

pub fn replay_trace(
    records: &[JobRecord],
    config: &PipelineConfig,
    predict_each: bool,
) -> Result<ReplayResult, PipelineError> {
    let by_id: HashMap<&str, &JobRecord> =
        records.iter().map(|r| (r.job_id.as_str(), r)).collect();
    let events = crate::workload::event_stream(records);
    let last_submit_idx = events
        .iter()
        .rposition(|e| e.kind == EventKind::Submitted)
        .unwrap_or(0);

    let mut state = PipelineState::default();
    let mut retrain_at = Vec::new();
    let mut predictions = Vec::new();
    for event in &events[..=last_submit_idx] {
        let job = by_id[event.job_id.as_str()];
        match event.kind {
            EventKind::Finished => {
                state.push_finished(job.clone());
                // as_of just past the finish instant: the job that finished
                // "now" is usable history.
                if state.retrain_if_due(event.time + 1, config)? == RetrainOutcome::Retrained {
                    retrain_at.push(state.finished.len() as u64);
                }
            }
            EventKind::Submitted => {
                if predict_each {
                    let unlabeled = JobRecord {
                        finish_time: None,
                        max_mem_mib: None,
                        ..job.clone()
                    };
                    predictions.push((job.job_id.clone(), state.predict_job(&unlabeled, config)?));
                }
            }
        }
    }
    Ok(ReplayResult {
        retrain_at,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate_synthetic, SyntheticConfig};
    use tempfile::tempdir;

    fn finished_job(id: &str, submit: i64, finish: i64, mem: f64) -> JobRecord {
        JobRecord {
            job_id: id.to_string(),
            user: format!("u{}", submit % 3),
            group: "g".into(),
            queue: "q".into(),
            cwd: "/w".into(),
            resreq: "r".into(),
            command: format!("c{}", mem as i64 / 512),
            priority: 1,
            submit_time: submit,
            req_time: 60,
            req_procs: 1,
            finish_time: Some(finish),
            max_mem_mib: Some(mem),
        }
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            window_size: 40,
            train_size: 30,
            valid_size: 10,
            retrain_every: 20,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn window_takes_newest_and_respects_strict_cutoff() {
        let jobs: Vec<JobRecord> = (0..50)
            .map(|i| finished_job(&format!("j{i}"), i, i + 10, 100.0))
            .collect();
        let window = assemble_window(&jobs, 40, 20);
        assert_eq!(window.len(), 20);
        // finish times 10..39 eligible; newest 20 are 20..39
        assert_eq!(window.first().unwrap().finish_time, Some(20));
        assert_eq!(window.last().unwrap().finish_time, Some(39));
        // job finishing exactly at as_of is excluded
        assert!(window.iter().all(|r| r.finish_time.unwrap() < 40));
    }

    #[test]
    fn split_is_temporal() {
        let jobs: Vec<JobRecord> = (0..40)
            .map(|i| finished_job(&format!("j{i}"), i, i + 1, 100.0))
            .collect();
        let (train, valid) = split_window(&jobs, 30, 10).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(valid.len(), 10);
        let max_train = train.iter().map(|r| r.finish_time.unwrap()).max().unwrap();
        let min_valid = valid.iter().map(|r| r.finish_time.unwrap()).min().unwrap();
        assert!(max_train <= min_valid);
        assert!(matches!(
            split_window(&jobs[..39], 30, 10),
            Err(PipelineError::ShortWindow(39))
        ));
    }

    #[test]
    fn cold_start_fallbacks() {
        let config = small_config();
        let state = PipelineState::default();
        let query = JobRecord {
            finish_time: None,
            max_mem_mib: None,
            ..finished_job("q", 100, 200, 0.0)
        };
        let p = state.predict_job(&query, &config).unwrap();
        assert_eq!((p.bin, p.tier), (1, Tier::Default));
        assert_eq!(p.request_mib, 1024.0);

        let mut state = PipelineState::default();
        for i in 0..5 {
            state.push_finished(finished_job(&format!("j{i}"), i, i + 1, 700.0));
        }
        let p = state.predict_job(&query, &config).unwrap();
        assert_eq!((p.bin, p.tier), (1, Tier::Mode));
    }

    #[test]
    fn retrain_counter_threshold() {
        let config = small_config();
        let mut state = PipelineState::default();
        for i in 0..40 {
            state.push_finished(finished_job(&format!("j{i}"), i, i + 1, (i % 4) as f64 * 600.0));
        }
        // First-ever train fires as soon as a full window exists.
        assert_eq!(
            state.retrain_if_due(1_000, &config).unwrap(),
            RetrainOutcome::Retrained
        );
        assert_eq!(state.since_last_train, 0);
        // Below the cadence threshold nothing happens.
        for i in 40..59 {
            state.push_finished(finished_job(&format!("j{i}"), i, i + 1, 100.0));
        }
        assert_eq!(
            state.retrain_if_due(1_000, &config).unwrap(),
            RetrainOutcome::Unchanged
        );
        state.push_finished(finished_job("j59", 59, 60, 100.0));
        assert_eq!(
            state.retrain_if_due(1_000, &config).unwrap(),
            RetrainOutcome::Retrained
        );
    }

    #[test]
    fn retrain_waits_for_full_window() {
        let config = small_config();
        let mut state = PipelineState::default();
        for i in 0..30 {
            state.push_finished(finished_job(&format!("j{i}"), i, i + 1, 100.0));
        }
        assert_eq!(
            state.retrain_if_due(1_000, &config).unwrap(),
            RetrainOutcome::Unchanged
        );
    }

    #[test]
    fn persist_load_roundtrip_predicts_identically() {
        let trace = generate_synthetic(&SyntheticConfig {
            n_users: 5,
            n_commands: 3,
            ..SyntheticConfig::new(60, 5)
        })
        .unwrap();
        let config = small_config();
        let window = assemble_window(&trace, i64::MAX, config.window_size);
        let (train, valid) = split_window(&window, 30, 10).unwrap();
        let set = train_model_set(train, valid, i64::MAX, 60, &config).unwrap();

        let dir = tempdir().unwrap();
        persist_model_set(&set, dir.path()).unwrap();
        let loaded = load_model_set(dir.path()).unwrap();
        assert_eq!(loaded, set);
        for job in trace.iter().take(20) {
            let a = predict_with_model_set(&set, job, config.top_n).unwrap();
            let b = predict_with_model_set(&loaded, job, config.top_n).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_model_file_is_store_corrupt() {
        let trace = generate_synthetic(&SyntheticConfig {
            n_users: 4,
            n_commands: 2,
            ..SyntheticConfig::new(50, 6)
        })
        .unwrap();
        let config = small_config();
        let window = assemble_window(&trace, i64::MAX, config.window_size);
        let (train, valid) = split_window(&window, 30, 10).unwrap();
        let set = train_model_set(train, valid, i64::MAX, 50, &config).unwrap();
        let dir = tempdir().unwrap();
        persist_model_set(&set, dir.path()).unwrap();

        let victim = dir.path().join("model-rforest.json");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_model_set(dir.path()),
            Err(PipelineError::StoreCorrupt(_))
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let dir = tempdir().unwrap();
        let manifest = serde_json::json!({
            "schema_version": 2,
            "created_at": 0,
            "finished_consumed": 0,
            "mode_bin": 0,
            "ranking": [],
            "encoder_file": "encoder.json",
            "audit_file": "window_audit.json"
        });
        fs::write(
            dir.path().join("manifest.json"),
            serde_json::to_vec(&manifest).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            load_model_set(dir.path()),
            Err(PipelineError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn missing_store_is_not_found() {
        assert!(matches!(
            load_model_set(Path::new("/nonexistent/store")),
            Err(PipelineError::NotFound(_))
        ));
    }

    #[test]
    fn audit_flags_future_jobs() {
        let audit = WindowAudit {
            as_of: 100,
            jobs: vec![("ok".into(), 99), ("leak".into(), 100), ("leak2".into(), 150)],
        };
        assert_eq!(audit.violations(), vec!["leak", "leak2"]);
    }
}
