//! Ranks trained models by validation accuracy, forms the
//! validation-weighted poll of the top-n voters, and provides the mode
//! baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurization::FeatureRow;
use crate::learners::{LearnerError, Method, TrainedModel};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64, EnsembleError> {
    if predicted.len() != actual.len() {
        return Err(EnsembleError::LengthMismatch(predicted.len(), actual.len()));
    }
    if predicted.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub method: Method,
    pub model: TrainedModel,
    pub validation_accuracy: f64,
}

/// Models ordered by validation accuracy descending; exact ties keep the
/// fixed method order (svm-1, svm-2, rforest, mlp-1, mlp-2, knn-1, knn-2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModels {
    pub entries: Vec<RankedEntry>,
}

impl RankedModels {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn accuracy_of(&self, method: Method) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.method == method)
            .map(|e| e.validation_accuracy)
    }
}

pub fn rank_models(models: Vec<(Method, TrainedModel, f64)>) -> Result<RankedModels, EnsembleError> {
    if models.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let mut entries: Vec<RankedEntry> = models
        .into_iter()
        .map(|(method, model, validation_accuracy)| RankedEntry {
            method,
            model,
            validation_accuracy,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.validation_accuracy
            .partial_cmp(&a.validation_accuracy)
            .unwrap()
            .then(a.method.order_index().cmp(&b.method.order_index()))
    });
    Ok(RankedModels { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PollConfig {
    pub top_n: usize,
}

impl Default for PollConfig {
    fn default() -> Self {
        PollConfig { top_n: 4 }
    }
}

/// Resolve a weighted vote. `votes` is ordered best rank first; each voter
/// contributes its weight to its bin. Winner is the bin with the maximal
/// summed weight; a weight-sum tie goes to the tied bin voted by the
/// highest-ranked voter.
pub fn poll_votes(votes: &[(usize, f64)]) -> Option<usize> {
    if votes.is_empty() {
        return None;
    }
    let mut sums: Vec<(usize, f64)> = Vec::new(); // (bin, weight sum), bin-sorted
    for &(bin, weight) in votes {
        match sums.binary_search_by_key(&bin, |&(b, _)| b) {
            Ok(pos) => sums[pos].1 += weight,
            Err(pos) => sums.insert(pos, (bin, weight)),
        }
    }
    let max = sums.iter().map(|&(_, w)| w).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = sums
        .iter()
        .filter(|&&(_, w)| w == max)
        .map(|&(b, _)| b)
        .collect();
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    votes
        .iter()
        .map(|&(bin, _)| bin)
        .find(|bin| tied.contains(bin))
}

/// Poll the top-n ranked models on one encoded row. Each voter's weight is
/// its stored validation accuracy.
pub fn weighted_poll(
    ranked: &RankedModels,
    config: &PollConfig,
    row: &FeatureRow,
) -> Result<usize, EnsembleError> {
    if ranked.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let n = config.top_n.min(ranked.len()).max(1);
    let votes: Vec<(usize, f64)> = ranked.entries[..n]
        .iter()
        .map(|e| Ok((e.model.predict(row)?, e.validation_accuracy)))
        .collect::<Result<_, LearnerError>>()?;
    Ok(poll_votes(&votes).expect("n >= 1 voters"))
}

/// Most frequent bin of the training labels; frequency ties go to the
/// lowest bin index.
pub fn mode_baseline(training_labels: &[usize]) -> Result<usize, EnsembleError> {
    if training_labels.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &l in training_labels {
        match counts.binary_search_by_key(&l, |&(b, _)| b) {
            Ok(pos) => counts[pos].1 += 1,
            Err(pos) => counts.insert(pos, (l, 1)),
        }
    }
    let mut best = counts[0];
    for &(bin, count) in &counts[1..] {
        if count > best.1 {
            best = (bin, count);
        }
    }
    Ok(best.0)
}
