//! The seven prediction methods behind one train/predict contract:
//! svm-1, svm-2, rforest, mlp-1, mlp-2, knn-1, knn-2.
//!
//! svm-2 and mlp-2 are grid methods: their hyperparameters are resolved by
//! cross-validated search before the final fit. All fits are deterministic
//! functions of (spec, data, seed).

pub mod forest;
pub mod knn;
pub mod linear_svm;
pub mod mlp;
pub mod rbf_svm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurization::{EncodedDataset, FeatureRow};

pub use forest::{ForestModel, ForestParams};
pub use knn::{KnnMode, KnnModel, KnnParams};
pub use linear_svm::LinearSvmModel;
pub use mlp::{LrSchedule, MlpOptimizer, MlpParams, MlpModel, Network};
pub use rbf_svm::RbfSvmModel;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("partitions do not form a partition of the parent labels")]
    NotAPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "svm-1")]
    Svm1,
    #[serde(rename = "svm-2")]
    Svm2,
    #[serde(rename = "rforest")]
    RForest,
    #[serde(rename = "mlp-1")]
    Mlp1,
    #[serde(rename = "mlp-2")]
    Mlp2,
    #[serde(rename = "knn-1")]
    Knn1,
    #[serde(rename = "knn-2")]
    Knn2,
}

impl Method {
    /// Fixed method order; rank ties resolve by position in this list.
    pub const ALL: [Method; 7] = [
        Method::Svm1,
        Method::Svm2,
        Method::RForest,
        Method::Mlp1,
        Method::Mlp2,
        Method::Knn1,
        Method::Knn2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Svm1 => "svm-1",
            Method::Svm2 => "svm-2",
            Method::RForest => "rforest",
            Method::Mlp1 => "mlp-1",
            Method::Mlp2 => "mlp-2",
            Method::Knn1 => "knn-1",
            Method::Knn2 => "knn-2",
        }
    }

    pub fn order_index(&self) -> usize {
        Method::ALL.iter().position(|m| m == self).unwrap()
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid size profile: `Full` enumerates the complete search spaces, `Fast`
/// a one-or-few candidate subset for desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GridProfile {
    Full,
    #[default]
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SvmKernel {
    Linear { c: f64 },
    Rbf { c: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MethodParams {
    Svm(SvmKernel),
    Forest(ForestParams),
    Mlp(MlpParams),
    Knn(KnnParams),
}

/// A method together with resolved hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub method: Method,
    pub params: MethodParams,
}

impl LearnerSpec {
    /// Spec for the non-grid methods (svm-1, rforest, mlp-1, knn-1, knn-2).
    /// Grid methods must go through [`grid_search`] first.
    pub fn fixed(method: Method) -> Option<LearnerSpec> {
        let params = match method {
            Method::Svm1 => MethodParams::Svm(SvmKernel::Linear { c: 0.01 }),
            Method::RForest => MethodParams::Forest(ForestParams::default()),
            Method::Mlp1 => MethodParams::Mlp(MlpParams::mlp1()),
            Method::Knn1 => MethodParams::Knn(KnnParams {
                k: 5,
                mode: KnnMode::Vote,
            }),
            Method::Knn2 => MethodParams::Knn(KnnParams {
                k: 5,
                mode: KnnMode::Regression,
            }),
            Method::Svm2 | Method::Mlp2 => return None,
        };
        Some(LearnerSpec { method, params })
    }
}

/// svm-2 search space: 4 linear + 4x2 RBF candidates under `Full`,
/// enumerated linear-first in the written order.
pub fn svm2_grid(profile: GridProfile) -> Vec<SvmKernel> {
    match profile {
        GridProfile::Full => {
            let mut grid = Vec::new();
            for &c in &[0.1, 1.0, 10.0, 100.0] {
                grid.push(SvmKernel::Linear { c });
            }
            for &c in &[0.1, 1.0, 10.0, 100.0] {
                for &gamma in &[1e-3, 1e-4] {
                    grid.push(SvmKernel::Rbf { c, gamma });
                }
            }
            grid
        }
        GridProfile::Fast => vec![
            SvmKernel::Linear { c: 1.0 },
            SvmKernel::Linear { c: 100.0 },
            SvmKernel::Rbf { c: 1.0, gamma: 1e-3 },
        ],
    }
}

/// mlp-2 search space: layers x optimizer x lr-schedule x shuffle x alpha.
/// L-BFGS joins the optimizer axis only when `enable_lbfgs` is set.
pub fn mlp2_grid(profile: GridProfile, enable_lbfgs: bool) -> Vec<MlpParams> {
    match profile {
        GridProfile::Full => {
            let layer_options: [&[usize]; 3] = [&[256, 128, 64, 32], &[128, 64, 32], &[256, 64, 32]];
            let mut optimizers = vec![MlpOptimizer::SgdNesterov, MlpOptimizer::Adam];
            if enable_lbfgs {
                optimizers.push(MlpOptimizer::Lbfgs);
            }
            let mut grid = Vec::new();
            for layers in layer_options {
                for &optimizer in &optimizers {
                    for schedule in [LrSchedule::Constant, LrSchedule::InverseScaling] {
                        for shuffle in [true, false] {
                            for alpha in [0.01, 0.001, 0.0001] {
                                grid.push(MlpParams::mlp2(
                                    layers.to_vec(),
                                    optimizer,
                                    schedule,
                                    shuffle,
                                    alpha,
                                ));
                            }
                        }
                    }
                }
            }
            grid
        }
        GridProfile::Fast => vec![MlpParams::mlp2(
            vec![128, 64, 32],
            MlpOptimizer::Adam,
            LrSchedule::Constant,
            true,
            0.001,
        )],
    }
}

/// A fitted model. Every variant predicts only bins observed in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    /// Degenerate single-class training set: constant predictor.
    Constant { width: usize, class: usize },
    LinearSvm(LinearSvmModel),
    RbfSvm(RbfSvmModel),
    Forest(ForestModel),
    Mlp(MlpModel),
    Knn(KnnModel),
}

impl TrainedModel {
    pub fn width(&self) -> usize {
        match self {
            TrainedModel::Constant { width, .. } => *width,
            TrainedModel::LinearSvm(m) => m.width,
            TrainedModel::RbfSvm(m) => m.width,
            TrainedModel::Forest(m) => m.width,
            TrainedModel::Mlp(m) => m.width(),
            TrainedModel::Knn(m) => m.width(),
        }
    }

    pub fn classes(&self) -> Vec<usize> {
        match self {
            TrainedModel::Constant { class, .. } => vec![*class],
            TrainedModel::LinearSvm(m) => m.classes.clone(),
            TrainedModel::RbfSvm(m) => m.classes.clone(),
            TrainedModel::Forest(m) => m.classes.clone(),
            TrainedModel::Mlp(m) => m.classes.clone(),
            TrainedModel::Knn(m) => m.classes.clone(),
        }
    }

    pub fn predict(&self, row: &FeatureRow) -> Result<usize, LearnerError> {
        let got = row.scaled.len();
        let expected = self.width();
        if got != expected {
            return Err(LearnerError::WidthMismatch { expected, got });
        }
        Ok(match self {
            TrainedModel::Constant { class, .. } => *class,
            TrainedModel::LinearSvm(m) => m.predict(&row.scaled),
            TrainedModel::RbfSvm(m) => m.predict(&row.scaled),
            TrainedModel::Forest(m) => m.predict(&row.raw),
            TrainedModel::Mlp(m) => m.predict(&row.scaled),
            TrainedModel::Knn(m) => m.predict(&row.scaled),
        })
    }
}

/// Train one method on an encoded dataset.
pub fn train(
    spec: &LearnerSpec,
    train_set: &EncodedDataset,
    seed: u64,
) -> Result<TrainedModel, LearnerError> {
    if train_set.is_empty() {
        return Err(LearnerError::EmptyTrainingSet);
    }
    let classes = train_set.distinct_labels();
    if classes.len() == 1 {
        return Ok(TrainedModel::Constant {
            width: train_set.width(),
            class: classes[0],
        });
    }
    Ok(match &spec.params {
        MethodParams::Svm(SvmKernel::Linear { c }) => {
            TrainedModel::LinearSvm(linear_svm::train(train_set, *c, seed))
        }
        MethodParams::Svm(SvmKernel::Rbf { c, gamma }) => {
            TrainedModel::RbfSvm(rbf_svm::train(train_set, *c, *gamma, seed))
        }
        MethodParams::Forest(params) => TrainedModel::Forest(forest::train(train_set, params, seed)),
        MethodParams::Mlp(params) => TrainedModel::Mlp(mlp::train(train_set, params, seed)),
        MethodParams::Knn(params) => TrainedModel::Knn(knn::train(train_set, params)),
    })
}

/// RBF kernel exp(-gamma * |x - y|^2).
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64, LearnerError> {
    if x.len() != y.len() {
        return Err(LearnerError::WidthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-gamma * sq).exp())
}

/// Shannon entropy in bits of a label multiset, with 0*log0 == 0.
pub fn entropy(labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of splitting `parent_labels` into `partitions`:
/// H(parent) - sum(|part|/|parent| * H(part)).
pub fn information_gain(
    parent_labels: &[usize],
    partitions: &[Vec<usize>],
) -> Result<f64, LearnerError> {
    let mut parent_counts = std::collections::HashMap::new();
    for &l in parent_labels {
        *parent_counts.entry(l).or_insert(0i64) += 1;
    }
    let mut part_total = 0usize;
    for part in partitions {
        part_total += part.len();
        for &l in part {
            *parent_counts.entry(l).or_insert(0) -= 1;
        }
    }
    if part_total != parent_labels.len() || parent_counts.values().any(|&c| c != 0) {
        return Err(LearnerError::NotAPartition);
    }
    let n = parent_labels.len() as f64;
    let children: f64 = partitions
        .iter()
        .map(|part| part.len() as f64 / n * entropy(part))
        .sum();
    Ok(entropy(parent_labels) - children)
}

fn fold_indices(n: usize, folds: usize) -> Vec<Vec<usize>> {
    // Round-robin by training-order index.
    let mut out = vec![Vec::new(); folds];
    for i in 0..n {
        out[i % folds].push(i);
    }
    out
}

fn subset(data: &EncodedDataset, indices: &[usize]) -> EncodedDataset {
    EncodedDataset {
        rows: indices.iter().map(|&i| data.rows[i].clone()).collect(),
        labels: indices.iter().map(|&i| data.labels[i]).collect(),
        mem_mib: indices.iter().map(|&i| data.mem_mib[i]).collect(),
        job_ids: indices.iter().map(|&i| data.job_ids[i].clone()).collect(),
    }
}

fn cv_accuracy(
    spec: &LearnerSpec,
    data: &EncodedDataset,
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<f64, LearnerError> {
    use rayon::prelude::*;
    let fold_accs: Vec<f64> = folds
        .par_iter()
        .enumerate()
        .map(|(f, hold)| {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            if train_idx.is_empty() || hold.is_empty() {
                return Ok(1.0);
            }
            let model = train(spec, &subset(data, &train_idx), seed)?;
            let mut hits = 0usize;
            for &i in hold {
                if model.predict(&data.rows[i])? == data.labels[i] {
                    hits += 1;
                }
            }
            Ok(hits as f64 / hold.len() as f64)
        })
        .collect::<Result<Vec<f64>, LearnerError>>()?;
    Ok(fold_accs.iter().sum::<f64>() / fold_accs.len() as f64)
}

/// Cross-validated grid search for svm-2 / mlp-2. Candidates are scored by
/// mean k-fold accuracy; ties resolve to the earliest candidate in the
/// fixed enumeration order.
pub fn grid_search(
    method: Method,
    train_set: &EncodedDataset,
    folds: usize,
    seed: u64,
    profile: GridProfile,
    enable_lbfgs: bool,
) -> Result<LearnerSpec, LearnerError> {
    let candidates: Vec<MethodParams> = match method {
        Method::Svm2 => svm2_grid(profile).into_iter().map(MethodParams::Svm).collect(),
        Method::Mlp2 => mlp2_grid(profile, enable_lbfgs)
            .into_iter()
            .map(MethodParams::Mlp)
            .collect(),
        other => {
            return Ok(LearnerSpec::fixed(other).expect("non-grid methods have fixed specs"));
        }
    };
    grid_search_candidates(method, candidates, train_set, folds, seed)
}

pub fn grid_search_candidates(
    method: Method,
    candidates: Vec<MethodParams>,
    train_set: &EncodedDataset,
    folds: usize,
    seed: u64,
) -> Result<LearnerSpec, LearnerError> {
    use rayon::prelude::*;
    if train_set.is_empty() || train_set.len() < folds {
        return Err(LearnerError::EmptyTrainingSet);
    }
    if candidates.len() == 1 {
        return Ok(LearnerSpec {
            method,
            params: candidates.into_iter().next().unwrap(),
        });
    }
    let folds = fold_indices(train_set.len(), folds);
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|params| {
            let spec = LearnerSpec {
                method,
                params: params.clone(),
            };
            cv_accuracy(&spec, train_set, &folds, seed)
        })
        .collect::<Result<Vec<f64>, LearnerError>>()?;
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(LearnerSpec {
        method,
        params: candidates.into_iter().nth(best).unwrap(),
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Seeded Gaussian point clouds, one per class, as an encoded dataset.
    pub fn gaussian_clouds(
        centers: &[Vec<f64>],
        labels: &[usize],
        per_class: usize,
        sigma: f64,
        seed: u64,
    ) -> EncodedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rows = Vec::new();
        let mut out_labels = Vec::new();
        let mut mem = Vec::new();
        let mut ids = Vec::new();
        for _ in 0..per_class * centers.len() {
            let k = rng.gen_range(0..centers.len());
            let point: Vec<f64> = centers[k].iter().map(|&c| c + normal.sample(&mut rng)).collect();
            rows.push(FeatureRow {
                raw: point.clone(),
                scaled: point,
            });
            out_labels.push(labels[k]);
            mem.push((labels[k] as f64 + 0.5) * 512.0);
            ids.push(format!("j{}", rows.len()));
        }
        EncodedDataset {
            rows,
            labels: out_labels,
            mem_mib: mem,
            job_ids: ids,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use testutil::gaussian_clouds;

    #[test]
    fn rbf_kernel_identities() {
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(rbf_kernel(&x, &y, 5.0).unwrap(), 1.0);
        let z = vec![4.0, 5.0, 6.0];
        assert_eq!(rbf_kernel(&x, &z, 0.0).unwrap(), 1.0);
        // |x-y|^2 = 1, gamma = 0.1 -> exp(-0.1)
        let a = vec![0.0];
        let b = vec![1.0];
        assert!((rbf_kernel(&a, &b, 0.1).unwrap() - 0.904837418035_9595).abs() < 1e-12);
        assert!(rbf_kernel(&a, &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn information_gain_pure_binary_split() {
        let parent = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let parts = vec![vec![0, 0, 0, 0], vec![1, 1, 1, 1]];
        assert!((information_gain(&parent, &parts).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn information_gain_zero_when_children_match_parent() {
        let parent = vec![0, 0, 1, 1];
        let parts = vec![vec![0, 1], vec![0, 1]];
        assert!(information_gain(&parent, &parts).unwrap().abs() < 1e-12);
    }

    // Parent {8A,4B} -> {6A}, {2A,4B}: IG = H(1/3) - 1/2 * H(1/3) = 0.45915...
    #[test]
    fn information_gain_worked_example() {
        let parent = vec![0; 8].into_iter().chain(vec![1; 4]).collect::<Vec<_>>();
        let parts = vec![vec![0; 6], vec![0, 0, 1, 1, 1, 1]];
        let ig = information_gain(&parent, &parts).unwrap();
        assert!((ig - 0.45915).abs() < 1e-5, "ig = {ig}");
    }

    #[test]
    fn information_gain_rejects_non_partition() {
        let parent = vec![0, 1];
        assert!(matches!(
            information_gain(&parent, &[vec![0]]),
            Err(LearnerError::NotAPartition)
        ));
        assert!(matches!(
            information_gain(&parent, &[vec![0], vec![0]]),
            Err(LearnerError::NotAPartition)
        ));
    }

    #[test]
    fn grid_counts_match_search_spaces() {
        assert_eq!(svm2_grid(GridProfile::Full).len(), 12);
        assert_eq!(mlp2_grid(GridProfile::Full, false).len(), 72);
        assert_eq!(mlp2_grid(GridProfile::Full, true).len(), 108);
    }

    #[test]
    fn single_class_training_yields_constant_predictor() {
        let data = gaussian_clouds(&[vec![0.0, 0.0]], &[3], 20, 1.0, 1);
        for method in Method::ALL {
            let spec = LearnerSpec::fixed(method)
                .unwrap_or_else(|| LearnerSpec::fixed(Method::Svm1).unwrap());
            let model = train(&spec, &data, 0).unwrap();
            for row in &data.rows {
                assert_eq!(model.predict(row).unwrap(), 3);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = gaussian_clouds(&[vec![0.0, 0.0], vec![8.0, 8.0]], &[1, 4], 40, 1.0, 2);
        for method in [Method::Svm1, Method::RForest, Method::Mlp1, Method::Knn1] {
            let spec = LearnerSpec::fixed(method).unwrap();
            let a = train(&spec, &data, 9).unwrap();
            let b = train(&spec, &data, 9).unwrap();
            assert_eq!(a, b, "method {method}");
        }
    }

    #[test]
    fn predictions_stay_in_observed_classes() {
        let data = gaussian_clouds(
            &[vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]],
            &[2, 5, 9],
            30,
            1.0,
            3,
        );
        let classes = data.distinct_labels();
        for method in Method::ALL {
            let spec = match LearnerSpec::fixed(method) {
                Some(s) => s,
                None => grid_search(method, &data, 3, 0, GridProfile::Fast, false).unwrap(),
            };
            let model = train(&spec, &data, 0).unwrap();
            for row in &data.rows {
                assert!(classes.contains(&model.predict(row).unwrap()));
            }
        }
    }

    #[test]
    fn grid_search_tie_returns_earliest_candidate() {
        // All candidates behave identically on a trivially constant-ish
        // dataset where every reasonable model scores the same.
        let data = gaussian_clouds(&[vec![-50.0], vec![50.0]], &[0, 1], 30, 0.1, 4);
        let spec = grid_search(Method::Svm2, &data, 3, 0, GridProfile::Full, false).unwrap();
        assert_eq!(spec.params, MethodParams::Svm(SvmKernel::Linear { c: 0.1 }));
    }

    #[test]
    fn grid_search_of_one_candidate_returns_it() {
        let data = gaussian_clouds(&[vec![0.0], vec![5.0]], &[0, 1], 10, 0.5, 5);
        let spec = grid_search_candidates(
            Method::Svm2,
            vec![MethodParams::Svm(SvmKernel::Rbf { c: 7.0, gamma: 0.5 })],
            &data,
            3,
            0,
        )
        .unwrap();
        assert_eq!(spec.params, MethodParams::Svm(SvmKernel::Rbf { c: 7.0, gamma: 0.5 }));
    }

    #[test]
    fn empty_training_set_rejected() {
        let data = EncodedDataset {
            rows: vec![],
            labels: vec![],
            mem_mib: vec![],
            job_ids: vec![],
        };
        let spec = LearnerSpec::fixed(Method::Svm1).unwrap();
        assert!(matches!(train(&spec, &data, 0), Err(LearnerError::EmptyTrainingSet)));
    }
}
