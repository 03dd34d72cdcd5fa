//! One-vs-all linear SVM trained by primal stochastic subgradient descent
//! on the L2-regularized hinge loss, Pegasos-style schedule with
//! lambda = 1/(C*n), 20 epochs, seeded shuffling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurization::EncodedDataset;

pub const EPOCHS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub width: usize,
    pub c: f64,
    /// Sorted observed bins; weights/biases are index-aligned.
    pub classes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LinearSvmModel {
    pub fn decision_values(&self, row: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(row).map(|(wi, xi)| wi * xi).sum::<f64>() + b)
            .collect()
    }

    /// Argmax of decision values; ties go to the lowest bin (classes are
    /// sorted ascending, strict improvement required).
    pub fn predict(&self, row: &[f64]) -> usize {
        let decisions = self.decision_values(row);
        let mut best = 0usize;
        for (i, &d) in decisions.iter().enumerate() {
            if d > decisions[best] {
                best = i;
            }
        }
        self.classes[best]
    }
}

pub fn train(data: &EncodedDataset, c: f64, seed: u64) -> LinearSvmModel {
    let n = data.len();
    let width = data.width();
    let classes = data.distinct_labels();
    let lambda = 1.0 / (c * n as f64);

    let mut weights = vec![vec![0.0f64; width]; classes.len()];
    let mut biases = vec![0.0f64; classes.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut t = 0u64;
    for _ in 0..EPOCHS {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &data.rows[i].scaled;
            let decay = 1.0 - eta * lambda;
            for (k, &class) in classes.iter().enumerate() {
                let y = if data.labels[i] == class { 1.0 } else { -1.0 };
                let w = &mut weights[k];
                let margin =
                    y * (w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + biases[k]);
                for wi in w.iter_mut() {
                    *wi *= decay;
                }
                if margin < 1.0 {
                    for (wi, xi) in w.iter_mut().zip(x) {
                        *wi += eta * y * xi;
                    }
                    biases[k] += eta * y;
                }
            }
        }
    }

    LinearSvmModel {
        width,
        c,
        classes,
        weights,
        biases,
    }
}
