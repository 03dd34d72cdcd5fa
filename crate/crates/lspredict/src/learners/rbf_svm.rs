//! One-vs-all RBF-kernel SVM trained by kernelized stochastic subgradient
//! descent in the induced space. The support set is shared across classes
//! and capped; on overflow the support with the smallest total coefficient
//! magnitude is dropped.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurization::EncodedDataset;

pub const EPOCHS: usize = 20;
pub const SUPPORT_CAP: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfSvmModel {
    pub width: usize,
    pub c: f64,
    pub gamma: f64,
    pub classes: Vec<usize>,
    pub supports: Vec<Vec<f64>>,
    /// One coefficient vector per class, aligned with `supports`.
    pub alphas: Vec<Vec<f64>>,
}

impl RbfSvmModel {
    fn kernel_row(&self, row: &[f64]) -> Vec<f64> {
        self.supports
            .iter()
            .map(|s| {
                let sq: f64 = s.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * sq).exp()
            })
            .collect()
    }

    pub fn decision_values(&self, row: &[f64]) -> Vec<f64> {
        let k = self.kernel_row(row);
        self.alphas
            .iter()
            .map(|a| a.iter().zip(&k).map(|(ai, ki)| ai * ki).sum())
            .collect()
    }

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

struct SupportSet {
    rows: Vec<Vec<f64>>,
    /// alphas[class][support], stored divided by `scale`.
    alphas: Vec<Vec<f64>>,
    /// Which training index each support came from, so repeat visits reuse
    /// the same slot.
    source: Vec<usize>,
    scale: f64,
}

impl SupportSet {
    fn slot_for(&mut self, train_idx: usize, row: &[f64]) -> usize {
        if let Some(pos) = self.source.iter().position(|&s| s == train_idx) {
            return pos;
        }
        if self.rows.len() >= SUPPORT_CAP {
            let evict = self.weakest();
            self.rows[evict] = row.to_vec();
            self.source[evict] = train_idx;
            for a in &mut self.alphas {
                a[evict] = 0.0;
            }
            return evict;
        }
        self.rows.push(row.to_vec());
        self.source.push(train_idx);
        for a in &mut self.alphas {
            a.push(0.0);
        }
        self.rows.len() - 1
    }

    fn weakest(&self) -> usize {
        let mut best = 0usize;
        let mut best_mag = f64::INFINITY;
        for s in 0..self.rows.len() {
            let mag: f64 = self.alphas.iter().map(|a| a[s].abs()).sum();
            if mag < best_mag {
                best_mag = mag;
                best = s;
            }
        }
        best
    }

    fn renormalize(&mut self) {
        for a in &mut self.alphas {
            for v in a.iter_mut() {
                *v *= self.scale;
            }
        }
        self.scale = 1.0;
    }
}

pub fn train(data: &EncodedDataset, c: f64, gamma: f64, seed: u64) -> RbfSvmModel {
    let n = data.len();
    let width = data.width();
    let classes = data.distinct_labels();
    let lambda = 1.0 / (c * n as f64);

    let mut set = SupportSet {
        rows: Vec::new(),
        alphas: vec![Vec::new(); classes.len()],
        source: Vec::new(),
        scale: 1.0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut t = 0u64;
    for _ in 0..EPOCHS {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &data.rows[i].scaled;
            let k: Vec<f64> = set
                .rows
                .iter()
                .map(|s| {
                    let sq: f64 = s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-gamma * sq).exp()
                })
                .collect();
            let decay = 1.0 - eta * lambda;
            set.scale *= decay;
            if set.scale == 0.0 {
                // t == 1: the step annihilates the accumulated vector.
                for a in &mut set.alphas {
                    a.iter_mut().for_each(|v| *v = 0.0);
                }
                set.scale = 1.0;
            }
            let mut slot = None;
            for (cls_idx, &class) in classes.iter().enumerate() {
                let y = if data.labels[i] == class { 1.0 } else { -1.0 };
                let decision: f64 = set.scale
                    * set.alphas[cls_idx]
                        .iter()
                        .zip(&k)
                        .map(|(a, ki)| a * ki)
                        .sum::<f64>();
                if y * decision < 1.0 {
                    let s = *slot.get_or_insert_with(|| set.slot_for(i, x));
                    set.alphas[cls_idx][s] += eta * y / set.scale;
                }
            }
            if set.scale < 1e-9 {
                set.renormalize();
            }
        }
    }
    set.renormalize();

    // Prune supports that ended with all-zero coefficients.
    let keep: Vec<usize> = (0..set.rows.len())
        .filter(|&s| set.alphas.iter().any(|a| a[s] != 0.0))
        .collect();
    let supports: Vec<Vec<f64>> = keep.iter().map(|&s| set.rows[s].clone()).collect();
    let alphas: Vec<Vec<f64>> = set
        .alphas
        .iter()
        .map(|a| keep.iter().map(|&s| a[s]).collect())
        .collect();

    RbfSvmModel {
        width,
        c,
        gamma,
        classes,
        supports,
        alphas,
    }
}
