//! k nearest neighbors over the normalized design matrix, k = 5.
//!
//! knn-1 votes; vote ties go to the tied class whose nearest member is
//! closest. knn-2 predicts the inverse-distance-weighted mean of the
//! neighbors' raw peak memory and returns the observed bin whose center is
//! nearest to that value.

use serde::{Deserialize, Serialize};

use crate::featurization::EncodedDataset;

pub const WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    Vote,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub mode: KnnMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub params: KnnParams,
    pub classes: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub mem_mib: Vec<f64>,
    pub bin_size_mib: u64,
}

impl KnnModel {
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// The k nearest training rows as (distance, index), distance ties
    /// broken by training-order index.
    pub fn neighbors(&self, row: &[f64]) -> Vec<(f64, usize)> {
        let mut dists: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let sq: f64 = r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (sq.sqrt(), i)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        dists.truncate(self.params.k);
        dists
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let neighbors = self.neighbors(row);
        match self.params.mode {
            KnnMode::Vote => self.vote(&neighbors),
            KnnMode::Regression => self.regress(&neighbors),
        }
    }

    fn vote(&self, neighbors: &[(f64, usize)]) -> usize {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &(_, i) in neighbors {
            let label = self.labels[i];
            match counts.binary_search_by_key(&label, |&(l, _)| l) {
                Ok(pos) => counts[pos].1 += 1,
                Err(pos) => counts.insert(pos, (label, 1)),
            }
        }
        let max = counts.iter().map(|&(_, c)| c).max().unwrap();
        let tied: Vec<usize> = counts
            .iter()
            .filter(|&&(_, c)| c == max)
            .map(|&(l, _)| l)
            .collect();
        if tied.len() == 1 {
            return tied[0];
        }
        // Tie: the tied class whose nearest member is closest wins.
        // Neighbors are distance-sorted, so the first hit decides.
        for &(_, i) in neighbors {
            if tied.contains(&self.labels[i]) {
                return self.labels[i];
            }
        }
        unreachable!("tied classes come from the neighbor list")
    }

    fn regress(&self, neighbors: &[(f64, usize)]) -> usize {
        let mut wsum = 0.0;
        let mut acc = 0.0;
        for &(d, i) in neighbors {
            let w = 1.0 / (d + WEIGHT_EPS);
            wsum += w;
            acc += w * self.mem_mib[i];
        }
        let predicted = acc / wsum;
        // Observed bin with the nearest center; ties to the lower bin.
        let size = self.bin_size_mib as f64;
        let mut best = self.classes[0];
        let mut best_err = f64::INFINITY;
        for &bin in &self.classes {
            let center = (bin as f64 + 0.5) * size;
            let err = (predicted - center).abs();
            if err < best_err {
                best_err = err;
                best = bin;
            }
        }
        best
    }
}

pub fn train(data: &EncodedDataset, params: &KnnParams) -> KnnModel {
    KnnModel {
        params: *params,
        classes: data.distinct_labels(),
        rows: data.rows.iter().map(|r| r.scaled.clone()).collect(),
        labels: data.labels.clone(),
        mem_mib: data.mem_mib.clone(),
        bin_size_mib: 512,
    }
}

pub fn train_with_bin_size(data: &EncodedDataset, params: &KnnParams, bin_size_mib: u64) -> KnnModel {
    let mut model = train(data, params);
    model.bin_size_mib = bin_size_mib;
    model
}
