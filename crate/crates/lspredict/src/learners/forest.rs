//! Random forest over the un-normalized one-hot matrix: bootstrap samples,
//! information-gain splits on ceil(sqrt(width)) random columns per node,
//! thresholds from at most 32 quantile candidates per column.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurization::EncodedDataset;

pub const MAX_DEPTH: usize = 25;
pub const MIN_SAMPLES: usize = 2;
pub const THRESHOLD_CANDIDATES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Test hook: with bootstrap off every tree sees the full training set.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 20,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { label: usize },
    Split { col: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { label } => return *label,
                Node::Split { col, threshold, left, right } => {
                    at = if row[*col] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub width: usize,
    pub classes: Vec<usize>,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Majority vote of the trees; ties go to the lowest bin.
    pub fn predict(&self, raw_row: &[f64]) -> usize {
        let mut votes: Vec<(usize, usize)> = Vec::new(); // (label, count), label-sorted
        for tree in &self.trees {
            let label = tree.predict(raw_row);
            match votes.binary_search_by_key(&label, |&(l, _)| l) {
                Ok(pos) => votes[pos].1 += 1,
                Err(pos) => votes.insert(pos, (label, 1)),
            }
        }
        let mut best = votes[0];
        for &(label, count) in &votes[1..] {
            if count > best.1 {
                best = (label, count);
            }
        }
        best.0
    }
}

fn entropy_of_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

struct TreeBuilder<'a> {
    data: &'a EncodedDataset,
    /// Dense label index per row (position in the sorted class list).
    label_idx: Vec<usize>,
    classes: Vec<usize>,
    cols_per_split: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn majority(&self, indices: &[usize]) -> usize {
        let mut counts = vec![0usize; self.classes.len()];
        for &i in indices {
            counts[self.label_idx[i]] += 1;
        }
        let mut best = 0usize;
        for (k, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    fn is_pure(&self, indices: &[usize]) -> bool {
        indices
            .windows(2)
            .all(|w| self.label_idx[w[0]] == self.label_idx[w[1]])
    }

    fn build(&mut self, indices: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        if indices.len() < MIN_SAMPLES || depth >= MAX_DEPTH || self.is_pure(&indices) {
            let label = self.majority(&indices);
            self.nodes.push(Node::Leaf { label });
            return self.nodes.len() - 1;
        }

        let width = self.data.width();
        let mut cols: Vec<usize> = (0..width).collect();
        cols.shuffle(rng);
        cols.truncate(self.cols_per_split);
        cols.sort_unstable();

        let parent_counts = {
            let mut c = vec![0usize; self.classes.len()];
            for &i in &indices {
                c[self.label_idx[i]] += 1;
            }
            c
        };
        let n = indices.len();
        let parent_entropy = entropy_of_counts(&parent_counts, n);

        let mut best: Option<(f64, usize, f64)> = None; // (gain, col, threshold)
        let mut values = Vec::with_capacity(n);
        for &col in &cols {
            values.clear();
            values.extend(indices.iter().map(|&i| self.data.rows[i].raw[col]));
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let max = *values.last().unwrap();

            let mut candidates: Vec<f64> = (1..=THRESHOLD_CANDIDATES)
                .map(|q| values[q * (n - 1) / (THRESHOLD_CANDIDATES + 1)])
                .filter(|&t| t < max)
                .collect();
            candidates.dedup();

            for &threshold in &candidates {
                let mut left_counts = vec![0usize; self.classes.len()];
                let mut left_n = 0usize;
                for &i in &indices {
                    if self.data.rows[i].raw[col] <= threshold {
                        left_counts[self.label_idx[i]] += 1;
                        left_n += 1;
                    }
                }
                if left_n == 0 || left_n == n {
                    continue;
                }
                let right_counts: Vec<usize> = parent_counts
                    .iter()
                    .zip(&left_counts)
                    .map(|(p, l)| p - l)
                    .collect();
                let right_n = n - left_n;
                let gain = parent_entropy
                    - (left_n as f64 / n as f64) * entropy_of_counts(&left_counts, left_n)
                    - (right_n as f64 / n as f64) * entropy_of_counts(&right_counts, right_n);
                if best.map_or(gain > 0.0, |(g, _, _)| gain > g) {
                    best = Some((gain, col, threshold));
                }
            }
        }

        let Some((_, col, threshold)) = best else {
            let label = self.majority(&indices);
            self.nodes.push(Node::Leaf { label });
            return self.nodes.len() - 1;
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.data.rows[i].raw[col] <= threshold);

        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { label: 0 }); // placeholder
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        self.nodes[slot] = Node::Split { col, threshold, left, right };
        slot
    }
}

fn build_tree(data: &EncodedDataset, classes: &[usize], indices: Vec<usize>, seed: u64) -> Tree {
    let label_idx = data
        .labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();
    let width = data.width();
    let cols_per_split = (width as f64).sqrt().ceil() as usize;
    let mut builder = TreeBuilder {
        data,
        label_idx,
        classes: classes.to_vec(),
        cols_per_split: cols_per_split.max(1),
        nodes: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    builder.build(indices, 0, &mut rng);
    Tree { nodes: builder.nodes }
}

pub fn train(data: &EncodedDataset, params: &ForestParams, seed: u64) -> ForestModel {
    use rayon::prelude::*;
    let n = data.len();
    let classes = data.distinct_labels();
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|tree_idx| {
            let tree_seed = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(tree_idx as u64);
            let indices = if params.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed ^ 0xb00f);
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            build_tree(data, &classes, indices, tree_seed)
        })
        .collect();
    ForestModel {
        width: data.width(),
        classes,
        trees,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurization::FeatureRow;
    use crate::learners::testutil::gaussian_clouds;

    #[test]
    fn learns_separated_clouds() {
        let data = gaussian_clouds(
            &[vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]],
            &[0, 3, 6],
            60,
            1.0,
            21,
        );
        let model = train(&data, &ForestParams::default(), 5);
        let hits = data
            .rows
            .iter()
            .zip(&data.labels)
            .filter(|(row, &l)| model.predict(&row.raw) == l)
            .count();
        assert!(hits as f64 / data.len() as f64 >= 0.98);
    }

    // Test hook: one tree without bootstrap must equal its own tree.
    #[test]
    fn single_tree_without_bootstrap_matches_tree() {
        let data = gaussian_clouds(&[vec![0.0], vec![8.0]], &[1, 2], 40, 1.0, 22);
        let params = ForestParams { n_trees: 1, bootstrap: false };
        let model = train(&data, &params, 9);
        assert_eq!(model.trees.len(), 1);
        for row in &data.rows {
            assert_eq!(model.predict(&row.raw), model.trees[0].predict(&row.raw));
        }
    }

    // Threshold splits are order-based; a positive power-of-two scale keeps
    // every comparison exact.
    #[test]
    fn scale_invariant_predictions() {
        let data = gaussian_clouds(&[vec![0.0, 1.0], vec![6.0, -2.0]], &[0, 4], 50, 1.0, 23);
        let scaled = EncodedDataset {
            rows: data
                .rows
                .iter()
                .map(|r| FeatureRow {
                    scaled: r.scaled.iter().map(|v| v * 2.0).collect(),
                    raw: r.raw.iter().map(|v| v * 2.0).collect(),
                })
                .collect(),
            labels: data.labels.clone(),
            mem_mib: data.mem_mib.clone(),
            job_ids: data.job_ids.clone(),
        };
        let model_a = train(&data, &ForestParams::default(), 3);
        let model_b = train(&scaled, &ForestParams::default(), 3);
        for (a, b) in data.rows.iter().zip(&scaled.rows) {
            assert_eq!(model_a.predict(&a.raw), model_b.predict(&b.raw));
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let data = gaussian_clouds(&[vec![0.0], vec![5.0]], &[0, 1], 30, 1.0, 24);
        let a = train(&data, &ForestParams::default(), 17);
        let b = train(&data, &ForestParams::default(), 17);
        assert_eq!(a, b);
    }
}
