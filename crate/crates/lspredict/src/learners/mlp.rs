//! Multilayer perceptron: tanh hidden layers, softmax output, analytic
//! backpropagation of (mean cross-entropy + alpha * ||w||^2). Optimizers:
//! plain SGD, SGD with Nesterov momentum, Adam, and full-batch L-BFGS.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurization::EncodedDataset;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const NESTEROV_MOMENTUM: f64 = 0.9;
pub const LBFGS_MEMORY: usize = 10;
pub const LBFGS_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlpOptimizer {
    Sgd,
    SgdNesterov,
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// lr_t = lr0 / sqrt(t), t counting updates from 1.
    InverseScaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<usize>,
    pub optimizer: MlpOptimizer,
    pub schedule: LrSchedule,
    pub shuffle: bool,
    pub alpha: f64,
    pub lr0: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl MlpParams {
    /// Fixed mlp-1 configuration: (128, 64, 32), plain SGD.
    pub fn mlp1() -> MlpParams {
        MlpParams {
            layers: vec![128, 64, 32],
            optimizer: MlpOptimizer::Sgd,
            schedule: LrSchedule::Constant,
            shuffle: true,
            alpha: 0.0001,
            lr0: 0.01,
            epochs: 50,
            batch: 32,
        }
    }

    /// One mlp-2 grid point.
    pub fn mlp2(
        layers: Vec<usize>,
        optimizer: MlpOptimizer,
        schedule: LrSchedule,
        shuffle: bool,
        alpha: f64,
    ) -> MlpParams {
        MlpParams {
            layers,
            optimizer,
            schedule,
            shuffle,
            alpha,
            lr0: 0.001,
            epochs: 50,
            batch: 32,
        }
    }
}

/// Feed-forward network stored as one flat parameter vector so that every
/// optimizer (and the finite-difference check) sees the same layout:
/// per layer, the row-major weight matrix then the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Layer widths, input first, output last.
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

struct LayerView {
    w_off: usize,
    b_off: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Network {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layers(&self) -> Vec<LayerView> {
        let mut views = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            views.push(LayerView {
                w_off: off,
                b_off: off + fan_in * fan_out,
                fan_in,
                fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        views
    }

    /// Xavier-uniform initialization, biases zero.
    pub fn random_init(sizes: Vec<usize>, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; Network::param_count(&sizes)];
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in params[off..off + fan_in * fan_out].iter_mut() {
                *p = rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Network { sizes, params }
    }

    /// Whether a flat parameter index addresses a weight (not a bias).
    pub fn is_weight(&self, idx: usize) -> bool {
        self.layers()
            .iter()
            .any(|l| idx >= l.w_off && idx < l.b_off)
    }

    /// Activations per layer: input, hidden tanh outputs, output softmax.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let views = self.layers();
        let last = views.len() - 1;
        let mut acts = Vec::with_capacity(views.len() + 1);
        acts.push(x.to_vec());
        for (li, v) in views.iter().enumerate() {
            let input = &acts[li];
            let mut out = Vec::with_capacity(v.fan_out);
            for o in 0..v.fan_out {
                let row = &self.params[v.w_off + o * v.fan_in..v.w_off + (o + 1) * v.fan_in];
                let z: f64 = row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>()
                    + self.params[v.b_off + o];
                out.push(if li == last { z } else { z.tanh() });
            }
            if li == last {
                softmax_in_place(&mut out);
            }
            acts.push(out);
        }
        acts
    }

    pub fn predict_class_index(&self, x: &[f64]) -> usize {
        let acts = self.forward(x);
        let probs = acts.last().unwrap();
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        best
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Batch loss: mean cross-entropy plus alpha * sum of squared weights
/// (biases unregularized).
pub fn mlp_loss(net: &Network, rows: &[&[f64]], targets: &[usize], alpha: f64) -> f64 {
    let mut ce = 0.0;
    for (x, &t) in rows.iter().zip(targets) {
        let acts = net.forward(x);
        let p = acts.last().unwrap()[t].max(1e-300);
        ce -= p.ln();
    }
    let mut reg = 0.0;
    for v in net.layers() {
        for i in v.w_off..v.b_off {
            reg += net.params[i] * net.params[i];
        }
    }
    ce / rows.len() as f64 + alpha * reg
}

/// Analytic gradient of [`mlp_loss`] with respect to the flat parameter
/// vector.
pub fn mlp_gradient(net: &Network, rows: &[&[f64]], targets: &[usize], alpha: f64) -> Vec<f64> {
    let views = net.layers();
    let mut grad = vec![0.0; net.params.len()];
    let scale = 1.0 / rows.len() as f64;

    for (x, &t) in rows.iter().zip(targets) {
        let acts = net.forward(x);
        // delta at the output: softmax - onehot
        let mut delta: Vec<f64> = acts.last().unwrap().clone();
        delta[t] -= 1.0;

        for (li, v) in views.iter().enumerate().rev() {
            let input = &acts[li];
            for o in 0..v.fan_out {
                let d = delta[o] * scale;
                let g_row = &mut grad[v.w_off + o * v.fan_in..v.w_off + (o + 1) * v.fan_in];
                for (g, a) in g_row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[v.b_off + o] += d;
            }
            if li > 0 {
                let mut next_delta = vec![0.0; v.fan_in];
                for o in 0..v.fan_out {
                    let row = &net.params[v.w_off + o * v.fan_in..v.w_off + (o + 1) * v.fan_in];
                    for (nd, w) in next_delta.iter_mut().zip(row) {
                        *nd += delta[o] * w;
                    }
                }
                // back through tanh: a' = 1 - a^2
                for (nd, a) in next_delta.iter_mut().zip(&acts[li]) {
                    *nd *= 1.0 - a * a;
                }
                delta = next_delta;
            }
        }
    }

    for v in &views {
        for i in v.w_off..v.b_off {
            grad[i] += 2.0 * alpha * net.params[i];
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params_spec: MlpParams,
    pub classes: Vec<usize>,
    pub network: Network,
}

impl MlpModel {
    pub fn width(&self) -> usize {
        self.network.sizes[0]
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        self.classes[self.network.predict_class_index(row)]
    }
}

fn minibatch_train(
    net: &mut Network,
    data: &EncodedDataset,
    label_idx: &[usize],
    params: &MlpParams,
    seed: u64,
) {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6c_7031);
    let mut velocity = vec![0.0; net.params.len()];
    let mut adam_m = vec![0.0; net.params.len()];
    let mut adam_v = vec![0.0; net.params.len()];
    let mut t = 0u64;

    for _ in 0..params.epochs {
        if params.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(params.batch) {
            t += 1;
            let lr = match params.schedule {
                LrSchedule::Constant => params.lr0,
                LrSchedule::InverseScaling => params.lr0 / (t as f64).sqrt(),
            };
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| data.rows[i].scaled.as_slice()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| label_idx[i]).collect();
            let grad = mlp_gradient(net, &rows, &targets, params.alpha);
            match params.optimizer {
                MlpOptimizer::Sgd => {
                    for (p, g) in net.params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                MlpOptimizer::SgdNesterov => {
                    let mu = NESTEROV_MOMENTUM;
                    for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&grad) {
                        *v = mu * *v - lr * g;
                        *p += mu * *v - lr * g;
                    }
                }
                MlpOptimizer::Adam => {
                    let b1t = 1.0 - ADAM_BETA1.powi(t as i32);
                    let b2t = 1.0 - ADAM_BETA2.powi(t as i32);
                    for ((p, (m, v)), g) in net
                        .params
                        .iter_mut()
                        .zip(adam_m.iter_mut().zip(&mut adam_v))
                        .zip(&grad)
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / b1t;
                        let v_hat = *v / b2t;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
                MlpOptimizer::Lbfgs => unreachable!("L-BFGS is full batch"),
            }
        }
    }
}

/// Full-batch L-BFGS with Armijo backtracking line search.
fn lbfgs_train(net: &mut Network, data: &EncodedDataset, label_idx: &[usize], alpha: f64) {
    let rows: Vec<&[f64]> = data.rows.iter().map(|r| r.scaled.as_slice()).collect();
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut grad = mlp_gradient(net, &rows, label_idx, alpha);
    let mut loss = mlp_loss(net, &rows, label_idx, alpha);

    for _ in 0..LBFGS_MAX_ITERS {
        let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-5 {
            break;
        }

        // Two-loop recursion for the search direction.
        let mut direction: Vec<f64> = grad.iter().map(|g| -g).collect();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let rho = 1.0
                / s_hist[i]
                    .iter()
                    .zip(&y_hist[i])
                    .map(|(s, y)| s * y)
                    .sum::<f64>();
            let a = rho
                * s_hist[i]
                    .iter()
                    .zip(&direction)
                    .map(|(s, d)| s * d)
                    .sum::<f64>();
            alphas[i] = a;
            for (d, y) in direction.iter_mut().zip(&y_hist[i]) {
                *d -= a * y;
            }
        }
        if m > 0 {
            let last = m - 1;
            let sy: f64 = s_hist[last].iter().zip(&y_hist[last]).map(|(s, y)| s * y).sum();
            let yy: f64 = y_hist[last].iter().map(|y| y * y).sum();
            let gamma = sy / yy;
            for d in direction.iter_mut() {
                *d *= gamma;
            }
        }
        for i in 0..m {
            let rho = 1.0
                / s_hist[i]
                    .iter()
                    .zip(&y_hist[i])
                    .map(|(s, y)| s * y)
                    .sum::<f64>();
            let b = rho
                * y_hist[i]
                    .iter()
                    .zip(&direction)
                    .map(|(y, d)| y * d)
                    .sum::<f64>();
            for (d, s) in direction.iter_mut().zip(&s_hist[i]) {
                *d += (alphas[i] - b) * s;
            }
        }

        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        if slope >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            continue;
        }

        let mut step = 1.0;
        let old_params = net.params.clone();
        let mut accepted = false;
        for _ in 0..30 {
            for ((p, o), d) in net.params.iter_mut().zip(&old_params).zip(&direction) {
                *p = o + step * d;
            }
            let new_loss = mlp_loss(net, &rows, label_idx, alpha);
            if new_loss <= loss + 1e-4 * step * slope {
                let new_grad = mlp_gradient(net, &rows, label_idx, alpha);
                let s: Vec<f64> = net
                    .params
                    .iter()
                    .zip(&old_params)
                    .map(|(p, o)| p - o)
                    .collect();
                let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(n, g)| n - g).collect();
                let sy: f64 = s.iter().zip(&y).map(|(si, yi)| si * yi).sum();
                if sy > 1e-10 {
                    s_hist.push(s);
                    y_hist.push(y);
                    if s_hist.len() > LBFGS_MEMORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                grad = new_grad;
                loss = new_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            net.params = old_params;
            break;
        }
    }
}

pub fn train(data: &EncodedDataset, params: &MlpParams, seed: u64) -> MlpModel {
    let classes = data.distinct_labels();
    let label_idx: Vec<usize> = data
        .labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();
    let mut sizes = Vec::with_capacity(params.layers.len() + 2);
    sizes.push(data.width());
    sizes.extend_from_slice(&params.layers);
    sizes.push(classes.len());

    let mut network = Network::random_init(sizes, seed);
    match params.optimizer {
        MlpOptimizer::Lbfgs => lbfgs_train(&mut network, data, &label_idx, params.alpha),
        _ => minibatch_train(&mut network, data, &label_idx, params, seed),
    }
    MlpModel {
        params_spec: params.clone(),
        classes,
        network,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testutil::gaussian_clouds;

    fn finite_difference_gradient(
        net: &Network,
        rows: &[&[f64]],
        targets: &[usize],
        alpha: f64,
        step: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; net.params.len()];
        let mut probe = net.clone();
        for i in 0..net.params.len() {
            probe.params[i] = net.params[i] + step;
            let up = mlp_loss(&probe, rows, targets, alpha);
            probe.params[i] = net.params[i] - step;
            let down = mlp_loss(&probe, rows, targets, alpha);
            probe.params[i] = net.params[i];
            grad[i] = (up - down) / (2.0 * step);
        }
        grad
    }

    #[test]
    fn zero_weight_net_has_balanced_output_bias_gradient() {
        let sizes = vec![2, 2];
        let net = Network {
            sizes: sizes.clone(),
            params: vec![0.0; Network::param_count(&sizes)],
        };
        let rows: Vec<&[f64]> = vec![&[1.0, 0.0], &[0.0, 1.0]];
        let targets = vec![0, 1];
        let grad = mlp_gradient(&net, &rows, &targets, 0.0);
        // bias entries are the last two slots
        let bias_sum = grad[grad.len() - 2] + grad[grad.len() - 1];
        assert!(bias_sum.abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let net = Network::random_init(vec![4, 6, 3], 42);
        let x1 = [0.3, -0.7, 1.2, 0.1];
        let x2 = [-1.0, 0.4, 0.0, 2.0];
        let rows: Vec<&[f64]> = vec![&x1, &x2];
        let targets = vec![2, 0];
        let alpha = 0.001;
        let analytic = mlp_gradient(&net, &rows, &targets, alpha);
        let numeric = finite_difference_gradient(&net, &rows, &targets, alpha, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            assert!((a - n).abs() / denom <= 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn regularizer_gradient_is_two_alpha_w() {
        // With uniform softmax outputs on a balanced 2-class batch the data
        // term on the weights vanishes only at w = 0, so probe the
        // regularizer directly through the loss difference.
        let sizes = vec![2, 2];
        let mut net = Network {
            sizes: sizes.clone(),
            params: vec![0.0; Network::param_count(&sizes)],
        };
        net.params[0] = 0.5;
        let alpha = 0.01;
        let g_with = mlp_gradient(&net, &[&[0.0, 0.0]], &[0], alpha);
        let g_without = mlp_gradient(&net, &[&[0.0, 0.0]], &[0], 0.0);
        assert!((g_with[0] - g_without[0] - 2.0 * alpha * 0.5).abs() < 1e-12);
    }

    #[test]
    fn sgd_learns_separated_clouds() {
        let data = gaussian_clouds(&[vec![-3.0, 0.0], vec![3.0, 0.0]], &[0, 1], 80, 0.5, 31);
        let model = train(&data, &MlpParams::mlp1(), 1);
        let hits = data
            .rows
            .iter()
            .zip(&data.labels)
            .filter(|(row, &l)| model.predict(&row.scaled) == l)
            .count();
        assert!(hits as f64 / data.len() as f64 >= 0.98);
    }

    #[test]
    fn all_optimizers_learn() {
        let data = gaussian_clouds(&[vec![-3.0, -3.0], vec![3.0, 3.0]], &[2, 5], 60, 0.5, 32);
        for optimizer in [
            MlpOptimizer::Sgd,
            MlpOptimizer::SgdNesterov,
            MlpOptimizer::Adam,
            MlpOptimizer::Lbfgs,
        ] {
            let params = MlpParams {
                layers: vec![8],
                optimizer,
                schedule: LrSchedule::Constant,
                shuffle: true,
                alpha: 0.0001,
                lr0: 0.01,
                epochs: 30,
                batch: 16,
            };
            let model = train(&data, &params, 2);
            let hits = data
                .rows
                .iter()
                .zip(&data.labels)
                .filter(|(row, &l)| model.predict(&row.scaled) == l)
                .count();
            let acc = hits as f64 / data.len() as f64;
            assert!(acc >= 0.95, "{optimizer:?} accuracy {acc}");
        }
    }
}
