//! Small feed-forward softmax classifier with manual forward/backward.
//!
//! The trainer needs three per-sample signals from the network: logits,
//! penultimate-layer features, and the last-layer gradient proxy
//! `softmax(logits) - onehot(label)`. Since the final layer is linear, that
//! proxy is exactly the logit-space loss gradient, and pairwise distances
//! between `outer(g, h)` final-layer gradients factor through it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::data::Sample;
use crate::error::{ColliderError, Result};

const CHECKPOINT_TAG: &str = "COLLIDER-MLP 1";

/// One dense layer: `w` is `out x in` row-major, `b` has length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
            rows,
            cols,
        }
    }
}

/// Parameter gradients, same shapes as the model layers.
pub type Gradients = Vec<Layer>;

/// MLP weights plus SGD velocity buffers and a step counter.
///
/// Hidden layers use the rectifier; the final layer is linear (softmax is
/// folded into the loss).
#[derive(Debug, Clone)]
pub struct ModelState {
    pub layers: Vec<Layer>,
    pub velocity: Vec<Layer>,
    pub step: u64,
    pub input_dim: usize,
    pub num_classes: usize,
}

/// Per-sample forward results.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<Vec<f64>>,
    pub penultimate: Vec<Vec<f64>>,
}

/// A training batch with soft targets (rows sum to 1).
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl TrainBatch {
    /// One-hot batch from labeled samples.
    pub fn from_samples(samples: &[&Sample], num_classes: usize) -> Self {
        let inputs = samples.iter().map(|s| s.pixels.clone()).collect();
        let targets = samples
            .iter()
            .map(|s| {
                let mut t = vec![0.0; num_classes];
                t[s.label] = 1.0;
                t
            })
            .collect();
        TrainBatch { inputs, targets }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Argmax with ties broken toward the smaller index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ModelState {
    /// Symmetric uniform init scaled by `1/sqrt(fan_in)`, seeded.
    pub fn init(input_dim: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);

        let mut layers = Vec::new();
        let mut velocity = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut layer = Layer::zeros(fan_out, fan_in);
            for w in layer.w.iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
            for b in layer.b.iter_mut() {
                *b = rng.gen_range(-bound..bound);
            }
            velocity.push(Layer::zeros(fan_out, fan_in));
            layers.push(layer);
        }

        ModelState {
            layers,
            velocity,
            step: 0,
            input_dim,
            num_classes,
        }
    }

    /// Forward pass. Penultimate features are the activations feeding the
    /// final linear layer (the inputs themselves for a zero-hidden model).
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<ForwardOutput> {
        let acts = self.forward_all(inputs)?;
        let last = acts.len() - 1;
        Ok(ForwardOutput {
            logits: acts[last].clone(),
            penultimate: acts[last - 1].clone(),
        })
    }

    /// All layer activations, `acts[0]` being the inputs.
    fn forward_all(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        for x in inputs {
            if x.len() != self.input_dim {
                return Err(ColliderError::Parameter(format!(
                    "input length {} does not match model input dim {}",
                    x.len(),
                    self.input_dim
                )));
            }
        }
        let num_layers = self.layers.len();
        let mut acts: Vec<Vec<Vec<f64>>> = vec![inputs.to_vec()];
        for (li, layer) in self.layers.iter().enumerate() {
            let prev = &acts[li];
            let mut next = Vec::with_capacity(prev.len());
            for x in prev {
                let mut z = layer.b.clone();
                for o in 0..layer.rows {
                    let row = &layer.w[o * layer.cols..(o + 1) * layer.cols];
                    let mut acc = 0.0;
                    for (wi, xi) in row.iter().zip(x.iter()) {
                        acc += wi * xi;
                    }
                    z[o] += acc;
                }
                if li + 1 < num_layers {
                    for v in z.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
                next.push(z);
            }
            acts.push(next);
        }
        Ok(acts)
    }

    /// Mean softmax cross-entropy against soft targets. Forward only.
    pub fn loss(&self, batch: &TrainBatch) -> Result<f64> {
        let out = self.forward(&batch.inputs)?;
        let mut total = 0.0;
        for (logits, target) in out.logits.iter().zip(&batch.targets) {
            let p = softmax(logits);
            for (q, pi) in target.iter().zip(&p) {
                if *q > 0.0 {
                    total -= q * pi.max(1e-300).ln();
                }
            }
        }
        Ok(total / batch.inputs.len() as f64)
    }

    /// Mean cross-entropy loss and gradients of it w.r.t. every parameter.
    pub fn loss_and_grad(&self, batch: &TrainBatch) -> Result<(f64, Gradients)> {
        let n = batch.inputs.len();
        if n == 0 {
            return Err(ColliderError::Parameter("empty batch".into()));
        }
        let acts = self.forward_all(&batch.inputs)?;
        let logits = &acts[acts.len() - 1];

        let mut loss = 0.0;
        // deltas at the current layer's outputs, per sample
        let mut deltas: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (z, target) in logits.iter().zip(&batch.targets) {
            let p = softmax(z);
            for (q, pi) in target.iter().zip(&p) {
                if *q > 0.0 {
                    loss -= q * pi.max(1e-300).ln();
                }
            }
            deltas.push(
                p.iter()
                    .zip(target)
                    .map(|(pi, qi)| (pi - qi) / n as f64)
                    .collect(),
            );
        }
        loss /= n as f64;

        let mut grads: Gradients = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.rows, l.cols))
            .collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let grad = &mut grads[li];
            let inputs = &acts[li];
            for (x, d) in inputs.iter().zip(&deltas) {
                for o in 0..layer.rows {
                    let row = &mut grad.w[o * layer.cols..(o + 1) * layer.cols];
                    let dv = d[o];
                    for (gw, xi) in row.iter_mut().zip(x.iter()) {
                        *gw += dv * xi;
                    }
                    grad.b[o] += dv;
                }
            }
            if li > 0 {
                // backprop through the layer and the rectifier of layer li-1
                let prev_acts = &acts[li];
                let mut new_deltas = Vec::with_capacity(n);
                for (d, h) in deltas.iter().zip(prev_acts) {
                    let mut nd = vec![0.0; layer.cols];
                    for o in 0..layer.rows {
                        let row = &layer.w[o * layer.cols..(o + 1) * layer.cols];
                        let dv = d[o];
                        for (ndi, wi) in nd.iter_mut().zip(row.iter()) {
                            *ndi += dv * wi;
                        }
                    }
                    for (ndi, hi) in nd.iter_mut().zip(h.iter()) {
                        if *hi <= 0.0 {
                            *ndi = 0.0;
                        }
                    }
                    new_deltas.push(nd);
                }
                deltas = new_deltas;
            }
        }
        Ok((loss, grads))
    }

    /// Per-sample last-layer gradient proxy `softmax(logits) - onehot(y)`.
    pub fn gradient_proxy(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.pixels.clone()).collect();
        let out = self.forward(&inputs)?;
        Ok(out
            .logits
            .iter()
            .zip(samples)
            .map(|(z, s)| {
                let mut g = softmax(z);
                g[s.label] -= 1.0;
                g
            })
            .collect())
    }

    /// Momentum SGD with classic L2 weight decay added to the gradient.
    pub fn sgd_step(
        &mut self,
        grads: &Gradients,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if lr <= 0.0 {
            return Err(ColliderError::Parameter("lr must be positive".into()));
        }
        for g in grads {
            if g.w.iter().chain(g.b.iter()).any(|v| !v.is_finite()) {
                return Err(ColliderError::Numeric("non-finite gradient".into()));
            }
        }
        for ((layer, vel), grad) in self
            .layers
            .iter_mut()
            .zip(self.velocity.iter_mut())
            .zip(grads)
        {
            for ((w, v), g) in layer.w.iter_mut().zip(vel.w.iter_mut()).zip(&grad.w) {
                *v = momentum * *v + (g + weight_decay * *w);
                *w -= lr * *v;
            }
            for ((b, v), g) in layer.b.iter_mut().zip(vel.b.iter_mut()).zip(&grad.b) {
                *v = momentum * *v + g;
                *b -= lr * *v;
            }
        }
        self.step += 1;
        for l in &self.layers {
            if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
                return Err(ColliderError::Numeric("non-finite weight after update".into()));
            }
        }
        Ok(())
    }

    /// Writes the checkpoint: a text header (tag, layer dims, step) followed
    /// by all parameters as little-endian f64, layer by layer, weights before
    /// biases.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        let mut dims = vec![self.input_dim.to_string()];
        for l in &self.layers {
            dims.push(l.rows.to_string());
        }
        writeln!(f, "{CHECKPOINT_TAG}")?;
        writeln!(f, "dims: {}", dims.join(" "))?;
        writeln!(f, "step: {}", self.step)?;
        writeln!(f)?;
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelState> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut line = String::new();
        let format_err = |reason: &str| ColliderError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        reader.read_line(&mut line)?;
        if line.trim() != CHECKPOINT_TAG {
            return Err(format_err("bad checkpoint tag"));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let dims: Vec<usize> = line
            .trim()
            .strip_prefix("dims:")
            .ok_or_else(|| format_err("missing dims line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format_err("bad dims")))
            .collect::<Result<_>>()?;
        if dims.len() < 2 {
            return Err(format_err("need at least input and output dims"));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let step: u64 = line
            .trim()
            .strip_prefix("step:")
            .ok_or_else(|| format_err("missing step line"))?
            .trim()
            .parse()
            .map_err(|_| format_err("bad step"))?;
        line.clear();
        reader.read_line(&mut line)?; // blank separator

        let mut layers = Vec::new();
        let mut velocity = Vec::new();
        for pair in dims.windows(2) {
            let mut layer = Layer::zeros(pair[1], pair[0]);
            for slot in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                let mut buf = [0u8; 8];
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| format_err("truncated parameter payload"))?;
                *slot = f64::from_le_bytes(buf);
            }
            velocity.push(Layer::zeros(pair[1], pair[0]));
            layers.push(layer);
        }
        Ok(ModelState {
            layers,
            velocity,
            step,
            input_dim: dims[0],
            num_classes: *dims.last().unwrap(),
        })
    }
}

/// Mixup: pairs each sample with a permuted partner and mixes pixels and
/// one-hot labels with the same `Beta(alpha, alpha)` coefficient per pair.
pub fn mixup_batch(
    samples: &[&Sample],
    num_classes: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<TrainBatch> {
    if alpha <= 0.0 {
        return Err(ColliderError::Parameter("mixup alpha must be positive".into()));
    }
    let n = samples.len();
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| ColliderError::Parameter(format!("bad mixup alpha: {e}")))?;
    let mut perm: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(rng);

    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        let partner = samples[perm[i]];
        let lam = beta.sample(rng);
        inputs.push(
            s.pixels
                .iter()
                .zip(&partner.pixels)
                .map(|(a, b)| lam * a + (1.0 - lam) * b)
                .collect(),
        );
        let mut t = vec![0.0; num_classes];
        t[s.label] += lam;
        t[partner.label] += 1.0 - lam;
        targets.push(t);
    }
    Ok(TrainBatch { inputs, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn toy_samples(n: usize, dim: usize, classes: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Sample {
                pixels: (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect(),
                label: i % classes,
                id: i,
                is_poisoned: false,
            })
            .collect()
    }

    #[test]
    fn zero_weight_model_uniform_softmax() {
        let mut m = ModelState::init(4, &[5], 3, 0);
        for l in m.layers.iter_mut() {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let out = m.forward(&[vec![0.3, 0.1, 0.9, 0.2]]).unwrap();
        assert!(out.logits[0].iter().all(|&z| z == 0.0));
        let p = softmax(&out.logits[0]);
        for pi in p {
            assert!((pi - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_matches_batch_row() {
        let m = ModelState::init(6, &[8], 4, 3);
        let samples = toy_samples(5, 6, 4, 1);
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.pixels.clone()).collect();
        let batch_out = m.forward(&inputs).unwrap();
        for (i, x) in inputs.iter().enumerate() {
            let single = m.forward(std::slice::from_ref(x)).unwrap();
            for (a, b) in single.logits[0].iter().zip(&batch_out.logits[i]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_matches_naive_loop() {
        // independently coded single-layer-at-a-time evaluation
        let m = ModelState::init(5, &[7], 3, 9);
        let x: Vec<f64> = vec![0.2, 0.9, 0.4, 0.0, 0.7];
        let out = m.forward(&[x.clone()]).unwrap();

        let l0 = &m.layers[0];
        let mut h = vec![0.0; l0.rows];
        for o in 0..l0.rows {
            let mut acc = l0.b[o];
            for i in 0..l0.cols {
                acc += l0.w[o * l0.cols + i] * x[i];
            }
            h[o] = if acc > 0.0 { acc } else { 0.0 };
        }
        let l1 = &m.layers[1];
        for o in 0..l1.rows {
            let mut acc = l1.b[o];
            for i in 0..l1.cols {
                acc += l1.w[o * l1.cols + i] * h[i];
            }
            assert!((acc - out.logits[0][o]).abs() < 1e-6);
        }
        for (a, b) in h.iter().zip(&out.penultimate[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let mut m = ModelState::init(4, &[], 10, 0);
        m.layers[0].w.iter_mut().for_each(|w| *w = 0.0);
        m.layers[0].b.iter_mut().for_each(|b| *b = 0.0);
        let samples = toy_samples(8, 4, 10, 2);
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = TrainBatch::from_samples(&refs, 10);
        let loss = m.loss(&batch).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = ModelState::init(4, &[6], 3, 17);
        let samples = toy_samples(7, 4, 3, 5);
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = TrainBatch::from_samples(&refs, 3);
        let (_, grads) = m.loss_and_grad(&batch).unwrap();

        let eps = 1e-4;
        for li in 0..m.layers.len() {
            for wi in 0..m.layers[li].w.len() {
                let mut plus = m.clone();
                plus.layers[li].w[wi] += eps;
                let mut minus = m.clone();
                minus.layers[li].w[wi] -= eps;
                let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * eps);
                let g = grads[li].w[wi];
                let denom = fd.abs().max(g.abs()).max(1e-8);
                assert!(
                    (fd - g).abs() / denom < 1e-4,
                    "layer {li} w[{wi}]: fd={fd} analytic={g}"
                );
            }
            for bi in 0..m.layers[li].b.len() {
                let mut plus = m.clone();
                plus.layers[li].b[bi] += eps;
                let mut minus = m.clone();
                minus.layers[li].b[bi] -= eps;
                let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * eps);
                let g = grads[li].b[bi];
                let denom = fd.abs().max(g.abs()).max(1e-8);
                assert!((fd - g).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let m = ModelState::init(4, &[5], 3, 1);
        let samples = toy_samples(4, 4, 3, 8);
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = TrainBatch::from_samples(&refs, 3);
        let doubled = TrainBatch {
            inputs: [batch.inputs.clone(), batch.inputs.clone()].concat(),
            targets: [batch.targets.clone(), batch.targets.clone()].concat(),
        };
        let (_, g1) = m.loss_and_grad(&batch).unwrap();
        let (_, g2) = m.loss_and_grad(&doubled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn proxy_sums_to_zero_and_uniform_norm() {
        let mut m = ModelState::init(4, &[], 10, 0);
        m.layers[0].w.iter_mut().for_each(|w| *w = 0.0);
        m.layers[0].b.iter_mut().for_each(|b| *b = 0.0);
        let s = Sample {
            pixels: vec![0.1, 0.2, 0.3, 0.4],
            label: 3,
            id: 0,
            is_poisoned: false,
        };
        let g = m.gradient_proxy(&[&s]).unwrap();
        let sum: f64 = g[0].iter().sum();
        assert!(sum.abs() < 1e-12);
        let norm: f64 = g[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - (0.81f64 + 9.0 * 0.01).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn proxy_distance_equals_final_layer_gradient_distance() {
        let m = ModelState::init(5, &[6], 4, 21);
        let samples = toy_samples(6, 5, 4, 3);
        let refs: Vec<&Sample> = samples.iter().collect();
        let proxies = m.gradient_proxy(&refs).unwrap();
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.pixels.clone()).collect();
        let feats = m.forward(&inputs).unwrap().penultimate;

        // oracle: per-sample full backprop, final-layer weight gradient
        let final_grad = |i: usize| -> Vec<f64> {
            let batch = TrainBatch::from_samples(&[refs[i]], 4);
            let (_, grads) = m.loss_and_grad(&batch).unwrap();
            grads.last().unwrap().w.clone()
        };

        for i in 0..refs.len() {
            for j in (i + 1)..refs.len() {
                let gi = final_grad(i);
                let gj = final_grad(j);
                let full: f64 = gi
                    .iter()
                    .zip(&gj)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                // outer(g_i, h_i) - outer(g_j, h_j) Frobenius norm
                let mut acc = 0.0;
                for a in 0..4 {
                    for b in 0..feats[i].len() {
                        let d = proxies[i][a] * feats[i][b] - proxies[j][a] * feats[j][b];
                        acc += d * d;
                    }
                }
                assert!((acc.sqrt() - full).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut m = ModelState::init(2, &[], 2, 0);
        let w0 = m.layers[0].w.clone();
        let grads = vec![Layer {
            w: vec![1.0, 2.0, 3.0, 4.0],
            b: vec![0.5, 0.5],
            rows: 2,
            cols: 2,
        }];
        m.sgd_step(&grads, 0.1, 0.0, 0.0).unwrap();
        for (i, (&w, &g)) in w0.iter().zip(&grads[0].w).enumerate() {
            assert!((m.layers[0].w[i] - (w - 0.1 * g)).abs() < 1e-15);
        }
        assert_eq!(m.step, 1);
    }

    #[test]
    fn momentum_velocity_recursion() {
        let mut m = ModelState::init(1, &[], 1, 0);
        m.layers[0].w[0] = 1.0;
        m.layers[0].b[0] = 0.0;
        let grads = vec![Layer {
            w: vec![2.0],
            b: vec![0.0],
            rows: 1,
            cols: 1,
        }];
        // v1 = 0.9*0 + 2 = 2; w = 1 - 0.1*2 = 0.8
        // v2 = 0.9*2 + 2 = 3.8; w = 0.8 - 0.38 = 0.42
        m.sgd_step(&grads, 0.1, 0.9, 0.0).unwrap();
        assert!((m.layers[0].w[0] - 0.8).abs() < 1e-12);
        m.sgd_step(&grads, 0.1, 0.9, 0.0).unwrap();
        assert!((m.layers[0].w[0] - 0.42).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_on_separable_toy() {
        let ds = generate_synthetic(2, 30, 8, 4).unwrap();
        let refs: Vec<&Sample> = ds.samples.iter().collect();
        let batch = TrainBatch::from_samples(&refs, 2);
        let mut m = ModelState::init(64, &[16], 2, 0);
        let first = m.loss(&batch).unwrap();
        for _ in 0..50 {
            let (_, grads) = m.loss_and_grad(&batch).unwrap();
            m.sgd_step(&grads, 0.5, 0.9, 0.0).unwrap();
        }
        let last = m.loss(&batch).unwrap();
        assert!(last < first * 0.5, "loss {first} -> {last}");
    }

    #[test]
    fn mixup_self_pair_unchanged() {
        let samples = toy_samples(1, 4, 3, 0);
        let refs: Vec<&Sample> = samples.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = mixup_batch(&refs, 3, 1.0, &mut rng).unwrap();
        assert_eq!(batch.inputs[0], samples[0].pixels);
        assert!((batch.targets[0][samples[0].label] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixup_soft_labels_sum_to_one_and_midpoint_case() {
        let samples = toy_samples(10, 4, 3, 6);
        let refs: Vec<&Sample> = samples.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = mixup_batch(&refs, 3, 4.0, &mut rng).unwrap();
        for t in &batch.targets {
            let sum: f64 = t.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // fixed lambda = 0.5 fixture: the midpoint of the pixel vectors
        let a = &samples[0];
        let b = &samples[1];
        let mid: Vec<f64> = a
            .pixels
            .iter()
            .zip(&b.pixels)
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        for (i, &v) in mid.iter().enumerate() {
            assert!((v - (0.5 * a.pixels[i] + 0.5 * b.pixels[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = ModelState::init(6, &[5], 3, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        m.save(&path).unwrap();
        let back = ModelState::load(&path).unwrap();
        assert_eq!(back.step, m.step);
        assert_eq!(back.input_dim, 6);
        assert_eq!(back.num_classes, 3);
        for (a, b) in m.layers.iter().zip(&back.layers) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
    }
}
