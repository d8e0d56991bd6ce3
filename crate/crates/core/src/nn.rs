//! A small multilayer perceptron with tanh hidden layers, a softmax head,
//! inverted dropout and hand-written reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::OutcomeDistribution;
use crate::error::{Error, Result};

/// Input 8 context features plus an 8-way one-hot action, two hidden layers of 32, 8 outcomes.
pub const DEFAULT_SIZES: [usize; 4] = [16, 32, 32, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().zip(self.weights.chunks_exact(self.n_in)).map(|(b, row)| {
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// Fully connected network; every layer but the last is followed by tanh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Parameter-shaped gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Dropout on hidden activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub seed: u64,
}

/// Per-hidden-unit multipliers: 0 for dropped units, `1 / (1 - rate)` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub scales: Vec<Vec<f64>>,
}

impl DropoutSpec {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, seed })
    }

    /// The mask for one forward pass, fixed by `(seed, step, pass)`.
    pub fn mask(&self, net: &Mlp, step: u64, pass: u64) -> DropoutMask {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step.wrapping_mul(1 << 16).wrapping_add(pass));
        let keep = 1.0 / (1.0 - self.rate);
        let scales = net.layers[..net.layers.len() - 1]
            .iter()
            .map(|l| {
                (0..l.n_out)
                    .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        DropoutMask { scales }
    }
}

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer (after dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// tanh outputs of each hidden layer, before dropout.
    hidden: Vec<Vec<f64>>,
    mask: Option<DropoutMask>,
    pub output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Mlp {
    /// Uniform initialization in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn xavier<G: Rng + ?Sized>(sizes: &[usize], rng: &mut G) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for l in &mut net.layers {
            let r = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-r..=r);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::param(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Forward pass recording a tape. `mask` must come from [`DropoutSpec::mask`] on a net of this shape.
    pub fn forward(&self, input: &[f64], mask: Option<&DropoutMask>) -> Result<Tape> {
        if input.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.n_inputs(),
                actual: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(last);
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&x, &mut z);
            inputs.push(std::mem::take(&mut x));
            if k == last {
                break;
            }
            for v in &mut z {
                *v = v.tanh();
            }
            x = z.clone();
            if let Some(m) = mask {
                for (v, s) in x.iter_mut().zip(&m.scales[k]) {
                    *v *= s;
                }
            }
            hidden.push(z.clone());
        }
        softmax_in_place(&mut z);
        Ok(Tape {
            inputs,
            hidden,
            mask: mask.cloned(),
            output: z,
        })
    }

    /// Output distribution without dropout.
    pub fn predict(&self, input: &[f64]) -> Result<OutcomeDistribution> {
        let t = self.forward(input, None)?;
        Ok(OutcomeDistribution::from_raw(t.output))
    }

    /// Gradients of a scalar loss given its gradient with respect to the output distribution.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<Gradients> {
        let p = &tape.output;
        if upstream.len() != p.len() {
            return Err(Error::DimensionMismatch {
                what: "upstream gradient",
                expected: p.len(),
                actual: upstream.len(),
            });
        }
        let dot: f64 = p.iter().zip(upstream).map(|(a, b)| a * b).sum();
        let dlogits: Vec<f64> = p.iter().zip(upstream).map(|(pi, g)| pi * (g - dot)).collect();
        self.backward_logits(tape, &dlogits)
    }

    /// Gradients given the gradient with respect to the pre-softmax logits.
    pub fn backward_logits(&self, tape: &Tape, dlogits: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_logits(tape, dlogits, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale` times the logit-gradient backpropagation into `grads`.
    pub fn accumulate_logits(&self, tape: &Tape, dlogits: &[f64], scale: f64, grads: &mut Gradients) -> Result<()> {
        if tape.inputs.len() != self.layers.len() || dlogits.len() != self.n_outputs() {
            return Err(Error::param("tape does not match network shape"));
        }
        let mut dz: Vec<f64> = dlogits.iter().map(|g| g * scale).collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &tape.inputs[k];
            let g = &mut grads.layers[k];
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += d * xi;
                }
            }
            if k == 0 {
                break;
            }
            let mut dx = vec![0.0; layer.n_in];
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (acc, w) in dx.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            let h = &tape.hidden[k - 1];
            for (i, v) in dx.iter_mut().enumerate() {
                let s = tape.mask.as_ref().map_or(1.0, |m| m.scales[k - 1][i]);
                *v *= s * (1.0 - h[i] * h[i]);
            }
            dz = dx;
        }
        Ok(())
    }

    /// `w <- w - lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::param(format!("learning rate {lr} must be non-negative")));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::param("gradient shape does not match network"));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w -= lr * d;
            }
            for (b, d) in l.biases.iter_mut().zip(&g.biases) {
                *b -= lr * d;
            }
        }
        Ok(())
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.n_params(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Concatenates the context with a one-hot encoding of `action`.
pub fn encode_input(context: &[f64], action: usize, n_actions: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(context.len() + n_actions);
    x.extend_from_slice(context);
    x.extend((0..n_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
    x
}

/// Cross-entropy `-sum q log p` and its gradient with respect to `p`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let loss = -q
        .iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| qi * pi.ln())
        .sum::<f64>();
    let grad = q
        .iter()
        .zip(p)
        .map(|(qi, pi)| if *qi > 0.0 { -qi / pi } else { 0.0 })
        .collect();
    (loss, grad)
}
