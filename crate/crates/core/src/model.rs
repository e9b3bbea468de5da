//! Desk-scale classifiers with softmax cross-entropy loss.
//!
//! Parameter layouts (all row-major):
//!
//! * logistic: `W (C x F)`, then `b (C)`
//! * mlp: `W1 (H x F)`, `b1 (H)`, `W2 (C x H)`, `b2 (C)`, ReLU hidden layer

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::rng;
use crate::{Error, ParamVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp { hidden },
            input_dim,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::invalid("model needs F >= 1 and C >= 2"));
        }
        if let ModelKind::Mlp { hidden: 0 } = self.kind {
            return Err(Error::invalid("mlp hidden width must be at least 1"));
        }
        Ok(())
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        let (f, c) = (self.input_dim, self.classes);
        match self.kind {
            ModelKind::Logistic => f * c + c,
            ModelKind::Mlp { hidden: h } => f * h + h + h * c + c,
        }
    }

    /// Zeros for logistic regression; uniform `±sqrt(6 / (fan_in + fan_out))`
    /// weights and zero biases for the MLP.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        self.validate()?;
        let d = self.param_count();
        match self.kind {
            ModelKind::Logistic => ParamVector::zeros(d),
            ModelKind::Mlp { hidden: h } => {
                let (f, c) = (self.input_dim, self.classes);
                let mut r = rng::stream(rng::derive_seed(&[seed, rng::tag::INIT]));
                let mut w = Vec::with_capacity(d);
                let a1 = (6.0 / (f + h) as f64).sqrt();
                w.extend((0..f * h).map(|_| r.random_range(-a1..a1)));
                w.extend(std::iter::repeat_n(0.0, h));
                let a2 = (6.0 / (h + c) as f64).sqrt();
                w.extend((0..h * c).map(|_| r.random_range(-a2..a2)));
                w.extend(std::iter::repeat_n(0.0, c));
                ParamVector::new(w)
            }
        }
    }

    fn check(&self, w: &[f64], data: &Dataset) -> Result<()> {
        self.validate()?;
        if w.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, model needs {}",
                w.len(),
                self.param_count()
            )));
        }
        if data.num_features() != self.input_dim {
            return Err(Error::invalid(format!(
                "data has {} features, model expects {}",
                data.num_features(),
                self.input_dim
            )));
        }
        if data.num_classes() > self.classes {
            return Err(Error::invalid(format!(
                "data has {} classes, model outputs {}",
                data.num_classes(),
                self.classes
            )));
        }
        Ok(())
    }

    /// Class scores for one sample; fills `hidden` with post-ReLU activations for the MLP.
    fn forward(&self, w: &[f64], x: &[f64], hidden: &mut Vec<f64>, logits: &mut [f64]) {
        let (f, c) = (self.input_dim, self.classes);
        match self.kind {
            ModelKind::Logistic => {
                let (wm, b) = w.split_at(f * c);
                for k in 0..c {
                    logits[k] = b[k] + dot(&wm[k * f..(k + 1) * f], x);
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let (w1, rest) = w.split_at(f * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * c);
                hidden.clear();
                hidden.extend((0..h).map(|j| (b1[j] + dot(&w1[j * f..(j + 1) * f], x)).max(0.0)));
                for k in 0..c {
                    logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], hidden);
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place softmax; returns `log Σ exp(logits)`.
fn softmax(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

/// Mean cross-entropy over `batch` (sample indices into `data`) and its gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, ParamVector)> {
    let w = w.as_slice();
    spec.check(w, data)?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (f, c) = (spec.input_dim, spec.classes);
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    let mut hidden = Vec::new();
    let mut probs = vec![0.0; c];
    let mut dhidden = Vec::new();
    for &i in batch {
        let x = data.row(i);
        let y = data.label(i);
        spec.forward(w, x, &mut hidden, &mut probs);
        let logit_y = probs[y];
        loss += softmax(&mut probs) - logit_y;
        probs[y] -= 1.0;
        let delta = &probs;
        match spec.kind {
            ModelKind::Logistic => {
                let (gw, gb) = grad.split_at_mut(f * c);
                for k in 0..c {
                    gb[k] += delta[k];
                    for (g, xi) in gw[k * f..(k + 1) * f].iter_mut().zip(x) {
                        *g += delta[k] * xi;
                    }
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let w2 = &w[f * h + h..f * h + h + h * c];
                let (gw1, rest) = grad.split_at_mut(f * h);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h * c);
                dhidden.clear();
                dhidden.resize(h, 0.0);
                for k in 0..c {
                    gb2[k] += delta[k];
                    for j in 0..h {
                        gw2[k * h + j] += delta[k] * hidden[j];
                        dhidden[j] += delta[k] * w2[k * h + j];
                    }
                }
                for j in 0..h {
                    if hidden[j] <= 0.0 {
                        continue;
                    }
                    gb1[j] += dhidden[j];
                    for (g, xi) in gw1[j * f..(j + 1) * f].iter_mut().zip(x) {
                        *g += dhidden[j] * xi;
                    }
                }
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, ParamVector::new(grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Argmax accuracy (ties go to the lowest class index) and mean loss over `data`.
pub fn evaluate(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<Evaluation> {
    let w = w.as_slice();
    spec.check(w, data)?;
    let mut hidden = Vec::new();
    let mut logits = vec![0.0; spec.classes];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..data.len() {
        spec.forward(w, data.row(i), &mut hidden, &mut logits);
        let mut best = 0;
        for k in 1..logits.len() {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        let y = data.label(i);
        correct += usize::from(best == y);
        let logit_y = logits[y];
        loss += softmax(&mut logits) - logit_y;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
    })
}

/// Plain minibatch SGD on a whole dataset, reshuffling every epoch.
pub fn sgd_train(
    spec: &ModelSpec,
    data: &Dataset,
    epochs: usize,
    eta: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ParamVector> {
    let mut w = spec.init_params(seed)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::stream(rng::derive_seed(&[seed, rng::tag::BATCH]));
    for _ in 0..epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(batch_size.max(1)) {
            let (_, g) = loss_and_grad(spec, &w, data, batch)?;
            w = w.axpy(-eta, &g)?;
        }
    }
    Ok(w)
}

/// Crude smoothness estimate: the largest `‖∇f(w + δ) - ∇f(w)‖ / ‖δ‖` over
/// `probes` random perturbations of norm `radius`. For reporting only; the
/// bound evaluators take `L` as a given constant.
pub fn estimate_smoothness(
    spec: &ModelSpec,
    w: &ParamVector,
    data: &Dataset,
    probes: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (_, g0) = loss_and_grad(spec, w, data, &all)?;
    let mut r = rng::stream(seed);
    let mut best: f64 = 0.0;
    for _ in 0..probes {
        let dir: Vec<f64> = (0..w.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let delta = ParamVector::new(dir.iter().map(|v| v * radius / norm).collect())?;
        let (_, g1) = loss_and_grad(spec, &w.axpy(1.0, &delta)?, data, &all)?;
        best = best.max(g1.sub(&g0)?.l2_norm_sq().sqrt() / radius);
    }
    Ok(best)
}
