use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{real, Real};
use super::net::PropNet;
use super::PatchSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    /// Reshuffle the samples every epoch. Off gives deterministic full-order
    /// passes.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-2,
            lr_decay: 0.9,
            momentum: 0.9,
            shuffle: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over each epoch's forward passes.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

fn to_real<T: Real>(s: &PatchSample) -> (Vec<T>, [T; 2]) {
    (
        s.patch.iter().map(|&v| real(f64::from(v))).collect(),
        [real(s.center[0]), real(s.center[1])],
    )
}

/// Mean cross-entropy over `batch` and its gradient with respect to every
/// parameter.
pub fn loss_and_grad<T: Real>(net: &PropNet<T>, batch: &[&PatchSample]) -> (T, PropNet<T>) {
    let mut grad = net.zeros_like();
    let scale: T = real(1.0 / batch.len() as f64);
    let mut loss = T::zero();
    for s in batch {
        let (patch, center) = to_real::<T>(s);
        let trace = net.forward_traced(&patch, center);
        let target = s.class_index();
        let p = trace.probs[target].max(real(1e-30));
        loss = loss - p.ln() * scale;
        let dlogits: Vec<T> = trace
            .probs
            .iter()
            .enumerate()
            .map(|(k, &pk)| (pk - if k == target { T::one() } else { T::zero() }) * scale)
            .collect();
        net.backward(&trace, &dlogits, &mut grad);
    }
    (loss, grad)
}

/// Mean cross-entropy without gradients.
pub fn mean_loss<T: Real>(net: &PropNet<T>, samples: &[PatchSample]) -> T {
    let scale: T = real(1.0 / samples.len() as f64);
    samples
        .iter()
        .map(|s| {
            let (patch, center) = to_real::<T>(s);
            -net.forward(&patch, center)[s.class_index()].max(real(1e-30)).ln() * scale
        })
        .sum()
}

/// Fraction of samples whose arg-max prediction matches their class.
pub fn accuracy<T: Real>(net: &PropNet<T>, samples: &[PatchSample]) -> f64 {
    let hits = samples
        .iter()
        .filter(|s| {
            let (patch, center) = to_real::<T>(s);
            let p = net.forward(&patch, center);
            let best = (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b });
            best == s.class_index()
        })
        .count();
    hits as f64 / samples.len() as f64
}

/// Mini-batch SGD with momentum and per-epoch learning-rate decay.
pub fn train<T: Real>(net: &mut PropNet<T>, samples: &[PatchSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be positive, learning rate > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut velocity = net.zeros_like();
    let mut lr = cfg.learning_rate;
    let momentum: T = real(cfg.momentum);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PatchSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = loss_and_grad(net, &batch);
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            epoch_loss += loss * batch.len() as f64;
            let step_size: T = real(lr);
            for ((p, v), g) in net
                .params_mut()
                .into_iter()
                .zip(velocity.params_mut())
                .zip(grad.params())
            {
                for i in 0..p.len() {
                    v[i] = momentum * v[i] - step_size * g[i];
                    p[i] = p[i] + v[i];
                }
            }
            report.steps += 1;
        }
        report.epoch_losses.push(epoch_loss / samples.len() as f64);
        lr *= cfg.lr_decay;
    }
    Ok(report)
}
