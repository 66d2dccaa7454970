//! Per-image CNN that re-splits foreground/background mass of uncertain
//! superpixels using patch appearance and position.
//!
//! The network is trained from scratch for each image on the superpixels that
//! are scribbled or already confidently propagated, then queried on the
//! remaining uncertain ones.

mod layers;
mod net;
mod train;

pub mod checkpoint;

pub use layers::{conv_out, softmax, Conv, Dense, Real};
pub use net::{NetShape, PropNet};
pub use train::{accuracy, loss_and_grad, mean_loss, train, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::imagegraph::SuperpixelMap;
use crate::labelstate::{LabelClass, ProbabilityState, TRIMAP_THRESHOLD};

/// Propagated probability above which an unlabeled superpixel joins the
/// training set.
pub const HARVEST_CONFIDENCE: f64 = 0.9;

/// One training or query example: the superpixel's bounding box resampled to
/// a square patch, plus its normalized centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// Channel-major `3 x P x P`, values in `[0, 1]`.
    pub patch: Vec<f32>,
    pub center: [f64; 2],
    /// `Foreground` or `Background`.
    pub class: LabelClass,
    pub superpixel: usize,
}

impl PatchSample {
    pub fn class_index(&self) -> usize {
        match self.class {
            LabelClass::Foreground => 0,
            _ => 1,
        }
    }
}

/// Bilinearly resamples the inclusive box `(x0, y0, x1, y1)` to `size x size`.
pub fn extract_patch(img: &Image, bbox: (usize, usize, usize, usize), size: usize) -> Vec<f32> {
    let (x0, y0, x1, y1) = bbox;
    let bw = (x1 - x0 + 1) as f64;
    let bh = (y1 - y0 + 1) as f64;
    let mut out = vec![0.0f32; 3 * size * size];
    for py in 0..size {
        let sy = y0 as f64 + (py as f64 + 0.5) * bh / size as f64 - 0.5;
        for px in 0..size {
            let sx = x0 as f64 + (px as f64 + 0.5) * bw / size as f64 - 0.5;
            let c = img.sample_bilinear(sx, sy);
            for k in 0..3 {
                out[(k * size + py) * size + px] = c[k] as f32;
            }
        }
    }
    out
}

pub fn sample_for(img: &Image, sp: &SuperpixelMap, i: usize, class: LabelClass, size: usize) -> PatchSample {
    PatchSample {
        patch: extract_patch(img, sp.bbox(i), size),
        center: sp.centroid_normalized(i),
        class,
        superpixel: i,
    }
}

/// Hard-labeled foreground/background superpixels plus unlabeled ones whose
/// propagated `pf` or `pb` reaches `confidence`. Fails when either class ends
/// up empty.
pub fn harvest_training_set(
    ps: &ProbabilityState,
    sp: &SuperpixelMap,
    img: &Image,
    patch: usize,
    confidence: f64,
) -> Result<Vec<PatchSample>> {
    let mut samples = Vec::new();
    for i in 0..ps.len() {
        let class = match ps.hard_label(i) {
            Some(LabelClass::Unknown) => None,
            Some(c) => Some(c),
            None => {
                let [pf, pb, _] = ps.probs(i);
                if pf >= confidence {
                    Some(LabelClass::Foreground)
                } else if pb >= confidence {
                    Some(LabelClass::Background)
                } else {
                    None
                }
            }
        };
        if let Some(c) = class {
            samples.push(sample_for(img, sp, i, c, patch));
        }
    }
    let nf = samples.iter().filter(|s| s.class == LabelClass::Foreground).count();
    let nb = samples.len() - nf;
    if nf == 0 || nb == 0 {
        return Err(Error::HarvestSkipped(format!(
            "need both classes, got {nf} foreground and {nb} background samples"
        )));
    }
    Ok(samples)
}

/// Re-splits the foreground/background mass of every unlabeled superpixel
/// whose largest probability is below `gate`: `pf = qf (1 - pu)`,
/// `pb = qb (1 - pu)`, `pu` unchanged. Returns the updated ids.
pub fn predict_and_update<T: Real>(
    net: &PropNet<T>,
    ps: &mut ProbabilityState,
    sp: &SuperpixelMap,
    img: &Image,
    gate: f64,
) -> Vec<usize> {
    let mut updated = Vec::new();
    for i in 0..ps.len() {
        if ps.is_labeled(i) {
            continue;
        }
        let p = ps.probs(i);
        if p.iter().copied().fold(0.0, f64::max) >= gate {
            continue;
        }
        let s = sample_for(img, sp, i, LabelClass::Foreground, net.shape.patch);
        let patch: Vec<T> = s.patch.iter().map(|&v| layers::real(f64::from(v))).collect();
        let q = net.forward(&patch, [layers::real(s.center[0]), layers::real(s.center[1])]);
        let (qf, qb) = match (q[0].to_f64(), q[1].to_f64()) {
            (Some(a), Some(b)) if a + b > 0.0 => (a / (a + b), b / (a + b)),
            _ => (0.5, 0.5),
        };
        let pu = p[2];
        ps.set_probs(i, [qf * (1.0 - pu), qb * (1.0 - pu), pu]);
        updated.push(i);
    }
    updated
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub train: TrainConfig,
    pub harvest_confidence: f64,
    /// Superpixels at or above this maximum probability are left alone.
    pub update_gate: f64,
    pub patch: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            harvest_confidence: HARVEST_CONFIDENCE,
            update_gate: TRIMAP_THRESHOLD,
            patch: NetShape::default().patch,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CnnReport {
    pub samples: usize,
    pub epoch_losses: Vec<f64>,
    pub updated: Vec<usize>,
}

/// Harvest, train a fresh network, and update uncertain superpixels.
pub fn cnn_propagate(
    ps: &mut ProbabilityState,
    sp: &SuperpixelMap,
    img: &Image,
    cfg: &CnnConfig,
) -> Result<CnnReport> {
    let samples = harvest_training_set(ps, sp, img, cfg.patch, cfg.harvest_confidence)?;
    let shape = NetShape {
        patch: cfg.patch,
        ..NetShape::default()
    };
    let mut net = PropNet::<f32>::new(shape, cfg.train.seed);
    let rep = train(&mut net, &samples, &cfg.train)?;
    let updated = predict_and_update(&net, ps, sp, img, cfg.update_gate);
    Ok(CnnReport {
        samples: samples.len(),
        epoch_losses: rep.epoch_losses,
        updated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_shape() -> NetShape {
        NetShape {
            patch: 4,
            channels: [2, 3, 4],
            embed: 5,
            classes: 2,
        }
    }

    fn stripes() -> (Image, SuperpixelMap) {
        let img = Image::from_fn(12, 4, |x, _| if x < 6 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] })
            .unwrap();
        let sp = SuperpixelMap::from_labels(12, 4, (0..48).map(|p| (p % 12) / 3).collect());
        (img, sp)
    }

    #[test]
    fn zero_head_gives_uniform_output() {
        let mut net = PropNet::<f64>::new(NetShape::default(), 3);
        net.head.weight.iter_mut().for_each(|w| *w = 0.0);
        let p = net.forward(&vec![0.3; 3 * 32 * 32], [0.2, 0.7]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn batch_order_does_not_matter() {
        let net = PropNet::<f32>::new(tiny_shape(), 1);
        let inputs: Vec<(Vec<f32>, [f32; 2])> = (0..4)
            .map(|k| ((0..48).map(|i| ((i * 7 + k * 13) % 11) as f32 / 11.0).collect(), [k as f32 / 4.0, 0.5]))
            .collect();
        let fwd: Vec<Vec<f32>> = inputs.iter().map(|(p, c)| net.forward(p, *c)).collect();
        let rev: Vec<Vec<f32>> = inputs.iter().rev().map(|(p, c)| net.forward(p, *c)).collect();
        for (a, b) in fwd.iter().zip(rev.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn outputs_are_distributions(seed in 0u64..1000, v in 0.0f32..1.0, cx in 0.0f64..1.0) {
            let net = PropNet::<f32>::new(tiny_shape(), seed);
            let p = net.forward(&vec![v; 48], [cx as f32, 0.3]);
            prop_assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn update_rule_preserves_simplex(pf in 0.0f64..1.0, pb in 0.0f64..1.0, pu in 0.0f64..1.0, seed in 0u64..50) {
            let (img, sp) = stripes();
            let mut ps = ProbabilityState::uniform(sp.len());
            ps.set_probs(1, [pf, pb, pu + 1e-3]);
            let before = ps.probs(1);
            let net = PropNet::<f32>::new(NetShape { patch: 8, ..tiny_shape() }, seed);
            predict_and_update(&net, &mut ps, &sp, &img, 0.65);
            let after = ps.probs(1);
            prop_assert!((after.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((after[2] - before[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn harvest_counts_and_threshold() {
        let (img, sp) = stripes();
        let mut ps = ProbabilityState::uniform(4);
        ps.set_hard(0, LabelClass::Foreground);
        ps.set_hard(3, LabelClass::Background);
        ps.set_probs(1, [0.95, 0.05, 0.0]);
        ps.set_probs(2, [0.5, 0.4, 0.1]);
        let s = harvest_training_set(&ps, &sp, &img, 8, HARVEST_CONFIDENCE).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].superpixel, 1);
        assert_eq!(s[1].class, LabelClass::Foreground);
    }

    #[test]
    fn harvest_skips_without_both_classes() {
        let (img, sp) = stripes();
        let mut ps = ProbabilityState::uniform(4);
        for i in 0..4 {
            ps.set_hard(i, LabelClass::Unknown);
        }
        assert!(matches!(
            harvest_training_set(&ps, &sp, &img, 8, 0.9),
            Err(Error::HarvestSkipped(_))
        ));
    }

    #[test]
    fn update_rule_and_gate() {
        let (img, sp) = stripes();
        let mut net = PropNet::<f64>::new(NetShape { patch: 8, ..tiny_shape() }, 0);
        // force the head to output logits (ln 0.8, ln 0.2)
        net.head.weight.iter_mut().for_each(|w| *w = 0.0);
        net.head.bias = vec![0.8f64.ln(), 0.2f64.ln()];
        let mut ps = ProbabilityState::uniform(4);
        ps.set_probs(0, [0.5, 0.5, 0.0]);
        ps.set_probs(1, [0.9, 0.1, 0.0]);
        ps.set_hard(2, LabelClass::Background);
        let updated = predict_and_update(&net, &mut ps, &sp, &img, 0.65);
        assert_eq!(updated, vec![0, 3]);
        let p = ps.probs(0);
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12 && p[2] == 0.0);
        assert_eq!(ps.probs(1), [0.9, 0.1, 0.0]);
        assert_eq!(ps.probs(2), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = PropNet::<f32>::new(tiny_shape(), 5);
        let bytes = checkpoint::to_bytes(&net);
        assert_eq!(&bytes[..4], b"SSCN");
        assert_eq!(bytes.len(), 8 + 4 * net.param_count());
        let mut other = PropNet::<f32>::new(tiny_shape(), 6);
        checkpoint::load_bytes(&mut other, &bytes).unwrap();
        assert_eq!(other, net);
        let mut wrong = PropNet::<f32>::new(NetShape { embed: 6, ..tiny_shape() }, 6);
        assert!(checkpoint::load_bytes(&mut wrong, &bytes).is_err());
        assert!(checkpoint::load_bytes(&mut other, b"XXXX\x01\0\0\0").is_err());
    }

    #[test]
    fn patch_of_constant_box_is_constant() {
        let (img, sp) = stripes();
        let p = extract_patch(&img, sp.bbox(0), 8);
        assert_eq!(p.len(), 3 * 64);
        assert!(p[..64].iter().all(|&v| (v - 0.9).abs() < 1e-6));
    }
}
