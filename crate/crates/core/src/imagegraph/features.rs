use std::f64::consts::PI;

use crate::image::Image;

use super::edges::{edge_map, edge_scores, sobel};
use super::SuperpixelMap;

/// Weights of the color-mean, color-histogram and texture-histogram terms.
pub const LAMBDA: [f64; 3] = [0.4, 0.35, 0.25];
/// Bandwidth of the Gaussian color-mean kernel (RGB in `[0, 1]`).
pub const COLOR_SIGMA: f64 = 0.2;
/// Chi-square denominator bias.
pub const THETA: f64 = 1e-6;
pub const DEFAULT_COLOR_BINS: usize = 4;
pub const TEXTURE_BINS: usize = 8;

/// Mid-level features, one row per superpixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    /// Mean RGB.
    pub color_mean: Vec<[f64; 3]>,
    color_hist: Vec<f64>,
    texture_hist: Vec<f64>,
    color_bins: usize,
    /// Edge score per superpixel.
    pub edge: Vec<f64>,
}

/// The three pairwise comparisons shared by the affinity matrix and the
/// region similarity/diversity terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTerms {
    /// `exp(-|cm_i - cm_j|^2 / (2 sigma^2))`
    pub gaussian: f64,
    pub chi_color: f64,
    pub chi_texture: f64,
}

/// `sum_k 2 (a_k - b_k)^2 / (a_k + b_k + theta)`
pub fn chi_square(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| 2.0 * (x - y) * (x - y) / (x + y + THETA))
        .sum()
}

impl FeatureTable {
    /// Assembles a table from raw rows; used by tests and synthetic graphs.
    pub fn from_parts(
        color_mean: Vec<[f64; 3]>,
        color_hist: Vec<Vec<f64>>,
        texture_hist: Vec<Vec<f64>>,
        edge: Vec<f64>,
    ) -> Self {
        let n = color_mean.len();
        assert!(color_hist.len() == n && texture_hist.len() == n && edge.len() == n);
        let cells = color_hist.first().map_or(0, Vec::len);
        let color_bins = (cells as f64).cbrt().round() as usize;
        Self {
            color_mean,
            color_hist: color_hist.concat(),
            texture_hist: texture_hist.concat(),
            color_bins,
            edge,
        }
    }

    pub fn len(&self) -> usize {
        self.color_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.color_mean.is_empty()
    }

    pub fn color_bins(&self) -> usize {
        self.color_bins
    }

    pub fn color_hist(&self, i: usize) -> &[f64] {
        let c = self.color_hist.len() / self.len();
        &self.color_hist[i * c..(i + 1) * c]
    }

    pub fn texture_hist(&self, i: usize) -> &[f64] {
        let c = self.texture_hist.len() / self.len();
        &self.texture_hist[i * c..(i + 1) * c]
    }

    pub fn pair_terms(&self, i: usize, j: usize) -> PairTerms {
        let a = self.color_mean[i];
        let b = self.color_mean[j];
        let d2: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
        PairTerms {
            gaussian: (-d2 / (2.0 * COLOR_SIGMA * COLOR_SIGMA)).exp(),
            chi_color: chi_square(self.color_hist(i), self.color_hist(j)),
            chi_texture: chi_square(self.texture_hist(i), self.texture_hist(j)),
        }
    }
}

/// Computes color mean, joint RGB histogram (`bins^3` cells), gradient-
/// orientation texture histogram and edge score for every superpixel.
pub fn extract_features(img: &Image, sp: &SuperpixelMap, bins: usize) -> FeatureTable {
    assert_eq!(img.dims(), (sp.width(), sp.height()), "superpixel map size mismatch");
    assert!(bins >= 1);
    let (w, h) = img.dims();
    let n = sp.len();
    let cells = bins * bins * bins;
    let (gx, gy) = sobel(&img.luminance(), w, h);

    let quant = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
    let mut color_mean = Vec::with_capacity(n);
    let mut color_hist = vec![0.0; n * cells];
    let mut texture_hist = vec![0.0; n * TEXTURE_BINS];
    for i in 0..n {
        let px = sp.pixels(i);
        let mut sum = [0.0; 3];
        let ch = &mut color_hist[i * cells..(i + 1) * cells];
        let th = &mut texture_hist[i * TEXTURE_BINS..(i + 1) * TEXTURE_BINS];
        for &p in px {
            let c = img.rgb_at(p);
            for k in 0..3 {
                sum[k] += c[k];
            }
            ch[(quant(c[0]) * bins + quant(c[1])) * bins + quant(c[2])] += 1.0;
            let mag = gx[p].hypot(gy[p]);
            if mag > 0.0 {
                let theta = gy[p].atan2(gx[p]).rem_euclid(PI);
                let b = ((theta / PI * TEXTURE_BINS as f64) as usize).min(TEXTURE_BINS - 1);
                th[b] += mag;
            }
        }
        let k = px.len() as f64;
        color_mean.push(sum.map(|s| s / k));
        ch.iter_mut().for_each(|v| *v /= k);
        let mass: f64 = th.iter().sum();
        if mass > 0.0 {
            th.iter_mut().for_each(|v| *v /= mass);
        } else {
            th.iter_mut().for_each(|v| *v = 1.0 / TEXTURE_BINS as f64);
        }
    }
    let edge = edge_scores(sp, &edge_map(img));
    FeatureTable {
        color_mean,
        color_hist,
        texture_hist,
        color_bins: bins,
        edge,
    }
}
