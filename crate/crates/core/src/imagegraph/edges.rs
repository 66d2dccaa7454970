use crate::image::Image;

use super::SuperpixelMap;

/// Exponent applied to pixel edge values when scoring a superpixel.
pub const EDGE_DELTA: f64 = 2.0;

/// Sobel derivatives with replicated borders. Returns `(gx, gy)`.
pub fn sobel(values: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: i64, y: i64| {
        let x = x.clamp(0, w as i64 - 1) as usize;
        let y = y.clamp(0, h as i64 - 1) as usize;
        values[y * w + x]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let p = y as usize * w + x as usize;
            gx[p] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[p] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

fn gaussian_blur(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .map(|d| {
                    let xx = (x as i64 + d).clamp(0, w as i64 - 1) as usize;
                    kernel[(d + r) as usize] * values[y * w + xx]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| {
                    let yy = (y as i64 + d).clamp(0, h as i64 - 1) as usize;
                    kernel[(d + r) as usize] * tmp[yy * w + x]
                })
                .sum();
        }
    }
    out
}

/// Per-pixel edge strength in `[0, 1]`: Sobel magnitude of the luminance,
/// Gaussian-smoothed with sigma 1 px and min-max normalized. A constant image
/// maps to all zeros.
pub fn edge_map(img: &Image) -> Vec<f64> {
    let (w, h) = img.dims();
    let lum = img.luminance();
    let (gx, gy) = sobel(&lum, w, h);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let smooth = gaussian_blur(&mag, w, h, 1.0);
    let lo = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Sobel of exactly-constant input is exactly zero; anything below this is
    // float noise from the blur.
    if hi - lo <= 1e-12 {
        return vec![0.0; w * h];
    }
    smooth.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// Mean of `exp(delta * em)` over each superpixel's pixels.
pub fn edge_scores(sp: &SuperpixelMap, em: &[f64]) -> Vec<f64> {
    assert_eq!(em.len(), sp.width() * sp.height(), "edge map size mismatch");
    (0..sp.len())
        .map(|i| {
            let px = sp.pixels(i);
            assert!(!px.is_empty(), "superpixel {i} is empty");
            px.iter().map(|&p| (em[p] * EDGE_DELTA).exp()).sum::<f64>() / px.len() as f64
        })
        .collect()
}
