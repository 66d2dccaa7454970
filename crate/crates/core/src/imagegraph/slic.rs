//! SLIC over-segmentation with orphan-fragment merging.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::image::Image;

use super::SuperpixelMap;

/// Tuning knobs for [`oversegment_with`].
#[derive(Clone, Copy, Debug)]
pub struct SlicParams {
    /// Weight of spatial distance relative to CIELAB distance.
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// Default superpixel target for an image: one superpixel per ~400 pixels,
/// clamped to `[100, 2000]` and never above the pixel count.
pub fn default_target(width: usize, height: usize) -> usize {
    ((width * height) / 400).clamp(100, 2000).min(width * height)
}

pub fn oversegment(img: &Image, target_n: usize) -> Result<SuperpixelMap> {
    oversegment_with(img, target_n, SlicParams::default())
}

pub fn oversegment_with(img: &Image, target_n: usize, params: SlicParams) -> Result<SuperpixelMap> {
    let (w, h) = img.dims();
    if target_n == 0 || target_n > w * h {
        return Err(Error::InvalidArgument(format!(
            "superpixel target {target_n} outside [1, {}]",
            w * h
        )));
    }
    let lab = to_lab(img);
    let step = ((w * h) as f64 / target_n as f64).sqrt();
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;

    // [l, a, b, x, y]
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (i as f64 + 0.5) * cell_w - 0.5;
            let cy = (j as f64 + 0.5) * cell_h - 0.5;
            let (px, py) = if step >= 4.0 {
                lowest_gradient(&lab, w, h, cx.round() as usize, cy.round() as usize)
                    .map_or((cx, cy), |(x, y)| (x as f64, y as f64))
            } else {
                (cx, cy)
            };
            let c = lab[py.round() as usize * w + px.round() as usize];
            centers.push([c[0], c[1], c[2], px, py]);
        }
    }

    let mut labels: Vec<usize> = (0..w * h)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let i = ((x as f64 / cell_w) as usize).min(nx - 1);
            let j = ((y as f64 / cell_h) as usize).min(ny - 1);
            j * nx + i
        })
        .collect();
    let mut dist = vec![f64::INFINITY; w * h];
    let spatial_weight = (params.compactness / step).powi(2);
    let radius = step.max(cell_w).max(cell_h).ceil() as i64;

    for _ in 0..params.iterations {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c[3].round() as i64 - radius).max(0) as usize;
            let x1 = ((c[3].round() as i64 + radius).min(w as i64 - 1)) as usize;
            let y0 = (c[4].round() as i64 - radius).max(0) as usize;
            let y1 = ((c[4].round() as i64 + radius).min(h as i64 - 1)) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    let l = lab[p];
                    let dc = (l[0] - c[0]).powi(2) + (l[1] - c[1]).powi(2) + (l[2] - c[2]).powi(2);
                    let ds = (x as f64 - c[3]).powi(2) + (y as f64 - c[4]).powi(2);
                    let d = dc + ds * spatial_weight;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (p, &k) in labels.iter().enumerate() {
            let l = lab[p];
            let s = &mut sums[k];
            s[0] += l[0];
            s[1] += l[1];
            s[2] += l[2];
            s[3] += (p % w) as f64;
            s[4] += (p / w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                for d in 0..5 {
                    c[d] = s[d] / s[5];
                }
            }
        }
    }

    let labels = enforce_connectivity(&labels, w, h);
    Ok(SuperpixelMap::from_labels(w, h, labels))
}

/// Pixel in the 3x3 neighbourhood with strictly lower gradient than the
/// centre, if any.
fn lowest_gradient(
    lab: &[[f64; 3]],
    w: usize,
    h: usize,
    cx: usize,
    cy: usize,
) -> Option<(usize, usize)> {
    let grad = |x: usize, y: usize| -> f64 {
        let xm = x.saturating_sub(1);
        let xp = (x + 1).min(w - 1);
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
        d(lab[y * w + xp], lab[y * w + xm]) + d(lab[yp * w + x], lab[ym * w + x])
    };
    let mut best = None;
    let mut best_g = grad(cx, cy);
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let x = cx as i64 + dx;
            let y = cy as i64 + dy;
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let g = grad(x as usize, y as usize);
            if g < best_g {
                best_g = g;
                best = Some((x as usize, y as usize));
            }
        }
    }
    best
}

/// Keeps the largest 4-connected component of each label and merges every
/// other fragment into its largest adjacent superpixel. Output ids are dense,
/// numbered by first appearance in raster order.
pub(crate) fn enforce_connectivity(labels: &[usize], w: usize, h: usize) -> Vec<usize> {
    let n_pix = w * h;
    let mut comp = vec![usize::MAX; n_pix];
    let mut comp_label = Vec::new();
    let mut comp_size: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n_pix {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let lbl = labels[start];
        comp_label.push(lbl);
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == lbl {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        comp_size.push(size);
    }
    let n_comp = comp_label.len();

    // Largest component per label; ties go to the earliest component.
    let max_label = labels.iter().copied().max().unwrap_or(0);
    let mut main_of_label = vec![usize::MAX; max_label + 1];
    for c in 0..n_comp {
        let l = comp_label[c];
        let m = main_of_label[l];
        if m == usize::MAX || comp_size[c] > comp_size[m] {
            main_of_label[l] = c;
        }
    }

    let mut adjacent: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_comp];
    for p in 0..n_pix {
        let (x, y) = (p % w, p / w);
        if x + 1 < w && comp[p] != comp[p + 1] {
            adjacent[comp[p]].insert(comp[p + 1]);
            adjacent[comp[p + 1]].insert(comp[p]);
        }
        if y + 1 < h && comp[p] != comp[p + w] {
            adjacent[comp[p]].insert(comp[p + w]);
            adjacent[comp[p + w]].insert(comp[p]);
        }
    }

    // owner[c]: the kept component that c is (or will be) merged into.
    let mut owner: Vec<Option<usize>> = (0..n_comp)
        .map(|c| (main_of_label[comp_label[c]] == c).then_some(c))
        .collect();
    let mut size: Vec<usize> = comp_size.clone();
    loop {
        let mut progressed = false;
        let mut pending = false;
        for c in 0..n_comp {
            if owner[c].is_some() {
                continue;
            }
            let best = adjacent[c]
                .iter()
                .filter_map(|&a| owner[a])
                .max_by(|&a, &b| size[a].cmp(&size[b]).then(b.cmp(&a)));
            match best {
                Some(target) => {
                    owner[c] = Some(target);
                    size[target] += comp_size[c];
                    progressed = true;
                }
                None => pending = true,
            }
        }
        if !pending || !progressed {
            break;
        }
    }

    let mut remap = vec![usize::MAX; n_comp];
    let mut next = 0;
    let mut out = vec![0; n_pix];
    for p in 0..n_pix {
        let root = owner[comp[p]].unwrap_or(comp[p]);
        if remap[root] == usize::MAX {
            remap[root] = next;
            next += 1;
        }
        out[p] = remap[root];
    }
    out
}

fn to_lab(img: &Image) -> Vec<[f64; 3]> {
    fn lin(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    }
    img.data()
        .chunks_exact(3)
        .map(|c| {
            let (r, g, b) = (lin(c[0]), lin(c[1]), lin(c[2]));
            let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
            let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175 * b;
            let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
            let (fx, fy, fz) = (f(x), f(y), f(z));
            [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(w: usize, h: usize) -> Image {
        Image::filled(w, h, [0.3, 0.6, 0.2]).unwrap()
    }

    #[test]
    fn uniform_image_gives_square_cells() {
        let sp = oversegment(&uniform(64, 64), 16).unwrap();
        assert!((12..=20).contains(&sp.len()));
        for i in 0..sp.len() {
            let (x0, y0, x1, y1) = sp.bbox(i);
            assert_eq!(x1 - x0 + 1, 16);
            assert_eq!(y1 - y0 + 1, 16);
            assert_eq!(sp.pixels(i).len(), 256);
        }
    }

    #[test]
    fn one_superpixel_per_pixel_at_full_target() {
        let img = Image::from_fn(5, 4, |x, y| [x as f64 / 5.0, y as f64 / 4.0, 0.5]).unwrap();
        let sp = oversegment(&img, 20).unwrap();
        assert_eq!(sp.len(), 20);
        assert!((0..20).all(|i| sp.pixels(i).len() == 1));
    }

    #[test]
    fn target_out_of_range() {
        assert!(oversegment(&uniform(4, 4), 0).is_err());
        assert!(oversegment(&uniform(4, 4), 17).is_err());
    }

    #[test]
    fn orphan_fragment_merges_into_largest_neighbour() {
        // label 1 has a stray pixel inside label 0's area
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 0, 1,
            0, 1, 0, 1,
            0, 0, 0, 1,
            2, 2, 2, 2,
        ];
        let out = enforce_connectivity(&labels, 4, 4);
        assert_eq!(out[5], out[0]);
        assert_eq!(out.iter().copied().max().unwrap(), 2);
    }

    #[test]
    fn default_target_clamps() {
        assert_eq!(default_target(128, 128), 100);
        assert_eq!(default_target(640, 480), 768);
        assert_eq!(default_target(4000, 4000), 2000);
        assert_eq!(default_target(5, 5), 25);
    }
}
