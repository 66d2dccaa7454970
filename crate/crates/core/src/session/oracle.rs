use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::imagegraph::SuperpixelMap;
use crate::infoselect::Rect;
use crate::labelstate::{LabelClass, ScribbleStroke, Trimap, DEFAULT_BRUSH_RADIUS};

/// Minimum share of a superpixel's pixels that must carry the stroke class.
pub const PURITY: f64 = 0.9;
const MAX_POINTS: usize = 5;

/// Share of superpixel `i`'s pixels inside `region` that carry `class`; the
/// whole superpixel counts when none of it lies inside.
fn purity(sp: &SuperpixelMap, gt: &Trimap, region: &Rect, i: usize, class: LabelClass) -> f64 {
    let w = sp.width();
    let all = sp.pixels(i);
    let inside: Vec<usize> = all.iter().copied().filter(|&p| region.contains(p % w, p / w)).collect();
    let px = if inside.is_empty() { all } else { &inside[..] };
    px.iter().filter(|&&p| gt.class_at(p) == class).count() as f64 / px.len() as f64
}

/// Strokes a careful user would draw in `region`: per ground-truth class, one
/// polyline through up to five centroids of superpixels (among `members`)
/// that are at least 90% that class within the region. A stroke only grows
/// when every superpixel its brush touches is itself that pure, so oracle
/// strokes never conflict.
pub fn oracle_scribbles(
    region: &Rect,
    members: &[usize],
    gt: &Trimap,
    sp: &SuperpixelMap,
    seed: u64,
) -> Vec<ScribbleStroke> {
    let (w, h) = (sp.width(), sp.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for class in LabelClass::ALL {
        let present = (region.y..region.y + region.height)
            .any(|y| (region.x..region.x + region.width).any(|x| gt.class_at(y * w + x) == class));
        if !present {
            continue;
        }
        let safe = |s: &ScribbleStroke| {
            let mut seen = vec![false; sp.len()];
            s.rasterize(w, h).into_iter().all(|p| {
                let i = sp.labels()[p];
                if seen[i] {
                    return true;
                }
                seen[i] = true;
                purity(sp, gt, region, i, class) >= PURITY
            })
        };
        let mut pool: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| purity(sp, gt, region, i, class) >= PURITY)
            .filter(|&i| {
                let (x, y) = sp.centroid_pixel(i);
                region.contains(x, y)
            })
            .collect();
        pool.shuffle(&mut rng);
        let point = |i: usize| {
            let (x, y) = sp.centroid_pixel(i);
            [x as i64, y as i64]
        };
        let mut stroke: Option<ScribbleStroke> = None;
        while stroke.is_none() {
            let Some(i) = pool.pop() else { break };
            let s = ScribbleStroke::new(class, vec![point(i)]).with_radius(DEFAULT_BRUSH_RADIUS);
            if safe(&s) {
                stroke = Some(s);
            }
        }
        if let Some(s) = stroke.as_mut() {
            // greedy walk to the nearest remaining candidate
            while s.points.len() < MAX_POINTS && !pool.is_empty() {
                let last = *s.points.last().expect("non-empty");
                let k = (0..pool.len())
                    .min_by_key(|&k| {
                        let [x, y] = point(pool[k]);
                        ((x - last[0]).pow(2) + (y - last[1]).pow(2), k)
                    })
                    .expect("non-empty pool");
                let j = pool.swap_remove(k);
                let mut ext = s.clone();
                ext.points.push(point(j));
                if safe(&ext) {
                    *s = ext;
                }
            }
        }
        out.extend(stroke);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(split: usize) -> (SuperpixelMap, Trimap) {
        // 16x16, 4x4 superpixels of 4x4 pixels; foreground left of `split`
        let labels = (0..256).map(|p| (p / 16 / 4) * 4 + (p % 16) / 4).collect();
        let sp = SuperpixelMap::from_labels(16, 16, labels);
        let gt = Trimap::new(16, 16, (0..256).map(|p| if p % 16 < split { 255 } else { 0 }).collect()).unwrap();
        (sp, gt)
    }

    #[test]
    fn pure_foreground_region_gets_one_stroke() {
        let (sp, gt) = setup(16);
        let members: Vec<usize> = (0..16).collect();
        let s = oracle_scribbles(&Rect::new(0, 0, 16, 16), &members, &gt, &sp, 1);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].class, LabelClass::Foreground);
        assert_eq!(s[0].radius, 3);
        assert!(s[0].points.len() > 1 && s[0].points.len() <= 5);
    }

    #[test]
    fn mixed_region_gets_one_stroke_per_class_without_conflicts() {
        let (sp, gt) = setup(8);
        let members: Vec<usize> = (0..16).collect();
        let strokes = oracle_scribbles(&Rect::new(0, 0, 16, 16), &members, &gt, &sp, 4);
        let classes: Vec<LabelClass> = strokes.iter().map(|s| s.class).collect();
        assert_eq!(classes, [LabelClass::Foreground, LabelClass::Background]);
        let mut ps = crate::labelstate::ProbabilityState::uniform(16);
        ps.apply_scribbles(&sp, &strokes, None).unwrap();
        for i in ps.labeled() {
            let want = if i % 4 < 2 { LabelClass::Foreground } else { LabelClass::Background };
            assert_eq!(ps.hard_label(i), Some(want));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (sp, gt) = setup(8);
        let members: Vec<usize> = (0..16).collect();
        let r = Rect::new(0, 0, 16, 16);
        assert_eq!(
            oracle_scribbles(&r, &members, &gt, &sp, 9),
            oracle_scribbles(&r, &members, &gt, &sp, 9)
        );
    }

    #[test]
    fn impure_region_gets_nothing() {
        let (sp, gt) = setup(2);
        // superpixels 0 and 4 straddle the split at half purity
        let s = oracle_scribbles(&Rect::new(0, 0, 4, 8), &[0, 4], &gt, &sp, 0);
        assert!(s.is_empty());
    }
}
