//! Procedural composites with known alpha for testing and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::labelstate::{AlphaMatte, Trimap};
use crate::mattesolver::composite_image;

/// Radius of the unknown band around fractional-alpha pixels.
pub const BAND_RADIUS: usize = 6;
const FG_TEXTURE: f64 = 0.03;
const BG_TEXTURE: (f64, f64) = (0.06, 0.12);
const MIN_DISTANCE: f64 = 0.4;
const MIN_LUMA_GAP: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Ring,
    Blob,
    Band,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Disk, Shape::Ring, Shape::Blob, Shape::Band];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Ring => "ring",
            Shape::Blob => "blob",
            Shape::Band => "band",
        }
    }
}

/// An evaluation case: the image plus its ground truth.
#[derive(Clone, Debug)]
pub struct Case {
    pub name: String,
    pub image: Image,
    pub alpha: AlphaMatte,
    pub trimap: Trimap,
}

fn ramp(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn luma(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// A colour at least `MIN_DISTANCE` from `other` in RGB and `MIN_LUMA_GAP`
/// apart in luminance.
fn far_color(rng: &mut ChaCha8Rng, other: Option<[f64; 3]>) -> [f64; 3] {
    loop {
        let c = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
        match other {
            Some(o)
                if (0..3).map(|k| (c[k] - o[k]).powi(2)).sum::<f64>().sqrt() < MIN_DISTANCE
                    || (luma(c) - luma(o)).abs() < MIN_LUMA_GAP =>
            {
                continue
            }
            _ => return c,
        }
    }
}

/// Smooth colour gradient plus a texture of amplitude `amp`: oriented
/// stripes or bilinear value noise, tinted per channel.
fn layer(w: usize, h: usize, base: [f64; 3], amp: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    let tilt = [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)];
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..1.0));
    let stripes = rng.gen_bool(0.5);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let freq = rng.gen_range(0.25..0.6);
    let cell = rng.gen_range(6.0..12.0);
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let noise = |x: f64, y: f64| {
        let (gx, gy) = (x / cell, y / cell);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let at = |i: usize, j: usize| lattice[j * gw + i];
        let top = at(x0, y0) * (1.0 - sx) + at(x0 + 1, y0) * sx;
        let bot = at(x0, y0 + 1) * (1.0 - sx) + at(x0 + 1, y0 + 1) * sx;
        top * (1.0 - sy) + bot * sy
    };
    Image::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let u = fx / w as f64 - 0.5;
        let v = fy / h as f64 - 0.5;
        let t = if stripes {
            (freq * (fx * angle.cos() + fy * angle.sin())).sin()
        } else {
            noise(fx, fy)
        };
        std::array::from_fn(|k| base[k] + tilt[0] * u + tilt[1] * v + amp * tint[k] * t)
    })
}

/// Alpha for one shape: 1 inside, 0 outside, a linear ramp of width `soft`
/// across the boundary.
fn shape_alpha(shape: Shape, w: usize, h: usize, rng: &mut ChaCha8Rng) -> AlphaMatte {
    let s = w.min(h) as f64;
    let soft = rng.gen_range(2.0..4.0);
    let cx = w as f64 * rng.gen_range(0.4..0.6);
    let cy = h as f64 * rng.gen_range(0.4..0.6);
    match shape {
        Shape::Disk => {
            let r = s * rng.gen_range(0.2..0.3);
            AlphaMatte::from_fn(w, h, |x, y| {
                let d = (x as f64 - cx).hypot(y as f64 - cy);
                ramp((r - d) / soft + 0.5)
            })
        }
        Shape::Ring => {
            let r_out = s * rng.gen_range(0.36..0.42);
            let r_in = r_out - s * rng.gen_range(0.22..0.27);
            AlphaMatte::from_fn(w, h, |x, y| {
                let d = (x as f64 - cx).hypot(y as f64 - cy);
                ramp(((r_out - d).min(d - r_in)) / soft + 0.5)
            })
        }
        Shape::Blob => {
            let disks: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        cx + s * rng.gen_range(-0.12..0.12),
                        cy + s * rng.gen_range(-0.12..0.12),
                        s * rng.gen_range(0.12..0.2),
                    )
                })
                .collect();
            AlphaMatte::from_fn(w, h, |x, y| {
                let sd = disks
                    .iter()
                    .map(|&(dx, dy, r)| (x as f64 - dx).hypot(y as f64 - dy) - r)
                    .fold(f64::INFINITY, f64::min);
                ramp(-sd / soft + 0.5)
            })
        }
        Shape::Band => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (nx, ny) = (angle.cos(), angle.sin());
            let width = rng.gen_range(8.0..14.0);
            AlphaMatte::from_fn(w, h, |x, y| {
                let d = (x as f64 - cx) * nx + (y as f64 - cy) * ny;
                ramp(d / width + 0.5)
            })
        }
    }
}

/// Foreground / background trimap with every pixel within `radius` of a
/// fractional-alpha pixel marked unknown.
pub fn band_trimap(alpha: &AlphaMatte, radius: usize) -> Trimap {
    let (w, h) = alpha.dims();
    let a = alpha.values();
    let soft: Vec<bool> = a.iter().map(|&v| v > 1e-6 && v < 1.0 - 1e-6).collect();
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut unknown = vec![false; w * h];
    for p in (0..w * h).filter(|&p| soft[p]) {
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        for &(dx, dy) in &offsets {
            let (qx, qy) = (x + dx, y + dy);
            if qx >= 0 && qy >= 0 && qx < w as isize && qy < h as isize {
                unknown[qy as usize * w + qx as usize] = true;
            }
        }
    }
    let values = (0..w * h)
        .map(|p| match (unknown[p], a[p] >= 0.5) {
            (true, _) => 128,
            (false, true) => 255,
            (false, false) => 0,
        })
        .collect();
    Trimap::new(w, h, values).expect("legal trimap values")
}

/// Case `index` of the suite generated from `seed`. Shapes cycle through
/// disk, ring, blob and band.
pub fn generate_case(index: usize, seed: u64, width: usize, height: usize) -> Result<Case> {
    if width < 16 || height < 16 {
        return Err(Error::InvalidArgument("synthetic cases need at least 16x16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
    let shape = Shape::ALL[index % Shape::ALL.len()];
    let fg_base = far_color(&mut rng, None);
    let bg_base = far_color(&mut rng, Some(fg_base));
    let fg = layer(width, height, fg_base, FG_TEXTURE, &mut rng)?;
    let bg_amp = rng.gen_range(BG_TEXTURE.0..BG_TEXTURE.1);
    let bg = layer(width, height, bg_base, bg_amp, &mut rng)?;
    let alpha = shape_alpha(shape, width, height, &mut rng);
    let image = composite_image(&fg, &bg, &alpha)?;
    let trimap = band_trimap(&alpha, BAND_RADIUS);
    Ok(Case {
        name: format!("{:03}-{}", index, shape.name()),
        image,
        alpha,
        trimap,
    })
}

pub fn generate_suite(count: usize, seed: u64, width: usize, height: usize) -> Result<Vec<Case>> {
    (0..count).map(|i| generate_case(i, seed, width, height)).collect()
}

/// Writes `dir/<name>/{image,alpha,trimap}.png`.
pub fn write_case(case: &Case, dir: &Path) -> Result<PathBuf> {
    let d = dir.join(&case.name);
    fs::create_dir_all(&d)?;
    case.image.save_png(d.join("image.png"))?;
    case.alpha.save_png(d.join("alpha.png"))?;
    case.trimap.save_png(d.join("trimap.png"))?;
    Ok(d)
}

pub fn load_case(dir: &Path) -> Result<Case> {
    let image = load_image(dir.join("image.png"))?;
    let alpha = AlphaMatte::load(dir.join("alpha.png"))?;
    let trimap = Trimap::load(dir.join("trimap.png"))?;
    for d in [alpha.dims(), trimap.dims()] {
        if d != image.dims() {
            return Err(Error::DimensionMismatch {
                expected: image.dims(),
                actual: d,
            });
        }
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into());
    Ok(Case {
        name,
        image,
        alpha,
        trimap,
    })
}

/// Every subdirectory of `dir` holding a case, sorted by name.
pub fn load_suite(dir: &Path) -> Result<Vec<Case>> {
    if !dir.is_dir() {
        return Err(Error::FileNotFound(dir.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("image.png").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_case(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelstate::LabelClass;

    #[test]
    fn cases_are_deterministic_and_cycle_shapes() {
        let a = generate_suite(4, 7, 32, 32).unwrap();
        let b = generate_suite(4, 7, 32, 32).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.alpha, y.alpha);
        }
        let names: Vec<&str> = a.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["000-disk", "001-ring", "002-blob", "003-band"]);
        assert_ne!(generate_case(0, 8, 32, 32).unwrap().image, a[0].image);
    }

    #[test]
    fn trimap_band_covers_soft_pixels() {
        for case in generate_suite(4, 1, 64, 64).unwrap() {
            let a = case.alpha.values();
            let classes = case.trimap.classes();
            assert!(a.iter().any(|&v| v == 1.0) && a.iter().any(|&v| v == 0.0));
            for (p, c) in classes.iter().enumerate() {
                match c {
                    LabelClass::Foreground => assert_eq!(a[p], 1.0),
                    LabelClass::Background => assert_eq!(a[p], 0.0),
                    LabelClass::Unknown => {}
                }
            }
        }
    }

    #[test]
    fn band_radius_is_euclidean() {
        let mut v = vec![0.0; 21 * 21];
        v[10 * 21 + 10] = 0.5;
        let tri = band_trimap(&AlphaMatte::new(21, 21, v).unwrap(), 6);
        let unknown = tri.classes().iter().filter(|c| **c == LabelClass::Unknown).count();
        // lattice points in a radius-6 disk
        assert_eq!(unknown, 113);
    }

    #[test]
    fn write_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cases = generate_suite(2, 3, 24, 20).unwrap();
        for c in &cases {
            write_case(c, dir.path()).unwrap();
        }
        let back = load_suite(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].name, cases[1].name);
        assert_eq!(back[0].trimap, cases[0].trimap);
        assert!(crate::labelstate::rmse(&back[0].alpha, &cases[0].alpha).unwrap() < 0.003);
        assert!(load_suite(&dir.path().join("missing")).is_err());
    }
}
