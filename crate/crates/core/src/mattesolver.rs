//! Closed-form alpha matting from an image and a trimap, compositing, and a
//! hook for running third-party matting programs.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::labelstate::{AlphaMatte, LabelClass, Trimap};
use crate::sparse::{conjugate_gradient, CgOptions, CgReport, CsrMatrix};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const CONSTRAINT_WEIGHT: f64 = 100.0;
/// Images wider or taller than this are solved at half resolution.
pub const HALF_RES_LIMIT: usize = 512;
pub const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(120);

const WIN: usize = 3;
const WIN_AREA: f64 = (WIN * WIN) as f64;
/// Pixels coupled by a 3x3 window lie within this 5x5 neighbourhood.
const BAND: usize = 2 * WIN - 1;

/// Matting Laplacian of one image.
#[derive(Clone, Debug)]
pub struct MattingSystem {
    pub width: usize,
    pub height: usize,
    pub eps: f64,
    pub laplacian: CsrMatrix,
}

/// Builds the closed-form matting Laplacian over all fully contained 3x3
/// windows.
pub fn matting_laplacian(img: &Image, eps: f64) -> Result<MattingSystem> {
    let (w, h) = img.dims();
    if w < WIN || h < WIN {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} is smaller than the {WIN}x{WIN} matting window"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let n = w * h;
    // band[p * 25 + (dy + 2) * 5 + (dx + 2)] holds L[p, p + (dx, dy)]
    let mut band = vec![0.0f64; n * BAND * BAND];
    let mut idx = [0usize; WIN * WIN];
    let mut col = [Vector3::zeros(); WIN * WIN];
    for cy in 1..h - 1 {
        for cx in 1..w - 1 {
            let mut mean = Vector3::zeros();
            for (k, (dy, dx)) in (0..WIN).flat_map(|dy| (0..WIN).map(move |dx| (dy, dx))).enumerate() {
                let p = (cy + dy - 1) * w + (cx + dx - 1);
                idx[k] = p;
                col[k] = Vector3::from(img.rgb_at(p));
                mean += col[k];
            }
            mean /= WIN_AREA;
            let mut cov = Matrix3::zeros();
            for c in &col {
                let d = c - mean;
                cov += d * d.transpose();
            }
            cov /= WIN_AREA;
            cov += Matrix3::identity() * (eps / WIN_AREA);
            let inv = cov.try_inverse().ok_or_else(|| {
                Error::InvalidArgument("singular window covariance".into())
            })?;
            let proj: Vec<Vector3<f64>> = col.iter().map(|c| inv * (c - mean)).collect();
            for a in 0..WIN * WIN {
                for b in a..WIN * WIN {
                    let g = (1.0 + proj[a].dot(&(col[b] - mean))) / WIN_AREA;
                    let v = if a == b { 1.0 - g } else { -g };
                    let (pa, pb) = (idx[a], idx[b]);
                    band[slot(pa, pb, w)] += v;
                    if a != b {
                        band[slot(pb, pa, w)] += v;
                    }
                }
            }
        }
    }
    // exact zero row sums regardless of cancellation in ill-conditioned windows
    let centre = 2 * BAND + 2;
    for row in band.chunks_exact_mut(BAND * BAND) {
        row[centre] = 0.0;
        row[centre] = -row.iter().sum::<f64>();
    }
    let rows = (0..n)
        .map(|p| {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let mut row = Vec::new();
            for dy in -2..=2isize {
                for dx in -2..=2isize {
                    let (qx, qy) = (x + dx, y + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let v = band[p * BAND * BAND + ((dy + 2) as usize) * BAND + (dx + 2) as usize];
                    if v != 0.0 {
                        row.push((qy as usize * w + qx as usize, v));
                    }
                }
            }
            row
        })
        .collect();
    Ok(MattingSystem {
        width: w,
        height: h,
        eps,
        laplacian: CsrMatrix::from_rows(rows),
    })
}

#[inline]
fn slot(p: usize, q: usize, w: usize) -> usize {
    let dx = (q % w) as isize - (p % w) as isize;
    let dy = (q / w) as isize - (p / w) as isize;
    p * BAND * BAND + ((dy + 2) as usize) * BAND + (dx + 2) as usize
}

/// Minimizes `a^T L a + lambda * sum_known (a_p - t_p)^2` and clamps to `[0, 1]`.
pub fn solve_alpha(sys: &MattingSystem, trimap: &Trimap, lambda: f64) -> Result<(AlphaMatte, CgReport)> {
    if trimap.dims() != (sys.width, sys.height) {
        return Err(Error::DimensionMismatch {
            expected: (sys.width, sys.height),
            actual: trimap.dims(),
        });
    }
    if trimap.known_count() == 0 {
        return Err(Error::NoKnownPixels);
    }
    let classes = trimap.classes();
    let mut diag = vec![0.0; classes.len()];
    let mut rhs = vec![0.0; classes.len()];
    let mut x = vec![0.5; classes.len()];
    for (p, c) in classes.iter().enumerate() {
        let t = match c {
            LabelClass::Foreground => 1.0,
            LabelClass::Background => 0.0,
            LabelClass::Unknown => continue,
        };
        diag[p] = lambda;
        rhs[p] = lambda * t;
        x[p] = t;
    }
    let a = sys.laplacian.add_diagonal(&diag);
    let opts = CgOptions {
        max_iterations: 20_000.max(2 * classes.len()),
        ..CgOptions::default()
    };
    let report = conjugate_gradient(&a, &rhs, &mut x, opts)?;
    Ok((AlphaMatte::new(sys.width, sys.height, x)?, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatteOptions {
    pub eps: f64,
    pub lambda: f64,
    /// Solve images larger than 512 on a half-resolution grid.
    pub downsample_large: bool,
}

impl Default for MatteOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            lambda: CONSTRAINT_WEIGHT,
            downsample_large: true,
        }
    }
}

/// Builds the Laplacian and solves, going through a half-resolution grid for
/// large images. Known trimap pixels are reimposed after upsampling.
pub fn matte(img: &Image, trimap: &Trimap, opts: &MatteOptions) -> Result<AlphaMatte> {
    let (w, h) = img.dims();
    if trimap.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: trimap.dims(),
        });
    }
    if !(opts.downsample_large && (w > HALF_RES_LIMIT || h > HALF_RES_LIMIT)) {
        let sys = matting_laplacian(img, opts.eps)?;
        return Ok(solve_alpha(&sys, trimap, opts.lambda)?.0);
    }
    let (sw, sh) = (w.div_ceil(2), h.div_ceil(2));
    let small = img.resize(sw, sh)?;
    let small_tri: Vec<u8> = (0..sw * sh)
        .map(|p| {
            let (x, y) = (p % sw, p / sw);
            trimap.values()[(2 * y).min(h - 1) * w + (2 * x).min(w - 1)]
        })
        .collect();
    let small_tri = Trimap::new(sw, sh, small_tri)?;
    let sys = matting_laplacian(&small, opts.eps)?;
    let (a, _) = solve_alpha(&sys, &small_tri, opts.lambda)?;
    let sx = sw as f64 / w as f64;
    let sy = sh as f64 / h as f64;
    Ok(AlphaMatte::from_fn(w, h, |x, y| match trimap.class_at(y * w + x) {
        LabelClass::Foreground => 1.0,
        LabelClass::Background => 0.0,
        LabelClass::Unknown => bilinear(&a, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5),
    }))
}

fn bilinear(a: &AlphaMatte, x: f64, y: f64) -> f64 {
    let (w, h) = a.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = a.at(x0, y0) * (1.0 - fx) + a.at(x1, y0) * fx;
    let bot = a.at(x0, y1) * (1.0 - fx) + a.at(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// `I = a F + (1 - a) B` per pixel.
pub fn composite_image(fg: &Image, bg: &Image, alpha: &AlphaMatte) -> Result<Image> {
    for d in [bg.dims(), alpha.dims()] {
        if d != fg.dims() {
            return Err(Error::DimensionMismatch {
                expected: fg.dims(),
                actual: d,
            });
        }
    }
    let data = fg
        .data()
        .chunks_exact(3)
        .zip(bg.data().chunks_exact(3))
        .zip(alpha.values())
        .flat_map(|((f, b), &a)| (0..3).map(move |k| a * f[k] + (1.0 - a) * b[k]))
        .collect();
    Image::new(fg.width(), fg.height(), data)
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Runs `template` through `sh -c` after substituting `{image}`, `{trimap}`
/// and `{alpha}` with paths in a fresh temporary directory, then reads the
/// alpha PNG the command wrote.
pub fn external_solver(template: &str, img: &Image, trimap: &Trimap, timeout: Duration) -> Result<AlphaMatte> {
    if trimap.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: trimap.dims(),
        });
    }
    let dir = tempfile::tempdir()?;
    let image_path = dir.path().join("input.png");
    let trimap_path = dir.path().join("trimap.png");
    let alpha_path = dir.path().join("alpha.png");
    img.save_png(&image_path)?;
    trimap.save_png(&trimap_path)?;
    let cmd = template
        .replace("{image}", &shell_quote(&image_path))
        .replace("{trimap}", &shell_quote(&trimap_path))
        .replace("{alpha}", &shell_quote(&alpha_path));
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::ExternalSolver(format!("failed to start: {e}")))?;
    let mut stderr = child.stderr.take().expect("piped stderr");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let start = Instant::now();
    let status = loop {
        if let Some(st) = child.try_wait()? {
            break st;
        }
        if start.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::ExternalSolver(format!("timed out after {:?}", timeout)));
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let err_text = reader.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::ExternalSolver(format!(
            "exited with {status}: {}",
            err_text.trim()
        )));
    }
    if !alpha_path.exists() {
        return Err(Error::ExternalSolver("no alpha.png produced".into()));
    }
    let a = AlphaMatte::load(&alpha_path).map_err(|e| match e {
        Error::Decode(m) => Error::ExternalSolver(format!("unreadable alpha.png: {m}")),
        other => other,
    })?;
    if a.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: a.dims(),
        });
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_tone(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            if x + y < w {
                [0.9, 0.2, 0.1]
            } else {
                [0.1, 0.3, 0.8]
            }
        })
        .unwrap()
    }

    /// Independent dense accumulation over windows.
    fn dense_oracle(img: &Image, eps: f64) -> Vec<Vec<f64>> {
        let (w, h) = img.dims();
        let n = w * h;
        let mut l = vec![vec![0.0; n]; n];
        for cy in 1..h - 1 {
            for cx in 1..w - 1 {
                let px: Vec<usize> = (0..9).map(|k| (cy + k / 3 - 1) * w + cx + k % 3 - 1).collect();
                let c: Vec<[f64; 3]> = px.iter().map(|&p| img.rgb_at(p)).collect();
                let mut mu = [0.0; 3];
                for v in &c {
                    for k in 0..3 {
                        mu[k] += v[k] / 9.0;
                    }
                }
                let mut s = nalgebra::DMatrix::<f64>::zeros(3, 3);
                for v in &c {
                    for a in 0..3 {
                        for b in 0..3 {
                            s[(a, b)] += (v[a] - mu[a]) * (v[b] - mu[b]) / 9.0;
                        }
                    }
                }
                for a in 0..3 {
                    s[(a, a)] += eps / 9.0;
                }
                let inv = s.try_inverse().unwrap();
                for i in 0..9 {
                    for j in 0..9 {
                        let di = nalgebra::DVector::from_fn(3, |k, _| c[i][k] - mu[k]);
                        let dj = nalgebra::DVector::from_fn(3, |k, _| c[j][k] - mu[k]);
                        let g = (1.0 + (di.transpose() * &inv * dj)[(0, 0)]) / 9.0;
                        l[px[i]][px[j]] += if i == j { 1.0 } else { 0.0 } - g;
                    }
                }
            }
        }
        l
    }

    #[test]
    fn matches_dense_oracle_on_two_tone() {
        let img = two_tone(5, 5);
        let sys = matting_laplacian(&img, DEFAULT_EPS).unwrap();
        let oracle = dense_oracle(&img, DEFAULT_EPS);
        for i in 0..25 {
            for j in 0..25 {
                let a = sys.laplacian.get(i, j);
                let b = oracle[i][j];
                // two-tone windows have near-singular covariances
                assert!((a - b).abs() <= 1e-7, "({i},{j}) {a} vs {b}");
            }
        }
    }

    #[test]
    fn matches_dense_oracle_on_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_fn(5, 5, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap();
        let sys = matting_laplacian(&img, DEFAULT_EPS).unwrap();
        let oracle = dense_oracle(&img, DEFAULT_EPS);
        let mut worst: f64 = 0.0;
        for i in 0..25 {
            for j in 0..25 {
                worst = worst.max((sys.laplacian.get(i, j) - oracle[i][j]).abs());
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn constant_image_has_constant_null_space() {
        let img = Image::filled(7, 6, [0.4, 0.5, 0.6]).unwrap();
        let sys = matting_laplacian(&img, DEFAULT_EPS).unwrap();
        assert!(sys.laplacian.quadratic_form(&vec![1.0; 42]).abs() < 1e-9);
        assert!(sys.laplacian.quadratic_form(&vec![0.37; 42]).abs() < 1e-9);
    }

    #[test]
    fn too_small_image_errors() {
        let img = Image::filled(2, 5, [0.0; 3]).unwrap();
        assert!(matting_laplacian(&img, DEFAULT_EPS).is_err());
        let img = Image::filled(3, 3, [0.0; 3]).unwrap();
        assert!(matting_laplacian(&img, DEFAULT_EPS).is_ok());
        assert!(matting_laplacian(&img, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn laplacian_invariants(
            w in 3usize..9, h in 3usize..9, seed in 0u64..1000,
            x in proptest::collection::vec(-1.0f64..1.0, 64)
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap();
            let l = matting_laplacian(&img, DEFAULT_EPS).unwrap().laplacian;
            for i in 0..w * h {
                prop_assert!(l.row_sum(i).abs() < 1e-9);
                for (j, v) in l.row(i) {
                    prop_assert!((v - l.get(j, i)).abs() < 1e-12);
                }
            }
            prop_assert!(l.quadratic_form(&x[..w * h]) >= -1e-9);
        }
    }

    #[test]
    fn fully_known_trimap_is_reproduced() {
        let img = two_tone(10, 10);
        let vals: Vec<u8> = (0..100).map(|p| if (p % 10) + p / 10 < 10 { 255 } else { 0 }).collect();
        let tri = Trimap::new(10, 10, vals.clone()).unwrap();
        let sys = matting_laplacian(&img, DEFAULT_EPS).unwrap();
        let (a, _) = solve_alpha(&sys, &tri, CONSTRAINT_WEIGHT).unwrap();
        for (p, &v) in vals.iter().enumerate() {
            assert!((a.values()[p] - v as f64 / 255.0).abs() < 1e-3);
        }
    }

    #[test]
    fn all_unknown_trimap_errors() {
        let img = two_tone(6, 6);
        let tri = Trimap::new(6, 6, vec![128; 36]).unwrap();
        let sys = matting_laplacian(&img, DEFAULT_EPS).unwrap();
        assert!(matches!(solve_alpha(&sys, &tri, CONSTRAINT_WEIGHT), Err(Error::NoKnownPixels)));
    }

    #[test]
    fn constraints_are_respected_and_energy_decreases() {
        let img = two_tone(16, 16);
        let vals: Vec<u8> = (0..256)
            .map(|p| match (p % 16) + p / 16 {
                s if s < 12 => 255,
                s if s > 19 => 0,
                _ => 128,
            })
            .collect();
        let tri = Trimap::new(16, 16, vals).unwrap();
        let sys = matting_laplacian(&img, DEFAULT_EPS).unwrap();
        let (a, _) = solve_alpha(&sys, &tri, CONSTRAINT_WEIGHT).unwrap();
        for (p, c) in tri.classes().iter().enumerate() {
            match c {
                LabelClass::Foreground => assert!((a.values()[p] - 1.0).abs() < 0.02),
                LabelClass::Background => assert!(a.values()[p] < 0.02),
                LabelClass::Unknown => {}
            }
        }
        let classes = tri.classes();
        let diag: Vec<f64> = classes.iter().map(|c| if *c == LabelClass::Unknown { 0.0 } else { 100.0 }).collect();
        let rhs: Vec<f64> = classes.iter().map(|c| if *c == LabelClass::Foreground { 100.0 } else { 0.0 }).collect();
        let m = sys.laplacian.add_diagonal(&diag);
        let mut x = vec![0.5; 256];
        let opts = CgOptions {
            record_energy: true,
            ..CgOptions::default()
        };
        let rep = conjugate_gradient(&m, &rhs, &mut x, opts).unwrap();
        for e in rep.energies.windows(2) {
            assert!(e[1] <= e[0] + 1e-9 * e[0].abs().max(1.0));
        }
    }

    #[test]
    fn composite_identities() {
        let fg = Image::filled(4, 3, [1.0, 1.0, 1.0]).unwrap();
        let bg = Image::filled(4, 3, [0.0, 0.0, 0.0]).unwrap();
        let c = composite_image(&fg, &bg, &AlphaMatte::filled(4, 3, 1.0)).unwrap();
        assert_eq!(c, fg);
        let c = composite_image(&fg, &bg, &AlphaMatte::filled(4, 3, 0.0)).unwrap();
        assert_eq!(c, bg);
        let c = composite_image(&fg, &bg, &AlphaMatte::filled(4, 3, 0.5)).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.5));
        let small = Image::filled(3, 3, [0.0; 3]).unwrap();
        assert!(matches!(
            composite_image(&fg, &small, &AlphaMatte::filled(4, 3, 0.5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn large_images_go_through_half_resolution() {
        let img = Image::from_fn(520, 8, |x, _| if x < 260 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] }).unwrap();
        let vals: Vec<u8> = (0..520 * 8)
            .map(|p| match p % 520 {
                x if x < 200 => 255,
                x if x > 320 => 0,
                _ => 128,
            })
            .collect();
        let tri = Trimap::new(520, 8, vals).unwrap();
        let a = matte(&img, &tri, &MatteOptions::default()).unwrap();
        assert_eq!(a.dims(), (520, 8));
        assert_eq!(a.at(10, 3), 1.0);
        assert_eq!(a.at(500, 3), 0.0);
        assert!(a.at(240, 4) > 0.5 && a.at(280, 4) < 0.5);
    }

    #[test]
    fn external_identity_command() {
        let img = two_tone(6, 5);
        let vals: Vec<u8> = (0..30).map(|p| [0, 128, 255][p % 3]).collect();
        let tri = Trimap::new(6, 5, vals.clone()).unwrap();
        let a = external_solver("cp {trimap} {alpha}", &img, &tri, EXTERNAL_TIMEOUT).unwrap();
        for (p, &v) in vals.iter().enumerate() {
            assert!((a.values()[p] - v as f64 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn external_failure_paths() {
        let img = two_tone(6, 5);
        let tri = Trimap::new(6, 5, vec![128; 30]).unwrap();
        match external_solver("echo boom >&2; exit 1", &img, &tri, EXTERNAL_TIMEOUT) {
            Err(Error::ExternalSolver(m)) => assert!(m.contains("boom")),
            other => panic!("{other:?}"),
        }
        let e = external_solver("cp {image} {alpha}.tmp; true", &img, &tri, EXTERNAL_TIMEOUT);
        assert!(matches!(e, Err(Error::ExternalSolver(_))));
        let wrong = crate::image::encode_gray_png(3, 3, &[0; 9]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("w.png");
        std::fs::write(&src, wrong).unwrap();
        let e = external_solver(&format!("cp '{}' {{alpha}}", src.display()), &img, &tri, EXTERNAL_TIMEOUT);
        assert!(e.unwrap_err().to_string().contains("dimension mismatch"));
        let e = external_solver("sleep 5", &img, &tri, Duration::from_millis(200));
        assert!(matches!(e, Err(Error::ExternalSolver(m)) if m.contains("timed out")));
        let e = external_solver("echo garbage > {alpha}", &img, &tri, EXTERNAL_TIMEOUT);
        assert!(e.is_err());
    }
}
