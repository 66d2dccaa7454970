//! Compressed sparse rows and a Jacobi-preconditioned conjugate gradient.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets; duplicates
    /// are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range");
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Builds from rows already sorted by column.
    pub(crate) fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().with_min_len(1024).for_each(|(i, yi)| {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.cols[r.clone()]
                .iter()
                .zip(&self.vals[r])
                .map(|(&c, &v)| v * x[c])
                .sum();
        });
    }

    /// `x^T A x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        dot(x, &y)
    }

    /// Returns `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = (0..self.n).map(|i| self.row(i).collect()).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            match row.iter_mut().find(|(c, _)| *c == i) {
                Some(e) => e.1 += d[i],
                None => {
                    row.push((i, d[i]));
                    row.sort_by_key(|e| e.0);
                }
            }
        }
        Self::from_rows(rows)
    }

    /// `(row, col, value)` lines.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                s.push_str(&format!("{i} {j} {v:.17e}\n"));
            }
        }
        s
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, Default)]
pub struct CgReport {
    pub iterations: usize,
    /// Final `|b - Ax| / |b|`.
    pub relative_residual: f64,
    /// `0.5 x^T A x - b^T x` after each iteration, when requested.
    pub energies: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub record_energy: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 20_000,
            record_energy: false,
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from `x`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgReport> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let b_norm = dot(b, b).sqrt();
    let mut report = CgReport::default();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(report);
    }
    let mut ax = vec![0.0; n];
    a.mul_vec(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let energy = |x: &[f64], r: &[f64]| {
        // 0.5 x^T A x - b^T x = -0.5 x^T (r + b) with r = b - Ax
        -0.5 * x.iter().zip(r.iter().zip(b)).map(|(x, (r, b))| x * (r + b)).sum::<f64>()
    };
    let mut res = dot(&r, &r).sqrt() / b_norm;
    while res > opts.tolerance {
        if report.iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                residual: res,
                iterations: report.iterations,
            });
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NonConvergence {
                residual: res,
                iterations: report.iterations,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        report.iterations += 1;
        res = dot(&r, &r).sqrt() / b_norm;
        if opts.record_energy {
            report.energies.push(energy(x, &r));
        }
    }
    report.relative_residual = res;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 2.0), (0, 1, 0.5)]);
        assert_eq!(m.get(0, 1), 1.5);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cg_solves_poisson_with_monotone_energy() {
        let a = poisson_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut x = vec![0.0; 50];
        let rep = conjugate_gradient(
            &a,
            &b,
            &mut x,
            CgOptions {
                tolerance: 1e-10,
                record_energy: true,
                ..CgOptions::default()
            },
        )
        .unwrap();
        let mut ax = vec![0.0; 50];
        a.mul_vec(&x, &mut ax);
        for i in 0..50 {
            assert!((ax[i] - b[i]).abs() < 1e-8);
        }
        for w in rep.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let a = poisson_1d(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let err = conjugate_gradient(
            &a,
            &b,
            &mut x,
            CgOptions {
                tolerance: 1e-14,
                max_iterations: 3,
                record_energy: false,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 3, .. }));
    }
}
