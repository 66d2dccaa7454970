//! Absorbing Markov chain label propagation.
//!
//! Labeled superpixels are absorbing states, unlabeled ones are transient.
//! The transition weight between adjacent superpixels is their affinity, so a
//! walker leaving superpixel `i` steps to neighbour `j` with probability
//! `W_ij / sum_k W_ik`. The absorption probabilities `B = (I - Q)^-1 R` give,
//! for each unlabeled superpixel, the chance of ending at each labeled one.
//!
//! With `D` the diagonal of row sums, `(I - Q) B = R` is equivalent to the
//! symmetric system `(D_U - W_UU) B = W_UL`, which is positive definite on
//! every component that touches a labeled node.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::imagegraph::GraphMatrices;
use crate::labelstate::{LabelClass, ProbabilityState};
use crate::sparse::{conjugate_gradient, CgOptions, CsrMatrix};

/// Largest transient set solved by dense factorization.
pub const DENSE_LIMIT: usize = 2000;
pub const SOLVE_TOLERANCE: f64 = 1e-9;

/// Absorption probabilities, rows = unlabeled, columns = labeled.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub probs: DMatrix<f64>,
    /// Per row: no path to any labeled node. Such rows are all zero.
    pub unreachable: Vec<bool>,
    /// Max-norm residual of `(I - Q) B - R` over reachable rows.
    pub residual: f64,
}

impl TransitionMatrix {
    pub fn row_sum(&self, row: usize) -> f64 {
        self.probs.row(row).sum()
    }

    /// `(row, col, value)` lines for non-zero entries, indices in superpixel ids.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        for (r, &u) in self.unlabeled.iter().enumerate() {
            for (c, &l) in self.labeled.iter().enumerate() {
                let v = self.probs[(r, c)];
                if v != 0.0 {
                    s.push_str(&format!("{u} {l} {v:.17e}\n"));
                }
            }
        }
        s
    }
}

fn check_partition(n: usize, labeled: &[usize], unlabeled: &[usize]) -> Result<()> {
    if labeled.is_empty() {
        return Err(Error::NoLabels);
    }
    let mut seen = vec![false; n];
    for &i in labeled.iter().chain(unlabeled) {
        if i >= n || seen[i] {
            return Err(Error::InvalidArgument(format!(
                "labeled/unlabeled sets must partition 0..{n} (offending id {i})"
            )));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument(
            "labeled/unlabeled sets do not cover every superpixel".into(),
        ));
    }
    Ok(())
}

pub fn build_transition_matrix(
    g: &GraphMatrices,
    labeled: &[usize],
    unlabeled: &[usize],
) -> Result<TransitionMatrix> {
    let n = g.len();
    check_partition(n, labeled, unlabeled)?;
    let nu = unlabeled.len();
    let nl = labeled.len();
    let mut is_labeled = vec![false; n];
    labeled.iter().for_each(|&i| is_labeled[i] = true);
    let mut row_of = vec![usize::MAX; n];
    unlabeled.iter().enumerate().for_each(|(r, &u)| row_of[u] = r);
    let mut col_of = vec![usize::MAX; n];
    labeled.iter().enumerate().for_each(|(c, &l)| col_of[l] = c);

    // Transient nodes that can reach an absorber: BFS from the labeled set
    // through transient nodes only.
    let mut reachable = vec![false; nu];
    let mut queue: VecDeque<usize> = labeled.iter().copied().collect();
    while let Some(v) = queue.pop_front() {
        for &w in g.neighbors(v) {
            if !is_labeled[w] && g.weight(v, w) > 0.0 && !reachable[row_of[w]] {
                reachable[row_of[w]] = true;
                queue.push_back(w);
            }
        }
    }
    let active: Vec<usize> = (0..nu).filter(|&r| reachable[r]).collect();
    let mut slot = vec![usize::MAX; nu];
    active.iter().enumerate().for_each(|(k, &r)| slot[r] = k);
    let na = active.len();

    let degree: Vec<f64> = (0..n)
        .map(|i| g.neighbors(i).iter().map(|&j| g.weight(i, j)).sum())
        .collect();

    // System rows over active transient nodes.
    let mut rhs = DMatrix::zeros(na, nl);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(na);
    for (k, &r) in active.iter().enumerate() {
        let u = unlabeled[r];
        let mut row = vec![(k, degree[u])];
        for &j in g.neighbors(u) {
            let wgt = g.weight(u, j);
            if is_labeled[j] {
                rhs[(k, col_of[j])] += wgt;
            } else if wgt != 0.0 {
                row.push((slot[row_of[j]], -wgt));
            }
        }
        row.sort_by_key(|e| e.0);
        rows.push(row);
    }
    let system = CsrMatrix::from_rows(rows);

    let solution = if na <= DENSE_LIMIT {
        solve_dense(&system, &rhs)?
    } else {
        solve_iterative(&system, &rhs)?
    };

    let mut probs = DMatrix::zeros(nu, nl);
    for (k, &r) in active.iter().enumerate() {
        for c in 0..nl {
            // round-off can leave tiny negatives
            probs[(r, c)] = solution[(k, c)].max(0.0);
        }
    }

    // Residual of the normalized system, (I - Q) B - R, scaled by 1/degree.
    let mut residual: f64 = 0.0;
    for k in 0..na {
        let u = unlabeled[active[k]];
        for c in 0..nl {
            let mut acc = -rhs[(k, c)];
            for (j, v) in system.row(k) {
                acc += v * solution[(j, c)];
            }
            residual = residual.max((acc / degree[u]).abs());
        }
    }
    if residual > SOLVE_TOLERANCE {
        return Err(Error::NonConvergence {
            residual,
            iterations: 0,
        });
    }

    Ok(TransitionMatrix {
        unlabeled: unlabeled.to_vec(),
        labeled: labeled.to_vec(),
        probs,
        unreachable: reachable.iter().map(|r| !r).collect(),
        residual,
    })
}

fn solve_dense(system: &CsrMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let na = system.dim();
    if na == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    let mut a = DMatrix::zeros(na, na);
    for i in 0..na {
        for (j, v) in system.row(i) {
            a[(i, j)] = v;
        }
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    a.lu()
        .solve(rhs)
        .ok_or(Error::NonConvergence {
            residual: f64::INFINITY,
            iterations: 0,
        })
}

fn solve_iterative(system: &CsrMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let na = system.dim();
    let mut out = DMatrix::zeros(na, rhs.ncols());
    let opts = CgOptions {
        tolerance: SOLVE_TOLERANCE * 1e-3,
        max_iterations: 50 * na.max(100),
        record_energy: false,
    };
    for c in 0..rhs.ncols() {
        let b: Vec<f64> = rhs.column(c).iter().copied().collect();
        let mut x = vec![0.0; na];
        conjugate_gradient(system, &b, &mut x, opts)?;
        out.column_mut(c).copy_from_slice(&x);
    }
    Ok(out)
}

/// Outcome of one propagation round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropagationReport {
    /// Unlabeled superpixels with no path to a label; set to uniform.
    pub unreachable: Vec<usize>,
}

/// Sums each unlabeled row's absorption mass by the class of the absorbing
/// node and normalizes the three sums into `(pf, pb, pu)`.
pub fn propagate_labels(prm: &TransitionMatrix, ps: &mut ProbabilityState) -> Result<PropagationReport> {
    let mut report = PropagationReport::default();
    let classes: Vec<LabelClass> = prm
        .labeled
        .iter()
        .map(|&j| {
            ps.hard_label(j).ok_or_else(|| {
                Error::InvalidArgument(format!("superpixel {j} is not labeled"))
            })
        })
        .collect::<Result<_>>()?;
    for (r, &i) in prm.unlabeled.iter().enumerate() {
        if ps.is_labeled(i) {
            return Err(Error::InvalidArgument(format!(
                "superpixel {i} is labeled but appears as a transient row"
            )));
        }
        let mut sums = [0.0; 3];
        for (c, class) in classes.iter().enumerate() {
            sums[class.index()] += prm.probs[(r, c)];
        }
        let total: f64 = sums.iter().sum();
        if total > 0.0 {
            // set_probs normalizes by the total
            ps.set_probs(i, sums);
        } else {
            ps.set_probs(i, [1.0 / 3.0; 3]);
            report.unreachable.push(i);
        }
    }
    Ok(report)
}

/// Builds the chain for the current labels and updates every unlabeled
/// superpixel. Does nothing when no superpixel is labeled yet.
pub fn markov_round(g: &GraphMatrices, ps: &mut ProbabilityState) -> Result<PropagationReport> {
    let labeled = ps.labeled();
    if labeled.is_empty() {
        return Ok(PropagationReport::default());
    }
    let prm = build_transition_matrix(g, &labeled, &ps.unlabeled())?;
    propagate_labels(&prm, ps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(weights: &[f64]) -> GraphMatrices {
        let n = weights.len() + 1;
        let mut c = DMatrix::zeros(n, n);
        let mut a = DMatrix::identity(n, n);
        for (i, &w) in weights.iter().enumerate() {
            c[(i, i + 1)] = 1.0;
            c[(i + 1, i)] = 1.0;
            a[(i, i + 1)] = w;
            a[(i + 1, i)] = w;
        }
        GraphMatrices::new(c, a)
    }

    #[test]
    fn symmetric_path_splits_evenly() {
        let g = path_graph(&[0.5, 0.5]);
        let prm = build_transition_matrix(&g, &[0, 2], &[1]).unwrap();
        assert!((prm.probs[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((prm.probs[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_absorber_takes_everything() {
        let g = path_graph(&[0.7]);
        let prm = build_transition_matrix(&g, &[0], &[1]).unwrap();
        assert!((prm.probs[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alg_arithmetic() {
        // star: centre 0 with absorbers F, F, B, U at equal weight
        let n = 5;
        let mut c = DMatrix::zeros(n, n);
        for j in 1..n {
            c[(0, j)] = 1.0;
            c[(j, 0)] = 1.0;
        }
        let g = GraphMatrices::new(c, DMatrix::from_element(n, n, 1.0));
        let mut ps = ProbabilityState::uniform(n);
        ps.set_hard(1, LabelClass::Foreground);
        ps.set_hard(2, LabelClass::Foreground);
        ps.set_hard(3, LabelClass::Background);
        ps.set_hard(4, LabelClass::Unknown);
        markov_round(&g, &mut ps).unwrap();
        assert_eq!(ps.probs(0), [0.5, 0.25, 0.25]);
    }

    #[test]
    fn empty_label_set_is_an_error() {
        let g = path_graph(&[1.0]);
        assert!(matches!(build_transition_matrix(&g, &[], &[0, 1]), Err(Error::NoLabels)));
    }

    #[test]
    fn isolated_node_is_flagged_uniform() {
        let mut c = DMatrix::zeros(3, 3);
        c[(0, 1)] = 1.0;
        c[(1, 0)] = 1.0;
        let g = GraphMatrices::new(c, DMatrix::from_element(3, 3, 1.0));
        let mut ps = ProbabilityState::uniform(3);
        ps.set_hard(0, LabelClass::Foreground);
        let rep = markov_round(&g, &mut ps).unwrap();
        assert_eq!(rep.unreachable, vec![2]);
        assert_eq!(ps.probs(1), [1.0, 0.0, 0.0]);
        assert_eq!(ps.probs(2), [1.0 / 3.0; 3]);
    }

    #[test]
    fn affinity_scale_invariance() {
        let g = path_graph(&[0.3, 0.8, 0.2]);
        let scaled = GraphMatrices::new(g.connection.clone(), &g.affinity * 0.37);
        let a = build_transition_matrix(&g, &[0, 3], &[1, 2]).unwrap();
        let b = build_transition_matrix(&scaled, &[0, 3], &[1, 2]).unwrap();
        assert!((a.probs.clone() - b.probs).abs().max() < 1e-12);
    }

    #[test]
    fn stronger_foreground_affinity_raises_pf() {
        let pf_with = |w: f64| {
            let g = path_graph(&[w, 0.5]);
            let mut ps = ProbabilityState::uniform(3);
            ps.set_hard(0, LabelClass::Foreground);
            ps.set_hard(2, LabelClass::Background);
            markov_round(&g, &mut ps).unwrap();
            ps.probs(1)[0]
        };
        let mut last = 0.0;
        for w in [0.1, 0.3, 0.5, 0.9, 1.0] {
            let pf = pf_with(w);
            assert!(pf >= last);
            last = pf;
        }
    }

    #[test]
    fn iterative_path_agrees_with_dense() {
        let g = path_graph(&[0.4, 0.9, 0.6, 0.3, 0.7]);
        let labeled = [0, 5];
        let unlabeled = [1, 2, 3, 4];
        let dense = build_transition_matrix(&g, &labeled, &unlabeled).unwrap();
        // force the CG route on the same system
        let mut is_labeled = vec![false; 6];
        labeled.iter().for_each(|&i| is_labeled[i] = true);
        let mut rows = Vec::new();
        let mut rhs = DMatrix::zeros(4, 2);
        for (k, &u) in unlabeled.iter().enumerate() {
            let deg: f64 = g.neighbors(u).iter().map(|&j| g.weight(u, j)).sum();
            let mut row = vec![(k, deg)];
            for &j in g.neighbors(u) {
                if is_labeled[j] {
                    rhs[(k, labeled.iter().position(|&l| l == j).unwrap())] = g.weight(u, j);
                } else {
                    row.push((unlabeled.iter().position(|&x| x == j).unwrap(), -g.weight(u, j)));
                }
            }
            row.sort_by_key(|e| e.0);
            rows.push(row);
        }
        let sol = solve_iterative(&CsrMatrix::from_rows(rows), &rhs).unwrap();
        assert!((sol - dense.probs).abs().max() < 1e-9);
    }
}
