use nalgebra::DMatrix;

use super::features::{FeatureTable, LAMBDA};
use super::SuperpixelMap;

/// Connection (adjacency) and affinity matrices over superpixels.
#[derive(Clone, Debug)]
pub struct GraphMatrices {
    /// Binary 8-adjacency, zero diagonal.
    pub connection: DMatrix<f64>,
    /// Weighted color/texture affinity in `[0, 1]`, unit diagonal.
    pub affinity: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl GraphMatrices {
    /// Builds from explicit matrices; `connection` must be symmetric 0/1.
    pub fn new(connection: DMatrix<f64>, affinity: DMatrix<f64>) -> Self {
        let n = connection.nrows();
        assert_eq!(connection.shape(), (n, n));
        assert_eq!(affinity.shape(), (n, n));
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| connection[(i, j)] != 0.0).collect())
            .collect();
        Self {
            connection,
            affinity,
            neighbors,
        }
    }

    pub fn len(&self) -> usize {
        self.connection.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Edge weight used by the Markov chain: connection times affinity.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.connection[(i, j)] * self.affinity[(i, j)]
    }
}

pub fn build_graph(sp: &SuperpixelMap, ft: &FeatureTable) -> GraphMatrices {
    let n = sp.len();
    assert_eq!(ft.len(), n, "feature table does not match superpixel map");
    let (w, h) = (sp.width(), sp.height());
    let labels = sp.labels();
    let mut connection = DMatrix::zeros(n, n);
    for y in 0..h {
        for x in 0..w {
            let a = labels[y * w + x];
            // right, down-left, down, down-right cover all 8-neighbour pairs once
            let mut link = |xx: usize, yy: usize| {
                let b = labels[yy * w + xx];
                if a != b {
                    connection[(a, b)] = 1.0;
                    connection[(b, a)] = 1.0;
                }
            };
            if x + 1 < w {
                link(x + 1, y);
            }
            if y + 1 < h {
                link(x, y + 1);
                if x > 0 {
                    link(x - 1, y + 1);
                }
                if x + 1 < w {
                    link(x + 1, y + 1);
                }
            }
        }
    }

    let mut affinity = DMatrix::zeros(n, n);
    for i in 0..n {
        affinity[(i, i)] = 1.0;
        for j in i + 1..n {
            let t = ft.pair_terms(i, j);
            let a = LAMBDA[0] * t.gaussian
                + LAMBDA[1] * (-t.chi_color).exp()
                + LAMBDA[2] * (-t.chi_texture).exp();
            let a = a.clamp(0.0, 1.0);
            affinity[(i, j)] = a;
            affinity[(j, i)] = a;
        }
    }
    GraphMatrices::new(connection, affinity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::imagegraph::extract_features;

    fn quad() -> (Image, SuperpixelMap) {
        let img = Image::from_fn(8, 8, |x, y| {
            [if x < 4 { 0.2 } else { 0.8 }, if y < 4 { 0.3 } else { 0.7 }, 0.5]
        })
        .unwrap();
        let labels = (0..64)
            .map(|p| usize::from((p % 8) >= 4) + 2 * usize::from((p / 8) >= 4))
            .collect();
        (img, SuperpixelMap::from_labels(8, 8, labels))
    }

    /// Brute-force scan of all 8-neighbour pixel pairs.
    fn brute_adjacency(sp: &SuperpixelMap) -> Vec<Vec<bool>> {
        let n = sp.len();
        let mut adj = vec![vec![false; n]; n];
        let (w, h) = (sp.width() as i64, sp.height() as i64);
        for y in 0..h {
            for x in 0..w {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (xx, yy) = (x + dx, y + dy);
                        if (dx, dy) == (0, 0) || xx < 0 || yy < 0 || xx >= w || yy >= h {
                            continue;
                        }
                        let a = sp.label_at(x as usize, y as usize);
                        let b = sp.label_at(xx as usize, yy as usize);
                        if a != b {
                            adj[a][b] = true;
                        }
                    }
                }
            }
        }
        adj
    }

    #[test]
    fn corner_of_two_by_two_grid_has_three_neighbours() {
        let (img, sp) = quad();
        let g = build_graph(&sp, &extract_features(&img, &sp, 4));
        let brute = brute_adjacency(&sp);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.connection[(i, j)] == 1.0, brute[i][j]);
            }
            assert_eq!(g.neighbors(i).len(), 3);
        }
    }

    #[test]
    fn matrices_symmetric_and_bounded() {
        let (img, sp) = quad();
        let g = build_graph(&sp, &extract_features(&img, &sp, 4));
        for i in 0..4 {
            assert_eq!(g.connection[(i, i)], 0.0);
            assert_eq!(g.affinity[(i, i)], 1.0);
            for j in 0..4 {
                assert!((g.affinity[(i, j)] - g.affinity[(j, i)]).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&g.affinity[(i, j)]));
            }
        }
    }

    #[test]
    fn horizontally_adjacent_pair_is_connected() {
        let img = Image::filled(4, 2, [0.5; 3]).unwrap();
        let sp = SuperpixelMap::from_labels(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]);
        let g = build_graph(&sp, &extract_features(&img, &sp, 4));
        assert_eq!(g.connection[(0, 1)], 1.0);
        assert_eq!(g.connection[(1, 0)], 1.0);
        // identical features
        assert!((g.affinity[(0, 1)] - 1.0).abs() < 1e-12);
    }
}
