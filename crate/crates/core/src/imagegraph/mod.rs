//! Over-segmentation, per-superpixel features, and the superpixel graph.

mod edges;
mod features;
mod graph;
mod slic;

pub use edges::{edge_map, edge_scores, sobel, EDGE_DELTA};
pub use features::{
    chi_square, extract_features, FeatureTable, PairTerms, COLOR_SIGMA, DEFAULT_COLOR_BINS, LAMBDA,
    TEXTURE_BINS, THETA,
};
pub use graph::{build_graph, GraphMatrices};
pub use slic::{default_target, oversegment, oversegment_with, SlicParams};

/// Per-pixel superpixel ids plus per-superpixel geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
    centroids: Vec<[f64; 2]>,
    bboxes: Vec<(usize, usize, usize, usize)>,
}

impl SuperpixelMap {
    /// Builds the map from dense ids in `[0, n)`. Every id must occur.
    pub fn from_labels(width: usize, height: usize, labels: Vec<usize>) -> Self {
        assert_eq!(labels.len(), width * height);
        let n = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n];
        for (p, &l) in labels.iter().enumerate() {
            members[l].push(p);
        }
        assert!(members.iter().all(|m| !m.is_empty()), "superpixel ids must be dense");
        let mut centroids = Vec::with_capacity(n);
        let mut bboxes = Vec::with_capacity(n);
        for m in &members {
            let (mut sx, mut sy) = (0.0, 0.0);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            for &p in m {
                let (x, y) = (p % width, p / width);
                sx += x as f64;
                sy += y as f64;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            let k = m.len() as f64;
            centroids.push([sx / k, sy / k]);
            bboxes.push((x0, y0, x1, y1));
        }
        Self {
            width,
            height,
            labels,
            members,
            centroids,
            bboxes,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of superpixels.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    /// Linear pixel indices belonging to superpixel `i`.
    pub fn pixels(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    /// Mean pixel position in pixel units.
    pub fn centroid(&self, i: usize) -> [f64; 2] {
        self.centroids[i]
    }

    /// Centroid normalized to the unit square.
    pub fn centroid_normalized(&self, i: usize) -> [f64; 2] {
        let [x, y] = self.centroids[i];
        [
            (x + 0.5) / self.width as f64,
            (y + 0.5) / self.height as f64,
        ]
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self, i: usize) -> (usize, usize, usize, usize) {
        self.bboxes[i]
    }

    /// Pixel containing the centroid.
    pub fn centroid_pixel(&self, i: usize) -> (usize, usize) {
        let [x, y] = self.centroids[i];
        (
            (x.round() as usize).min(self.width - 1),
            (y.round() as usize).min(self.height - 1),
        )
    }

    /// True when pixel `p` touches a different superpixel to its right or below.
    pub fn is_boundary(&self, p: usize) -> bool {
        let (x, y) = (p % self.width, p / self.width);
        let l = self.labels[p];
        (x + 1 < self.width && self.labels[p + 1] != l)
            || (y + 1 < self.height && self.labels[p + self.width] != l)
    }
}
