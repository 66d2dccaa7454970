//! Grid regions and their information content.
//!
//! Each region is scored by four terms computed over the superpixels whose
//! centroid falls inside it: similarity to the rest of the image, internal
//! diversity, label entropy and edge score. Terms are divided by their
//! pair/element counts, min-max rescaled across the candidate regions and
//! summed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegraph::{FeatureTable, SuperpixelMap, LAMBDA};
use crate::labelstate::ProbabilityState;

/// Pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Clone, Debug)]
pub struct RegionGrid {
    order: usize,
    regions: Vec<Rect>,
    inside: Vec<Vec<usize>>,
    n_superpixels: usize,
    visited: Vec<bool>,
}

/// Splits `width x height` into `order x order` rectangles. The last row and
/// column absorb the remainder.
pub fn divide_regions(width: usize, height: usize, order: usize) -> Result<Vec<Rect>> {
    if order == 0 || order > width.min(height) {
        return Err(Error::InvalidArgument(format!(
            "grid order {order} outside [1, {}]",
            width.min(height)
        )));
    }
    let cw = width / order;
    let ch = height / order;
    let mut out = Vec::with_capacity(order * order);
    for r in 0..order {
        for c in 0..order {
            let w = if c + 1 == order { width - cw * c } else { cw };
            let h = if r + 1 == order { height - ch * r } else { ch };
            out.push(Rect::new(c * cw, r * ch, w, h));
        }
    }
    Ok(out)
}

impl RegionGrid {
    pub fn new(sp: &SuperpixelMap, order: usize) -> Result<Self> {
        let regions = divide_regions(sp.width(), sp.height(), order)?;
        let mut inside = vec![Vec::new(); regions.len()];
        for i in 0..sp.len() {
            let (x, y) = sp.centroid_pixel(i);
            let r = regions
                .iter()
                .position(|r| r.contains(x, y))
                .expect("regions tile the image");
            inside[r].push(i);
        }
        Ok(Self {
            order,
            visited: vec![false; regions.len()],
            regions,
            inside,
            n_superpixels: sp.len(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn rect(&self, r: usize) -> Rect {
        self.regions[r]
    }

    pub fn rects(&self) -> &[Rect] {
        &self.regions
    }

    /// Superpixels whose centroid lies in region `r`.
    pub fn inside(&self, r: usize) -> &[usize] {
        &self.inside[r]
    }

    /// Superpixels outside region `r`.
    pub fn outside(&self, r: usize) -> Vec<usize> {
        let mut mark = vec![false; self.n_superpixels];
        for &i in &self.inside[r] {
            mark[i] = true;
        }
        (0..self.n_superpixels).filter(|&i| !mark[i]).collect()
    }

    pub fn is_visited(&self, r: usize) -> bool {
        self.visited[r]
    }

    pub fn mark_visited(&mut self, r: usize) {
        self.visited[r] = true;
    }

    pub fn visited_count(&self) -> usize {
        self.visited.iter().filter(|&&v| v).count()
    }

    /// Unvisited regions that contain at least one centroid.
    pub fn candidates(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&r| !self.visited[r] && !self.inside[r].is_empty())
            .collect()
    }
}

const SPREAD_TOL: f64 = 1e-12;

/// `sum_i sum_j [l1 * gauss + l2 * chi(ch) + l3 * chi(th)]`
fn pair_sum(ft: &FeatureTable, a: &[usize], b: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in a {
        for &j in b {
            let t = ft.pair_terms(i, j);
            total += LAMBDA[0] * t.gaussian + LAMBDA[1] * t.chi_color + LAMBDA[2] * t.chi_texture;
        }
    }
    total
}

/// Raw similarity of a region to the rest of the image. Zero when nothing
/// lies outside.
pub fn similarity_term(grid: &RegionGrid, r: usize, ft: &FeatureTable) -> f64 {
    let out = grid.outside(r);
    if out.is_empty() {
        return 0.0;
    }
    pair_sum(ft, grid.inside(r), &out)
}

/// Raw diversity: the negated similarity of the region with itself,
/// self-pairs included.
pub fn diversity_term(grid: &RegionGrid, r: usize, ft: &FeatureTable) -> f64 {
    let inside = grid.inside(r);
    -pair_sum(ft, inside, inside)
}

/// Shannon entropy (natural log) of one superpixel's label distribution,
/// with `0 ln 0 = 0`.
pub fn superpixel_entropy(p: [f64; 3]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn entropy_term(grid: &RegionGrid, r: usize, ps: &ProbabilityState) -> f64 {
    grid.inside(r).iter().map(|&i| superpixel_entropy(ps.probs(i))).sum()
}

pub fn edge_term(grid: &RegionGrid, r: usize, ft: &FeatureTable) -> f64 {
    grid.inside(r).iter().map(|&i| ft.edge[i]).sum()
}

/// Which of the four terms contribute to the combined score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMask {
    pub similarity: bool,
    pub diversity: bool,
    pub entropy: bool,
    pub edge: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        Self {
            similarity: true,
            diversity: true,
            entropy: true,
            edge: true,
        }
    }
}

/// Label-independent raw terms, computed once per image.
#[derive(Clone, Debug)]
pub struct StaticTerms {
    pub similarity: Vec<f64>,
    pub diversity: Vec<f64>,
    pub edge: Vec<f64>,
}

impl StaticTerms {
    pub fn compute(grid: &RegionGrid, ft: &FeatureTable) -> Self {
        let n = grid.len();
        let mut s = Self {
            similarity: vec![0.0; n],
            diversity: vec![0.0; n],
            edge: vec![0.0; n],
        };
        for r in 0..n {
            if grid.inside(r).is_empty() {
                continue;
            }
            s.similarity[r] = similarity_term(grid, r, ft);
            s.diversity[r] = diversity_term(grid, r, ft);
            s.edge[r] = edge_term(grid, r, ft);
        }
        s
    }
}

/// Raw, normalized and combined scores per region. Regions that are visited
/// or contain no centroid have `info[r] == None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfoScores {
    pub raw: Vec<[f64; 4]>,
    /// `[similarity, diversity, entropy, edge]`, each in `[0, 1]`.
    pub normalized: Vec<[f64; 4]>,
    pub info: Vec<Option<f64>>,
}

impl InfoScores {
    /// Delimited diagnostic table: `region,similarity,diversity,entropy,edge,info`.
    pub fn to_table(&self) -> String {
        let mut s = String::from("region,similarity,diversity,entropy,edge,info\n");
        for (r, n) in self.normalized.iter().enumerate() {
            let info = self.info[r].map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            s.push_str(&format!(
                "{r},{:.6},{:.6},{:.6},{:.6},{info}\n",
                n[0], n[1], n[2], n[3]
            ));
        }
        s
    }
}

pub fn info_content(grid: &RegionGrid, ft: &FeatureTable, ps: &ProbabilityState) -> InfoScores {
    info_content_with(grid, &StaticTerms::compute(grid, ft), ps, TermMask::default())
}

pub fn info_content_with(
    grid: &RegionGrid,
    statics: &StaticTerms,
    ps: &ProbabilityState,
    mask: TermMask,
) -> InfoScores {
    let n = grid.len();
    let total = ps.len();
    let mut raw = vec![[0.0; 4]; n];
    let mut per_count = vec![[0.0; 4]; n];
    for r in 0..n {
        let k = grid.inside(r).len();
        if k == 0 {
            continue;
        }
        let out = total - k;
        let entropy = entropy_term(grid, r, ps);
        raw[r] = [statics.similarity[r], statics.diversity[r], entropy, statics.edge[r]];
        let kf = k as f64;
        per_count[r] = [
            if out == 0 { 0.0 } else { statics.similarity[r] / (kf * out as f64) },
            statics.diversity[r] / (kf * kf),
            entropy / kf,
            statics.edge[r] / kf,
        ];
    }

    let candidates = grid.candidates();
    let enabled = [mask.similarity, mask.diversity, mask.entropy, mask.edge];
    let mut normalized = vec![[0.0; 4]; n];
    for t in 0..4 {
        let lo = candidates.iter().map(|&r| per_count[r][t]).fold(f64::INFINITY, f64::min);
        let hi = candidates.iter().map(|&r| per_count[r][t]).fold(f64::NEG_INFINITY, f64::max);
        // spreads at rounding level count as constant
        let flat = hi - lo <= SPREAD_TOL * hi.abs().max(lo.abs()).max(1.0);
        for &r in &candidates {
            normalized[r][t] = if flat { 0.0 } else { (per_count[r][t] - lo) / (hi - lo) };
        }
    }
    let mut info = vec![None; n];
    for &r in &candidates {
        info[r] = Some((0..4).filter(|&t| enabled[t]).map(|t| normalized[r][t]).sum());
    }
    InfoScores {
        raw,
        normalized,
        info,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Highest score, ties to the lowest region index.
    #[default]
    Argmax,
    /// Uniform draw among the six highest-scoring regions.
    RandomTop6,
    /// All regions chosen up front from entropy-free scores.
    Batch,
}

/// Unvisited scored regions ordered by decreasing score, ties by index.
pub fn ranked_regions(scores: &InfoScores) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = scores
        .info
        .iter()
        .enumerate()
        .filter_map(|(r, v)| v.map(|v| (r, v)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(r, _)| r).collect()
}

/// Picks the next region and marks it visited. `Batch` behaves like `Argmax`
/// here; batch sessions call [`ranked_regions`] directly.
pub fn select_region<R: Rng + ?Sized>(
    scores: &InfoScores,
    grid: &mut RegionGrid,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<usize> {
    let ranked: Vec<usize> = ranked_regions(scores)
        .into_iter()
        .filter(|&r| !grid.is_visited(r))
        .collect();
    if ranked.is_empty() {
        return Err(Error::NoRegionsLeft);
    }
    let pick = match mode {
        SelectionMode::Argmax | SelectionMode::Batch => ranked[0],
        SelectionMode::RandomTop6 => {
            let k = ranked.len().min(6);
            ranked[rng.gen_range(0..k)]
        }
    };
    grid.mark_visited(pick);
    Ok(pick)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagegraph::FeatureTable;
    use crate::labelstate::LabelClass;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_of(w: usize, h: usize, labels: Vec<usize>, order: usize) -> (SuperpixelMap, RegionGrid) {
        let sp = SuperpixelMap::from_labels(w, h, labels);
        let g = RegionGrid::new(&sp, order).unwrap();
        (sp, g)
    }

    fn flat_features(n: usize) -> FeatureTable {
        FeatureTable::from_parts(
            vec![[0.5; 3]; n],
            vec![vec![1.0, 0.0]; n],
            vec![vec![0.5, 0.5]; n],
            vec![1.0; n],
        )
    }

    #[test]
    fn division_rules() {
        let r = divide_regions(64, 64, 4).unwrap();
        assert_eq!(r.len(), 16);
        assert!(r.iter().all(|r| r.width == 16 && r.height == 16));
        let r = divide_regions(65, 64, 4).unwrap();
        assert_eq!(r[3].width, 17);
        assert_eq!(r[0].width, 16);
        assert_eq!(r.iter().map(Rect::area).sum::<usize>(), 65 * 64);
        let r = divide_regions(10, 7, 1).unwrap();
        assert_eq!(r, vec![Rect::new(0, 0, 10, 7)]);
        assert!(divide_regions(10, 7, 0).is_err());
        assert!(divide_regions(10, 7, 8).is_err());
    }

    #[test]
    fn regions_partition_pixels() {
        for (w, h, m) in [(37, 23, 5), (8, 8, 8), (100, 3, 3)] {
            let rects = divide_regions(w, h, m).unwrap();
            let mut count = vec![0; w * h];
            for r in &rects {
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        count[y * w + x] += 1;
                    }
                }
            }
            assert!(count.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn identical_features_closed_forms() {
        // 4 superpixels in a 2x2 layout, grid order 2 -> one per region
        let labels = (0..16).map(|p| usize::from(p % 4 >= 2) + 2 * usize::from(p / 4 >= 2)).collect();
        let (_, g) = grid_of(4, 4, labels, 2);
        let ft = flat_features(4);
        for r in 0..4 {
            assert_eq!(g.inside(r).len(), 1);
            assert!((similarity_term(&g, r, &ft) - 0.4 * 3.0).abs() < 1e-12);
            assert!((diversity_term(&g, r, &ft) + 0.4).abs() < 1e-12);
            assert_eq!(edge_term(&g, r, &ft), 1.0);
        }
    }

    #[test]
    fn diversity_of_uniform_block() {
        let (_, g) = grid_of(4, 1, vec![0, 1, 2, 3], 1);
        let ft = flat_features(4);
        assert!((diversity_term(&g, 0, &ft) + 0.4 * 16.0).abs() < 1e-12);
        // single region: nothing outside
        assert_eq!(similarity_term(&g, 0, &ft), 0.0);
    }

    #[test]
    fn entropy_closed_forms() {
        let (_, g) = grid_of(3, 1, vec![0, 1, 2], 1);
        let mut ps = ProbabilityState::uniform(3);
        assert!((entropy_term(&g, 0, &ps) - 3.0 * 3f64.ln()).abs() < 1e-12);
        for i in 0..3 {
            ps.set_hard(i, LabelClass::ALL[i]);
        }
        assert_eq!(entropy_term(&g, 0, &ps), 0.0);
        assert!((superpixel_entropy([0.5, 0.25, 0.25]) - 1.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        let labels = (0..16).map(|p| usize::from(p % 4 >= 2) + 2 * usize::from(p / 4 >= 2)).collect();
        let (_, mut g) = grid_of(4, 4, labels, 2);
        let scores = InfoScores {
            raw: vec![[0.0; 4]; 4],
            normalized: vec![[0.0; 4]; 4],
            info: vec![Some(0.1), Some(0.9), Some(0.9), Some(0.2)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_region(&scores, &mut g, SelectionMode::Argmax, &mut rng).unwrap(), 1);
        assert!(g.is_visited(1));
        // region 1 can never come back
        assert_eq!(select_region(&scores, &mut g, SelectionMode::Argmax, &mut rng).unwrap(), 2);
        assert_eq!(select_region(&scores, &mut g, SelectionMode::Argmax, &mut rng).unwrap(), 3);
        assert_eq!(select_region(&scores, &mut g, SelectionMode::Argmax, &mut rng).unwrap(), 0);
        assert!(matches!(
            select_region(&scores, &mut g, SelectionMode::Argmax, &mut rng),
            Err(Error::NoRegionsLeft)
        ));
    }

    #[test]
    fn random_top6_is_reproducible() {
        let labels: Vec<usize> = (0..64).map(|p| (p % 8) / 2 + 4 * ((p / 8) / 2)).collect();
        let (_, g) = grid_of(8, 8, labels, 4);
        let scores = InfoScores {
            raw: vec![[0.0; 4]; 16],
            normalized: vec![[0.0; 4]; 16],
            info: (0..16).map(|r| Some(r as f64 / 16.0)).collect(),
        };
        let draw = |seed| {
            let mut g = g.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..6)
                .map(|_| select_region(&scores, &mut g, SelectionMode::RandomTop6, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        let first = draw(7)[0];
        assert!((10..16).contains(&first));
    }

    #[test]
    fn high_entropy_region_wins_when_rest_is_equal() {
        let labels = (0..16).map(|p| usize::from(p % 4 >= 2) + 2 * usize::from(p / 4 >= 2)).collect();
        let (_, g) = grid_of(4, 4, labels, 2);
        let ft = flat_features(4);
        let mut ps = ProbabilityState::uniform(4);
        ps.set_probs(0, [0.9, 0.05, 0.05]);
        ps.set_probs(1, [0.8, 0.1, 0.1]);
        ps.set_probs(3, [0.1, 0.85, 0.05]);
        let s = info_content(&g, &ft, &ps);
        assert_eq!(ranked_regions(&s)[0], 2);
        assert_eq!(s.info[2], Some(1.0));
        for r in 0..4 {
            let v = s.info[r].unwrap();
            assert!((0.0..=4.0).contains(&v));
        }
    }

    #[test]
    fn constant_terms_rescale_to_zero() {
        let labels = (0..16).map(|p| usize::from(p % 4 >= 2) + 2 * usize::from(p / 4 >= 2)).collect();
        let (_, g) = grid_of(4, 4, labels, 2);
        let s = info_content(&g, &flat_features(4), &ProbabilityState::uniform(4));
        assert!(s.info.iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn uniform_entropy_is_flat_across_region_sizes() {
        // 1, 2, 3 and 6 superpixels per region on a 12x12 image
        let sizes = [1usize, 2, 3, 6];
        let mut labels = vec![0; 144];
        let mut next = 0;
        for (r, &k) in sizes.iter().enumerate() {
            let (x0, y0) = ((r % 2) * 6, (r / 2) * 6);
            for y in 0..6 {
                for x in 0..6 {
                    labels[(y0 + y) * 12 + x0 + x] = next + (x * k / 6);
                }
            }
            next += k;
        }
        let (_, g) = grid_of(12, 12, labels, 2);
        let s = info_content(&g, &flat_features(next), &ProbabilityState::uniform(next));
        assert!(s.normalized.iter().all(|n| n[2] == 0.0));
    }

    #[test]
    fn empty_regions_are_not_candidates() {
        // one superpixel covering everything; its centroid lands in a single cell
        let (_, g) = grid_of(4, 4, vec![0; 16], 2);
        let s = info_content(&g, &flat_features(1), &ProbabilityState::uniform(1));
        assert_eq!(s.info.iter().filter(|v| v.is_some()).count(), 1);
    }
}
