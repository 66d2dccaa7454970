//! Scribbles, per-superpixel label probabilities, trimaps, mattes and the
//! metrics computed on them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, to_u8};
use crate::imagegraph::SuperpixelMap;
use crate::infoselect::Rect;

/// Default trimap threshold on foreground/background probability.
pub const TRIMAP_THRESHOLD: f64 = 0.65;
pub const DEFAULT_BRUSH_RADIUS: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelClass {
    #[serde(rename = "F")]
    Foreground,
    #[serde(rename = "B")]
    Background,
    #[serde(rename = "U")]
    Unknown,
}

impl LabelClass {
    pub const ALL: [LabelClass; 3] = [Self::Foreground, Self::Background, Self::Unknown];

    pub fn code(self) -> char {
        match self {
            Self::Foreground => 'F',
            Self::Background => 'B',
            Self::Unknown => 'U',
        }
    }

    /// Index into a `(pf, pb, pu)` triple.
    pub fn index(self) -> usize {
        match self {
            Self::Foreground => 0,
            Self::Background => 1,
            Self::Unknown => 2,
        }
    }

    /// Stroke color: red, blue, green.
    pub fn stroke_rgb(self) -> [u8; 3] {
        match self {
            Self::Foreground => [255, 0, 0],
            Self::Background => [0, 0, 255],
            Self::Unknown => [0, 255, 0],
        }
    }

    /// Trimap encoding: white, black, gray.
    pub fn trimap_value(self) -> u8 {
        match self {
            Self::Foreground => 255,
            Self::Background => 0,
            Self::Unknown => 128,
        }
    }

    pub fn from_trimap_value(v: u8) -> Option<Self> {
        match v {
            255 => Some(Self::Foreground),
            0 => Some(Self::Background),
            128 => Some(Self::Unknown),
            _ => None,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut p = [0.0; 3];
        p[self.index()] = 1.0;
        p
    }
}

/// A freehand stroke: a polyline swept by a disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScribbleStroke {
    pub class: LabelClass,
    #[serde(default = "default_radius")]
    pub radius: u32,
    pub points: Vec<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<usize>,
    #[serde(default)]
    pub iteration: usize,
}

fn default_radius() -> u32 {
    DEFAULT_BRUSH_RADIUS
}

impl ScribbleStroke {
    pub fn new(class: LabelClass, points: Vec<[i64; 2]>) -> Self {
        Self {
            class,
            radius: DEFAULT_BRUSH_RADIUS,
            points,
            region: None,
            iteration: 0,
        }
    }

    pub fn with_radius(mut self, radius: u32) -> Self {
        self.radius = radius;
        self
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidArgument("stroke has no points".into()));
        }
        for &[x, y] in &self.points {
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                return Err(Error::StrokeOutOfBounds {
                    x,
                    y,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }

    /// Linear indices of the pixels within `radius` of the polyline.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<usize> {
        let r = self.radius as f64;
        let r2 = r * r + 1e-9;
        let mut hit = Vec::new();
        let segments: Vec<([i64; 2], [i64; 2])> = if self.points.len() == 1 {
            vec![(self.points[0], self.points[0])]
        } else {
            self.points.windows(2).map(|s| (s[0], s[1])).collect()
        };
        let ri = self.radius as i64;
        let x0 = (self.points.iter().map(|p| p[0]).min().unwrap_or(0) - ri).max(0);
        let x1 = (self.points.iter().map(|p| p[0]).max().unwrap_or(0) + ri).min(width as i64 - 1);
        let y0 = (self.points.iter().map(|p| p[1]).min().unwrap_or(0) - ri).max(0);
        let y1 = (self.points.iter().map(|p| p[1]).max().unwrap_or(0) + ri).min(height as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let covered = segments
                    .iter()
                    .any(|&(a, b)| point_segment_dist2([x, y], a, b) <= r2);
                if covered {
                    hit.push(y as usize * width + x as usize);
                }
            }
        }
        hit
    }
}

fn point_segment_dist2(p: [i64; 2], a: [i64; 2], b: [i64; 2]) -> f64 {
    let (px, py) = (p[0] as f64, p[1] as f64);
    let (ax, ay) = (a[0] as f64, a[1] as f64);
    let (dx, dy) = (b[0] as f64 - ax, b[1] as f64 - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (px - cx).powi(2) + (py - cy).powi(2)
}

/// Union of all pixels under the given strokes.
pub fn stroke_mask(strokes: &[ScribbleStroke], width: usize, height: usize) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    for s in strokes {
        for p in s.rasterize(width, height) {
            mask[p] = true;
        }
    }
    mask
}

/// Per-superpixel `(pf, pb, pu)` plus the hard labels from scribbles.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityState {
    probs: Vec<[f64; 3]>,
    hard: Vec<Option<LabelClass>>,
}

/// Result of applying a scribble batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScribbleOutcome {
    /// Superpixels that entered the labeled set.
    pub newly_labeled: Vec<usize>,
    /// Some stroke pixels fell outside the suggested region.
    pub outside_region: bool,
}

impl ProbabilityState {
    /// Everything unlabeled with uniform probabilities.
    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![[1.0 / 3.0; 3]; n],
            hard: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `[pf, pb, pu]`
    #[inline]
    pub fn probs(&self, i: usize) -> [f64; 3] {
        self.probs[i]
    }

    pub fn all_probs(&self) -> &[[f64; 3]] {
        &self.probs
    }

    pub fn hard_label(&self, i: usize) -> Option<LabelClass> {
        self.hard[i]
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.hard[i].is_some()
    }

    pub fn labeled(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.hard[i].is_some()).collect()
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.hard[i].is_none()).collect()
    }

    /// Sets the soft probabilities of an unlabeled superpixel. The triple is
    /// clamped to be non-negative and renormalized onto the simplex; hard
    /// labels are left alone.
    pub fn set_probs(&mut self, i: usize, p: [f64; 3]) {
        if self.hard[i].is_some() {
            return;
        }
        let p = p.map(|v| v.max(0.0));
        let s: f64 = p.iter().sum();
        self.probs[i] = if s > 0.0 { p.map(|v| v / s) } else { [1.0 / 3.0; 3] };
    }

    /// Marks `i` as hard-labeled with a one-hot distribution.
    pub fn set_hard(&mut self, i: usize, class: LabelClass) {
        self.hard[i] = Some(class);
        self.probs[i] = class.one_hot();
    }

    /// Applies a stroke batch atomically. Every superpixel touched by a stroke
    /// takes that stroke's class. Two different classes on one superpixel,
    /// whether within the batch or against an existing hard label, reject the
    /// whole batch.
    pub fn apply_scribbles(
        &mut self,
        sp: &SuperpixelMap,
        strokes: &[ScribbleStroke],
        region: Option<&Rect>,
    ) -> Result<ScribbleOutcome> {
        let (w, h) = (sp.width(), sp.height());
        for s in strokes {
            s.validate(w, h)?;
        }
        let mut assigned: Vec<Option<LabelClass>> = self.hard.clone();
        let mut outcome = ScribbleOutcome::default();
        for s in strokes {
            for p in s.rasterize(w, h) {
                if let Some(r) = region {
                    if !r.contains(p % w, p / w) {
                        outcome.outside_region = true;
                    }
                }
                let i = sp.labels()[p];
                match assigned[i] {
                    Some(c) if c != s.class => {
                        return Err(Error::ScribbleConflict {
                            superpixel: i,
                            first: c.code(),
                            second: s.class.code(),
                        })
                    }
                    Some(_) => {}
                    None => assigned[i] = Some(s.class),
                }
            }
        }
        for (i, c) in assigned.into_iter().enumerate() {
            if let (Some(c), None) = (c, self.hard[i]) {
                self.set_hard(i, c);
                outcome.newly_labeled.push(i);
            }
        }
        Ok(outcome)
    }

    /// Class a superpixel takes in the trimap.
    pub fn trimap_class(&self, i: usize, threshold: f64) -> LabelClass {
        let [pf, pb, _] = self.probs[i];
        if pf > threshold {
            LabelClass::Foreground
        } else if pb > threshold {
            LabelClass::Background
        } else {
            self.hard[i].unwrap_or(LabelClass::Unknown)
        }
    }

    pub fn synthesize_trimap(&self, sp: &SuperpixelMap, threshold: f64) -> Trimap {
        let classes: Vec<LabelClass> = (0..self.len()).map(|i| self.trimap_class(i, threshold)).collect();
        let values = sp.labels().iter().map(|&l| classes[l].trimap_value()).collect();
        Trimap {
            width: sp.width(),
            height: sp.height(),
            values,
        }
    }
}

/// Per-pixel 3-class map encoded as 0 / 128 / 255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trimap {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl Trimap {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidArgument("trimap length mismatch".into()));
        }
        if let Some(v) = values.iter().find(|&&v| LabelClass::from_trimap_value(v).is_none()) {
            return Err(Error::InvalidArgument(format!("illegal trimap value {v}")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_classes(width: usize, height: usize, classes: &[LabelClass]) -> Result<Self> {
        Self::new(width, height, classes.iter().map(|c| c.trimap_value()).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (w, h, v) = image::load_gray(path)?;
        Self::new(w, h, v)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_gray_png(path, self.width, self.height, &self.values)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        image::encode_gray_png(self.width, self.height, &self.values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn class_at(&self, p: usize) -> LabelClass {
        LabelClass::from_trimap_value(self.values[p]).expect("validated on construction")
    }

    pub fn classes(&self) -> Vec<LabelClass> {
        (0..self.values.len()).map(|p| self.class_at(p)).collect()
    }

    pub fn known_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 128).count()
    }
}

/// Per-pixel opacity in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMatte {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AlphaMatte {
    /// Values are clamped to `[0, 1]`.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidArgument("matte length mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::new(width, height, vec![v; width * height]).expect("length matches")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                v.push(f(x, y));
            }
        }
        Self::new(width, height, v).expect("length matches")
    }

    pub fn from_gray8(width: usize, height: usize, values: &[u8]) -> Result<Self> {
        Self::new(width, height, values.iter().map(|&v| f64::from(v) / 255.0).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (w, h, v) = image::load_gray(path)?;
        Self::from_gray8(w, h, &v)
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_gray_png(path, self.width, self.height, &self.to_gray8())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        image::encode_gray_png(self.width, self.height, &self.to_gray8())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

pub fn rmse(a: &AlphaMatte, gt: &AlphaMatte) -> Result<f64> {
    if a.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: a.dims(),
        });
    }
    let sse: f64 = a.values.iter().zip(&gt.values).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sse / a.values.len() as f64).sqrt())
}

/// Percentage of image pixels under at least one rasterized stroke.
pub fn coverage_percentage(strokes: &[ScribbleStroke], width: usize, height: usize) -> f64 {
    let covered = stroke_mask(strokes, width, height).iter().filter(|&&m| m).count();
    covered as f64 / (width * height) as f64 * 100.0
}
