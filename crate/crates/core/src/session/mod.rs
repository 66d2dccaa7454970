//! Interactive session: rounds of region suggestion, scribbling and Markov
//! propagation, then CNN refinement, trimap synthesis and matting.

mod eval;
mod oracle;
mod overlay;

pub use eval::{
    evaluate, median, run_oracle_rounds, run_oracle_session, sweep_configs, ConfigSummary, EvalReport, NamedConfig, RunRow, Sweep,
};
pub use oracle::{oracle_scribbles, PURITY};
pub use overlay::render_overlay;

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnnprop::{cnn_propagate, CnnConfig, CnnReport};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::imagegraph::{
    build_graph, default_target, extract_features, oversegment, FeatureTable, GraphMatrices, SuperpixelMap,
    DEFAULT_COLOR_BINS,
};
use crate::infoselect::{
    info_content_with, ranked_regions, select_region, InfoScores, Rect, RegionGrid, SelectionMode, StaticTerms,
    TermMask,
};
use crate::labelstate::{coverage_percentage, AlphaMatte, ProbabilityState, ScribbleStroke, Trimap, TRIMAP_THRESHOLD};
use crate::markovprop::markov_round;
use crate::mattesolver::{
    external_solver, matte, matting_laplacian, solve_alpha, MatteOptions, MattingSystem, EXTERNAL_TIMEOUT,
    HALF_RES_LIMIT,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_markov: bool,
    pub no_cnn: bool,
    pub drop_similarity: bool,
    pub drop_diversity: bool,
    pub drop_entropy: bool,
    pub drop_edge: bool,
}

impl Ablation {
    pub fn term_mask(&self) -> TermMask {
        TermMask {
            similarity: !self.drop_similarity,
            diversity: !self.drop_diversity,
            entropy: !self.drop_entropy,
            edge: !self.drop_edge,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// The image is split into `grid_order x grid_order` regions.
    pub grid_order: usize,
    /// Scribble rounds before finalizing.
    pub iterations: usize,
    /// Superpixel count requested from SLIC; derived from the image size
    /// when absent.
    pub superpixels: Option<usize>,
    pub trimap_threshold: f64,
    pub selection: SelectionMode,
    pub ablation: Ablation,
    pub seed: u64,
    pub cnn: CnnConfig,
    pub matte: MatteOptions,
    /// Shell command template with `{image}`, `{trimap}` and `{alpha}`
    /// placeholders; replaces the embedded solver when set.
    pub external_solver: Option<String>,
    pub external_timeout_secs: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            grid_order: 4,
            iterations: 6,
            superpixels: None,
            trimap_threshold: TRIMAP_THRESHOLD,
            selection: SelectionMode::Argmax,
            ablation: Ablation::default(),
            seed: 0,
            cnn: CnnConfig::default(),
            matte: MatteOptions::default(),
            external_solver: None,
            external_timeout_secs: EXTERNAL_TIMEOUT.as_secs(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.grid_order;
        if m == 0 {
            return Err(Error::InvalidArgument("grid_order must be at least 1".into()));
        }
        if self.iterations == 0 || self.iterations > m * m {
            return Err(Error::InvalidArgument(format!(
                "iterations must be in 1..={} for grid order {m}",
                m * m
            )));
        }
        if !(self.trimap_threshold > 1.0 / 3.0 && self.trimap_threshold <= 1.0) {
            return Err(Error::InvalidArgument("trimap_threshold must be in (1/3, 1]".into()));
        }
        Ok(())
    }

    pub fn superpixel_target(&self, width: usize, height: usize) -> usize {
        self.superpixels.unwrap_or_else(|| default_target(width, height))
    }
}

/// Label-independent per-image data, shareable between sessions that use the
/// same superpixel count.
#[derive(Debug)]
pub struct Prepared {
    pub image: Image,
    pub superpixels: SuperpixelMap,
    pub features: FeatureTable,
    pub graph: GraphMatrices,
    laplacian: OnceLock<std::result::Result<MattingSystem, String>>,
}

impl Prepared {
    pub fn new(image: Image, target: usize) -> Result<Self> {
        let superpixels = oversegment(&image, target)?;
        let features = extract_features(&image, &superpixels, DEFAULT_COLOR_BINS);
        let graph = build_graph(&superpixels, &features);
        Ok(Self {
            image,
            superpixels,
            features,
            graph,
            laplacian: OnceLock::new(),
        })
    }

    /// Embedded solve, reusing the Laplacian across calls when the image is
    /// solved at full resolution.
    pub fn matte(&self, trimap: &Trimap, opts: &MatteOptions) -> Result<AlphaMatte> {
        let (w, h) = self.image.dims();
        let halves = opts.downsample_large && (w > HALF_RES_LIMIT || h > HALF_RES_LIMIT);
        if halves || opts.eps != MatteOptions::default().eps {
            return matte(&self.image, trimap, opts);
        }
        let sys = self
            .laplacian
            .get_or_init(|| matting_laplacian(&self.image, opts.eps).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::InvalidArgument(e.clone()))?;
        Ok(solve_alpha(sys, trimap, opts.lambda)?.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Selecting,
    AwaitingScribbles,
    Propagating,
    Finalized,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Selecting => "selecting",
            Phase::AwaitingScribbles => "awaiting-scribbles",
            Phase::Propagating => "propagating",
            Phase::Finalized => "finalized",
        }
    }
}

/// What happened in one submitted round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub iteration: usize,
    pub regions: Vec<usize>,
    pub strokes: usize,
    pub newly_labeled: usize,
    pub outside_region: bool,
    pub unreachable: usize,
}

#[derive(Clone, Debug)]
pub struct FinalResult {
    pub trimap: Trimap,
    pub alpha: AlphaMatte,
    pub cnn: Option<CnnReport>,
    /// Why CNN propagation did not run, when it did not.
    pub cnn_skipped: Option<String>,
}

pub struct Session {
    cfg: SessionConfig,
    prep: Arc<Prepared>,
    grid: RegionGrid,
    statics: StaticTerms,
    probs: ProbabilityState,
    strokes: Vec<ScribbleStroke>,
    iteration: usize,
    phase: Phase,
    suggested: Vec<usize>,
    scores: Option<InfoScores>,
    history: Vec<RoundRecord>,
    rng: ChaCha8Rng,
    result: Option<FinalResult>,
}

impl Session {
    pub fn create(image: Image, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let target = cfg.superpixel_target(image.width(), image.height());
        let prep = Prepared::new(image, target)?;
        Self::from_prepared(Arc::new(prep), cfg)
    }

    pub fn from_prepared(prep: Arc<Prepared>, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = RegionGrid::new(&prep.superpixels, cfg.grid_order)?;
        let statics = StaticTerms::compute(&grid, &prep.features);
        let probs = ProbabilityState::uniform(prep.superpixels.len());
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            prep,
            grid,
            statics,
            probs,
            strokes: Vec::new(),
            iteration: 0,
            phase: Phase::Selecting,
            suggested: Vec::new(),
            scores: None,
            history: Vec::new(),
            result: None,
        };
        if s.cfg.selection == SelectionMode::Batch {
            s.select_batch()?;
        } else {
            s.select_next()?;
        }
        Ok(s)
    }

    fn select_next(&mut self) -> Result<()> {
        debug_assert_eq!(self.phase, Phase::Selecting);
        let mask = self.cfg.ablation.term_mask();
        let scores = info_content_with(&self.grid, &self.statics, &self.probs, mask);
        let r = select_region(&scores, &mut self.grid, self.cfg.selection, &mut self.rng)?;
        self.scores = Some(scores);
        self.suggested = vec![r];
        self.phase = Phase::AwaitingScribbles;
        Ok(())
    }

    /// One-shot selection of all rounds' regions without the entropy term.
    fn select_batch(&mut self) -> Result<()> {
        let mask = TermMask {
            entropy: false,
            ..self.cfg.ablation.term_mask()
        };
        let scores = info_content_with(&self.grid, &self.statics, &self.probs, mask);
        let picks: Vec<usize> = ranked_regions(&scores).into_iter().take(self.cfg.iterations).collect();
        if picks.is_empty() {
            return Err(Error::NoRegionsLeft);
        }
        for &r in &picks {
            self.grid.mark_visited(r);
        }
        self.scores = Some(scores);
        self.suggested = picks;
        self.phase = Phase::AwaitingScribbles;
        Ok(())
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn prepared(&self) -> &Arc<Prepared> {
        &self.prep
    }

    pub fn image(&self) -> &Image {
        &self.prep.image
    }

    pub fn superpixels(&self) -> &SuperpixelMap {
        &self.prep.superpixels
    }

    pub fn grid(&self) -> &RegionGrid {
        &self.grid
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Completed scribble rounds.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Regions awaiting scribbles; several in batch mode, empty once all
    /// rounds are done.
    pub fn suggested_regions(&self) -> &[usize] {
        if self.phase == Phase::AwaitingScribbles {
            &self.suggested
        } else {
            &[]
        }
    }

    pub fn suggested_rects(&self) -> Vec<Rect> {
        self.suggested_regions().iter().map(|&r| self.grid.rect(r)).collect()
    }

    /// Scores behind the latest suggestion.
    pub fn scores(&self) -> Option<&InfoScores> {
        self.scores.as_ref()
    }

    pub fn probabilities(&self) -> &ProbabilityState {
        &self.probs
    }

    pub fn strokes(&self) -> &[ScribbleStroke] {
        &self.strokes
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn result(&self) -> Option<&FinalResult> {
        self.result.as_ref()
    }

    pub fn coverage(&self) -> f64 {
        let (w, h) = self.prep.image.dims();
        coverage_percentage(&self.strokes, w, h)
    }

    /// True once all rounds are done and only finalizing remains.
    pub fn ready_to_finalize(&self) -> bool {
        self.phase == Phase::Propagating
    }

    /// Applies the strokes for the suggested region(s), propagates, and
    /// selects the next region unless the rounds are exhausted. An empty
    /// stroke list still completes the round.
    pub fn submit_scribbles(&mut self, mut strokes: Vec<ScribbleStroke>) -> Result<&RoundRecord> {
        if self.phase != Phase::AwaitingScribbles {
            return Err(Error::WrongPhase {
                phase: self.phase.name().into(),
            });
        }
        let region = match self.suggested.as_slice() {
            [r] => Some(self.grid.rect(*r)),
            _ => None,
        };
        let outcome = self.probs.apply_scribbles(&self.prep.superpixels, &strokes, region.as_ref())?;
        let batch = self.cfg.selection == SelectionMode::Batch;
        let completed = if batch { self.suggested.len() } else { 1 };
        for s in &mut strokes {
            s.iteration = self.iteration + 1;
            if s.region.is_none() && !batch {
                s.region = self.suggested.first().copied();
            }
        }
        let stroke_count = strokes.len();
        self.strokes.extend(strokes);

        self.phase = Phase::Propagating;
        let mut unreachable = 0;
        if !self.cfg.ablation.no_markov {
            unreachable = markov_round(&self.prep.graph, &mut self.probs)?.unreachable.len();
        }
        self.iteration += completed;
        self.history.push(RoundRecord {
            iteration: self.iteration,
            regions: self.suggested.clone(),
            strokes: stroke_count,
            newly_labeled: outcome.newly_labeled.len(),
            outside_region: outcome.outside_region,
            unreachable,
        });
        if !batch && self.iteration < self.cfg.iterations && !self.grid.candidates().is_empty() {
            self.phase = Phase::Selecting;
            self.select_next()?;
        } else {
            self.suggested.clear();
        }
        Ok(self.history.last().expect("just pushed"))
    }

    /// CNN refinement, trimap synthesis and matting. Allowed once at least
    /// one round is complete; later calls return the cached result.
    pub fn finalize(&mut self) -> Result<&FinalResult> {
        if self.phase == Phase::Finalized {
            return Ok(self.result.as_ref().expect("finalized sessions keep their result"));
        }
        if self.iteration == 0 {
            return Err(Error::WrongPhase {
                phase: self.phase.name().into(),
            });
        }
        let mut probs = self.probs.clone();
        let (mut cnn, mut cnn_skipped) = (None, None);
        if self.cfg.ablation.no_cnn {
            cnn_skipped = Some("disabled".to_string());
        } else {
            let mut cc = self.cfg.cnn;
            cc.train.seed ^= self.cfg.seed;
            match cnn_propagate(&mut probs, &self.prep.superpixels, &self.prep.image, &cc) {
                Ok(rep) => cnn = Some(rep),
                Err(Error::HarvestSkipped(m)) => cnn_skipped = Some(m),
                Err(e) => return Err(e),
            }
        }
        let trimap = probs.synthesize_trimap(&self.prep.superpixels, self.cfg.trimap_threshold);
        let alpha = match &self.cfg.external_solver {
            Some(cmd) => external_solver(
                cmd,
                &self.prep.image,
                &trimap,
                Duration::from_secs(self.cfg.external_timeout_secs),
            )?,
            None => self.prep.matte(&trimap, &self.cfg.matte)?,
        };
        self.probs = probs;
        self.suggested.clear();
        self.phase = Phase::Finalized;
        self.result = Some(FinalResult {
            trimap,
            alpha,
            cnn,
            cnn_skipped,
        });
        Ok(self.result.as_ref().expect("just set"))
    }

    pub fn overlay(&self) -> Image {
        render_overlay(self)
    }
}
