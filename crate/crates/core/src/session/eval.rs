use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::infoselect::SelectionMode;
use crate::labelstate::{rmse, AlphaMatte, Trimap};
use crate::synthetic::Case;

use super::{oracle_scribbles, Phase, Prepared, Session, SessionConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedConfig {
    pub name: String,
    pub cfg: SessionConfig,
}

impl NamedConfig {
    pub fn new(name: impl Into<String>, cfg: SessionConfig) -> Self {
        Self { name: name.into(), cfg }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Single,
    /// N = 1..=10.
    Iterations,
    /// Full config and the six single-switch ablations.
    Ablations,
    /// Argmax, random-top-6 over ten seeds, and one-shot batch selection.
    Selection,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "none" => Ok(Sweep::Single),
            "iterations" => Ok(Sweep::Iterations),
            "ablations" => Ok(Sweep::Ablations),
            "selection" => Ok(Sweep::Selection),
            other => Err(Error::InvalidArgument(format!("unknown sweep {other:?}"))),
        }
    }
}

pub fn sweep_configs(sweep: Sweep, base: &SessionConfig) -> Vec<NamedConfig> {
    let with = |f: &dyn Fn(&mut SessionConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match sweep {
        Sweep::Single => vec![NamedConfig::new("default", base.clone())],
        Sweep::Iterations => (1..=10usize.min(base.grid_order * base.grid_order))
            .map(|n| NamedConfig::new(format!("iterations-{n}"), with(&|c| c.iterations = n)))
            .collect(),
        Sweep::Ablations => vec![
            NamedConfig::new("full", base.clone()),
            NamedConfig::new("no-markov", with(&|c| c.ablation.no_markov = true)),
            NamedConfig::new("no-cnn", with(&|c| c.ablation.no_cnn = true)),
            NamedConfig::new("drop-similarity", with(&|c| c.ablation.drop_similarity = true)),
            NamedConfig::new("drop-diversity", with(&|c| c.ablation.drop_diversity = true)),
            NamedConfig::new("drop-entropy", with(&|c| c.ablation.drop_entropy = true)),
            NamedConfig::new("drop-edge", with(&|c| c.ablation.drop_edge = true)),
        ],
        Sweep::Selection => {
            let mut v = vec![NamedConfig::new("argmax", with(&|c| c.selection = SelectionMode::Argmax))];
            for s in 0..10u64 {
                v.push(NamedConfig::new(
                    format!("random-top6-s{s}"),
                    with(&|c| {
                        c.selection = SelectionMode::RandomTop6;
                        c.seed = base.seed + s;
                    }),
                ));
            }
            v.push(NamedConfig::new("batch", with(&|c| c.selection = SelectionMode::Batch)));
            v
        }
    }
}

fn oracle_seed(cfg: &SessionConfig, iteration: usize, region: usize) -> u64 {
    cfg.seed
        .wrapping_mul(0x9E37_79B9)
        .wrapping_add((iteration as u64) << 16)
        .wrapping_add(region as u64)
}

/// Runs a complete session with oracle strokes from `gt` and finalizes it.
pub fn run_oracle_session(prep: Arc<Prepared>, gt: &Trimap, cfg: &SessionConfig) -> Result<Session> {
    let mut s = run_oracle_rounds(prep, gt, cfg)?;
    s.finalize()?;
    Ok(s)
}

/// Every scribble round of an oracle session, stopping short of finalize.
pub fn run_oracle_rounds(prep: Arc<Prepared>, gt: &Trimap, cfg: &SessionConfig) -> Result<Session> {
    let mut s = Session::from_prepared(prep, cfg.clone())?;
    while s.phase() == Phase::AwaitingScribbles {
        let mut strokes = Vec::new();
        for &r in s.suggested_regions() {
            let mut batch = oracle_scribbles(
                &s.grid().rect(r),
                s.grid().inside(r),
                gt,
                s.superpixels(),
                oracle_seed(cfg, s.iteration(), r),
            );
            batch.iter_mut().for_each(|st| st.region = Some(r));
            strokes.extend(batch);
        }
        s.submit_scribbles(strokes)?;
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub case: String,
    pub config: String,
    pub rmse: f64,
    pub coverage: f64,
    pub rounds: usize,
    pub labeled: usize,
    /// Share of pixels left unknown in the synthesized trimap.
    pub unknown_fraction: f64,
    pub cnn_skipped: Option<String>,
    /// Set when no matte could be solved; `rmse` is then scored against a
    /// constant 0.5 matte.
    pub failed: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub config: String,
    pub cases: usize,
    pub median_rmse: f64,
    pub mean_rmse: f64,
    pub median_coverage: f64,
    pub mean_coverage: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<RunRow>,
    pub summaries: Vec<ConfigSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl EvalReport {
    pub fn summary(&self, config: &str) -> Option<&ConfigSummary> {
        self.summaries.iter().find(|s| s.config == config)
    }

    /// RMSEs of every row whose config name starts with `prefix`.
    pub fn rmses(&self, prefix: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.config.starts_with(prefix)).map(|r| r.rmse).collect()
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("case,config,rmse,coverage,rounds,labeled,unknown_fraction,cnn_skipped,failed\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.4},{},{},{:.4},{},{}",
                r.case,
                r.config,
                r.rmse,
                r.coverage,
                r.rounds,
                r.labeled,
                r.unknown_fraction,
                r.cnn_skipped.as_deref().unwrap_or("").replace(',', ";"),
                r.failed.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("config,cases,median_rmse,mean_rmse,median_coverage,mean_coverage\n");
        for c in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.4},{:.4}",
                c.config, c.cases, c.median_rmse, c.mean_rmse, c.median_coverage, c.mean_coverage
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `rows.csv`, `summary.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("rows.csv"), self.rows_csv())?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("report.json"), self.to_json())?;
        Ok(())
    }
}

/// Strokes always; trimap and alpha when the session produced them.
fn write_artifacts(s: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(res) = s.result() {
        res.trimap.save_png(dir.join("trimap.png"))?;
        res.alpha.save_png(dir.join("alpha.png"))?;
    }
    fs::write(dir.join("strokes.json"), serde_json::to_string_pretty(s.strokes())?)?;
    Ok(())
}

fn run_case(case: &Case, configs: &[NamedConfig], out: Option<&Path>) -> Result<Vec<RunRow>> {
    let (w, h) = case.image.dims();
    let mut cache: HashMap<usize, Arc<Prepared>> = HashMap::new();
    let mut rows = Vec::with_capacity(configs.len());
    for nc in configs {
        nc.cfg.validate()?;
        let target = nc.cfg.superpixel_target(w, h);
        let prep = match cache.get(&target) {
            Some(p) => p.clone(),
            None => {
                let p = Arc::new(Prepared::new(case.image.clone(), target)?);
                cache.insert(target, p.clone());
                p
            }
        };
        let mut s = run_oracle_rounds(prep, &case.trimap, &nc.cfg)?;
        let mut row = RunRow {
            case: case.name.clone(),
            config: nc.name.clone(),
            rmse: 0.0,
            coverage: s.coverage(),
            rounds: s.iteration(),
            labeled: s.probabilities().labeled().len(),
            unknown_fraction: 1.0,
            cnn_skipped: None,
            failed: None,
        };
        match s.finalize().cloned() {
            Ok(res) => {
                let unknown = res.trimap.values().iter().filter(|&&v| v == 128).count();
                row.rmse = rmse(&res.alpha, &case.alpha)?;
                row.unknown_fraction = unknown as f64 / (w * h) as f64;
                row.cnn_skipped = res.cnn_skipped.clone();
            }
            Err(e @ Error::NoKnownPixels) => {
                row.rmse = rmse(&AlphaMatte::from_fn(w, h, |_, _| 0.5), &case.alpha)?;
                row.failed = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = out {
            write_artifacts(&s, &dir.join(&case.name).join(&nc.name))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Runs every config on every case with oracle scribbles. Cases run in
/// parallel; rows come back in case-then-config order.
pub fn evaluate(cases: &[Case], configs: &[NamedConfig], out: Option<&Path>) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no evaluation cases".into()));
    }
    if configs.is_empty() {
        return Err(Error::InvalidArgument("no configurations".into()));
    }
    let per_case: Vec<Vec<RunRow>> = cases
        .par_iter()
        .map(|c| run_case(c, configs, out))
        .collect::<Result<_>>()?;
    let rows: Vec<RunRow> = per_case.into_iter().flatten().collect();
    let summaries = configs
        .iter()
        .map(|nc| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.config == nc.name).collect();
            let e: Vec<f64> = mine.iter().map(|r| r.rmse).collect();
            let c: Vec<f64> = mine.iter().map(|r| r.coverage).collect();
            ConfigSummary {
                config: nc.name.clone(),
                cases: mine.len(),
                median_rmse: median(&e),
                mean_rmse: mean(&e),
                median_coverage: median(&c),
                mean_coverage: mean(&c),
            }
        })
        .collect();
    Ok(EvalReport { rows, summaries })
}
