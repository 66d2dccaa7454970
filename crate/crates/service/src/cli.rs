//! Command-line interface.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use scribblematte::labelstate::{rmse, AlphaMatte, Trimap};
use scribblematte::session::{evaluate, run_oracle_session, sweep_configs, Prepared, Session, SessionConfig, Sweep};
use scribblematte::synthetic::{generate_suite, load_suite, write_case};
use scribblematte::{load_image, Error};

use crate::api::{parse_config, router, ApiConfig, AppState, DEFAULT_MAX_DIM};

pub const PORT_ENV: &str = "SCRIBBLEMATTE_PORT";

#[derive(Debug, Parser)]
#[command(name = "scribblematte", version, about = "Region-guided scribble matting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full oracle-driven run on one image against its ground truth.
    Auto(AutoArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Evaluate a suite of cases under a configuration sweep.
    Eval(EvalArgs),
    /// Write synthetic composites with ground-truth alpha and trimap.
    GenSynthetic(GenArgs),
    /// Print the region score table for the first round of an image.
    Scores(ScoresArgs),
}

#[derive(Debug, Args)]
pub struct AutoArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub gt_trimap: PathBuf,
    #[arg(long)]
    pub gt_alpha: PathBuf,
    /// TOML file mirroring the session configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for trimap.png, alpha.png, overlay.png and strokes.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = PORT_ENV, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_MAX_DIM)]
    pub max_dim: usize,
    /// Idle seconds before a session is evicted.
    #[arg(long, default_value_t = 3600)]
    pub ttl_secs: u64,
    /// Defaults for sessions created without their own config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("cases").required(true).args(["suite", "synthetic"])))]
pub struct EvalArgs {
    /// Directory of cases, each holding image.png, alpha.png and trimap.png.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Generate this many synthetic cases instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value = "single")]
    pub sweep: Sweep,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for synthetic cases.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length of synthetic cases.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct ScoresArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

pub fn load_config(path: Option<&Path>) -> CliResult<SessionConfig> {
    let base = SessionConfig::default();
    match path {
        None => Ok(base),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(parse_config(&text, &base).map_err(|e| format!("{}: {e}", p.display()))?)
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Auto(a) => auto(a),
        Command::Serve(a) => serve(a),
        Command::Eval(a) => eval(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Scores(a) => scores(a),
    }
}

fn auto(a: AutoArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let image = load_image(&a.image)?;
    let trimap = Trimap::load(&a.gt_trimap)?;
    let alpha = AlphaMatte::load(&a.gt_alpha)?;
    for d in [trimap.dims(), alpha.dims()] {
        if d != image.dims() {
            return Err(Error::DimensionMismatch { expected: image.dims(), actual: d }.into());
        }
    }
    let (w, h) = image.dims();
    let prep = Arc::new(Prepared::new(image, cfg.superpixel_target(w, h))?);
    let s = run_oracle_session(prep, &trimap, &cfg)?;
    let res = s.result().expect("finalized session has a result");
    let e = rmse(&res.alpha, &alpha)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        res.trimap.save_png(dir.join("trimap.png"))?;
        res.alpha.save_png(dir.join("alpha.png"))?;
        s.overlay().save_png(dir.join("overlay.png"))?;
        std::fs::write(dir.join("strokes.json"), serde_json::to_string_pretty(s.strokes())?)?;
    }
    println!("rmse={e:.6}, coverage={:.4}%", s.coverage());
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let cfg = ApiConfig {
        max_dim: a.max_dim,
        ttl: Duration::from_secs(a.ttl_secs),
        defaults: load_config(a.config.as_deref())?,
    };
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let state = AppState::new(cfg);
        let store = state.store.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                store.evict_expired(std::time::Instant::now());
            }
        });
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let base = load_config(a.config.as_deref())?;
    let cases = match (&a.suite, a.synthetic) {
        (Some(dir), _) => load_suite(dir)?,
        (None, Some(k)) => generate_suite(k, a.seed, a.size, a.size)?,
        (None, None) => unreachable!("clap requires one case source"),
    };
    let configs = sweep_configs(a.sweep, &base);
    let report = evaluate(&cases, &configs, a.out.as_deref())?;
    if let Some(dir) = &a.out {
        report.write(dir)?;
    }
    print!("{}", report.summary_csv());
    Ok(())
}

fn gen_synthetic(a: GenArgs) -> CliResult<()> {
    for case in generate_suite(a.count, a.seed, a.size, a.size)? {
        let d = write_case(&case, &a.out)?;
        println!("{}", d.display());
    }
    Ok(())
}

fn scores(a: ScoresArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let s = Session::create(load_image(&a.image)?, cfg)?;
    match s.scores() {
        Some(sc) => print!("{}", sc.to_table()),
        None => println!("no scores: the first round is chosen without scoring"),
    }
    Ok(())
}
