//! Command dispatch and CSV output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use aoaloc::bounds::crlb_trace;
use aoaloc::nlos::{
    bootstrap_failure_prob, choose_num_seeds, failure_prob_bounds, robust_localize_with, SeedCountMode,
    SuppressionConfig,
};
use aoaloc::sim::campaign::{run_monte_carlo, trial_rng, Algorithm, AlphaChoice, CampaignSpec, OutlierKind};
use aoaloc::sim::raytrace::{narrowband_measurements, narrowband_scene, wall_scene, wideband_measurements, RayScene};
use aoaloc::sim::report::{write_metrics, write_records, write_rows};
use aoaloc::sim::ring::ring_receivers;
use aoaloc::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{
    AlphaSetting, ChooseMParams, CliConfig, Command, ConfigError, CrlbMapParams, FailureProbParams, Grid,
    LosAlgorithm, LosParams, NlosAlgorithm, NlosParams, RaytraceParams, SceneName,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] aoaloc::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Machine-readable record of the failure.
    pub fn record(&self) -> serde_json::Value {
        let (kind, key) = match self {
            CliError::Config(e) => (e.kind(), e.key().map(str::to_string)),
            CliError::Core(aoaloc::Error::InvalidParameter { name, .. }) => ("ValidationError", Some(name.to_string())),
            CliError::Core(aoaloc::Error::InvalidAlpha(_)) => ("ValidationError", Some("alpha".to_string())),
            CliError::Core(_) => ("ModuleError", None),
            CliError::Io { .. } => ("IoError", None),
        };
        json!({ "error": kind, "key": key, "message": self.to_string() })
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbRow {
    pub x: f64,
    pub y: f64,
    pub crlb_trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub m: usize,
    pub exact: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCountRow {
    pub mode: String,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaytraceRow {
    pub source: String,
    pub x: f64,
    pub y: f64,
    pub mode: String,
    pub rms: f64,
    pub pruned: usize,
}

/// Path of the per-trial table written beside a metrics file.
pub fn records_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("trials.csv")
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    let mut w = sink(path)?;
    write_rows(&mut w, rows)?;
    w.flush().map_err(|e| CliError::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn campaign_spec(grid: &Grid, algorithm: Algorithm, seed: u64) -> CampaignSpec {
    CampaignSpec {
        algorithm,
        n_values: grid.n.clone(),
        sigma_deg: grid.sigma_deg.clone(),
        num_locations: grid.locations,
        trials_per_location: grid.trials.div_ceil(grid.locations),
        field_radius: grid.field_radius,
        seed,
        ..CampaignSpec::default()
    }
}

fn los_spec(p: &LosParams, seed: u64) -> CampaignSpec {
    let algorithm = match p.algorithm {
        LosAlgorithm::Sequential => Algorithm::Sequential {
            num_bootstraps: p.bootstraps,
        },
        LosAlgorithm::SequentialRange => Algorithm::SequentialRange {
            beta: p.beta,
            snr_db: p.snr_db,
        },
        LosAlgorithm::Ml => Algorithm::MlLos,
    };
    campaign_spec(&p.grid, algorithm, seed)
}

fn nlos_spec(p: &NlosParams, seed: u64) -> CampaignSpec {
    let alpha = match p.alpha_max {
        AlphaSetting::Fixed(a) => AlphaChoice::Fixed(a),
        AlphaSetting::Matched => AlphaChoice::Matched,
    };
    let algorithm = match p.algorithm {
        NlosAlgorithm::Robust => Algorithm::Robust {
            alpha,
            num_seeds: p.num_seeds,
            target_pfail: p.target_pfail,
        },
        NlosAlgorithm::MlRobust => Algorithm::MlRobust { alpha },
        NlosAlgorithm::MlLos => Algorithm::MlLos,
        NlosAlgorithm::MlKnownLos => Algorithm::MlKnownLos,
    };
    CampaignSpec {
        alphas: p.alpha.clone(),
        outlier_kind: if p.bernoulli {
            OutlierKind::Bernoulli
        } else {
            OutlierKind::ExactCount
        },
        ml_grid_fraction: p.ml_grid_fraction,
        ..campaign_spec(&p.grid, algorithm, seed)
    }
}

/// Runs a campaign; metrics go to `out` (or stdout), trial records beside it.
fn simulate(spec: &CampaignSpec, out: Option<&Path>) -> Result<()> {
    let result = run_monte_carlo(spec)?;
    let mut w = sink(out)?;
    write_metrics(&mut w, &result.cells)?;
    w.flush().map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))?;
    if let Some(p) = out {
        let rp = records_path(p);
        let mut w = sink(Some(&rp))?;
        write_records(&mut w, &result.records)?;
        w.flush().map_err(|e| CliError::io(&rp, e))?;
    }
    Ok(())
}

pub fn crlb_map(p: &CrlbMapParams) -> Result<Vec<CrlbRow>> {
    let rx = ring_receivers(p.n, p.field_radius);
    let sigmas = vec![p.sigma_deg.to_radians(); p.n];
    let half = p.half_width * p.field_radius;
    let step = 2.0 * half / (p.resolution - 1) as f64;
    let mut rows = Vec::new();
    for j in 0..p.resolution {
        for i in 0..p.resolution {
            let pt = Point2::new(-half + i as f64 * step, -half + j as f64 * step);
            if pt.norm() >= p.field_radius * (1.0 - 1e-9) {
                continue;
            }
            rows.push(CrlbRow {
                x: pt.x,
                y: pt.y,
                crlb_trace: crlb_trace(pt, &rx, &sigmas)?,
            });
        }
    }
    Ok(rows)
}

pub fn failure_table(p: &FailureProbParams) -> Result<Vec<FailureRow>> {
    (p.m_min..=p.m_max)
        .map(|m| {
            let (lower, upper) = failure_prob_bounds(p.n, p.alpha, m)?;
            Ok(FailureRow {
                m,
                exact: bootstrap_failure_prob(p.n, p.alpha, m)?,
                lower,
                upper,
            })
        })
        .collect()
}

pub fn seed_counts(p: &ChooseMParams) -> Result<Vec<SeedCountRow>> {
    [("exact", SeedCountMode::Exact), ("bound", SeedCountMode::Bound)]
        .into_iter()
        .map(|(name, mode)| {
            Ok(SeedCountRow {
                mode: name.to_string(),
                m: choose_num_seeds(p.n, p.alpha, p.target_pfail, mode)?,
            })
        })
        .collect()
}

fn scene_rms(scene: &RayScene, index: usize, p: &RaytraceParams, seed: u64) -> RaytraceRow {
    let (name, source) = scene.sources[index].clone();
    let trace = scene.trace(source);
    let sigma = p.sigma_deg.to_radians();
    let errors: Vec<Option<f64>> = (0..p.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, index, t);
            let m = if p.wideband {
                wideband_measurements(&mut rng, &trace, &scene.receivers, sigma)
            } else {
                narrowband_measurements(&mut rng, &trace, &scene.receivers, sigma)
            };
            let cfg = SuppressionConfig {
                alpha_max: p.alpha_max,
                num_seeds: Some(p.num_seeds),
                seed: t as u64,
                ..SuppressionConfig::default()
            };
            robust_localize_with(&m, &scene.receivers, &cfg, |q| scene.feasible(q))
                .ok()
                .map(|r| r.estimate.mean.distance(source).powi(2))
        })
        .collect();
    let kept: Vec<f64> = errors.iter().flatten().copied().collect();
    let rms = if kept.is_empty() {
        f64::NAN
    } else {
        (kept.iter().sum::<f64>() / kept.len() as f64).sqrt()
    };
    RaytraceRow {
        source: name,
        x: source.x,
        y: source.y,
        mode: if p.wideband { "wideband" } else { "narrowband" }.to_string(),
        rms,
        pruned: p.trials - kept.len(),
    }
}

pub fn raytrace(p: &RaytraceParams, seed: u64) -> Vec<RaytraceRow> {
    let scene = match p.scene {
        SceneName::Narrowband => narrowband_scene(),
        SceneName::Wall => wall_scene(),
    };
    (0..scene.sources.len()).map(|i| scene_rms(&scene, i, p, seed)).collect()
}

/// Executes a validated configuration, writing to `config.output` or stdout.
pub fn run_command(config: &CliConfig) -> Result<()> {
    let out = config.output.as_deref();
    match &config.command {
        Command::SimulateLos(p) => simulate(&los_spec(p, config.seed), out),
        Command::SimulateNlos(p) => simulate(&nlos_spec(p, config.seed), out),
        Command::CrlbMap(p) => emit(out, &crlb_map(p)?),
        Command::Raytrace(p) => emit(out, &raytrace(p, config.seed)),
        Command::FailureProb(p) => emit(out, &failure_table(p)?),
        Command::ChooseM(p) => {
            let rows = seed_counts(p)?;
            if out.is_some() {
                for r in &rows {
                    println!("{}: M = {}", r.mode, r.m);
                }
            }
            emit(out, &rows)
        }
    }
}
