//! Command-line verbs. Each reads one config file, applies the common flags
//! and writes its outputs under `--out`. The returned flag says whether
//! every trial succeeded, which the binary turns into the exit code.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use epinet_core::dataset::TimeSeriesDataset;
use epinet_core::evaluation::random_guess_stats;
use serde::Serialize;

use crate::casestudy::{generate_surrogate, run_case_study};
use crate::config::{
    self, CaseStudyConfig, EstimateConfig, ExperimentConfig, MomentsCheckConfig, FULL_TRIALS,
};
use crate::error::{io_err, HarnessError, Result};
use crate::estimation::{dataset_path, estimate_dataset};
use crate::experiment::{run_synthetic_experiment, synthesize, trial_seed};
use crate::ingest::ingest_cumulative_cases;
use crate::moments_check::run_moments_check;
use crate::report::{emit_case_study, emit_report, write_json, write_timings, ALL_FORMATS};

#[derive(Debug, Parser)]
#[command(
    name = "epinet",
    version,
    about = "Network topology and transmission-rate inference for meta-population epidemics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON or TOML configuration file.
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Run the full-size study (100 trials) instead of the desk-scale one.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic experiment: generate, simulate, estimate and score.
    Synth(Common),
    /// Estimate rates and topology from a stored dataset.
    Estimate(Common),
    /// Case-study pipeline on ingested data or the synthetic surrogate.
    Casestudy(Common),
    /// Compare the moment equations with Monte-Carlo ensembles.
    #[command(name = "moments-check")]
    MomentsCheck(Common),
    /// Naive-correlation and random-guess baselines on a synthetic condition.
    Baseline(Common),
}

pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(c) => synth(c),
        Command::Estimate(c) => estimate(c),
        Command::Casestudy(c) => casestudy(c),
        Command::MomentsCheck(c) => moments(c),
        Command::Baseline(c) => baseline(c),
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn experiment(c: &Common, stem: &str, cfg: &ExperimentConfig) -> Result<bool> {
    let (report, times) = run_synthetic_experiment(cfg)?;
    let written = emit_report(&report, &c.out, stem, &ALL_FORMATS)?;
    write_timings(&c.out, stem, &times)?;
    for a in &report.summary {
        log::info!(
            "{stem} {}: E_l {:.3} ± {:.3}, E_r {:.3} ± {:.3} over {} trials ({} failed)",
            a.estimator,
            a.e_l_mean.unwrap_or(f64::NAN),
            a.e_l_sd.unwrap_or(f64::NAN),
            a.e_r_mean.unwrap_or(f64::NAN),
            a.e_r_sd.unwrap_or(f64::NAN),
            a.trials,
            a.failed
        );
    }
    log::info!("wrote {} files to {}", written.len(), c.out.display());
    Ok(report.all_succeeded())
}

fn synth(c: &Common) -> Result<bool> {
    let mut cfg: ExperimentConfig = config::load(&c.config)?;
    cfg.apply_overrides(c.seed, c.full);
    cfg.validate()?;
    let data_dir = c.out.join("datasets");
    create(&data_dir)?;
    for t in 0..cfg.trials {
        let seed = trial_seed(cfg.seed, t);
        let (ds, truth) = synthesize(&cfg, seed)?;
        let stem = data_dir.join(format!("trial_{t:03}"));
        let provenance = serde_json::json!({ "trial": t, "seed": seed, "config": &cfg });
        ds.save(&stem, Some(provenance))?;
        let gamma = Some(cfg.gamma_total);
        write_json(
            data_dir.join(format!("trial_{t:03}_truth.json")),
            &truth.to_json(gamma),
        )?;
    }
    experiment(c, "synth", &cfg)
}

fn baseline(c: &Common) -> Result<bool> {
    let mut cfg: ExperimentConfig = config::load(&c.config)?;
    cfg.apply_overrides(c.seed, c.full);
    cfg.estimators = vec!["naive-correlation".into(), "random-guess".into()];
    create(&c.out)?;
    let (mean, sd) = random_guess_stats(cfg.n)?;
    #[derive(Serialize)]
    struct Theory {
        n: usize,
        random_guess_e_l_mean: f64,
        random_guess_e_l_sd: f64,
    }
    write_json(
        c.out.join("baseline_random_guess.json"),
        &Theory {
            n: cfg.n,
            random_guess_e_l_mean: mean,
            random_guess_e_l_sd: sd,
        },
    )?;
    experiment(c, "baseline", &cfg)
}

fn estimate(c: &Common) -> Result<bool> {
    let mut cfg: EstimateConfig = config::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.full {
        cfg.trials = FULL_TRIALS;
    }
    let path = dataset_path(&cfg, &base_dir(&c.config));
    let (ds, _) = TimeSeriesDataset::load(&path).map_err(|source| HarnessError::Dataset {
        path: path.clone(),
        source,
    })?;
    let report = estimate_dataset(&ds, &cfg)?;
    create(&c.out)?;
    write_json(c.out.join("estimate.json"), &report)?;
    log::info!(
        "alpha {:.4}, beta {:.4}, {} links",
        report.estimate.alpha_hat,
        report.estimate.beta_hat,
        report.topology.links.len()
    );
    Ok(true)
}

fn casestudy(c: &Common) -> Result<bool> {
    let mut cfg: CaseStudyConfig = config::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.full {
        cfg.trials = FULL_TRIALS;
    }
    create(&c.out)?;
    let (ds, truth, source) = match &cfg.data {
        Some(data) => {
            let path = if data.path.is_absolute() {
                data.path.clone()
            } else {
                base_dir(&c.config).join(&data.path)
            };
            let got =
                ingest_cumulative_cases(&path, data.window_start, data.window_end, data.min_cases)?;
            fs::write(c.out.join("ingest_warnings.txt"), got.warnings.join("\n"))
                .map_err(io_err(&c.out))?;
            (got.dataset, None, path.display().to_string())
        }
        None => {
            let (ds, truth) = generate_surrogate(&cfg.surrogate, cfg.seed)?;
            (ds, Some(truth), "surrogate".to_string())
        }
    };
    ds.save(&c.out.join("casestudy_data"), None)?;
    let report = run_case_study(&ds, &cfg, &source, truth.as_ref())?;
    emit_case_study(&report, &c.out, "casestudy")?;
    log::info!(
        "alpha {:.4}, beta {:.4}, r {:?}; sub-structures found: {:?}",
        report.estimate.alpha_hat,
        report.estimate.beta_hat,
        report.estimate.r_hat,
        report.substructures_found
    );
    Ok(true)
}

fn moments(c: &Common) -> Result<bool> {
    let mut cfg: MomentsCheckConfig = config::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let report = run_moments_check(&cfg)?;
    create(&c.out)?;
    write_json(c.out.join("moments_check.json"), &report)?;
    log::info!(
        "{} elements compared, {} beyond {} SE (allowed {}), max |z| {:.2} (limit {:.2})",
        report.compared,
        report.exceedances,
        cfg.sigmas,
        report.allowed_exceedances,
        report.max_abs_z,
        report.z_limit
    );
    Ok(report.passed)
}
