//! Synthetic experiments: generate a network, simulate, observe, estimate
//! and score, once per trial.

use std::time::{Duration, Instant};

use epinet_core::dataset::{observe, DatasetKind, TimeSeriesDataset};
use epinet_core::estimate::{convert_dj_to_i, estimate_alpha_beta, ParamEstimate};
use epinet_core::evaluation::ErrorReport;
use epinet_core::netgen::{
    generate_er_topology, initial_populations_with_exponent, mobility_from_topology,
};
use epinet_core::registry::{JParamFitter, Registry, TopologyEstimator, TopologyRequest};
use epinet_core::simulate::{
    index_case, simulate_full_sir, simulate_linearized, CompartmentState, ModelKind, SimOptions,
    TransmissionParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::stats::mean_sd;

/// Seed for trial `t`, spread with splitmix64 so neighbouring base seeds
/// do not produce overlapping trial seeds.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    let mut z = base.wrapping_add((t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorScore {
    pub estimator: String,
    pub e_l: Option<f64>,
    pub loglik: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub links: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub true_links: usize,
    pub rates: Option<ParamEstimate>,
    pub e_r: Option<f64>,
    pub scores: Vec<EstimatorScore>,
    /// Failure before any topology was estimated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.scores.iter().all(|s| s.error.is_none())
    }

    pub fn score(&self, estimator: &str) -> Option<&EstimatorScore> {
        self.scores.iter().find(|s| s.estimator == estimator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub estimator: String,
    pub trials: usize,
    pub failed: usize,
    pub e_l_mean: Option<f64>,
    pub e_l_sd: Option<f64>,
    pub e_r_mean: Option<f64>,
    pub e_r_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn all_succeeded(&self) -> bool {
        self.trials.iter().all(TrialRecord::succeeded)
    }

    pub fn aggregate(&self, estimator: &str) -> Option<&Aggregate> {
        self.summary.iter().find(|a| a.estimator == estimator)
    }

    /// E_l per trial for one estimator, failed trials omitted.
    pub fn e_l_values(&self, estimator: &str) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.score(estimator).and_then(|s| s.e_l))
            .collect()
    }

    pub fn e_r_values(&self) -> Vec<f64> {
        self.trials.iter().filter_map(|t| t.e_r).collect()
    }
}

/// Recomputes the summary from the trial rows.
pub fn summarize(config: &ExperimentConfig, trials: &[TrialRecord]) -> Vec<Aggregate> {
    let e_r: Vec<f64> = trials.iter().filter_map(|t| t.e_r).collect();
    let (e_r_mean, e_r_sd) = mean_sd(&e_r);
    config
        .estimators
        .iter()
        .map(|name| {
            let e_l: Vec<f64> = trials
                .iter()
                .filter_map(|t| t.score(name).and_then(|s| s.e_l))
                .collect();
            let (e_l_mean, e_l_sd) = mean_sd(&e_l);
            Aggregate {
                estimator: name.clone(),
                trials: trials.len(),
                failed: trials.len() - e_l.len(),
                e_l_mean,
                e_l_sd,
                e_r_mean,
                e_r_sd,
            }
        })
        .collect()
}

/// Runs every trial of a condition. Trials fail individually; the report
/// records the failure and carries on. Wall-clock time per trial is returned
/// separately so that reports stay bit-identical across reruns.
pub fn run_synthetic_experiment(
    config: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<Duration>)> {
    config.validate()?;
    let topo = Registry::<dyn TopologyEstimator>::topology_estimators();
    let fitters = Registry::<dyn JParamFitter>::j_param_fitters();
    for name in &config.estimators {
        topo.get(name)?;
    }
    let fitter = fitters.get(&config.j_fitter)?;
    let outcomes: Vec<(TrialRecord, Duration)> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let started = Instant::now();
            let rec = run_trial(config, t, &topo, fitter);
            (rec, started.elapsed())
        })
        .collect();
    let (trials, times): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    for rec in trials.iter().filter(|r| !r.succeeded()) {
        log::warn!(
            "trial {} (seed {}) failed: {:?}",
            rec.trial,
            rec.seed,
            rec.error
        );
    }
    let summary = summarize(config, &trials);
    Ok((
        ExperimentReport {
            schema_version: crate::config::SCHEMA_VERSION,
            config: config.clone(),
            trials,
            summary,
        },
        times,
    ))
}

/// Generates the dataset of trial `t` together with its ground truth.
pub fn synthesize(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(TimeSeriesDataset, epinet_core::netgen::NeighborMatrix)> {
    let (alpha, beta) = config.rates()?;
    let params = TransmissionParams::new(alpha, beta, config.gamma_total)?;
    let l_true = generate_er_topology(config.n, config.avg_degree, seed)?;
    let g = mobility_from_topology(&l_true, config.gamma_total)?;
    let i0 = index_case(config.n, config.index_node, config.i0);
    let opts = SimOptions {
        dt: config.sim_dt,
        ..SimOptions::default()
    };
    let t_end = config.d as f64 * config.delta_t;
    let traj = match config.model {
        ModelKind::Linearized => simulate_linearized(&g, &params, &i0, t_end, opts, seed)?,
        ModelKind::FullSir => {
            let pop = initial_populations_with_exponent(
                &l_true,
                config.population_total,
                config.population_exponent,
            )?;
            let init = CompartmentState::with_populations(&pop, &i0)?;
            simulate_full_sir(&g, &params, &init, t_end, opts, seed)?
        }
    };
    let ds = observe(
        &traj,
        config.delta_t,
        config.d,
        config.dataset_kind,
        config.round,
    )?;
    Ok((ds, l_true))
}

fn run_trial(
    config: &ExperimentConfig,
    t: usize,
    topo: &Registry<dyn TopologyEstimator>,
    fitter: &dyn JParamFitter,
) -> TrialRecord {
    let seed = trial_seed(config.seed, t);
    let mut rec = TrialRecord {
        trial: t,
        seed,
        true_links: 0,
        rates: None,
        e_r: None,
        scores: vec![],
        error: None,
    };
    let prepared = (|| -> Result<_> {
        let (ds, l_true) = synthesize(config, seed)?;
        let (est, ds_i) = match config.dataset_kind {
            DatasetKind::InfectiousCounts => {
                (estimate_alpha_beta(&ds.row_totals(), ds.delta_t)?, ds)
            }
            DatasetKind::NewCases => {
                let est = fitter.fit(&ds.cumulative_totals()?, ds.delta_t, seed, &config.j_fit)?;
                let converted = convert_dj_to_i(&ds, est.alpha_hat)?;
                (est, converted)
            }
        };
        Ok((ds_i, l_true, est))
    })();
    let (ds, l_true, est) = match prepared {
        Ok(p) => p,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.true_links = l_true.link_count();
    let (alpha, beta) = config.rates().expect("validated");
    let schedule = config.schedule();
    let gamma_mode = config.gamma_mode();
    for name in &config.estimators {
        let req = TopologyRequest {
            dataset: &ds,
            alpha_hat: est.alpha_hat,
            beta_hat: est.beta_hat,
            schedule: &schedule,
            gamma_mode: &gamma_mode,
            trials: config.anneal_trials,
            seed,
        };
        let scored = topo
            .get(name)
            .and_then(|s| s.estimate(&req))
            .and_then(|out| {
                let report = ErrorReport::score(
                    &out.l_hat,
                    &l_true,
                    (est.alpha_hat, est.beta_hat),
                    (alpha, beta),
                )?;
                rec.e_r = report.e_r;
                Ok(EstimatorScore {
                    estimator: name.clone(),
                    e_l: Some(report.e_l),
                    loglik: out.loglik,
                    gamma_hat: out.gamma_total,
                    links: Some(out.l_hat.link_count()),
                    error: None,
                })
            });
        rec.scores.push(scored.unwrap_or_else(|e| EstimatorScore {
            estimator: name.clone(),
            e_l: None,
            loglik: None,
            gamma_hat: None,
            links: None,
            error: Some(e.to_string()),
        }));
    }
    if rec.e_r.is_none() && est.beta_hat > 0.0 {
        rec.e_r = epinet_core::evaluation::error_r(est.alpha_hat, est.beta_hat, alpha, beta).ok();
    }
    rec.rates = Some(est);
    rec
}
