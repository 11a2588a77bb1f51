//! Estimation on a dataset read from disk.

use std::path::{Path, PathBuf};

use epinet_core::dataset::{DatasetKind, TimeSeriesDataset};
use epinet_core::estimate::{
    convert_dj_to_i, estimate_alpha_beta, AnnealingSchedule, ParamEstimate,
};
use epinet_core::netgen::TopologyJson;
use epinet_core::registry::{JParamFitter, Registry, TopologyEstimator, TopologyRequest};
use serde::{Deserialize, Serialize};

use crate::config::{EstimateConfig, SCHEMA_VERSION};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOutput {
    pub loglik: f64,
    pub gamma_total: f64,
    pub multiplicity: usize,
    pub topology: TopologyJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub config: EstimateConfig,
    pub dataset_kind: DatasetKind,
    pub estimate: ParamEstimate,
    pub topology: TopologyJson,
    pub loglik: Option<f64>,
    pub ranking: Vec<RankedOutput>,
}

/// The dataset CSV named by the config, resolved against `base`.
pub fn dataset_path(cfg: &EstimateConfig, base: &Path) -> PathBuf {
    let p = if cfg.dataset.is_absolute() {
        cfg.dataset.clone()
    } else {
        base.join(&cfg.dataset)
    };
    p.with_extension("csv")
}

pub fn estimate_dataset(ds: &TimeSeriesDataset, cfg: &EstimateConfig) -> Result<EstimateReport> {
    if cfg.trials == 0 {
        return Err(HarnessError::Config("trials must be at least 1".into()));
    }
    let topo = Registry::<dyn TopologyEstimator>::topology_estimators();
    let fitters = Registry::<dyn JParamFitter>::j_param_fitters();
    let estimator = topo.get(&cfg.estimator)?;
    let (estimate, converted) = match ds.kind {
        DatasetKind::InfectiousCounts => (
            estimate_alpha_beta(&ds.row_totals(), ds.delta_t)?,
            ds.clone(),
        ),
        DatasetKind::NewCases => {
            let est = fitters.get(&cfg.j_fitter)?.fit(
                &ds.cumulative_totals()?,
                ds.delta_t,
                cfg.seed,
                &cfg.j_fit,
            )?;
            let conv = convert_dj_to_i(ds, est.alpha_hat)?;
            (est, conv)
        }
    };
    let schedule = cfg
        .schedule
        .clone()
        .unwrap_or_else(|| AnnealingSchedule::for_nodes(ds.n()));
    let req = TopologyRequest {
        dataset: &converted,
        alpha_hat: estimate.alpha_hat,
        beta_hat: estimate.beta_hat,
        schedule: &schedule,
        gamma_mode: &cfg.gamma_mode,
        trials: cfg.trials,
        seed: cfg.seed,
    };
    let out = estimator.estimate(&req)?;
    let ranking = out
        .ranking
        .iter()
        .map(|r| RankedOutput {
            loglik: r.estimate.loglik,
            gamma_total: r.estimate.gamma_total,
            multiplicity: r.multiplicity,
            topology: r.estimate.l_hat.to_json(Some(r.estimate.gamma_total)),
        })
        .collect();
    Ok(EstimateReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        dataset_kind: ds.kind,
        estimate,
        topology: out.l_hat.to_json(out.gamma_total),
        loglik: out.loglik,
        ranking,
    })
}
