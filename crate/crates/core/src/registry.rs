//! Named estimation strategies selected at runtime.
//!
//! Topology estimators and cumulative-case parameter fitters each sit behind
//! a trait and are looked up by name, so a configuration file can pick
//! `mle-anneal` or `naive-correlation` without the caller knowing the type.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_from_j_totals_with, multi_trial_topology_ranking, AnnealingSchedule, GammaMode,
    JFitMethod, JFitOptions, ParamEstimate, RankedTopology,
};
use crate::evaluation::{naive_correlation_estimate, random_guess};
use crate::netgen::NeighborMatrix;
use crate::rng::{self, Stream};

/// Everything a topology estimator may consult. Estimators ignore the
/// fields they do not need.
#[derive(Debug, Clone, Copy)]
pub struct TopologyRequest<'a> {
    pub dataset: &'a TimeSeriesDataset,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub schedule: &'a AnnealingSchedule,
    pub gamma_mode: &'a GammaMode,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyOutcome {
    pub l_hat: NeighborMatrix,
    /// Total outflow the topology was scored with, when the estimator uses one.
    pub gamma_total: Option<f64>,
    pub loglik: Option<f64>,
    /// Distinct topologies from independent trials, best first. Empty for
    /// estimators that do not rank.
    pub ranking: Vec<RankedTopology>,
}

pub trait TopologyEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, req: &TopologyRequest) -> Result<TopologyOutcome>;
}

pub trait JParamFitter: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, totals: &[f64], dt: f64, seed: u64, opts: &JFitOptions) -> Result<ParamEstimate>;
}

pub struct MleAnneal;

impl TopologyEstimator for MleAnneal {
    fn name(&self) -> &'static str {
        "mle-anneal"
    }

    fn estimate(&self, req: &TopologyRequest) -> Result<TopologyOutcome> {
        let ranking = multi_trial_topology_ranking(
            req.dataset,
            req.alpha_hat,
            req.beta_hat,
            req.trials,
            req.schedule,
            req.seed,
            req.gamma_mode,
        )?;
        let best = &ranking[0].estimate;
        Ok(TopologyOutcome {
            l_hat: best.l_hat.clone(),
            gamma_total: Some(best.gamma_total),
            loglik: Some(best.loglik),
            ranking,
        })
    }
}

pub struct NaiveCorrelation;

impl TopologyEstimator for NaiveCorrelation {
    fn name(&self) -> &'static str {
        "naive-correlation"
    }

    fn estimate(&self, req: &TopologyRequest) -> Result<TopologyOutcome> {
        Ok(TopologyOutcome {
            l_hat: naive_correlation_estimate(req.dataset)?,
            gamma_total: None,
            loglik: None,
            ranking: Vec::new(),
        })
    }
}

pub struct RandomGuess;

impl TopologyEstimator for RandomGuess {
    fn name(&self) -> &'static str {
        "random-guess"
    }

    fn estimate(&self, req: &TopologyRequest) -> Result<TopologyOutcome> {
        let mut rng = rng::stream(req.seed, Stream::Baseline);
        Ok(TopologyOutcome {
            l_hat: random_guess(req.dataset.n(), &mut rng),
            gamma_total: None,
            loglik: None,
            ranking: Vec::new(),
        })
    }
}

pub struct AnnealFit;

impl JParamFitter for AnnealFit {
    fn name(&self) -> &'static str {
        "anneal"
    }

    fn fit(&self, totals: &[f64], dt: f64, seed: u64, opts: &JFitOptions) -> Result<ParamEstimate> {
        estimate_from_j_totals_with(totals, dt, JFitMethod::Anneal, seed, opts)
    }
}

pub struct QuasiNewtonFit;

impl JParamFitter for QuasiNewtonFit {
    fn name(&self) -> &'static str {
        "quasi-newton"
    }

    fn fit(&self, totals: &[f64], dt: f64, seed: u64, opts: &JFitOptions) -> Result<ParamEstimate> {
        estimate_from_j_totals_with(totals, dt, JFitMethod::QuasiNewton, seed, opts)
    }
}

/// Strategies of one family keyed by name.
pub struct Registry<T: ?Sized> {
    entries: BTreeMap<&'static str, Box<T>>,
}

impl<T: ?Sized> Default for Registry<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: ?Sized> Registry<T> {
    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Registry<dyn TopologyEstimator> {
    pub fn register(&mut self, s: Box<dyn TopologyEstimator>) {
        self.entries.insert(s.name(), s);
    }

    pub fn topology_estimators() -> Self {
        let mut r = Self::default();
        r.register(Box::new(MleAnneal));
        r.register(Box::new(NaiveCorrelation));
        r.register(Box::new(RandomGuess));
        r
    }
}

impl Registry<dyn JParamFitter> {
    pub fn register(&mut self, s: Box<dyn JParamFitter>) {
        self.entries.insert(s.name(), s);
    }

    pub fn j_param_fitters() -> Self {
        let mut r = Self::default();
        r.register(Box::new(AnnealFit));
        r.register(Box::new(QuasiNewtonFit));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetKind;
    use nalgebra::DMatrix;

    #[test]
    fn lookup_by_name() {
        let topo = Registry::<dyn TopologyEstimator>::topology_estimators();
        assert_eq!(
            topo.names(),
            vec!["mle-anneal", "naive-correlation", "random-guess"]
        );
        assert!(matches!(topo.get("gibbs"), Err(Error::UnknownStrategy(n)) if n == "gibbs"));
        let fit = Registry::<dyn JParamFitter>::j_param_fitters();
        assert_eq!(fit.names(), vec!["anneal", "quasi-newton"]);
        assert_eq!(fit.get("quasi-newton").unwrap().name(), "quasi-newton");
    }

    #[test]
    fn baselines_run_through_the_trait() {
        let v = DMatrix::from_fn(8, 4, |d, i| (10 + d * (i + 1) + (d * i) % 3) as f64);
        let ds = TimeSeriesDataset::new(DatasetKind::InfectiousCounts, 1.0, v).unwrap();
        let schedule = AnnealingSchedule::for_nodes(4);
        let gamma = GammaMode::Known { gamma: 0.1 };
        let req = TopologyRequest {
            dataset: &ds,
            alpha_hat: 0.1,
            beta_hat: 0.05,
            schedule: &schedule,
            gamma_mode: &gamma,
            trials: 1,
            seed: 9,
        };
        let reg = Registry::<dyn TopologyEstimator>::topology_estimators();
        let naive = reg
            .get("naive-correlation")
            .unwrap()
            .estimate(&req)
            .unwrap();
        assert_eq!(naive.l_hat, naive_correlation_estimate(&ds).unwrap());
        let a = reg.get("random-guess").unwrap().estimate(&req).unwrap();
        let b = reg.get("random-guess").unwrap().estimate(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.l_hat.n(), 4);
    }
}
