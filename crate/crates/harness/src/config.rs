//! Versioned run configurations, read from JSON or TOML.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use epinet_core::dataset::DatasetKind;
use epinet_core::estimate::{AnnealingSchedule, GammaMode, JFitOptions};
use epinet_core::simulate::ModelKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Trials per condition when `--full` is given.
pub const FULL_TRIALS: usize = 100;

/// Reads a config, choosing the format from the file extension.
pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let cfg: T = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
        _ => {
            return Err(HarnessError::Config(format!(
                "{}: expected a .json or .toml file",
                path.display()
            )))
        }
    };
    if cfg.schema_version() != SCHEMA_VERSION {
        return Err(HarnessError::Config(format!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            cfg.schema_version()
        )));
    }
    Ok(cfg)
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        })*
    };
}

versioned!(
    ExperimentConfig,
    EstimateConfig,
    CaseStudyConfig,
    MomentsCheckConfig
);

/// One synthetic condition: network law, dynamics, observation and
/// estimation settings. Every field is echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub n: usize,
    pub avg_degree: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// `α/β`; combined with whichever of `alpha`, `beta` is given.
    pub r: Option<f64>,
    pub gamma_total: f64,
    pub delta_t: f64,
    pub d: usize,
    pub dataset_kind: DatasetKind,
    /// Random networks per condition.
    pub trials: usize,
    pub seed: u64,
    pub i0: f64,
    pub index_node: usize,
    pub model: ModelKind,
    /// Integration step of the simulator.
    pub sim_dt: f64,
    /// Round observations to whole persons.
    pub round: bool,
    /// Total population `P`, used by the full SIR model.
    pub population_total: f64,
    /// Exponent in `P_i ∝ Σ_j l_ij (k_i k_j)^e`.
    pub population_exponent: f64,
    /// `None` scales the default budget with `n`.
    pub schedule: Option<AnnealingSchedule>,
    /// Independent annealing runs per network; the best is scored.
    pub anneal_trials: usize,
    /// `None` means the generating `γ` is known to the estimator.
    pub gamma_mode: Option<GammaMode>,
    /// Topology estimators scored on every dataset, by registry name.
    pub estimators: Vec<String>,
    /// Rate fitter for new-case datasets, by registry name.
    pub j_fitter: String,
    pub j_fit: JFitOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n: 10,
            avg_degree: 2.0,
            alpha: Some(0.067),
            beta: Some(0.033),
            r: None,
            gamma_total: 0.1,
            delta_t: 1.0,
            d: 100,
            dataset_kind: DatasetKind::InfectiousCounts,
            trials: 20,
            seed: 1,
            i0: 200.0,
            index_node: 0,
            model: ModelKind::Linearized,
            sim_dt: 0.01,
            round: false,
            population_total: 1e6 * 10.0,
            population_exponent: 0.5,
            schedule: None,
            anneal_trials: 1,
            gamma_mode: None,
            estimators: vec!["mle-anneal".into()],
            j_fitter: "quasi-newton".into(),
            j_fit: JFitOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// `(α, β)` from whichever pair of `alpha`, `beta`, `r` is set.
    pub fn rates(&self) -> Result<(f64, f64)> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match (self.alpha, self.beta, self.r) {
            (Some(a), Some(b), None) => Ok((a, b)),
            (Some(a), Some(b), Some(r)) => {
                if ((a / b) - r).abs() > 0.05 * r {
                    return bad(format!("r={r} disagrees with alpha/beta={}", a / b));
                }
                Ok((a, b))
            }
            (Some(a), None, Some(r)) => Ok((a, a / r)),
            (None, Some(b), Some(r)) => Ok((r * b, b)),
            _ => bad("give two of alpha, beta, r".into()),
        }
    }

    pub fn schedule(&self) -> AnnealingSchedule {
        self.schedule
            .clone()
            .unwrap_or_else(|| AnnealingSchedule::for_nodes(self.n))
    }

    pub fn gamma_mode(&self) -> GammaMode {
        self.gamma_mode.clone().unwrap_or(GammaMode::Known {
            gamma: self.gamma_total,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let (a, b) = self.rates()?;
        if !(a > 0.0 && b > 0.0) {
            return bad("rates must be positive");
        }
        if self.n < 2 || self.trials == 0 || self.anneal_trials == 0 || self.d < 3 {
            return bad("n ≥ 2, d ≥ 3 and at least one trial are required");
        }
        if !(self.delta_t > 0.0
            && self.sim_dt > 0.0
            && self.i0 > 0.0
            && self.population_total > 0.0)
        {
            return bad("delta_t, sim_dt, i0 and population_total must be positive");
        }
        if self.index_node >= self.n {
            return bad("index_node out of range");
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required");
        }
        self.schedule().validate()?;
        Ok(())
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, full: bool) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if full {
            self.trials = FULL_TRIALS;
        }
    }
}

/// Estimation on a stored dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub schema_version: u32,
    /// Dataset stem: `<stem>.csv` plus the `<stem>.json` sidecar. Relative
    /// paths resolve against the config file.
    pub dataset: PathBuf,
    pub estimator: String,
    pub j_fitter: String,
    pub j_fit: JFitOptions,
    pub trials: usize,
    pub schedule: Option<AnnealingSchedule>,
    pub gamma_mode: GammaMode,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: PathBuf::from("dataset"),
            estimator: "mle-anneal".into(),
            j_fitter: "quasi-newton".into(),
            j_fit: JFitOptions::default(),
            trials: 10,
            schedule: None,
            gamma_mode: GammaMode::search_default(),
            seed: 1,
        }
    }
}

/// Archived cumulative case counts to ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseData {
    pub path: PathBuf,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    #[serde(default = "default_min_cases")]
    pub min_cases: f64,
}

fn default_min_cases() -> f64 {
    5.0
}

/// Synthetic stand-in for the archived data: a known network over named
/// regions, simulated with known rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub regions: Vec<String>,
    pub links: Vec<(String, String)>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_total: f64,
    pub i0: f64,
    pub index_region: String,
    /// Days of new-case observations.
    pub d: usize,
    pub start_date: NaiveDate,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        let regions = [
            "CAN", "FRA", "GBR", "GER", "HKG", "MAS", "ROC", "SIN", "THA", "USA", "VIE",
        ];
        let links = [
            ("HKG", "CAN"),
            ("HKG", "ROC"),
            ("HKG", "SIN"),
            ("USA", "GBR"),
            ("USA", "MAS"),
            ("USA", "VIE"),
            ("HKG", "USA"),
            ("USA", "THA"),
            ("VIE", "THA"),
            ("GBR", "GER"),
            ("CAN", "FRA"),
        ];
        Self {
            regions: regions.iter().map(|s| s.to_string()).collect(),
            links: links
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            alpha: 0.18,
            beta: 0.13,
            gamma_total: 0.1,
            i0: 200.0,
            index_region: "HKG".into(),
            d: 31,
            start_date: NaiveDate::from_ymd_opt(2003, 3, 17).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub schema_version: u32,
    /// Archived data; when absent the surrogate is generated instead.
    pub data: Option<CaseData>,
    pub surrogate: SurrogateConfig,
    pub j_fitter: String,
    pub j_fit: JFitOptions,
    /// Independent annealing runs for the ranking.
    pub trials: usize,
    pub schedule: Option<AnnealingSchedule>,
    pub gamma_mode: GammaMode,
    pub seed: u64,
    /// Ranked topologies written to the report.
    pub top: usize,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data: None,
            surrogate: SurrogateConfig::default(),
            j_fitter: "quasi-newton".into(),
            j_fit: JFitOptions::default(),
            trials: 30,
            schedule: None,
            gamma_mode: GammaMode::search_default(),
            seed: 1,
            top: 3,
        }
    }
}

/// Moment equations against Monte-Carlo ensembles on random small networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsCheckConfig {
    pub schema_version: u32,
    pub configurations: usize,
    pub paths: usize,
    pub times: Vec<f64>,
    /// Node counts drawn from uniformly.
    pub node_counts: Vec<usize>,
    /// Tolerance in standard errors.
    pub sigmas: f64,
    pub sim_dt: f64,
    pub seed: u64,
}

impl Default for MomentsCheckConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            configurations: 10,
            paths: 100_000,
            times: vec![1.0, 5.0, 10.0],
            node_counts: vec![1, 2, 3, 4],
            sigmas: 3.0,
            sim_dt: 0.01,
            seed: 1,
        }
    }
}
