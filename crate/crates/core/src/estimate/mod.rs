//! Parameter and topology estimation.
//!
//! Estimation runs in two phases. The transmission rates come first, either
//! in closed form from infectious totals or by maximizing the cumulative-case
//! likelihood. The neighbor matrix is then searched by simulated annealing
//! with those rates held fixed.

mod anneal;
mod closed_form;
mod jfit;

pub use anneal::{
    multi_trial_topology_ranking, sa_topology_search, AnnealingSchedule, GammaMode, RankedTopology,
    ScaleConstant, TopologyEstimate, DEFAULT_GAMMA_GRID,
};
pub use closed_form::{convert_dj_to_i, estimate_alpha_beta};
pub use jfit::{estimate_from_j_totals, estimate_from_j_totals_with, JFitMethod, JFitOptions};

use serde::{Deserialize, Serialize};

/// Estimated transmission rates, and `Î(0)` when the cumulative-case path
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    /// `α̂/β̂`; absent when `β̂ ≤ 0`.
    pub r_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0_hat: Option<f64>,
    /// Set when `β̂ ≤ 0` (the ratio is undefined) or an optimizer ran out
    /// of budget before converging.
    #[serde(default)]
    pub flagged: bool,
}

impl ParamEstimate {
    pub fn new(alpha_hat: f64, beta_hat: f64) -> Self {
        let positive = beta_hat > 0.0;
        Self {
            alpha_hat,
            beta_hat,
            r_hat: positive.then(|| alpha_hat / beta_hat),
            i0_hat: None,
            flagged: !positive,
        }
    }
}
