//! Gaussian log-likelihoods of observed time series under candidate
//! parameters.
//!
//! * `L^[I1]`: per-node infectious counts, one multivariate Gaussian per
//!   observation interval conditioned on the previous observation.
//! * `L^[I2]`: node totals of the infectious counts, independent of the
//!   mobility matrix.
//! * `L^[J2]`: node totals of the cumulative case counts, with moments taken
//!   from the first observation time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};
use crate::moments::{
    aggregate_moments, approx_step_moments_with_drift, drift_matrix, exact_moments,
};
use crate::netgen::{mobility_from_topology, MobilityMatrix, NeighborMatrix};
use crate::simulate::TransmissionParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const RIDGE: f64 = 1e-8;
const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-6;

/// Compensated (Neumaier) summation, stable under reordering to ~1 ulp of the total.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// One Gaussian log-density together with whether the ridge was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTerm {
    pub value: f64,
    pub regularized: bool,
}

pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    gaussian_logpdf_term(x, mean, cov).map(|t| t.value)
}

/// Log-density of `N(mean, cov)` at `x`.
///
/// The covariance is factorized as given. When that fails and its smallest
/// eigenvalue is no worse than `-1e-6·trace`, a ridge
/// `1e-8·max(trace/n, 1)` is added to the diagonal and the term is marked
/// as regularized.
pub fn gaussian_logpdf_term(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<GaussianTerm> {
    let n = x.len();
    if mean.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: mean.len(),
        });
    }
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cov.nrows(),
        });
    }
    if x.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gaussian argument"));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let resid = x - mean;
    if let Some(v) = factorized_logpdf(&resid, cov.clone()) {
        return Ok(GaussianTerm {
            value: v,
            regularized: false,
        });
    }
    let trace = cov.trace();
    let min_eig = cov.clone().symmetric_eigenvalues().min();
    if min_eig < -NEGATIVE_EIGEN_TOLERANCE * trace.abs() {
        return Err(Error::DegenerateCovariance {
            min_eigenvalue: min_eig,
        });
    }
    let ridge = RIDGE * (trace / n as f64).max(1.0);
    let mut reg = cov.clone();
    for i in 0..n {
        reg[(i, i)] += ridge;
    }
    factorized_logpdf(&resid, reg)
        .map(|v| GaussianTerm {
            value: v,
            regularized: true,
        })
        .ok_or(Error::DegenerateCovariance {
            min_eigenvalue: min_eig,
        })
}

fn factorized_logpdf(resid: &DVector<f64>, cov: DMatrix<f64>) -> Option<f64> {
    let n = resid.len();
    let chol = cov.cholesky()?;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..n {
        log_det += l[(i, i)].ln();
    }
    log_det *= 2.0;
    let z = l.solve_lower_triangular(resid)?;
    let v = -0.5 * (n as f64 * LN_2PI + log_det + z.norm_squared());
    v.is_finite().then_some(v)
}

/// How per-interval moments for `L^[I1]` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMode {
    /// First order in `Δt`.
    #[default]
    Approx,
    /// Moment ODEs integrated over each interval from the observed counts.
    Exact,
}

/// What to do with an interval whose covariance needed the ridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegenerateTerms {
    /// Drop the interval from the sum (it still appears in `flagged`).
    Skip,
    /// Keep the ridge-regularized value.
    #[default]
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodOptions {
    pub mode: MomentMode,
    pub degenerate: DegenerateTerms,
    /// Lower bound on each conditional variance, in units of the variance
    /// `(α+β)Δt` contributed by a single infectious individual. `0` disables it.
    pub variance_floor: f64,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            mode: MomentMode::Approx,
            degenerate: DegenerateTerms::Keep,
            variance_floor: 1.0,
        }
    }
}

impl LikelihoodOptions {
    /// Plain conditional Gaussians: no floor, ridge-regularized terms dropped.
    pub fn unfloored() -> Self {
        Self {
            mode: MomentMode::Approx,
            degenerate: DegenerateTerms::Skip,
            variance_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub value: f64,
    /// Contribution of each interval; skipped intervals contribute `0`.
    pub terms: Vec<f64>,
    /// Intervals whose covariance was regularized or that were skipped.
    pub flagged: Vec<usize>,
}

impl LogLikelihood {
    fn from_terms(terms: Vec<f64>, flagged: Vec<usize>) -> Self {
        Self {
            value: neumaier_sum(terms.iter().copied()),
            terms,
            flagged,
        }
    }
}

/// Candidate `θ = {l, α, β, γ}`; the mobility matrix is always derived from `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCandidate {
    pub topology: NeighborMatrix,
    pub params: TransmissionParams,
}

impl ThetaCandidate {
    pub fn new(topology: NeighborMatrix, params: TransmissionParams) -> Self {
        Self { topology, params }
    }

    pub fn mobility(&self) -> Result<MobilityMatrix> {
        mobility_from_topology(&self.topology, self.params.gamma_total)
    }
}

fn require_kind(ds: &TimeSeriesDataset, kind: DatasetKind) -> Result<()> {
    if ds.kind != kind {
        return Err(invalid(format!(
            "dataset kind {:?} where {:?} is required",
            ds.kind, kind
        )));
    }
    Ok(())
}

pub fn loglik_i1(
    ds: &TimeSeriesDataset,
    theta: &ThetaCandidate,
    opts: LikelihoodOptions,
) -> Result<LogLikelihood> {
    let gamma = theta.mobility()?;
    loglik_i1_with_mobility(ds, theta.params.alpha, theta.params.beta, &gamma, opts)
}

/// `Σ_d log p(I(t_{d+1}) | I(t_d))` for an explicit mobility matrix.
pub fn loglik_i1_with_mobility(
    ds: &TimeSeriesDataset,
    alpha: f64,
    beta: f64,
    gamma: &MobilityMatrix,
    opts: LikelihoodOptions,
) -> Result<LogLikelihood> {
    require_kind(ds, DatasetKind::InfectiousCounts)?;
    if ds.d() < 2 {
        return Err(invalid("at least two observations are required"));
    }
    if gamma.n() != ds.n() {
        return Err(Error::DimensionMismatch {
            expected: ds.n(),
            got: gamma.n(),
        });
    }
    let dt = ds.delta_t;
    let drift = drift_matrix(alpha, beta, gamma);
    let floor = opts.variance_floor * (alpha + beta) * dt;
    let mut terms = Vec::with_capacity(ds.d() - 1);
    let mut flagged = Vec::new();
    let mut prev = ds.row(0);
    for d in 0..ds.d() - 1 {
        let next = ds.row(d + 1);
        let (mean, mut cov) = match opts.mode {
            MomentMode::Approx => {
                approx_step_moments_with_drift(&prev, &drift, alpha, beta, gamma, dt)
            }
            MomentMode::Exact => {
                let m = exact_moments(alpha, beta, gamma, prev.as_slice(), dt)?;
                (m.m_i, m.v_ii)
            }
        };
        for i in 0..cov.nrows() {
            if cov[(i, i)] < floor {
                cov[(i, i)] = floor;
            }
        }
        let term = gaussian_logpdf_term(&next, &mean, &cov)?;
        if term.regularized {
            flagged.push(d);
            log::debug!("interval {d}: conditional covariance regularized");
        }
        let skip = term.regularized && opts.degenerate == DegenerateTerms::Skip;
        terms.push(if skip { 0.0 } else { term.value });
        prev = next;
    }
    Ok(LogLikelihood::from_terms(terms, flagged))
}

/// Likelihood of the node-summed infectious counts. Intervals starting from
/// a zero total have no spread and are skipped and flagged.
pub fn loglik_i2(totals: &[f64], alpha: f64, beta: f64, dt: f64) -> Result<LogLikelihood> {
    if totals.len() < 2 {
        return Err(invalid("at least two observations are required"));
    }
    if totals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("totals"));
    }
    let mut terms = Vec::with_capacity(totals.len() - 1);
    let mut flagged = Vec::new();
    for d in 0..totals.len() - 1 {
        let i = totals[d];
        let var = (alpha + beta) * i * dt;
        if i == 0.0 || !(var > 0.0) {
            flagged.push(d);
            terms.push(0.0);
            continue;
        }
        let mean = i + (alpha - beta) * i * dt;
        let r = totals[d + 1] - mean;
        terms.push(-0.5 * (LN_2PI + var.ln() + r * r / var));
    }
    Ok(LogLikelihood::from_terms(terms, flagged))
}

/// Likelihood of the node-summed cumulative case counts under moments
/// evolved from the first observation time with `I(t_0) = i0`.
///
/// `totals[0]` is `J(t_0)` and is not scored; each later total is compared
/// with `m_J(t_d)`, which starts at `i0`. Totals are therefore absolute
/// counts in which everyone infectious at `t_0` has already been reported.
pub fn loglik_j2(totals: &[f64], alpha: f64, beta: f64, i0: f64, dt: f64) -> Result<LogLikelihood> {
    if totals.len() < 2 {
        return Err(invalid("at least two observations are required"));
    }
    if !(i0 > 0.0) {
        return Err(invalid(format!(
            "initial infectious count {i0} must be positive"
        )));
    }
    if totals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("totals"));
    }
    let mut terms = Vec::with_capacity(totals.len() - 1);
    let mut flagged = Vec::new();
    for d in 0..totals.len() - 1 {
        let t = (d + 1) as f64 * dt;
        let m = aggregate_moments(alpha, beta, i0, t)?;
        if !(m.v_jj > 0.0) || !m.v_jj.is_finite() {
            flagged.push(d);
            terms.push(0.0);
            continue;
        }
        let r = totals[d + 1] - m.m_j;
        terms.push(-0.5 * (LN_2PI + m.v_jj.ln() + r * r / m.v_jj));
    }
    Ok(LogLikelihood::from_terms(terms, flagged))
}
