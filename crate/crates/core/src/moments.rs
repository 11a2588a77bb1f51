//! First and second moments of `(I, J)` under the linearized dynamics.
//!
//! Means come from the matrix exponential of the drift matrix. Covariance
//! blocks are integrated from their linear ODEs with an adaptive
//! Dormand–Prince scheme, with the diffusion matrix `⟨B⟩_t` evaluated at the
//! exact mean. The aggregate (node-summed) moments have closed forms, with a
//! series branch where `α ≈ β` makes them 0/0.

use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dopri5, OutputType, System};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::netgen::MobilityMatrix;

/// Beyond this condition number the closed form for `m^[J]` is abandoned
/// for direct integration.
const MAX_CONDITION: f64 = 1e12;
/// `|α-β|·t` below which the aggregate closed forms switch to their series.
const SERIES_THRESHOLD: f64 = 1e-6;

/// `a_ij = (α - β - Σ_k γ_ik) δ_ij + γ_ji`.
pub fn drift_matrix(alpha: f64, beta: f64, gamma: &MobilityMatrix) -> DMatrix<f64> {
    let n = gamma.n();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j {
            alpha - beta - gamma.outflow(i)
        } else {
            0.0
        };
        diag + gamma.get(j, i)
    })
}

/// Diffusion matrix `B(x)` of the infectious counts, linear in `x`.
pub fn diffusion_matrix(
    alpha: f64,
    beta: f64,
    gamma: &MobilityMatrix,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let n = gamma.n();
    DMatrix::from_fn(n, n, |i, j| {
        let mut b = -gamma.get(i, j) * x[i] - gamma.get(j, i) * x[j];
        if i == j {
            let inflow: f64 = (0..n).map(|k| gamma.get(k, i) * x[k]).sum();
            b += (alpha + beta + gamma.outflow(i)) * x[i] + inflow;
        }
        b
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub t: f64,
    pub m_i: DVector<f64>,
    pub m_j: DVector<f64>,
    /// `cov(I_i, I_j)`
    pub v_ii: DMatrix<f64>,
    /// `cov(I_i, J_j)`
    pub v_ij: DMatrix<f64>,
    /// `cov(J_i, J_j)`
    pub v_jj: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMoments {
    pub t: f64,
    pub m_i: f64,
    pub m_j: f64,
    pub v_ii: f64,
    pub v_ij: f64,
    pub v_jj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
        }
    }
}

struct CovarianceOde {
    a: DMatrix<f64>,
    alpha: f64,
    beta: f64,
    gamma: MobilityMatrix,
    i0: DVector<f64>,
    /// integrate `m^[J]` too (singular drift)
    with_mean_j: bool,
}

impl CovarianceOde {
    fn mean_i(&self, t: f64) -> DVector<f64> {
        (&self.a * t).exp() * &self.i0
    }
}

type State = DVector<f64>;

impl System<f64, State> for CovarianceOde {
    fn system(&self, t: f64, y: &State, dy: &mut State) {
        let n = self.i0.len();
        let nn = n * n;
        let m = self.mean_i(t);
        let v_ii = DMatrix::from_column_slice(n, n, &y.as_slice()[0..nn]);
        let v_ij = DMatrix::from_column_slice(n, n, &y.as_slice()[nn..2 * nn]);
        let c = DMatrix::from_diagonal(&m);
        let b = diffusion_matrix(self.alpha, self.beta, &self.gamma, &m);
        let d_ii = &self.a * &v_ii + &v_ii * self.a.transpose() + b;
        let d_ij = &self.a * &v_ij + (&v_ii + &c) * self.alpha;
        let d_jj = (&v_ij + v_ij.transpose() + &c) * self.alpha;
        let out = dy.as_mut_slice();
        out[0..nn].copy_from_slice(d_ii.as_slice());
        out[nn..2 * nn].copy_from_slice(d_ij.as_slice());
        out[2 * nn..3 * nn].copy_from_slice(d_jj.as_slice());
        if self.with_mean_j {
            for k in 0..n {
                out[3 * nn + k] = self.alpha * m[k];
            }
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Moments at time `t` of the process started from exactly `i0` (zero covariance).
pub fn exact_moments(
    alpha: f64,
    beta: f64,
    gamma: &MobilityMatrix,
    i0: &[f64],
    t: f64,
) -> Result<MomentState> {
    exact_moments_with(alpha, beta, gamma, i0, t, MomentOptions::default())
}

pub fn exact_moments_with(
    alpha: f64,
    beta: f64,
    gamma: &MobilityMatrix,
    i0: &[f64],
    t: f64,
    opts: MomentOptions,
) -> Result<MomentState> {
    let n = gamma.n();
    if i0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: i0.len(),
        });
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("time {t} must be non-negative")));
    }
    let i0 = DVector::from_column_slice(i0);
    let a = drift_matrix(alpha, beta, gamma);
    if t == 0.0 {
        return Ok(MomentState {
            t,
            m_i: i0.clone(),
            m_j: i0,
            v_ii: DMatrix::zeros(n, n),
            v_ij: DMatrix::zeros(n, n),
            v_jj: DMatrix::zeros(n, n),
        });
    }
    let propagator = (&a * t).exp();
    let m_i = &propagator * &i0;
    let closed_j = if condition_number(&a) <= MAX_CONDITION {
        a.clone().lu().solve(&(&m_i - &i0)).map(|x| &i0 + x * alpha)
    } else {
        None
    };

    let nn = n * n;
    let with_mean_j = closed_j.is_none();
    let dim = 3 * nn + if with_mean_j { n } else { 0 };
    let mut y0 = DVector::zeros(dim);
    if with_mean_j {
        y0.as_mut_slice()[3 * nn..].copy_from_slice(i0.as_slice());
    }
    let ode = CovarianceOde {
        a,
        alpha,
        beta,
        gamma: gamma.clone(),
        i0: i0.clone(),
        with_mean_j,
    };
    let mut solver = Dopri5::new(ode, 0.0, t, t, y0, opts.rtol, opts.atol);
    solver.set_output(OutputType::Sparse);
    solver
        .integrate()
        .map_err(|e| Error::Integration(format!("{e:?}")))?;
    let y = solver
        .y_out()
        .last()
        .ok_or_else(|| Error::Integration("no output".into()))?;
    let ys = y.as_slice();
    let mut v_ii = DMatrix::from_column_slice(n, n, &ys[0..nn]);
    let v_ij = DMatrix::from_column_slice(n, n, &ys[nn..2 * nn]);
    let mut v_jj = DMatrix::from_column_slice(n, n, &ys[2 * nn..3 * nn]);
    symmetrize(&mut v_ii);
    symmetrize(&mut v_jj);
    let m_j = match closed_j {
        Some(m) => m,
        None => DVector::from_column_slice(&ys[3 * nn..3 * nn + n]),
    };
    Ok(MomentState {
        t,
        m_i,
        m_j,
        v_ii,
        v_ij,
        v_jj,
    })
}

/// Closed-form moments of the node totals `I(t)`, `J(t)`.
pub fn aggregate_moments(alpha: f64, beta: f64, i0: f64, t: f64) -> Result<AggregateMoments> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time {t} must be non-negative")));
    }
    let d = alpha - beta;
    let s = alpha + beta;
    let e1 = (d * t).exp();
    let m_i = i0 * e1;
    if (d * t).abs() < SERIES_THRESHOLD {
        // four-term expansion in δ = α - β around zero
        let a = alpha;
        let (t2, t3, t4, t5, t6) = (t * t, t.powi(3), t.powi(4), t.powi(5), t.powi(6));
        let (d2, d3) = (d * d, d * d * d);
        let m_j = 1.0 + a * t + d * a * t2 / 2.0 + d2 * a * t3 / 6.0 + d3 * a * t4 / 24.0;
        let v_ii = 2.0 * a * t
            + d * (3.0 * a * t2 - t)
            + d2 * (7.0 * a * t3 / 3.0 - 1.5 * t2)
            + d3 * (1.25 * a * t4 - 7.0 * t3 / 6.0);
        let v_ij = a * a * t2
            + a * t
            + d * (4.0 * a * a * t3 / 3.0 + a * t2 / 2.0)
            + d2 * (11.0 * a * a * t4 / 12.0 - a * t3 / 6.0)
            + d3 * (13.0 * a * a * t5 / 30.0 - 7.0 * a * t4 / 24.0);
        let a2 = a * a;
        let a3 = a2 * a;
        let v_jj = 2.0 * a3 * t3 / 3.0
            + a2 * t2
            + a * t
            + d * (2.0 * a3 * t4 / 3.0 + a2 * t3 / 3.0 + a * t2 / 2.0)
            + d2 * (11.0 * a3 * t5 / 30.0 - a2 * t4 / 12.0 + a * t3 / 6.0)
            + d3 * (13.0 * a3 * t6 / 90.0 - 7.0 * a2 * t5 / 60.0 + a * t4 / 24.0);
        return Ok(AggregateMoments {
            t,
            m_i,
            m_j: i0 * m_j,
            v_ii: i0 * v_ii,
            v_ij: i0 * v_ij,
            v_jj: i0 * v_jj,
        });
    }
    let e2 = e1 * e1;
    let m_j = i0 * (alpha / d * e1 - beta / d);
    let v_ii = i0 * s / d * (e2 - e1);
    let k = alpha * s / (d * d);
    let v_ij = i0 * (k * e2 - (k + 2.0 * alpha * beta / d * t) * e1);
    let v_jj = i0
        * (alpha * alpha * s / d.powi(3) * e2
            - (k + 4.0 * alpha * alpha * beta / (d * d) * t) * e1
            - alpha * beta * s / d.powi(3));
    Ok(AggregateMoments {
        t,
        m_i,
        m_j,
        v_ii,
        v_ij,
        v_jj,
    })
}

/// First-order-in-`Δt` mean and covariance of `I(t_d + Δt)` given exact `I(t_d)`.
pub fn approx_step_moments(
    i_prev: &DVector<f64>,
    alpha: f64,
    beta: f64,
    gamma: &MobilityMatrix,
    dt: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = drift_matrix(alpha, beta, gamma);
    approx_step_moments_with_drift(i_prev, &a, alpha, beta, gamma, dt)
}

/// As [`approx_step_moments`] with a precomputed drift matrix.
pub fn approx_step_moments_with_drift(
    i_prev: &DVector<f64>,
    drift: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    gamma: &MobilityMatrix,
    dt: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let mean = i_prev + drift * i_prev * dt;
    let cov = diffusion_matrix(alpha, beta, gamma, i_prev) * dt;
    (mean, cov)
}

/// Scalar analogue for the total `I`: `(I + (α-β)IΔt, (α+β)IΔt)`.
pub fn approx_aggregate_step(i_prev: f64, alpha: f64, beta: f64, dt: f64) -> (f64, f64) {
    (
        i_prev + (alpha - beta) * i_prev * dt,
        (alpha + beta) * i_prev * dt,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{generate_er_topology, mobility_from_topology, NeighborMatrix};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn drift_examples() {
        let g1 = MobilityMatrix::zeros(1);
        assert_eq!(drift_matrix(0.067, 0.033, &g1)[(0, 0)], 0.067 - 0.033);
        let g0 = MobilityMatrix::zeros(3);
        assert_eq!(
            drift_matrix(0.2, 0.1, &g0),
            DMatrix::identity(3, 3) * (0.2 - 0.1)
        );
        let two = NeighborMatrix::from_edges(2, &[(0, 1)]).unwrap();
        let g = mobility_from_topology(&two, 0.1).unwrap();
        let a = drift_matrix(0.067, 0.033, &g);
        let want = DMatrix::from_row_slice(2, 2, &[-0.066, 0.1, 0.1, -0.066]);
        assert!((a - want).abs().max() < 1e-15);
    }

    #[test]
    fn drift_off_diagonal_non_negative() {
        let l = generate_er_topology(7, 3.0, 2).unwrap();
        let g = mobility_from_topology(&l, 0.3).unwrap();
        let a = drift_matrix(0.1, 0.05, &g);
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    assert!(a[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn moments_at_time_zero() {
        let g = MobilityMatrix::zeros(2);
        let m = exact_moments(0.1, 0.05, &g, &[3.0, 4.0], 0.0).unwrap();
        assert_eq!(m.m_i.as_slice(), &[3.0, 4.0]);
        assert_eq!(m.v_jj, DMatrix::zeros(2, 2));
        let a = aggregate_moments(0.1, 0.05, 200.0, 0.0).unwrap();
        assert_eq!(
            (a.m_i, a.m_j, a.v_ii, a.v_ij, a.v_jj),
            (200.0, 200.0, 0.0, 0.0, 0.0)
        );
        assert!(exact_moments(0.1, 0.05, &g, &[3.0, 4.0], -1.0).is_err());
        assert!(aggregate_moments(0.1, 0.05, 1.0, -1.0).is_err());
    }

    #[test]
    fn single_node_matches_closed_forms() {
        let g = MobilityMatrix::zeros(1);
        for &t in &[0.5, 1.0, 10.0, 50.0, 100.0] {
            let e = exact_moments(0.067, 0.033, &g, &[200.0], t).unwrap();
            let c = aggregate_moments(0.067, 0.033, 200.0, t).unwrap();
            assert!(rel(e.m_i[0], c.m_i) < 1e-9);
            assert!(rel(e.m_j[0], c.m_j) < 1e-9);
            assert!(rel(e.v_ii[(0, 0)], c.v_ii) < 1e-6, "t={t}");
            assert!(rel(e.v_ij[(0, 0)], c.v_ij) < 1e-6);
            assert!(rel(e.v_jj[(0, 0)], c.v_jj) < 1e-6);
        }
    }

    #[test]
    fn singular_drift_uses_integrated_mean() {
        // α = β with no movement: a = 0, m^[J] = I0 (1 + αt)
        let g = MobilityMatrix::zeros(1);
        let e = exact_moments(0.05, 0.05, &g, &[100.0], 10.0).unwrap();
        assert!(rel(e.m_j[0], 100.0 * 1.5) < 1e-9);
        let c = aggregate_moments(0.05, 0.05, 100.0, 10.0).unwrap();
        assert!(rel(e.v_jj[(0, 0)], c.v_jj) < 1e-6);
    }

    #[test]
    fn expm_squaring_consistency() {
        let l = generate_er_topology(6, 3.0, 8).unwrap();
        let g = mobility_from_topology(&l, 0.2).unwrap();
        let a = drift_matrix(0.08, 0.02, &g).transpose();
        let full = (&a * 7.0).exp();
        let half = (&a * 3.5).exp();
        let sq = &half * &half;
        assert!((&full - &sq).abs().max() / full.abs().max() < 1e-9);
    }

    #[test]
    fn tighter_tolerance_barely_moves_vjj() {
        let l = generate_er_topology(4, 2.0, 5).unwrap();
        let g = mobility_from_topology(&l, 0.1).unwrap();
        let i0 = [200.0, 0.0, 10.0, 0.0];
        let base = exact_moments(0.067, 0.033, &g, &i0, 10.0).unwrap();
        let fine = exact_moments_with(
            0.067,
            0.033,
            &g,
            &i0,
            10.0,
            MomentOptions {
                rtol: 1e-12,
                atol: 1e-12,
            },
        )
        .unwrap();
        let scale = base.v_jj.abs().max();
        assert!((&base.v_jj - &fine.v_jj).abs().max() / scale < 1e-6);
    }

    #[test]
    fn covariances_symmetric_psd() {
        let l = generate_er_topology(5, 2.0, 13).unwrap();
        let g = mobility_from_topology(&l, 0.2).unwrap();
        let m = exact_moments(0.067, 0.033, &g, &[200.0, 0.0, 0.0, 0.0, 0.0], 5.0).unwrap();
        for v in [&m.v_ii, &m.v_jj] {
            assert_eq!(v, &v.transpose());
            let ev = v.clone().symmetric_eigenvalues();
            assert!(ev.min() > -1e-9 * v.abs().max());
        }
    }

    #[test]
    fn approx_step_examples() {
        let g = MobilityMatrix::zeros(1);
        let (m, v) = approx_step_moments(&DVector::from_element(1, 100.0), 0.067, 0.033, &g, 1.0);
        assert!((m[0] - 103.4).abs() < 1e-12);
        assert!((v[(0, 0)] - 10.0).abs() < 1e-12);
        let (m, v) = approx_step_moments(&DVector::from_element(1, 100.0), 0.067, 0.033, &g, 0.0);
        assert_eq!((m[0], v[(0, 0)]), (100.0, 0.0));

        let (m, v) = approx_aggregate_step(600.0, 0.08, 0.02, 1.0);
        assert!((m - 636.0).abs() < 1e-12 && (v - 60.0).abs() < 1e-12);
        assert_eq!(approx_aggregate_step(600.0, 0.08, 0.02, 0.0), (600.0, 0.0));
    }

    #[test]
    fn node_means_sum_to_aggregate_step() {
        let l = generate_er_topology(6, 3.0, 21).unwrap();
        let g = mobility_from_topology(&l, 0.3).unwrap();
        let i = DVector::from_vec(vec![10.0, 0.0, 250.0, 3.5, 80.0, 1.0]);
        let (m, v) = approx_step_moments(&i, 0.08, 0.02, &g, 0.7);
        let (ma, va) = approx_aggregate_step(i.sum(), 0.08, 0.02, 0.7);
        assert!((m.sum() - ma).abs() < 1e-10 * ma);
        // movement noise cancels in the total as well
        assert!((v.sum() - va).abs() < 1e-10 * va);
    }

    #[test]
    fn approx_step_is_first_order() {
        let l = NeighborMatrix::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let g = mobility_from_topology(&l, 0.2).unwrap();
        let i = [120.0, 40.0, 5.0];
        let err = |dt: f64| {
            let e = exact_moments(0.08, 0.03, &g, &i, dt).unwrap();
            let (m, v) = approx_step_moments(&DVector::from_column_slice(&i), 0.08, 0.03, &g, dt);
            (&m - &e.m_i).norm() + (&v - &e.v_ii).norm()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 4.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn aggregate_cauchy_schwarz_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let alpha: f64 = rng.random_range(0.01..0.3);
            let beta: f64 = rng.random_range(0.01..0.3);
            for k in 0..=100 {
                let t = k as f64;
                let m = aggregate_moments(alpha, beta, 100.0, t).unwrap();
                assert!(m.v_ii >= 0.0 && m.v_jj >= 0.0);
                assert!(
                    m.v_ij * m.v_ij <= m.v_ii * m.v_jj * (1.0 + 1e-9) + 1e-9,
                    "{alpha} {beta} {t}"
                );
            }
        }
    }
}
