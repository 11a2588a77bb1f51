//! Euler–Maruyama integration of the meta-population Langevin equations.
//!
//! Each stochastic channel (infection and recovery at every node, movement
//! along every directed pair with non-zero rate) contributes
//! `rate·x·dt + √(rate·x·dt)·z` with its own standard normal `z`. The
//! infection increment is shared by `I_i` and the cumulative case count
//! `J_i`, which is what couples the two in the moment equations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::netgen::{MobilityMatrix, PopulationAllocation};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_total: f64,
}

impl TransmissionParams {
    pub fn new(alpha: f64, beta: f64, gamma_total: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(invalid(format!(
                "alpha={alpha}, beta={beta} must be positive"
            )));
        }
        if !(0.0..=1.0).contains(&gamma_total) {
            return Err(invalid(format!("gamma={gamma_total} outside [0, 1]")));
        }
        Ok(Self {
            alpha,
            beta,
            gamma_total,
        })
    }

    /// Basic reproductive ratio `α/β`.
    pub fn r(&self) -> f64 {
        self.alpha / self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    FullSir,
    Linearized,
}

/// How the per-step infection increment is accumulated into `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseIncrements {
    /// `J` takes the Gaussian increment as is. Matches the moment equations
    /// exactly but `J` may dip by a fraction of a case between steps.
    Raw,
    /// `J` is the running maximum of the raw cumulative count: never
    /// decreases, and differs from `Raw` by at most the current dip.
    #[default]
    RunningMax,
    /// Each increment is floored at zero. Biases `J` upward by roughly
    /// `0.4·√(αI/dt)` per unit time; kept for comparison only.
    FloorPerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    /// `false` zeroes every `z`, leaving the deterministic drift.
    pub noise: bool,
    /// Clamp negative compartments to zero after each step.
    pub clamp: bool,
    pub cases: CaseIncrements,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            noise: true,
            clamp: true,
            cases: CaseIncrements::default(),
        }
    }
}

impl SimOptions {
    pub fn noiseless() -> Self {
        Self {
            noise: false,
            ..Self::default()
        }
    }
}

/// Compartment counts at one instant. The linearized model leaves `s` and
/// `r` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentState {
    pub t: f64,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub j: Vec<f64>,
}

impl CompartmentState {
    /// Early-phase state: only infectious counts; initial infections are
    /// counted as cases (`J(0) = I(0)`).
    pub fn linear(i0: &[f64]) -> Self {
        Self {
            t: 0.0,
            s: vec![],
            i: i0.to_vec(),
            r: vec![],
            j: i0.to_vec(),
        }
    }

    /// Full SIR state with `S_i = P_i(0) - I_i(0)` and no recovered.
    pub fn with_populations(pop: &PopulationAllocation, i0: &[f64]) -> Result<Self> {
        if pop.counts.len() != i0.len() {
            return Err(Error::DimensionMismatch {
                expected: pop.counts.len(),
                got: i0.len(),
            });
        }
        let s = pop
            .counts
            .iter()
            .zip(i0)
            .map(|(p, i)| (p - i).max(0.0))
            .collect();
        Ok(Self {
            t: 0.0,
            s,
            i: i0.to_vec(),
            r: vec![0.0; i0.len()],
            j: i0.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.i.len()
    }

    pub fn total_infectious(&self) -> f64 {
        self.i.iter().sum()
    }
}

/// Index-case initial condition: `count` infectious at `node`, zero elsewhere.
pub fn index_case(n: usize, node: usize, count: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[node] = count;
    v
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model: ModelKind,
    pub dt: f64,
    pub states: Vec<CompartmentState>,
    /// Steps on which some compartment went negative before clamping.
    pub negative_steps: usize,
}

impl Trajectory {
    pub fn t_end(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }

    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

struct Stepper<'a> {
    gamma: &'a MobilityMatrix,
    alpha: f64,
    beta: f64,
    opts: SimOptions,
    moves: Vec<(usize, usize, f64)>,
    j_raw: Vec<f64>,
    delta: Vec<f64>,
    infections: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(
        gamma: &'a MobilityMatrix,
        params: &TransmissionParams,
        opts: SimOptions,
        j0: &[f64],
    ) -> Result<Self> {
        if !(opts.dt > 0.0) {
            return Err(invalid(format!(
                "integration step {} must be positive",
                opts.dt
            )));
        }
        let n = gamma.n();
        for i in 0..n {
            if 1.0 - gamma.outflow(i) * opts.dt < 0.0 {
                return Err(invalid(format!(
                    "step {} too large: node {i} would lose more than its population",
                    opts.dt
                )));
            }
        }
        let mut moves = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let g = gamma.get(a, b);
                if g > 0.0 {
                    moves.push((a, b, g));
                }
            }
        }
        Ok(Self {
            gamma,
            alpha: params.alpha,
            beta: params.beta,
            opts,
            moves,
            j_raw: j0.to_vec(),
            delta: vec![0.0; n],
            infections: vec![0.0; n],
        })
    }

    #[inline]
    fn channel(&self, mean: f64, rng: &mut ChaCha8Rng) -> f64 {
        if !self.opts.noise || mean <= 0.0 {
            return mean.max(0.0);
        }
        let z: f64 = rng.sample(StandardNormal);
        mean + mean.sqrt() * z
    }

    /// Advances `(I, J)` and, when `sr` is given, `S` and `R` too. Returns
    /// whether any compartment went negative.
    fn step(
        &mut self,
        i: &mut [f64],
        j: &mut [f64],
        mut sr: Option<(&mut [f64], &mut [f64])>,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        let dt = self.opts.dt;
        let n = i.len();
        self.delta.iter_mut().for_each(|x| *x = 0.0);
        for node in 0..n {
            let x = i[node].max(0.0);
            let force = match &sr {
                Some((s, r)) => {
                    let p = s[node] + x + r[node];
                    if p > 0.0 {
                        self.alpha * s[node].max(0.0) / p
                    } else {
                        0.0
                    }
                }
                None => self.alpha,
            };
            let inf = self.channel(force * x * dt, rng);
            let rec = self.channel(self.beta * x * dt, rng);
            self.delta[node] += inf - rec;
            self.infections[node] = inf;
            if let Some((s, r)) = sr.as_mut() {
                s[node] -= inf;
                r[node] += rec;
            }
        }
        for idx in 0..self.moves.len() {
            let (a, b, g) = self.moves[idx];
            let m = self.channel(g * i[a].max(0.0) * dt, rng);
            self.delta[a] -= m;
            self.delta[b] += m;
        }
        if let Some((s, r)) = sr.as_mut() {
            // susceptible and recovered travel deterministically along the same rates
            for comp in [&mut **s, &mut **r] {
                let before = comp.to_vec();
                for node in 0..n {
                    let out: f64 = self.gamma.outflow(node) * before[node];
                    let inflow: f64 = (0..n).map(|k| self.gamma.get(k, node) * before[k]).sum();
                    comp[node] += (inflow - out) * dt;
                }
            }
        }
        let mut negative = false;
        for node in 0..n {
            i[node] += self.delta[node];
            let inf = self.infections[node];
            match self.opts.cases {
                CaseIncrements::Raw => j[node] += inf,
                CaseIncrements::FloorPerStep => j[node] += inf.max(0.0),
                CaseIncrements::RunningMax => {
                    self.j_raw[node] += inf;
                    j[node] = j[node].max(self.j_raw[node]);
                }
            }
            if i[node] < 0.0 {
                negative = true;
                if self.opts.clamp {
                    i[node] = 0.0;
                }
            }
        }
        if let Some((s, r)) = sr {
            for v in s.iter_mut().chain(r.iter_mut()) {
                if *v < 0.0 {
                    negative = true;
                    if self.opts.clamp {
                        *v = 0.0;
                    }
                }
            }
        }
        negative
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end >= 0.0) {
        return Err(invalid("t_end must be non-negative"));
    }
    let steps = (t_end / dt).round();
    if (steps * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::Grid(format!(
            "t_end {t_end} is not a multiple of dt {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Full SIR dynamics with frequency-dependent infection `α S I / P`.
pub fn simulate_full_sir(
    gamma: &MobilityMatrix,
    params: &TransmissionParams,
    init: &CompartmentState,
    t_end: f64,
    opts: SimOptions,
    seed: u64,
) -> Result<Trajectory> {
    let n = gamma.n();
    if init.n() != n || init.s.len() != n || init.r.len() != n || init.j.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: init.n(),
        });
    }
    let total: f64 = init.s.iter().chain(&init.i).chain(&init.r).sum();
    if !(total > 0.0) {
        return Err(invalid("initial population must be positive"));
    }
    let steps = step_count(t_end, opts.dt)?;
    let mut stepper = Stepper::new(gamma, params, opts, &init.j)?;
    let mut rng = rng::stream(seed, Stream::Simulation);
    let mut cur = init.clone();
    cur.t = 0.0;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(cur.clone());
    let mut negative_steps = 0;
    for k in 1..=steps {
        let CompartmentState { s, i, r, j, .. } = &mut cur;
        if stepper.step(i, j, Some((s, r)), &mut rng) {
            negative_steps += 1;
        }
        cur.t = k as f64 * opts.dt;
        states.push(cur.clone());
    }
    Ok(Trajectory {
        model: ModelKind::FullSir,
        dt: opts.dt,
        states,
        negative_steps,
    })
}

/// Early-growth linear dynamics for `I` and `J` only.
pub fn simulate_linearized(
    gamma: &MobilityMatrix,
    params: &TransmissionParams,
    i0: &[f64],
    t_end: f64,
    opts: SimOptions,
    seed: u64,
) -> Result<Trajectory> {
    let n = gamma.n();
    if i0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: i0.len(),
        });
    }
    let steps = step_count(t_end, opts.dt)?;
    let mut cur = CompartmentState::linear(i0);
    let mut stepper = Stepper::new(gamma, params, opts, &cur.j)?;
    let mut rng = rng::stream(seed, Stream::Simulation);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(cur.clone());
    let mut negative_steps = 0;
    for k in 1..=steps {
        if stepper.step(&mut cur.i, &mut cur.j, None, &mut rng) {
            negative_steps += 1;
        }
        cur.t = k as f64 * opts.dt;
        states.push(cur.clone());
    }
    Ok(Trajectory {
        model: ModelKind::Linearized,
        dt: opts.dt,
        states,
        negative_steps,
    })
}

/// Sample moments of `(I, J)` over an ensemble, with standard errors for every element.
#[derive(Debug, Clone)]
pub struct EnsembleMoments {
    pub t: f64,
    pub paths: usize,
    pub m_i: DVector<f64>,
    pub m_j: DVector<f64>,
    pub v_ii: DMatrix<f64>,
    pub v_ij: DMatrix<f64>,
    pub v_jj: DMatrix<f64>,
    pub se_m_i: DVector<f64>,
    pub se_m_j: DVector<f64>,
    pub se_v_ii: DMatrix<f64>,
    pub se_v_ij: DMatrix<f64>,
    pub se_v_jj: DMatrix<f64>,
}

/// Runs `paths` independent linearized trajectories and records the sample
/// moments at each of `times` (which must lie on the step grid).
pub fn ensemble_linear_moments(
    gamma: &MobilityMatrix,
    params: &TransmissionParams,
    i0: &[f64],
    times: &[f64],
    paths: usize,
    opts: SimOptions,
    seed: u64,
) -> Result<Vec<EnsembleMoments>> {
    let n = gamma.n();
    if i0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: i0.len(),
        });
    }
    if paths < 2 {
        return Err(invalid("ensemble needs at least two paths"));
    }
    let marks: Vec<usize> = times
        .iter()
        .map(|&t| step_count(t, opts.dt))
        .collect::<Result<_>>()?;
    let last = marks.iter().copied().max().unwrap_or(0);
    // samples[time][path] = (I, J) concatenated
    let mut samples = vec![Vec::with_capacity(paths * 2 * n); times.len()];
    let mut i = vec![0.0; n];
    let mut j = vec![0.0; n];
    for p in 0..paths {
        i.copy_from_slice(i0);
        j.copy_from_slice(i0);
        let mut stepper = Stepper::new(gamma, params, opts, &j)?;
        let mut rng = rng::substream(seed, Stream::Ensemble, p as u64);
        for step in 0..=last {
            if step > 0 {
                stepper.step(&mut i, &mut j, None, &mut rng);
            }
            for (slot, &mark) in marks.iter().enumerate() {
                if mark == step {
                    samples[slot].extend_from_slice(&i);
                    samples[slot].extend_from_slice(&j);
                }
            }
        }
    }
    Ok(times
        .iter()
        .zip(samples)
        .map(|(&t, flat)| summarize(t, n, paths, &flat))
        .collect())
}

fn summarize(t: f64, n: usize, paths: usize, flat: &[f64]) -> EnsembleMoments {
    let dim = 2 * n;
    let np = paths as f64;
    let mut mean = vec![0.0; dim];
    for row in flat.chunks_exact(dim) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= np);
    let mut cov: DMatrix<f64> = DMatrix::zeros(dim, dim);
    let mut cov_sq: DMatrix<f64> = DMatrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for row in flat.chunks_exact(dim) {
        for k in 0..dim {
            centered[k] = row[k] - mean[k];
        }
        for a in 0..dim {
            for b in a..dim {
                let prod = centered[a] * centered[b];
                cov[(a, b)] += prod;
                cov_sq[(a, b)] += prod * prod;
            }
        }
    }
    let mut se = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            let m1 = cov[(a, b)] / np;
            let m2 = cov_sq[(a, b)] / np;
            let c = cov[(a, b)] / (np - 1.0);
            let s = ((m2 - m1 * m1).max(0.0) / np).sqrt();
            cov[(a, b)] = c;
            cov[(b, a)] = c;
            se[(a, b)] = s;
            se[(b, a)] = s;
        }
    }
    let se_mean: Vec<f64> = (0..dim).map(|a| (cov[(a, a)] / np).sqrt()).collect();
    EnsembleMoments {
        t,
        paths,
        m_i: DVector::from_column_slice(&mean[..n]),
        m_j: DVector::from_column_slice(&mean[n..]),
        v_ii: cov.view((0, 0), (n, n)).into_owned(),
        v_ij: cov.view((0, n), (n, n)).into_owned(),
        v_jj: cov.view((n, n), (n, n)).into_owned(),
        se_m_i: DVector::from_column_slice(&se_mean[..n]),
        se_m_j: DVector::from_column_slice(&se_mean[n..]),
        se_v_ii: se.view((0, 0), (n, n)).into_owned(),
        se_v_ij: se.view((0, n), (n, n)).into_owned(),
        se_v_jj: se.view((n, n), (n, n)).into_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{generate_er_topology, mobility_from_topology, NeighborMatrix};

    #[test]
    fn noiseless_single_node_is_exponential() {
        let p = TransmissionParams::new(0.067, 0.033, 0.0).unwrap();
        let traj = simulate_linearized(
            &MobilityMatrix::zeros(1),
            &p,
            &[100.0],
            100.0,
            SimOptions::noiseless(),
            1,
        )
        .unwrap();
        for st in traj.states.iter().step_by(500) {
            let exact = 100.0 * ((p.alpha - p.beta) * st.t).exp();
            assert!(
                (st.i[0] - exact).abs() / exact < 0.01,
                "t={} {} vs {}",
                st.t,
                st.i[0],
                exact
            );
        }
        // the same holds for the full model when S dominates
        let pop = PopulationAllocation {
            counts: vec![1e9],
            total: 1e9,
        };
        let init = CompartmentState::with_populations(&pop, &[100.0]).unwrap();
        let traj = simulate_full_sir(
            &MobilityMatrix::zeros(1),
            &p,
            &init,
            100.0,
            SimOptions::noiseless(),
            1,
        )
        .unwrap();
        let end = traj.states.last().unwrap();
        let exact = 100.0 * ((p.alpha - p.beta) * 100.0).exp();
        assert!((end.i[0] - exact).abs() / exact < 0.01);
    }

    #[test]
    fn balanced_rates_hold_infectious_constant() {
        let p = TransmissionParams::new(0.05, 0.05, 0.0).unwrap();
        let g = MobilityMatrix::zeros(3);
        let traj =
            simulate_linearized(&g, &p, &[10.0, 20.0, 30.0], 5.0, SimOptions::noiseless(), 0)
                .unwrap();
        for st in &traj.states {
            assert_eq!(st.i, vec![10.0, 20.0, 30.0]);
        }
    }

    #[test]
    fn uncoupled_node_stays_empty() {
        let p = TransmissionParams::new(0.067, 0.033, 0.0).unwrap();
        let g = MobilityMatrix::zeros(2);
        let traj =
            simulate_linearized(&g, &p, &[100.0, 0.0], 20.0, SimOptions::noiseless(), 0).unwrap();
        assert!(traj.states.iter().all(|s| s.i[1] == 0.0 && s.j[1] == 0.0));
    }

    #[test]
    fn rejects_bad_steps() {
        let p = TransmissionParams::new(0.1, 0.05, 1.0).unwrap();
        let l = NeighborMatrix::from_edges(2, &[(0, 1)]).unwrap();
        let g = mobility_from_topology(&l, 1.0).unwrap();
        let bad = SimOptions {
            dt: 0.0,
            ..SimOptions::default()
        };
        assert!(simulate_linearized(&g, &p, &[1.0, 0.0], 1.0, bad, 0).is_err());
        let huge = SimOptions {
            dt: 1.5,
            ..SimOptions::default()
        };
        assert!(simulate_linearized(&g, &p, &[1.0, 0.0], 3.0, huge, 0).is_err());
        assert!(TransmissionParams::new(0.0, 0.1, 0.1).is_err());
        assert!(TransmissionParams::new(0.1, 0.1, 1.1).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let l = generate_er_topology(6, 2.0, 9).unwrap();
        let g = mobility_from_topology(&l, 0.1).unwrap();
        let p = TransmissionParams::new(0.067, 0.033, 0.1).unwrap();
        let i0 = index_case(6, 0, 200.0);
        let a = simulate_linearized(&g, &p, &i0, 10.0, SimOptions::default(), 5).unwrap();
        let b = simulate_linearized(&g, &p, &i0, 10.0, SimOptions::default(), 5).unwrap();
        let c = simulate_linearized(&g, &p, &i0, 10.0, SimOptions::default(), 6).unwrap();
        assert_eq!(a.states, b.states);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn cases_never_decrease_under_monotone_policies() {
        let l = generate_er_topology(5, 2.0, 1).unwrap();
        let g = mobility_from_topology(&l, 0.2).unwrap();
        let p = TransmissionParams::new(0.067, 0.033, 0.2).unwrap();
        let i0 = index_case(5, 0, 5.0);
        for cases in [CaseIncrements::RunningMax, CaseIncrements::FloorPerStep] {
            let opts = SimOptions {
                cases,
                ..SimOptions::default()
            };
            let traj = simulate_linearized(&g, &p, &i0, 30.0, opts, 2).unwrap();
            for w in traj.states.windows(2) {
                for k in 0..5 {
                    assert!(w[1].j[k] >= w[0].j[k]);
                    assert!(w[1].i[k] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn clamping_keeps_full_model_non_negative() {
        let l = generate_er_topology(4, 2.0, 3).unwrap();
        let g = mobility_from_topology(&l, 0.1).unwrap();
        let p = TransmissionParams::new(0.067, 0.033, 0.1).unwrap();
        let pop = PopulationAllocation {
            counts: vec![50.0; 4],
            total: 200.0,
        };
        let init = CompartmentState::with_populations(&pop, &index_case(4, 0, 2.0)).unwrap();
        let traj = simulate_full_sir(&g, &p, &init, 50.0, SimOptions::default(), 11).unwrap();
        for st in &traj.states {
            assert!(st.s.iter().chain(&st.i).chain(&st.r).all(|&x| x >= 0.0));
        }
    }
}
