use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};
use crate::likelihood::{loglik_i1_with_mobility, LikelihoodOptions};
use crate::netgen::{mobility_from_topology, pairs, NeighborMatrix};
use crate::rng::{self, Stream};

/// Total-outflow values tried when `γ` is searched alongside the topology.
pub const DEFAULT_GAMMA_GRID: [f64; 5] = [0.025, 0.05, 0.1, 0.2, 0.4];

/// Whether the total outflow `γ` is given or searched over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GammaMode {
    Known { gamma: f64 },
    Search { grid: Vec<f64> },
}

impl GammaMode {
    pub fn search_default() -> Self {
        GammaMode::Search {
            grid: DEFAULT_GAMMA_GRID.to_vec(),
        }
    }
}

/// The likelihood-scale constant `k` in the acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScaleConstant {
    /// Standard deviation of the likelihood over this many uniformly random topologies.
    Adaptive {
        samples: usize,
    },
    Fixed {
        k: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub steps: usize,
    pub k: ScaleConstant,
    /// One `γ` move per this many steps when `γ` is searched.
    pub gamma_move_every: usize,
    #[serde(default)]
    pub likelihood: LikelihoodOptions,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self::for_nodes(10)
    }
}

impl AnnealingSchedule {
    /// `2·10⁴` steps at ten nodes, scaled with the number of node pairs.
    pub fn for_nodes(n: usize) -> Self {
        let scale = (n * n) as f64 / 100.0;
        Self {
            steps: ((20_000.0 * scale).round() as usize).max(1_000),
            k: ScaleConstant::Adaptive { samples: 100 },
            gamma_move_every: 10,
            likelihood: LikelihoodOptions::default(),
        }
    }

    /// `T(s) = 1/ln(s+2)`.
    pub fn temperature(s: usize) -> f64 {
        1.0 / ((s + 2) as f64).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("annealing needs at least one step"));
        }
        if self.gamma_move_every == 0 {
            return Err(invalid("gamma_move_every must be positive"));
        }
        match self.k {
            ScaleConstant::Fixed { k } if !(k > 0.0) => {
                Err(invalid(format!("scale constant k={k} must be positive")))
            }
            ScaleConstant::Adaptive { samples } if samples < 2 => {
                Err(invalid("adaptive scale needs at least two samples"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyEstimate {
    pub l_hat: NeighborMatrix,
    pub gamma_total: f64,
    pub loglik: f64,
    pub trial_id: u64,
    /// Step at which the best topology was first reached.
    pub converged_step: usize,
    /// Scale constant the trial ran with.
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTopology {
    pub estimate: TopologyEstimate,
    /// Number of trials that ended on this topology.
    pub multiplicity: usize,
    pub trial_ids: Vec<u64>,
}

struct Objective<'a> {
    ds: &'a TimeSeriesDataset,
    alpha: f64,
    beta: f64,
    opts: LikelihoodOptions,
}

impl Objective<'_> {
    fn eval(&self, l: &NeighborMatrix, gamma: f64) -> f64 {
        mobility_from_topology(l, gamma)
            .and_then(|g| loglik_i1_with_mobility(self.ds, self.alpha, self.beta, &g, self.opts))
            .map(|ll| ll.value)
            .unwrap_or(f64::NEG_INFINITY)
    }
}

fn random_topology(n: usize, rng: &mut ChaCha8Rng) -> NeighborMatrix {
    let mut l = NeighborMatrix::empty(n);
    for (i, j) in pairs(n) {
        if rng.random::<bool>() {
            l.set(i, j, true);
        }
    }
    l
}

fn check_inputs(
    ds: &TimeSeriesDataset,
    alpha: f64,
    beta: f64,
    schedule: &AnnealingSchedule,
    mode: &GammaMode,
) -> Result<()> {
    schedule.validate()?;
    if ds.kind != DatasetKind::InfectiousCounts {
        return Err(invalid("topology search needs an infectious-count dataset"));
    }
    if ds.n() < 2 {
        return Err(invalid("topology search needs at least two nodes"));
    }
    if ds.d() < 2 {
        return Err(invalid("at least two observations are required"));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(invalid(format!(
            "rates alpha={alpha}, beta={beta} must be positive"
        )));
    }
    let ok = |g: f64| (0.0..=1.0).contains(&g);
    match mode {
        GammaMode::Known { gamma } if !ok(*gamma) => {
            Err(invalid(format!("gamma {gamma} outside [0, 1]")))
        }
        GammaMode::Search { grid } if grid.is_empty() || !grid.iter().all(|&g| ok(g)) => Err(
            invalid("gamma grid must be non-empty with values in [0, 1]"),
        ),
        _ => Ok(()),
    }
}

/// Simulated annealing over neighbor matrices, maximizing `L^[I1]` with the
/// rates fixed. Returns the best topology visited.
pub fn sa_topology_search(
    ds: &TimeSeriesDataset,
    alpha_hat: f64,
    beta_hat: f64,
    schedule: &AnnealingSchedule,
    seed: u64,
    gamma_mode: &GammaMode,
) -> Result<TopologyEstimate> {
    check_inputs(ds, alpha_hat, beta_hat, schedule, gamma_mode)?;
    run_trial(ds, alpha_hat, beta_hat, schedule, seed, gamma_mode, 0)
}

fn run_trial(
    ds: &TimeSeriesDataset,
    alpha: f64,
    beta: f64,
    schedule: &AnnealingSchedule,
    seed: u64,
    gamma_mode: &GammaMode,
    trial_id: u64,
) -> Result<TopologyEstimate> {
    let n = ds.n();
    let objective = Objective {
        ds,
        alpha,
        beta,
        opts: schedule.likelihood,
    };
    let mut rng = rng::substream(seed, Stream::Anneal, trial_id);
    let grid: Vec<f64> = match gamma_mode {
        GammaMode::Known { gamma } => vec![*gamma],
        GammaMode::Search { grid } => grid.clone(),
    };
    let searching = grid.len() > 1;
    let mut gamma_idx = grid.len() / 2;

    let k = match schedule.k {
        ScaleConstant::Fixed { k } => k,
        ScaleConstant::Adaptive { samples } => {
            let values: Vec<f64> = (0..samples)
                .map(|_| objective.eval(&random_topology(n, &mut rng), grid[gamma_idx]))
                .filter(|v| v.is_finite())
                .collect();
            let sd = sample_sd(&values);
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                log::warn!("likelihood spread over random topologies is {sd}; using k = 1");
                1.0
            }
        }
    };

    let pair_list: Vec<(usize, usize)> = pairs(n).collect();
    let mut cur = random_topology(n, &mut rng);
    let mut cur_ll = objective.eval(&cur, grid[gamma_idx]);
    let mut best = (cur.clone(), gamma_idx, cur_ll, 0usize);

    for s in 0..schedule.steps {
        let temp = AnnealingSchedule::temperature(s);
        let gamma_move = searching && (s + 1) % schedule.gamma_move_every == 0;
        let (cand, cand_gamma) = if gamma_move {
            let up = rng.random::<bool>();
            let idx = if up {
                (gamma_idx + 1).min(grid.len() - 1)
            } else {
                gamma_idx.saturating_sub(1)
            };
            (cur.clone(), idx)
        } else {
            let (i, j) = pair_list[rng.random_range(0..pair_list.len())];
            let mut c = cur.clone();
            c.toggle(i, j);
            (c, gamma_idx)
        };
        let cand_ll = objective.eval(&cand, grid[cand_gamma]);
        let accept = if cand_ll >= cur_ll {
            true
        } else if cand_ll.is_finite() {
            let p = ((cand_ll - cur_ll) / (k * temp)).exp();
            rng.random::<f64>() < p
        } else {
            false
        };
        debug_assert!(
            accept || cand_ll < cur_ll,
            "an improving proposal was rejected"
        );
        if accept {
            cur = cand;
            gamma_idx = cand_gamma;
            cur_ll = cand_ll;
            if cur_ll > best.2 {
                best = (cur.clone(), gamma_idx, cur_ll, s + 1);
            }
        }
    }
    let (l_hat, g_idx, loglik, converged_step) = best;
    if !loglik.is_finite() {
        return Err(Error::NonFinite("likelihood of every visited topology"));
    }
    Ok(TopologyEstimate {
        l_hat,
        gamma_total: grid[g_idx],
        loglik,
        trial_id,
        converged_step,
        k,
    })
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Independent annealing trials (one random stream each), merged by
/// topology and ranked by likelihood, highest first. Ties are broken by
/// the canonical topology encoding so the order is deterministic.
pub fn multi_trial_topology_ranking(
    ds: &TimeSeriesDataset,
    alpha_hat: f64,
    beta_hat: f64,
    trials: usize,
    schedule: &AnnealingSchedule,
    seed: u64,
    gamma_mode: &GammaMode,
) -> Result<Vec<RankedTopology>> {
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    check_inputs(ds, alpha_hat, beta_hat, schedule, gamma_mode)?;
    let mut merged: BTreeMap<(String, u64), RankedTopology> = BTreeMap::new();
    for t in 0..trials as u64 {
        let est = run_trial(ds, alpha_hat, beta_hat, schedule, seed, gamma_mode, t)?;
        let key = (est.l_hat.canonical_key(), est.gamma_total.to_bits());
        merged
            .entry(key)
            .and_modify(|r| {
                r.multiplicity += 1;
                r.trial_ids.push(t);
            })
            .or_insert(RankedTopology {
                estimate: est,
                multiplicity: 1,
                trial_ids: vec![t],
            });
    }
    let mut ranked: Vec<_> = merged.into_values().collect();
    ranked.sort_by(|a, b| {
        b.estimate
            .loglik
            .total_cmp(&a.estimate.loglik)
            .then_with(|| {
                a.estimate
                    .l_hat
                    .canonical_key()
                    .cmp(&b.estimate.l_hat.canonical_key())
            })
            .then_with(|| a.estimate.gamma_total.total_cmp(&b.estimate.gamma_total))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::observe;
    use crate::likelihood::{loglik_i1, ThetaCandidate};
    use crate::netgen::generate_er_topology;
    use crate::simulate::{index_case, simulate_linearized, SimOptions, TransmissionParams};

    fn dataset(n: usize, deg: f64, seed: u64) -> (NeighborMatrix, TimeSeriesDataset) {
        let l = generate_er_topology(n, deg, seed).unwrap();
        let p = TransmissionParams::new(0.067, 0.033, 0.1).unwrap();
        let g = mobility_from_topology(&l, 0.1).unwrap();
        let traj = simulate_linearized(
            &g,
            &p,
            &index_case(n, 0, 200.0),
            100.0,
            SimOptions::default(),
            seed,
        )
        .unwrap();
        (
            l,
            observe(&traj, 1.0, 100, DatasetKind::InfectiousCounts, false).unwrap(),
        )
    }

    fn quick(steps: usize) -> AnnealingSchedule {
        AnnealingSchedule {
            steps,
            ..AnnealingSchedule::for_nodes(5)
        }
    }

    #[test]
    fn temperature_is_positive_and_decreasing() {
        let mut last = f64::INFINITY;
        for s in 0..1000 {
            let t = AnnealingSchedule::temperature(s);
            assert!(t > 0.0 && t < last);
            last = t;
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = quick(10);
        s.k = ScaleConstant::Fixed { k: 0.0 };
        assert!(s.validate().is_err());
        s.k = ScaleConstant::Fixed { k: -3.0 };
        assert!(s.validate().is_err());
        s.k = ScaleConstant::Fixed { k: 2.0 };
        assert!(s.validate().is_ok());
        assert!(AnnealingSchedule {
            steps: 0,
            ..quick(1)
        }
        .validate()
        .is_err());
        assert_eq!(AnnealingSchedule::for_nodes(10).steps, 20_000);
        assert_eq!(AnnealingSchedule::for_nodes(20).steps, 80_000);
    }

    #[test]
    fn reported_loglik_is_reproducible() {
        let (_, ds) = dataset(5, 2.0, 3);
        let p = TransmissionParams::new(0.067, 0.033, 0.1).unwrap();
        let sched = quick(2000);
        let est = sa_topology_search(
            &ds,
            p.alpha,
            p.beta,
            &sched,
            9,
            &GammaMode::Known { gamma: 0.1 },
        )
        .unwrap();
        let again = loglik_i1(
            &ds,
            &ThetaCandidate::new(est.l_hat.clone(), p),
            sched.likelihood,
        )
        .unwrap();
        assert!((est.loglik - again.value).abs() < 1e-9);
        let rerun = sa_topology_search(
            &ds,
            p.alpha,
            p.beta,
            &sched,
            9,
            &GammaMode::Known { gamma: 0.1 },
        )
        .unwrap();
        assert_eq!(est, rerun);
    }

    #[test]
    fn single_trial_ranking_matches_direct_search() {
        let (_, ds) = dataset(5, 2.0, 5);
        let sched = quick(1500);
        let mode = GammaMode::Known { gamma: 0.1 };
        let direct = sa_topology_search(&ds, 0.067, 0.033, &sched, 2, &mode).unwrap();
        let ranked = multi_trial_topology_ranking(&ds, 0.067, 0.033, 1, &sched, 2, &mode).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].estimate, direct);
        assert_eq!(ranked[0].multiplicity, 1);
    }

    #[test]
    fn ranking_is_sorted_and_counts_every_trial() {
        let (_, ds) = dataset(6, 2.0, 8);
        let ranked = multi_trial_topology_ranking(
            &ds,
            0.067,
            0.033,
            6,
            &quick(400),
            4,
            &GammaMode::Known { gamma: 0.1 },
        )
        .unwrap();
        assert_eq!(ranked.iter().map(|r| r.multiplicity).sum::<usize>(), 6);
        for w in ranked.windows(2) {
            assert!(w[0].estimate.loglik >= w[1].estimate.loglik);
        }
    }

    #[test]
    fn gamma_search_stays_on_grid() {
        let (_, ds) = dataset(5, 2.0, 11);
        let est = sa_topology_search(
            &ds,
            0.067,
            0.033,
            &quick(1500),
            1,
            &GammaMode::search_default(),
        )
        .unwrap();
        assert!(DEFAULT_GAMMA_GRID.contains(&est.gamma_total));
    }

    #[test]
    fn wrong_inputs_rejected() {
        let (_, ds) = dataset(4, 2.0, 1);
        let mode = GammaMode::Known { gamma: 0.1 };
        let mut s = quick(10);
        s.k = ScaleConstant::Fixed { k: 0.0 };
        assert!(sa_topology_search(&ds, 0.067, 0.033, &s, 0, &mode).is_err());
        assert!(sa_topology_search(
            &ds,
            0.067,
            0.033,
            &quick(10),
            0,
            &GammaMode::Search { grid: vec![] }
        )
        .is_err());
        assert!(multi_trial_topology_ranking(&ds, 0.067, 0.033, 0, &quick(10), 0, &mode).is_err());
        let mut nc = ds.clone();
        nc.kind = DatasetKind::NewCases;
        assert!(sa_topology_search(&nc, 0.067, 0.033, &quick(10), 0, &mode).is_err());
    }
}
