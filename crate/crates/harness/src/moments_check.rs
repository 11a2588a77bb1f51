//! Monte-Carlo check of the moment formulas against simulated ensembles.
//!
//! Each configuration draws a random network, rates and starting counts,
//! runs an ensemble of linearized trajectories and converts every moment
//! element into a z-score `(sample − exact) / se`. With several hundred
//! elements some will exceed the nominal bound by chance, so the suite
//! passes when the number of exceedances is within the 99.9% binomial
//! quantile for that many independent tests and no single element lies
//! beyond the Bonferroni bound at familywise level 0.001.

use epinet_core::moments::{exact_moments, MomentState};
use epinet_core::netgen::{mobility_from_topology, pairs, NeighborMatrix};
use epinet_core::rng::{self, Stream};
use epinet_core::simulate::{
    ensemble_linear_moments, CaseIncrements, EnsembleMoments, SimOptions, TransmissionParams,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{MomentsCheckConfig, SCHEMA_VERSION};
use crate::error::{HarnessError, Result};
use crate::experiment::trial_seed;
use crate::stats::binomial_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCase {
    pub index: usize,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_total: f64,
    pub edges: Vec<(usize, usize)>,
    pub i0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub case: usize,
    pub t: f64,
    pub block: String,
    pub elements: usize,
    pub exceedances: usize,
    pub max_abs_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsCheckReport {
    pub schema_version: u32,
    pub config: MomentsCheckConfig,
    pub cases: Vec<MomentCase>,
    pub blocks: Vec<BlockCheck>,
    pub compared: usize,
    pub exceedances: usize,
    pub allowed_exceedances: usize,
    pub max_abs_z: f64,
    pub z_limit: f64,
    pub passed: bool,
}

/// Draws configuration `index`: node counts cycle through the configured
/// list, rates and mobility come from the ranges of the synthetic study.
pub fn draw_case(cfg: &MomentsCheckConfig, index: usize) -> Result<MomentCase> {
    if cfg.node_counts.is_empty() || cfg.node_counts.contains(&0) {
        return Err(HarnessError::Config(
            "node_counts must list positive sizes".into(),
        ));
    }
    let n = cfg.node_counts[index % cfg.node_counts.len()];
    let mut rng = rng::substream(cfg.seed, Stream::Topology, index as u64);
    let beta = rng.random_range(0.02..0.05);
    let alpha = beta + rng.random_range(0.0..0.05);
    let mut edges: Vec<(usize, usize)> = pairs(n).filter(|_| rng.random_bool(0.6)).collect();
    if edges.is_empty() && n > 1 {
        let a = rng.random_range(0..n - 1);
        edges.push((a, a + 1));
    }
    let gamma_total = if n > 1 {
        rng.random_range(0.05..0.2)
    } else {
        0.0
    };
    let i0 = (0..n)
        .map(|_| rng.random_range(50.0f64..200.0).round())
        .collect();
    Ok(MomentCase {
        index,
        n,
        alpha,
        beta,
        gamma_total,
        edges,
        i0,
    })
}

/// Sample, standard error or exact value for each compared element.
type Elements = Vec<f64>;

fn z_scores(sample: &[f64], se: &[f64], exact: &[f64]) -> Vec<f64> {
    sample
        .iter()
        .zip(se)
        .zip(exact)
        .map(|((s, e), x)| {
            let diff = s - x;
            if *e > 0.0 {
                diff / e
            } else if diff.abs() <= 1e-9 * x.abs().max(1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

fn upper(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

fn blocks_for(
    case: usize,
    ens: &EnsembleMoments,
    exact: &MomentState,
    sigmas: f64,
) -> Vec<(BlockCheck, Vec<f64>)> {
    let entries: [(&str, Elements, Elements, Elements); 5] = [
        (
            "m_I",
            vec_of(&ens.m_i),
            vec_of(&ens.se_m_i),
            vec_of(&exact.m_i),
        ),
        (
            "m_J",
            vec_of(&ens.m_j),
            vec_of(&ens.se_m_j),
            vec_of(&exact.m_j),
        ),
        (
            "v_II",
            upper(&ens.v_ii),
            upper(&ens.se_v_ii),
            upper(&exact.v_ii),
        ),
        (
            "v_IJ",
            ens.v_ij.as_slice().to_vec(),
            ens.se_v_ij.as_slice().to_vec(),
            exact.v_ij.as_slice().to_vec(),
        ),
        (
            "v_JJ",
            upper(&ens.v_jj),
            upper(&ens.se_v_jj),
            upper(&exact.v_jj),
        ),
    ];
    entries
        .into_iter()
        .map(|(name, s, se, x)| {
            let z = z_scores(&s, &se, &x);
            let block = BlockCheck {
                case,
                t: ens.t,
                block: name.to_string(),
                elements: z.len(),
                exceedances: z.iter().filter(|v| v.abs() > sigmas).count(),
                max_abs_z: z.iter().fold(0.0, |m, v| m.max(v.abs())),
            };
            (block, z)
        })
        .collect()
}

fn check_case(cfg: &MomentsCheckConfig, case: &MomentCase) -> Result<Vec<BlockCheck>> {
    let l = NeighborMatrix::from_edges(case.n, &case.edges)?;
    let gamma = mobility_from_topology(&l, case.gamma_total)?;
    let params = TransmissionParams::new(case.alpha, case.beta, case.gamma_total)?;
    let opts = SimOptions {
        dt: cfg.sim_dt,
        clamp: false,
        cases: CaseIncrements::Raw,
        ..SimOptions::default()
    };
    let seed = trial_seed(cfg.seed, case.index);
    let ensembles =
        ensemble_linear_moments(&gamma, &params, &case.i0, &cfg.times, cfg.paths, opts, seed)?;
    let mut out = Vec::new();
    for ens in &ensembles {
        let exact = exact_moments(case.alpha, case.beta, &gamma, &case.i0, ens.t)?;
        out.extend(
            blocks_for(case.index, ens, &exact, cfg.sigmas)
                .into_iter()
                .map(|(b, _)| b),
        );
    }
    Ok(out)
}

pub fn run_moments_check(cfg: &MomentsCheckConfig) -> Result<MomentsCheckReport> {
    if cfg.configurations == 0 || cfg.times.is_empty() || !(cfg.sigmas > 0.0) {
        return Err(HarnessError::Config(
            "moments check needs configurations, times and a positive sigma bound".into(),
        ));
    }
    let cases: Vec<MomentCase> = (0..cfg.configurations)
        .map(|k| draw_case(cfg, k))
        .collect::<Result<_>>()?;
    let per_case: Vec<Vec<BlockCheck>> = cases
        .par_iter()
        .map(|c| check_case(cfg, c))
        .collect::<Result<_>>()?;
    let blocks: Vec<BlockCheck> = per_case.into_iter().flatten().collect();
    let compared: usize = blocks.iter().map(|b| b.elements).sum();
    let exceedances: usize = blocks.iter().map(|b| b.exceedances).sum();
    let max_abs_z = blocks.iter().fold(0.0f64, |m, b| m.max(b.max_abs_z));
    let normal = Normal::standard();
    let nominal = 2.0 * (1.0 - normal.cdf(cfg.sigmas));
    let allowed_exceedances = binomial_quantile(compared as u64, nominal, 0.999) as usize;
    let z_limit = normal.inverse_cdf(1.0 - 0.0005 / compared as f64);
    let passed = exceedances <= allowed_exceedances && max_abs_z <= z_limit;
    Ok(MomentsCheckReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        cases,
        blocks,
        compared,
        exceedances,
        allowed_exceedances,
        max_abs_z,
        z_limit,
        passed,
    })
}
