//! Error metrics and the baseline topology estimators.

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};
use crate::netgen::{pairs, NeighborMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub e_r: Option<f64>,
    pub e_l: f64,
    /// Pairs `(i, j)`, `i < j`, whose link state was estimated wrongly.
    pub mismatches: Vec<(usize, usize)>,
}

impl ErrorReport {
    /// Scores an estimate. `e_r` is absent when the estimated ratio is
    /// undefined (`β̂ ≤ 0`).
    pub fn score(
        l_hat: &NeighborMatrix,
        l_true: &NeighborMatrix,
        rates_hat: (f64, f64),
        rates_true: (f64, f64),
    ) -> Result<Self> {
        let mismatches = mismatched_pairs(l_hat, l_true)?;
        let e_l = mismatches.len() as f64 / l_true.pair_count() as f64;
        let e_r = if rates_hat.1 > 0.0 {
            Some(error_r(
                rates_hat.0,
                rates_hat.1,
                rates_true.0,
                rates_true.1,
            )?)
        } else {
            None
        };
        Ok(Self {
            e_r,
            e_l,
            mismatches,
        })
    }
}

/// `|α̂/β̂ − α/β| / (α/β)`.
pub fn error_r(alpha_hat: f64, beta_hat: f64, alpha_true: f64, beta_true: f64) -> Result<f64> {
    if !(beta_hat > 0.0 && beta_true > 0.0) {
        return Err(invalid(
            "recovery rates must be positive for the ratio error",
        ));
    }
    let r = alpha_true / beta_true;
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid(format!(
            "true ratio {r} must be positive and finite"
        )));
    }
    Ok((alpha_hat / beta_hat - r).abs() / r)
}

fn mismatched_pairs(a: &NeighborMatrix, b: &NeighborMatrix) -> Result<Vec<(usize, usize)>> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: b.n(),
            got: a.n(),
        });
    }
    if b.n() < 2 {
        return Err(invalid("topologies need at least two nodes"));
    }
    Ok(pairs(a.n())
        .filter(|&(i, j)| a.get(i, j) != b.get(i, j))
        .collect())
}

/// Fraction of unordered pairs whose link state differs.
pub fn error_l(l_hat: &NeighborMatrix, l_true: &NeighborMatrix) -> Result<f64> {
    let m = mismatched_pairs(l_hat, l_true)?;
    Ok(m.len() as f64 / l_true.pair_count() as f64)
}

/// Covariance-style score `ρ_ij` of the increments after removing the
/// cross-node mean at each time step. Symmetric, zero diagonal.
pub fn increment_correlations(ds: &TimeSeriesDataset) -> Result<Vec<Vec<f64>>> {
    if ds.kind != DatasetKind::InfectiousCounts {
        return Err(invalid(
            "correlation baseline needs an infectious-count dataset",
        ));
    }
    if ds.d() < 3 {
        return Err(invalid("at least three observations are required"));
    }
    let n = ds.n();
    let mut rho = vec![vec![0.0; n]; n];
    let mut centred = vec![0.0; n];
    for d in 0..ds.d() - 1 {
        for (i, c) in centred.iter_mut().enumerate() {
            *c = ds.values[(d + 1, i)] - ds.values[(d, i)];
        }
        let mean = centred.iter().sum::<f64>() / n as f64;
        centred.iter_mut().for_each(|c| *c -= mean);
        for (i, j) in pairs(n) {
            rho[i][j] += centred[i] * centred[j];
        }
    }
    for (i, j) in pairs(n) {
        rho[j][i] = rho[i][j];
    }
    Ok(rho)
}

/// Predicts a link wherever the centred increments are strictly
/// anti-correlated.
pub fn naive_correlation_estimate(ds: &TimeSeriesDataset) -> Result<NeighborMatrix> {
    let rho = increment_correlations(ds)?;
    let n = ds.n();
    let mut l = NeighborMatrix::empty(n);
    for (i, j) in pairs(n) {
        l.set(i, j, rho[i][j] < 0.0);
    }
    Ok(l)
}

/// Mean and standard deviation of `E_l` for a uniformly random guess:
/// each of the `n(n−1)/2` pairs is wrong with probability one half.
pub fn random_guess_stats(n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(invalid("random-guess statistics need n ≥ 2"));
    }
    let m = (n * (n - 1) / 2) as f64;
    Ok((0.5, 0.5 / m.sqrt()))
}

/// A topology with every pair present independently with probability ½.
pub fn random_guess<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> NeighborMatrix {
    let mut l = NeighborMatrix::empty(n);
    for (i, j) in pairs(n) {
        l.set(i, j, rng.random_bool(0.5));
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arb_pair() -> impl Strategy<Value = (NeighborMatrix, NeighborMatrix, NeighborMatrix)> {
        (2usize..9).prop_flat_map(|n| {
            let m = n * (n - 1) / 2;
            let bits = proptest::collection::vec(any::<bool>(), m);
            (bits.clone(), bits.clone(), bits).prop_map(move |(a, b, c)| {
                let build = |v: Vec<bool>| {
                    let mut l = NeighborMatrix::empty(n);
                    for ((i, j), on) in pairs(n).zip(v) {
                        l.set(i, j, on);
                    }
                    l
                };
                (build(a), build(b), build(c))
            })
        })
    }

    #[test]
    fn ratio_error_examples() {
        assert_eq!(error_r(0.067, 0.033, 0.067, 0.033).unwrap(), 0.0);
        let e = error_r(1.4, 1.0, 2.7, 1.0).unwrap();
        assert!((e - 0.4815).abs() < 5e-5);
        assert!(error_r(1.0, 0.0, 2.0, 1.0).is_err());
        assert!(error_r(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn link_error_examples() {
        let l = NeighborMatrix::from_edges(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        assert_eq!(error_l(&l, &l).unwrap(), 0.0);
        assert_eq!(error_l(&l.complement(), &l).unwrap(), 1.0);
        assert!(error_l(&NeighborMatrix::empty(4), &l).is_err());
        // eight wrong pairs out of forty-five
        let truth = NeighborMatrix::empty(10);
        let est = NeighborMatrix::from_edges(
            10,
            &[
                (0, 1),
                (0, 2),
                (0, 3),
                (0, 4),
                (0, 5),
                (0, 6),
                (0, 7),
                (0, 8),
            ],
        )
        .unwrap();
        assert!((error_l(&est, &truth).unwrap() - 0.18).abs() < 0.005);
    }

    #[test]
    fn report_counts_mismatches() {
        let truth = NeighborMatrix::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let est = NeighborMatrix::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        let rep = ErrorReport::score(&est, &truth, (0.1, 0.05), (0.067, 0.033)).unwrap();
        assert_eq!(rep.mismatches, vec![(1, 2), (2, 3)]);
        assert_eq!(rep.e_l, 2.0 / 6.0);
        assert!(rep.e_r.is_some());
        let flat = ErrorReport::score(&est, &truth, (0.1, -0.01), (0.067, 0.033)).unwrap();
        assert!(flat.e_r.is_none());
    }

    #[test]
    fn random_guess_examples() {
        let (m, sd) = random_guess_stats(10).unwrap();
        assert_eq!(m, 0.5);
        assert!((sd - 0.0745).abs() < 5e-5);
        // 190 pairs at n = 20
        assert!((random_guess_stats(20).unwrap().1 - 0.03627).abs() < 5e-5);
        assert_eq!(random_guess_stats(2).unwrap(), (0.5, 0.5));
        assert!(random_guess_stats(1).is_err());
    }

    #[test]
    fn random_guess_matches_theory_empirically() {
        let n = 10;
        let truth =
            NeighborMatrix::from_edges(n, &[(0, 1), (1, 2), (2, 3), (4, 5), (6, 7)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 10_000;
        let errs: Vec<f64> = (0..draws)
            .map(|_| error_l(&random_guess(n, &mut rng), &truth).unwrap())
            .collect();
        let mean = errs.iter().sum::<f64>() / draws as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let (m0, sd0) = random_guess_stats(n).unwrap();
        let se_mean = sd0 / (draws as f64).sqrt();
        assert!((mean - m0).abs() < 3.0 * se_mean, "{mean}");
        // standard error of a sample variance for near-normal data
        let se_var = sd0 * sd0 * (2.0 / (draws - 1) as f64).sqrt();
        assert!((var - sd0 * sd0).abs() < 3.0 * se_var, "{var}");
    }

    #[test]
    fn anti_correlated_pair_is_linked() {
        // node 0 loses exactly what node 1 gains, node 2 grows steadily
        let rows: Vec<f64> = (0..6)
            .flat_map(|d| {
                let s = if d % 2 == 0 { 5.0 } else { -5.0 };
                [100.0 + s, 100.0 - s, 100.0 + 3.0 * d as f64]
            })
            .collect();
        let ds = TimeSeriesDataset::new(
            DatasetKind::InfectiousCounts,
            1.0,
            DMatrix::from_row_slice(6, 3, &rows),
        )
        .unwrap();
        let rho = increment_correlations(&ds).unwrap();
        assert!(rho[0][1] < 0.0);
        assert!(naive_correlation_estimate(&ds).unwrap().get(0, 1));
    }

    #[test]
    fn exact_zero_correlation_predicts_absence() {
        let ds = TimeSeriesDataset::new(
            DatasetKind::InfectiousCounts,
            1.0,
            DMatrix::from_element(4, 3, 7.0),
        )
        .unwrap();
        assert_eq!(naive_correlation_estimate(&ds).unwrap().link_count(), 0);
        let short = TimeSeriesDataset::new(
            DatasetKind::InfectiousCounts,
            1.0,
            DMatrix::from_element(2, 3, 7.0),
        )
        .unwrap();
        assert!(naive_correlation_estimate(&short).is_err());
    }

    #[test]
    fn iid_noise_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10;
        let mut total = 0.0;
        let reps = 200;
        for _ in 0..reps {
            let v = DMatrix::from_fn(50, n, |_, _| rand::Rng::random_range(&mut rng, 0.0..100.0));
            let ds = TimeSeriesDataset::new(DatasetKind::InfectiousCounts, 1.0, v).unwrap();
            let truth = random_guess(n, &mut rng);
            total += error_l(&naive_correlation_estimate(&ds).unwrap(), &truth).unwrap();
        }
        let mean = total / reps as f64;
        let se = random_guess_stats(n).unwrap().1 / (reps as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "{mean}");
    }

    proptest! {
        #[test]
        fn link_error_is_a_metric((a, b, c) in arb_pair()) {
            let m = a.pair_count() as f64;
            let dab = error_l(&a, &b).unwrap();
            prop_assert_eq!(dab, error_l(&b, &a).unwrap());
            prop_assert_eq!(error_l(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(dab == 0.0, a == b);
            // compare integer counts so the triangle inequality is exact
            let cnt = |x: &NeighborMatrix, y: &NeighborMatrix| (error_l(x, y).unwrap() * m).round() as usize;
            prop_assert!(cnt(&a, &c) <= cnt(&a, &b) + cnt(&b, &c));
            prop_assert!((0.0..=1.0).contains(&dab));
        }

        #[test]
        fn ratio_error_is_scale_invariant(a in 0.01f64..1.0, b in 0.01f64..1.0, c in 0.01f64..100.0) {
            let e1 = error_r(a, b, 0.067, 0.033).unwrap();
            let e2 = error_r(c * a, c * b, 0.067, 0.033).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
        }

        #[test]
        fn naive_estimate_ignores_common_shift(
            vals in proptest::collection::vec(0i32..500, 4 * 6),
            shifts in proptest::collection::vec(-200i32..200, 6),
        ) {
            // integer-valued data keeps the node-mean subtraction exact
            let v = DMatrix::from_row_slice(6, 4, &vals.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let w = DMatrix::from_fn(6, 4, |d, i| v[(d, i)] + shifts[d] as f64);
            let a = TimeSeriesDataset::new(DatasetKind::InfectiousCounts, 1.0, v).unwrap();
            let b = TimeSeriesDataset::new(DatasetKind::InfectiousCounts, 1.0, w).unwrap();
            prop_assert_eq!(naive_correlation_estimate(&a).unwrap(), naive_correlation_estimate(&b).unwrap());
        }
    }
}
