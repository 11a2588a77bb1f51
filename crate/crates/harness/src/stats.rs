//! Small summary statistics shared by reports and acceptance checks.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

/// Sample mean and standard deviation (`n − 1` denominator). `None` for an
/// empty sample; the deviation is zero for a single value.
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

/// One-sided paired t statistic for `mean(a − b) > 0`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, sd) = mean_sd(&diffs);
    let (m, sd) = (m?, sd?);
    if sd == 0.0 {
        return Some(if m > 0.0 {
            f64::INFINITY
        } else if m < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        });
    }
    Some(m / (sd / (diffs.len() as f64).sqrt()))
}

/// Welch t statistic for `mean(a) > mean(b)` on independent samples.
pub fn welch_t(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let (ma, sa, mb, sb) = (ma?, sa?, mb?, sb?);
    let se = (sa * sa / a.len() as f64 + sb * sb / b.len() as f64).sqrt();
    if se == 0.0 {
        return Some(if ma > mb {
            f64::INFINITY
        } else if ma < mb {
            f64::NEG_INFINITY
        } else {
            0.0
        });
    }
    Some((ma - mb) / se)
}

/// One-sided p-value of a t statistic with `df` degrees of freedom, for the
/// alternative that the true mean difference is positive.
pub fn t_upper_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    1.0 - dist.cdf(t)
}

/// Welch–Satterthwaite degrees of freedom for two independent samples.
pub fn welch_df(a: &[f64], b: &[f64]) -> Option<f64> {
    let (_, sa) = mean_sd(a);
    let (_, sb) = mean_sd(b);
    let (va, vb) = (sa?.powi(2) / a.len() as f64, sb?.powi(2) / b.len() as f64);
    let num = (va + vb).powi(2);
    let den = va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0);
    (den > 0.0).then(|| num / den)
}

/// Smallest `k` with `P(X ≤ k) ≥ level` for `X ~ Binomial(trials, p)`.
pub fn binomial_quantile(trials: u64, p: f64, level: f64) -> u64 {
    let dist = Binomial::new(p, trials).expect("probability in [0, 1]");
    (0..=trials)
        .find(|&k| dist.cdf(k) >= level)
        .unwrap_or(trials)
}
