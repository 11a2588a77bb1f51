use nalgebra::DMatrix;

use super::ParamEstimate;
use crate::dataset::{DatasetKind, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};

/// Maximizer of the total-count likelihood, in closed form.
///
/// With `ΔI_d = I(t_{d+1}) - I(t_d)` over the `K = D-1` available
/// increments:
///
/// ```text
/// α - β = ΣΔI_d / (Δt ΣI_d)
/// α + β = [Σ ΔI_d²/I_d - (ΣΔI_d)²/ΣI_d] / (K Δt)
/// ```
pub fn estimate_alpha_beta(totals: &[f64], dt: f64) -> Result<ParamEstimate> {
    if totals.len() < 3 {
        return Err(invalid("at least three observations are required"));
    }
    if !(dt > 0.0) {
        return Err(invalid("observation interval must be positive"));
    }
    let k = totals.len() - 1;
    let mut sum_i = 0.0;
    let mut sum_di = 0.0;
    let mut sum_di2_over_i = 0.0;
    for d in 0..k {
        let i = totals[d];
        if !i.is_finite() || i <= 0.0 {
            return Err(Error::ZeroTotal { index: d });
        }
        let di = totals[d + 1] - i;
        sum_i += i;
        sum_di += di;
        sum_di2_over_i += di * di / i;
    }
    if !totals[k].is_finite() {
        return Err(Error::NonFinite("totals"));
    }
    let diff = sum_di / (dt * sum_i);
    let total = (sum_di2_over_i - sum_di * sum_di / sum_i) / (k as f64 * dt);
    let est = ParamEstimate::new(0.5 * (total + diff), 0.5 * (total - diff));
    if est.flagged {
        log::warn!(
            "beta estimate {} is not positive; ratio undefined",
            est.beta_hat
        );
    }
    Ok(est)
}

/// `I_i(t_d) ≈ ΔJ_i(t_d) / (α̂ Δt)`, elementwise.
pub fn convert_dj_to_i(ds: &TimeSeriesDataset, alpha_hat: f64) -> Result<TimeSeriesDataset> {
    if ds.kind != DatasetKind::NewCases {
        return Err(invalid("conversion needs a new-cases dataset"));
    }
    if !(alpha_hat > 0.0) {
        return Err(invalid(format!(
            "alpha estimate {alpha_hat} must be positive"
        )));
    }
    let scale = 1.0 / (alpha_hat * ds.delta_t);
    let values: DMatrix<f64> = &ds.values * scale;
    let mut out = TimeSeriesDataset::new(DatasetKind::InfectiousCounts, ds.delta_t, values)?;
    out.t0 = ds.t0;
    out.node_names = ds.node_names.clone();
    Ok(out)
}
