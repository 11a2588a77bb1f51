use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ParamEstimate;
use crate::error::{invalid, Error, Result};
use crate::likelihood::loglik_j2;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JFitMethod {
    Anneal,
    QuasiNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JFitOptions {
    /// Random restarts for the quasi-Newton search.
    pub starts: usize,
    /// Iteration cap per quasi-Newton start.
    pub max_iter: usize,
    /// Gradient norm (log-parameter space) treated as converged.
    pub grad_tol: f64,
    pub anneal_steps: usize,
    /// Likelihood scale `k` for the annealing acceptance rule.
    pub anneal_k: f64,
}

impl Default for JFitOptions {
    fn default() -> Self {
        Self {
            starts: 20,
            max_iter: 400,
            grad_tol: 1e-5,
            anneal_steps: 60_000,
            anneal_k: 0.1,
        }
    }
}

/// Objective in `(ln α, ln β, ln I0)`.
struct Objective<'a> {
    totals: &'a [f64],
    dt: f64,
}

impl Objective<'_> {
    fn loglik(&self, x: &[f64; 3]) -> f64 {
        let [a, b, i0] = x.map(f64::exp);
        if !(a.is_finite() && b.is_finite() && i0.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match loglik_j2(self.totals, a, b, i0, self.dt) {
            Ok(ll) if ll.flagged.is_empty() && ll.value.is_finite() => ll.value,
            _ => f64::NEG_INFINITY,
        }
    }

    fn gradient(&self, x: &[f64; 3]) -> Option<[f64; 3]> {
        const H: f64 = 1e-5;
        let mut g = [0.0; 3];
        for k in 0..3 {
            let mut up = *x;
            let mut dn = *x;
            up[k] += H;
            dn[k] -= H;
            let (fu, fd) = (self.loglik(&up), self.loglik(&dn));
            if !(fu.is_finite() && fd.is_finite()) {
                return None;
            }
            g[k] = (fu - fd) / (2.0 * H);
        }
        Some(g)
    }
}

fn validate(totals: &[f64], dt: f64) -> Result<()> {
    if totals.len() < 4 {
        return Err(invalid(
            "at least four observations are required for three parameters",
        ));
    }
    if !(dt > 0.0) {
        return Err(invalid("observation interval must be positive"));
    }
    if totals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cumulative totals"));
    }
    if let Some(d) = totals.windows(2).position(|w| w[1] < w[0]) {
        return Err(invalid(format!(
            "cumulative totals decrease at observation {}",
            d + 1
        )));
    }
    if totals[totals.len() - 1] <= totals[0] {
        return Err(invalid("cumulative totals do not grow"));
    }
    Ok(())
}

/// Start point from the data: log-linear growth of the increments fixes
/// `α - β`, `β` is set equal to it, and `I0` is the first total when that
/// is positive.
fn data_start(totals: &[f64], dt: f64) -> [f64; 3] {
    let inc: Vec<(f64, f64)> = totals
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(d, w)| (d as f64 * dt, (w[1] - w[0]).ln()))
        .collect();
    let growth = if inc.len() >= 2 {
        let n = inc.len() as f64;
        let mx = inc.iter().map(|p| p.0).sum::<f64>() / n;
        let my = inc.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = inc.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = inc.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    let beta = growth.abs().clamp(0.01, 1.0);
    let alpha = beta + growth.max(0.0).max(0.001);
    [
        alpha.ln(),
        beta.ln(),
        first_increment_i0(totals, alpha, dt).ln(),
    ]
}

fn first_increment_i0(totals: &[f64], alpha: f64, dt: f64) -> f64 {
    if totals[0] >= 1.0 {
        return totals[0];
    }
    let k = (totals.len() - 1).min(3);
    let mean_inc = (totals[k] - totals[0]) / k as f64;
    (mean_inc / (alpha * dt)).max(1.0)
}

fn random_start(totals: &[f64], dt: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let lo = 0.01f64.ln();
    let hi = 1.0f64.ln();
    let a: f64 = rng.random_range(lo..hi);
    let b: f64 = rng.random_range(lo..hi);
    let jitter: f64 = rng.random_range(-1.0..1.0);
    [a, b, first_increment_i0(totals, a.exp(), dt).ln() + jitter]
}

struct Optimum {
    x: [f64; 3],
    f: f64,
    converged: bool,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// BFGS ascent with an inverse-Hessian update and Armijo backtracking.
fn bfgs(obj: &Objective, start: [f64; 3], opts: &JFitOptions) -> Optimum {
    let mut x = start;
    let mut fx = obj.loglik(&x);
    let Some(mut g) = (fx.is_finite()).then(|| obj.gradient(&x)).flatten() else {
        return Optimum {
            x,
            f: fx,
            converged: false,
        };
    };
    let mut h = [[0.0; 3]; 3];
    let reset = |h: &mut [[f64; 3]; 3]| {
        *h = [[0.0; 3]; 3];
        for (k, row) in h.iter_mut().enumerate() {
            row[k] = 1.0;
        }
    };
    reset(&mut h);
    for _ in 0..opts.max_iter {
        if g.iter().all(|v| v.abs() < opts.grad_tol) {
            return Optimum {
                x,
                f: fx,
                converged: true,
            };
        }
        // ascent direction p = H g
        let mut p = [0.0; 3];
        for r in 0..3 {
            p[r] = dot(&h[r], &g);
        }
        if dot(&p, &g) <= 0.0 {
            reset(&mut h);
            p = g;
        }
        let slope = dot(&p, &g);
        let mut t = 1.0;
        let (xn, fn_) = loop {
            let cand = [x[0] + t * p[0], x[1] + t * p[1], x[2] + t * p[2]];
            let fc = obj.loglik(&cand);
            if fc.is_finite() && fc >= fx + 1e-4 * t * slope {
                break (cand, fc);
            }
            t *= 0.5;
            if t < 1e-14 {
                return Optimum {
                    x,
                    f: fx,
                    converged: false,
                };
            }
        };
        let Some(gn) = obj.gradient(&xn) else {
            return Optimum {
                x: xn,
                f: fn_,
                converged: false,
            };
        };
        let s = [xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]];
        // descent-convention curvature pair for the maximization
        let y = [g[0] - gn[0], g[1] - gn[1], g[2] - gn[2]];
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            let mut hy = [0.0; 3];
            for r in 0..3 {
                hy[r] = dot(&h[r], &y);
            }
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for r in 0..3 {
                for c in 0..3 {
                    h[r][c] +=
                        (1.0 + yhy * rho) * rho * s[r] * s[c] - rho * (hy[r] * s[c] + s[r] * hy[c]);
                }
            }
        }
        let stalled = (fn_ - fx).abs() <= 1e-14 * fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if stalled {
            let converged = g.iter().all(|v| v.abs() < opts.grad_tol * 100.0);
            return Optimum {
                x,
                f: fx,
                converged,
            };
        }
    }
    let converged = g.iter().all(|v| v.abs() < opts.grad_tol);
    Optimum {
        x,
        f: fx,
        converged,
    }
}

/// Annealing in log-parameter space, one coordinate per step. Each
/// coordinate has its own Gaussian proposal width, adapted toward a 30%
/// acceptance rate; `T(s) = 1/ln(s+2)`.
fn anneal(obj: &Objective, start: [f64; 3], opts: &JFitOptions, rng: &mut ChaCha8Rng) -> Optimum {
    const WINDOW: usize = 50;
    let mut x = start;
    let mut fx = obj.loglik(&x);
    let mut best = (x, fx);
    let mut width = [0.1; 3];
    let mut accepted = [0usize; 3];
    for s in 0..opts.anneal_steps {
        let temp = 1.0 / ((s + 2) as f64).ln();
        let c = s % 3;
        let mut cand = x;
        let z: f64 = rng.sample(StandardNormal);
        cand[c] += width[c] * z;
        let fc = obj.loglik(&cand);
        let accept = if fc >= fx {
            true
        } else if fc.is_finite() {
            rng.random::<f64>() < ((fc - fx) / (opts.anneal_k * temp)).exp()
        } else {
            false
        };
        if accept {
            x = cand;
            fx = fc;
            accepted[c] += 1;
            if fx > best.1 {
                best = (x, fx);
            }
        }
        if (s / 3 + 1) % WINDOW == 0 && c == 2 {
            for k in 0..3 {
                let rate = accepted[k] as f64 / WINDOW as f64;
                width[k] = if rate > 0.3 {
                    width[k] * 1.5
                } else {
                    width[k] / 1.5
                }
                .clamp(1e-8, 2.0);
            }
            accepted = [0; 3];
        }
    }
    Optimum {
        x: best.0,
        f: best.1,
        converged: best.1.is_finite(),
    }
}

/// Maximizes `L^[J2]` over `(α, β, I0)` from node-summed cumulative cases.
pub fn estimate_from_j_totals(
    totals: &[f64],
    dt: f64,
    method: JFitMethod,
    seed: u64,
) -> Result<ParamEstimate> {
    estimate_from_j_totals_with(totals, dt, method, seed, &JFitOptions::default())
}

pub fn estimate_from_j_totals_with(
    totals: &[f64],
    dt: f64,
    method: JFitMethod,
    seed: u64,
    opts: &JFitOptions,
) -> Result<ParamEstimate> {
    validate(totals, dt)?;
    if !(opts.anneal_k > 0.0) {
        return Err(invalid(format!(
            "scale constant k={} must be positive",
            opts.anneal_k
        )));
    }
    let obj = Objective { totals, dt };
    let mut rng = rng::stream(seed, Stream::ParamFit);
    let start = data_start(totals, dt);
    let best = match method {
        JFitMethod::QuasiNewton => {
            let mut best = bfgs(&obj, start, opts);
            for _ in 1..opts.starts.max(1) {
                let s = random_start(totals, dt, &mut rng);
                let run = bfgs(&obj, s, opts);
                if run.f > best.f {
                    best = run;
                }
            }
            best
        }
        JFitMethod::Anneal => {
            // begin from the best of a few candidates so the chain starts in range
            let mut s0 = start;
            let mut f0 = obj.loglik(&s0);
            for _ in 0..opts.starts {
                let s = random_start(totals, dt, &mut rng);
                let f = obj.loglik(&s);
                if f > f0 {
                    s0 = s;
                    f0 = f;
                }
            }
            anneal(&obj, s0, opts, &mut rng)
        }
    };
    if !best.f.is_finite() {
        return Err(Error::NonFinite(
            "cumulative-case likelihood at every start",
        ));
    }
    let [a, b, i0] = best.x.map(f64::exp);
    let mut est = ParamEstimate::new(a, b);
    est.i0_hat = Some(i0);
    if !best.converged {
        log::warn!("cumulative-case fit stopped before converging; reporting best point found");
        est.flagged = true;
    }
    Ok(est)
}
