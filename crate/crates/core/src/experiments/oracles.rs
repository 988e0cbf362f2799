//! Plain M/M/1 and Poisson oracles that share no code with the policy engine.

use serde::{Deserialize, Serialize};

use super::{key, replicate, streams, ExperimentResult, Table};
use crate::error::{Error, Result};
use crate::policy::{derive_params, ln_psi_star, psi_seq};
use crate::rng::RngStream;
use crate::stats::{binomial_stderr, ols, wilson_interval, zero_count_upper, MeanVar, Z95};

/// Emptying time of an M/M/1 queue with unit arrival rate and service rate
/// `mu`, started with `n` jobs, together with the number of arrivals.
pub fn mm1_emptying_time(n: u64, mu: f64, rng: &mut RngStream) -> (f64, u64) {
    let total = 1.0 + mu;
    let mut q = n;
    let mut t = 0.0;
    let mut arrivals = 0;
    while q > 0 {
        t += rng.exponential(total);
        if rng.uniform() * total < 1.0 {
            q += 1;
            arrivals += 1;
        } else {
            q -= 1;
        }
    }
    (t, arrivals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mm1Config {
    pub n: u64,
    pub mu: f64,
    pub reps: u64,
    pub seed: u64,
    /// Half-width of the relative window around `n/(μ−1)`.
    pub epsilon: f64,
}

impl Default for Mm1Config {
    fn default() -> Self {
        Self {
            n: 50,
            mu: 1.1,
            reps: 10_000,
            seed: 1,
            epsilon: 0.1,
        }
    }
}

pub fn mm1_emptying_oracle(cfg: &Mm1Config) -> Result<ExperimentResult> {
    if !(cfg.mu > 1.0) || !cfg.mu.is_finite() {
        return Err(Error::domain(format!("mm1 requires mu > 1, got {}", cfg.mu)));
    }
    if cfg.reps == 0 {
        return Err(Error::domain("reps must be positive"));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::domain("epsilon must be positive"));
    }
    let mu = cfg.mu;
    let samples = replicate(cfg.seed, streams::MM1, cfg.reps, |_, mut rng| {
        mm1_emptying_time(cfg.n, mu, &mut rng).0
    });
    let mean_exact = cfg.n as f64 / (mu - 1.0);
    let var_exact = cfg.n as f64 * (mu + 1.0) / (mu - 1.0).powi(3);

    let acc: MeanVar = samples.iter().copied().collect();
    let in_window = samples
        .iter()
        .filter(|&&t| {
            let r = t / mean_exact;
            r > 1.0 - cfg.epsilon && r < 1.0 + cfg.epsilon
        })
        .count() as u64;

    let mut res = ExperimentResult::new("mm1", None, cfg, cfg.seed);
    res.replications = cfg.reps;
    res.estimate("mean", acc.mean(), acc.stderr());
    // stderr of the sample variance from the fourth central moment
    let m4 = samples.iter().map(|t| (t - acc.mean()).powi(4)).sum::<f64>() / cfg.reps as f64;
    let var_se = ((m4 - acc.var().powi(2)) / cfg.reps as f64).max(0.0).sqrt();
    res.estimate("variance", acc.var(), var_se);
    res.estimate(
        "window_frequency",
        in_window as f64 / cfg.reps as f64,
        binomial_stderr(in_window, cfg.reps),
    );
    res.exact("mean_exact", mean_exact);
    res.exact("variance_exact", var_exact);
    res.exact("relative_error_mean", (acc.mean() - mean_exact).abs() / mean_exact);
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdConfig {
    pub nu: f64,
    pub t_list: Vec<f64>,
    pub epsilon: f64,
    pub reps: u64,
    pub seed: u64,
}

impl Default for LdConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            t_list: vec![10.0, 20.0, 40.0, 80.0],
            epsilon: 0.5,
            reps: 100_000,
            seed: 1,
        }
    }
}

/// Number of points of a rate-`nu` Poisson process in `[0, t]`.
pub(crate) fn poisson_count(nu: f64, t: f64, rng: &mut RngStream) -> u64 {
    let mut s = rng.exponential(nu);
    let mut k = 0;
    while s <= t {
        k += 1;
        s += rng.exponential(nu);
    }
    k
}

/// Cramér rate `ν·h(x/ν)` of a relative deviation `x`, `h(u) = (1+u)ln(1+u) − u`.
fn cramer_rate(nu: f64, x: f64) -> f64 {
    let u = x / nu;
    if u <= -1.0 {
        return f64::INFINITY;
    }
    nu * ((1.0 + u) * u.ln_1p() - u)
}

pub fn poisson_ld_check(cfg: &LdConfig) -> Result<ExperimentResult> {
    if !(cfg.nu > 0.0) {
        return Err(Error::domain(format!("nu must be positive, got {}", cfg.nu)));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::domain(format!(
            "epsilon must be positive, got {} (epsilon = 0 makes every path a deviation)",
            cfg.epsilon
        )));
    }
    if cfg.t_list.is_empty() || cfg.t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::domain("t_list must be non-empty with positive times"));
    }
    if cfg.reps == 0 {
        return Err(Error::domain("reps must be positive"));
    }

    let mut res = ExperimentResult::new("ld", None, cfg, cfg.seed);
    res.replications = cfg.reps;
    let mut table = Table::new(["t", "deviations", "p_hat", "se", "ci_lo", "ci_hi"]);
    let mut fit_t = Vec::new();
    let mut fit_y = Vec::new();
    for (i, &t) in cfg.t_list.iter().enumerate() {
        let stream = super::rng_family(streams::LD, i as u64);
        let devs = replicate(cfg.seed, stream, cfg.reps, |_, mut rng| {
            let n = poisson_count(cfg.nu, t, &mut rng) as f64;
            ((n - cfg.nu * t).abs() > cfg.epsilon * t) as u64
        })
        .into_iter()
        .sum::<u64>();
        let p = devs as f64 / cfg.reps as f64;
        let (lo, hi) = if devs == 0 {
            res.warn(format!(
                "no deviations observed at t={t}; reporting one-sided 95% upper bound"
            ));
            (0.0, zero_count_upper(cfg.reps, 0.95))
        } else {
            wilson_interval(devs, cfg.reps, Z95)
        };
        if devs == 0 {
            res.exact(key("p_upper95", "t", t), hi);
        } else {
            res.estimate(key("p_hat", "t", t), p, binomial_stderr(devs, cfg.reps));
            fit_t.push(t);
            fit_y.push(-p.ln());
        }
        table.push([
            t.to_string(),
            devs.to_string(),
            p.to_string(),
            binomial_stderr(devs, cfg.reps).to_string(),
            lo.to_string(),
            hi.to_string(),
        ]);
    }
    if fit_t.len() >= 2 {
        let fit = ols(&fit_t, &fit_y);
        res.estimate("fitted_rate", fit.slope, fit.slope_stderr);
    } else {
        res.warn("fewer than two times with observed deviations; no rate fitted");
    }
    let lower = if cfg.epsilon < cfg.nu {
        cramer_rate(cfg.nu, -cfg.epsilon)
    } else {
        f64::INFINITY
    };
    res.exact("cramer_rate", lower.min(cramer_rate(cfg.nu, cfg.epsilon)));
    res.table("ld.csv", table);
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiConfig {
    pub delta: f64,
    pub k_max: u64,
}

impl Default for PsiConfig {
    fn default() -> Self {
        Self { delta: 0.1, k_max: 1000 }
    }
}

/// Tabulates `ψ(k)` and checks the running product `∏_{i<k} ψ(i)` against
/// the closed form `Ψ*(1)/Ψ*(k)`.
pub fn psi_check(cfg: &PsiConfig) -> Result<ExperimentResult> {
    let params = derive_params(cfg.delta)?;
    if cfg.k_max == 0 {
        return Err(Error::domain("k_max must be at least 1"));
    }
    let mut res = ExperimentResult::new("psi", Some(&params), cfg, 0);
    let mut table = Table::new(["k", "psi", "product", "closed_form", "rel_err"]);
    let ln_one = ln_psi_star(1.0, &params);
    let mut product = 1.0;
    let mut max_err: f64 = 0.0;
    for k in 1..=cfg.k_max {
        let closed = (ln_one - ln_psi_star(k as f64, &params)).exp();
        let err = (product - closed).abs() / closed;
        max_err = max_err.max(err);
        let psi = psi_seq(k, &params);
        table.push([k.to_string(), psi.to_string(), product.to_string(), closed.to_string(), err.to_string()]);
        product *= psi;
    }
    res.exact("max_rel_err", max_err);
    res.exact("hold_exponent", params.hold_exponent());
    res.table("psi.csv", table);
    Ok(res)
}
