//! The hold event `H`: buffer 1 is never flushed while buffer 4 drains from
//! `(0,0,0,x₄)`.
//!
//! Two estimators of `P(H)` are compared. The policy path runs the full
//! engine. The oracle runs a plain M/M/1 for buffer 4 to get `T₄`, counts
//! the independent unit-rate arrivals to buffer 1 in `[0, T₄)`, and
//! averages the probability that all of them were held.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::oracles::{mm1_emptying_time, poisson_count};
use super::{key, rng_family, streams, replicate, try_replicate, ExperimentResult, Table};
use crate::engine::{CapExceeded, SimState};
use crate::error::{Error, Result};
use crate::netmodel::{build_ksrs, QState};
use crate::policy::{derive_params, hold_survival, ln_psi_star, PolicyParams};
use crate::rng::RngStream;
use crate::stats::{binomial_stderr, ols, MeanVar};

/// Runs the engine until `T₄`; true if buffer 1 was never flushed before it.
/// The run stops as soon as the outcome is known.
pub fn hold_policy_sample(sim: &mut SimState) -> std::result::Result<bool, CapExceeded> {
    if sim.state().0[3] == 0 {
        return Ok(true);
    }
    let mut held = true;
    sim.step_until(|rec| {
        if rec.state_after.0[3] == 0 {
            // the flush at T₄ itself is the closure, not a broken hold
            return ControlFlow::Break(());
        }
        if rec.flushed1 > 0 {
            held = false;
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    Ok(held)
}

/// One oracle draw of `P(H | A₁(T₄))`.
pub fn hold_oracle_sample(x4: u64, params: &PolicyParams, rng: &mut RngStream) -> f64 {
    let (t4, _) = mm1_emptying_time(x4, params.mu, rng);
    let arrivals = poisson_count(1.0, t4, rng);
    hold_survival(arrivals, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldConfig {
    pub delta: f64,
    pub x4_list: Vec<u64>,
    pub reps: u64,
    pub seed: u64,
}

impl Default for HoldConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            x4_list: vec![10, 20, 40, 80],
            reps: 100_000,
            seed: 1,
        }
    }
}

pub fn hold_event_experiment(cfg: &HoldConfig) -> Result<ExperimentResult> {
    let params = derive_params(cfg.delta)?;
    if cfg.x4_list.is_empty() || cfg.x4_list.contains(&0) || cfg.reps == 0 {
        return Err(Error::domain("x4 values must be >= 1 and reps positive"));
    }
    let spec = build_ksrs(&params);
    let mut res = ExperimentResult::new("holds", Some(&params), cfg, cfg.seed);
    super::regime_warning(&mut res, &params);
    res.replications = cfg.reps * cfg.x4_list.len() as u64;

    let mut table = Table::new(["x4", "p_hat_policy", "p_hat_oracle", "se"]);
    let mut reg_x = Vec::new();
    let mut reg_y = Vec::new();
    let mut max_z: f64 = 0.0;
    for (i, &x4) in cfg.x4_list.iter().enumerate() {
        let x0 = QState::new(0, 0, 0, x4);
        let held = try_replicate(cfg.seed, rng_family(streams::HOLD_POLICY, i as u64), cfg.reps, |_, rng| {
            let mut sim = SimState::with_rng(&spec, &params, x0, rng)?;
            hold_policy_sample(&mut sim).map_err(Error::from)
        })?;
        let k = held.iter().filter(|h| **h).count() as u64;
        let p_policy = k as f64 / cfg.reps as f64;
        let se_policy = binomial_stderr(k, cfg.reps);

        let oracle: MeanVar = replicate(cfg.seed, rng_family(streams::HOLD_ORACLE, i as u64), cfg.reps, |_, mut rng| {
            hold_oracle_sample(x4, &params, &mut rng)
        })
        .into_iter()
        .collect();
        let p_oracle = oracle.mean();
        let se = (se_policy.powi(2) + oracle.stderr().powi(2)).sqrt();
        let z = (p_policy - p_oracle).abs() / se;
        max_z = max_z.max(z);

        res.estimate(key("p_policy", "x4", x4), p_policy, se_policy);
        res.estimate(key("p_oracle", "x4", x4), p_oracle, oracle.stderr());
        res.exact(key("z", "x4", x4), z);
        table.push([x4 as f64, p_policy, p_oracle, se]);

        let abscissa = ln_psi_star(params.gamma4 * x4 as f64, &params) - ln_psi_star(1.0, &params);
        res.exact(key("ln_psi_star_ratio", "x4", x4), abscissa);
        if k > 0 {
            reg_x.push(abscissa);
            reg_y.push(-p_policy.ln());
        }
    }
    res.exact("max_z", max_z);
    if reg_x.len() >= 2 {
        let fit = ols(&reg_x, &reg_y);
        res.estimate("slope", fit.slope, fit.slope_stderr);
        res.exact("intercept", fit.intercept);
    } else {
        res.warn("fewer than two x4 values with observed holds; no slope fitted");
    }
    res.table("holds.csv", table);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_buffer4_holds_trivially() {
        let params = derive_params(0.2).unwrap();
        let mut sim = SimState::init(&build_ksrs(&params), &params, QState::new(0, 3, 0, 0), 1, 0).unwrap();
        assert!(hold_policy_sample(&mut sim).unwrap());
    }

    #[test]
    fn no_arrivals_means_certain_hold() {
        let params = derive_params(0.2).unwrap();
        assert_eq!(hold_survival(0, &params), 1.0);
    }

    #[test]
    fn estimators_agree_small_case() {
        let cfg = HoldConfig {
            delta: 0.2,
            x4_list: vec![2, 8],
            reps: 20_000,
            seed: 11,
        };
        let res = hold_event_experiment(&cfg).unwrap();
        assert!(res.get("max_z").unwrap() < 4.0, "{:?}", res.estimates);
        let p2 = res.get("p_policy[x4=2]").unwrap();
        let p8 = res.get("p_policy[x4=8]").unwrap();
        assert!(p8 < p2);
    }
}
