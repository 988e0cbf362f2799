//! Draining from `(0,0,0,n)`: is `‖Q(τn)‖₁ ≤ εn` with `τ = 1/(μ₄−1)`?

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::{key, streams, try_replicate, ExperimentResult, Table};
use crate::engine::{CapExceeded, SimState};
use crate::error::{Error, Result};
use crate::netmodel::{build_ksrs, QState};
use crate::policy::derive_params;
use crate::stats::{binomial_stderr, MeanVar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrainConfig {
    pub delta: f64,
    pub n: u64,
    /// Acceptance thresholds; the first is reported in `drain.csv`.
    pub epsilons: Vec<f64>,
    pub reps: u64,
    pub seed: u64,
    /// Multiplier on `τ = 1/(μ₄−1)`.
    pub horizon_mult: f64,
}

impl Default for DrainConfig {
    fn default() -> Self {
        Self {
            delta: 0.02,
            n: 10_000,
            epsilons: vec![0.3],
            reps: 100,
            seed: 1,
            horizon_mult: 1.0,
        }
    }
}

/// Returns `(T₄, ‖Q(t_eval)‖₁)` for one run.
fn drain_run(sim: &mut SimState, t_eval: f64) -> std::result::Result<(f64, u64), CapExceeded> {
    let mut t4 = (sim.state().0[3] == 0).then_some(sim.time());
    let mut norm_at = (t_eval <= sim.time()).then(|| sim.state().norm());
    let mut held = sim.state().norm();
    if t4.is_none() || norm_at.is_none() {
        sim.step_until(|rec| {
            if norm_at.is_none() && rec.t >= t_eval {
                norm_at = Some(held);
            }
            held = rec.state_after.norm();
            if t4.is_none() && rec.state_after.0[3] == 0 {
                t4 = Some(rec.t);
            }
            if t4.is_some() && norm_at.is_some() {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
    }
    Ok((t4.unwrap_or(f64::NAN), norm_at.unwrap_or(held)))
}

pub fn drain_experiment(cfg: &DrainConfig) -> Result<ExperimentResult> {
    let params = derive_params(cfg.delta)?;
    if cfg.n == 0 || cfg.reps == 0 {
        return Err(Error::domain("n and reps must be positive"));
    }
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::domain("epsilons must be non-empty and positive"));
    }
    if !(cfg.horizon_mult > 0.0) {
        return Err(Error::domain("horizon_mult must be positive"));
    }
    let spec = build_ksrs(&params);
    let tau = cfg.horizon_mult / (params.mu - 1.0);
    let t_eval = tau * cfg.n as f64;
    let x0 = QState::new(0, 0, 0, cfg.n);

    let runs = try_replicate(cfg.seed, streams::DRAIN, cfg.reps, |_, rng| {
        let mut sim = SimState::with_rng(&spec, &params, x0, rng)?;
        drain_run(&mut sim, t_eval).map_err(Error::from)
    })?;

    let mut res = ExperimentResult::new("drain", Some(&params), cfg, cfg.seed);
    res.replications = cfg.reps;
    if !params.second_moment_holds {
        res.warn(format!(
            "second_moment_holds is false at delta={}; the draining guarantee is not established here",
            cfg.delta
        ));
    }
    for &eps in &cfg.epsilons {
        let ok = runs
            .iter()
            .filter(|(_, norm)| *norm as f64 <= eps * cfg.n as f64)
            .count() as u64;
        res.estimate(
            key("p_hat", "eps", eps),
            ok as f64 / cfg.reps as f64,
            binomial_stderr(ok, cfg.reps),
        );
    }
    let t4: MeanVar = runs.iter().map(|r| r.0).collect();
    let norms: MeanVar = runs.iter().map(|r| r.1 as f64 / cfg.n as f64).collect();
    res.estimate("mean_T4", t4.mean(), t4.stderr());
    res.estimate("mean_scaled_norm_at_tau_n", norms.mean(), norms.stderr());
    res.exact("tau", tau);
    res.exact("t_eval", t_eval);

    let eps = cfg.epsilons[0];
    let mut table = Table::new(["rep", "T4", "norm_at_tau_n", "accept"]);
    for (rep, (t4, norm)) in runs.iter().enumerate() {
        let accept = (*norm as f64 <= eps * cfg.n as f64) as u8;
        table.push([rep.to_string(), t4.to_string(), norm.to_string(), accept.to_string()]);
    }
    res.table("drain.csv", table);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_at_time_zero_is_initial() {
        let params = derive_params(0.1).unwrap();
        let mut sim = SimState::init(&build_ksrs(&params), &params, QState::new(0, 0, 0, 30), 1, 0).unwrap();
        let (t4, norm) = drain_run(&mut sim, 0.0).unwrap();
        assert_eq!(norm, 30);
        assert!(t4 > 0.0);
    }

    #[test]
    fn acceptance_nested_in_epsilon() {
        let cfg = DrainConfig {
            delta: 0.05,
            n: 200,
            epsilons: vec![0.1, 0.2, 0.4, 0.8],
            reps: 60,
            seed: 3,
            horizon_mult: 1.0,
        };
        let res = drain_experiment(&cfg).unwrap();
        let p: Vec<f64> = cfg
            .epsilons
            .iter()
            .map(|e| res.get(&key("p_hat", "eps", e)).unwrap())
            .collect();
        assert!(p.windows(2).all(|w| w[0] <= w[1]), "{p:?}");
        assert_eq!(res.tables["drain.csv"].rows.len(), 60);
    }

    #[test]
    fn pathwise_bound_accepts_everything() {
        // ‖Q(t)‖ ≤ n + A(t); with ε large enough every run is accepted
        let cfg = DrainConfig {
            delta: 0.1,
            n: 20,
            epsilons: vec![100.0],
            reps: 20,
            seed: 1,
            horizon_mult: 1.0,
        };
        let res = drain_experiment(&cfg).unwrap();
        assert_eq!(res.get("p_hat[eps=100]"), Some(1.0));
    }
}
