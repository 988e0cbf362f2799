//! Nested Monte-Carlo estimate of the Lyapunov function
//! `V_p(x) = E[Σ_{t=0}^{H(x)} ‖X(t)‖^p]`, `H(x) = ⌊‖x‖·T⌋`, over the
//! embedded chain, and of its one-step drift.
//!
//! With `y = X(1)`, `V_p(y)` sums the shifted path over `t = 1..=H(y)+1`, so
//! `PV_p(x) − V_p(x) + ‖x‖^p = E_x[Σ_{t=H(x)+1}^{H(y)+1} ‖X(t)‖^p]` (a
//! negative sum when `H(y)+1 < H(x)+1`). Both sides are estimated
//! independently.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{key, rng_family, streams, ExperimentResult, Table};
use crate::engine::SimState;
use crate::error::{Error, Result};
use crate::netmodel::{build_ksrs, NetworkSpec, QState};
use crate::policy::{derive_params, PolicyParams};
use crate::rng::RngStream;
use crate::stats::{ols, MeanVar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub delta: f64,
    /// Power of the norm, 1 or 2.
    pub p: u32,
    /// Embedded steps per unit of `‖x‖`; `None` means `4γ₄`.
    pub t_mult: Option<f64>,
    pub states: Vec<QState>,
    pub inner_reps: u64,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            p: 1,
            t_mult: None,
            states: [5, 10, 20, 40].map(|k| QState::new(0, 0, 0, k)).to_vec(),
            inner_reps: 1000,
            seed: 1,
        }
    }
}

struct Ctx<'a> {
    spec: &'a NetworkSpec,
    params: &'a PolicyParams,
    p: i32,
    t_mult: f64,
}

impl Ctx<'_> {
    fn horizon(&self, x: QState) -> u64 {
        (x.norm() as f64 * self.t_mult).floor() as u64
    }

    fn weight(&self, x: QState) -> f64 {
        (x.norm() as f64).powi(self.p)
    }

    /// Partial sums `F(h) = Σ_{t=0}^{h} ‖X(t)‖^p` for `h = 0..=steps`, and `X(1)`.
    fn path(&self, x: QState, steps: u64, rng: RngStream) -> Result<(Vec<f64>, QState)> {
        let mut sim = SimState::with_rng(self.spec, self.params, x, rng)?;
        let mut sums = Vec::with_capacity(steps as usize + 1);
        let mut acc = self.weight(sim.state());
        sums.push(acc);
        let mut first = sim.state();
        for t in 1..=steps {
            let rec = sim.next_event();
            if t == 1 {
                first = rec.state_after;
            }
            acc += self.weight(rec.state_after);
            sums.push(acc);
        }
        Ok((sums, first))
    }

    fn v_hat(&self, x: QState, seed: u64, stream: u64, reps: u64) -> Result<MeanVar> {
        let h = self.horizon(x);
        let mut acc = MeanVar::new();
        for rep in 0..reps {
            let (sums, _) = self.path(x, h, RngStream::replication(seed, stream, rep))?;
            acc.push(sums[h as usize]);
        }
        Ok(acc)
    }
}

struct StateEstimate {
    x: QState,
    v: MeanVar,
    boundary: MeanVar,
    pv: f64,
    pv_se: f64,
    successors: usize,
}

fn estimate_state(ctx: &Ctx, cfg: &DriftConfig, i: usize) -> Result<StateEstimate> {
    let x = cfg.states[i];
    let family = rng_family(streams::DRIFT, i as u64);
    let hx = ctx.horizon(x);

    // outer paths: V̂(x) and the boundary term on the same paths
    let mut v = MeanVar::new();
    let mut boundary = MeanVar::new();
    let outer = rng_family(family, 0);
    for rep in 0..cfg.inner_reps {
        let max_steps = hx + (ctx.t_mult.ceil() as u64 + 1) + 1;
        let (sums, y) = ctx.path(x, max_steps, RngStream::replication(cfg.seed, outer, rep))?;
        let hy = ctx.horizon(y) + 1;
        let fx = sums[hx as usize];
        let sums_len = sums.len() as u64;
        if hy >= sums_len {
            return Err(Error::domain("successor horizon exceeds the simulated path"));
        }
        v.push(fx);
        boundary.push(sums[hy as usize] - fx);
    }

    // successors from an independent stream, each distinct one estimated once
    let succ_stream = rng_family(family, 1);
    let mut counts: BTreeMap<QState, u64> = BTreeMap::new();
    for rep in 0..cfg.inner_reps {
        let (_, y) = ctx.path(x, 1, RngStream::replication(cfg.seed, succ_stream, rep))?;
        *counts.entry(y).or_default() += 1;
    }
    let n = cfg.inner_reps as f64;
    let mut pv = 0.0;
    let mut within = 0.0;
    let mut values = Vec::with_capacity(counts.len());
    for (j, (&y, &c)) in counts.iter().enumerate() {
        let vy = ctx.v_hat(y, cfg.seed, rng_family(family, 2 + j as u64), cfg.inner_reps)?;
        let w = c as f64 / n;
        pv += w * vy.mean();
        within += (w * vy.stderr()).powi(2);
        values.push((w, vy.mean()));
    }
    let between = values.iter().map(|(w, m)| w * (m - pv).powi(2)).sum::<f64>() / n;
    Ok(StateEstimate {
        x,
        v,
        boundary,
        pv,
        pv_se: (within + between).sqrt(),
        successors: counts.len(),
    })
}

pub fn drift_estimate(cfg: &DriftConfig) -> Result<ExperimentResult> {
    let params = derive_params(cfg.delta)?;
    if !(cfg.p == 1 || cfg.p == 2) {
        return Err(Error::domain(format!("p must be 1 or 2, got {}", cfg.p)));
    }
    if cfg.states.is_empty() || cfg.inner_reps < 2 {
        return Err(Error::domain("need at least one state and inner_reps >= 2"));
    }
    let t_mult = cfg.t_mult.unwrap_or(4.0 * params.gamma4);
    if !(t_mult >= 1.0) || !t_mult.is_finite() {
        return Err(Error::domain(format!("t_mult must be finite and >= 1, got {t_mult}")));
    }
    let spec = build_ksrs(&params);
    let ctx = Ctx {
        spec: &spec,
        params: &params,
        p: cfg.p as i32,
        t_mult,
    };
    let estimates = (0..cfg.states.len())
        .into_par_iter()
        .map(|i| estimate_state(&ctx, cfg, i))
        .collect::<Result<Vec<_>>>()?;

    let mut res = ExperimentResult::new("drift", Some(&params), cfg, cfg.seed);
    super::regime_warning(&mut res, &params);
    res.replications = cfg.inner_reps;
    res.exact("t_mult", t_mult);
    if cfg.inner_reps < 100 {
        res.warn(format!(
            "inner_reps = {} is too small for a stable nested estimate",
            cfg.inner_reps
        ));
    }
    let mut table = Table::new([
        "x1", "x2", "x3", "x4", "norm", "v_hat", "v_se", "pv_hat", "pv_se", "residual", "residual_se", "boundary", "boundary_se",
    ]);
    let mut fit_x = Vec::new();
    let mut fit_y = Vec::new();
    let mut max_z: f64 = 0.0;
    for e in &estimates {
        let norm = e.x.norm();
        let label = format!("{},{},{},{}", e.x.0[0], e.x.0[1], e.x.0[2], e.x.0[3]);
        let residual = e.pv - e.v.mean() + ctx.weight(e.x);
        let residual_se = (e.pv_se.powi(2) + e.v.stderr().powi(2)).sqrt();
        let combined = (residual_se.powi(2) + e.boundary.stderr().powi(2)).sqrt();
        let z = if combined > 0.0 {
            (residual - e.boundary.mean()).abs() / combined
        } else {
            0.0
        };
        max_z = max_z.max(z);
        res.estimate(key("v_hat", "x", &label), e.v.mean(), e.v.stderr());
        res.estimate(key("pv_hat", "x", &label), e.pv, e.pv_se);
        res.estimate(key("residual", "x", &label), residual, residual_se);
        res.estimate(key("boundary", "x", &label), e.boundary.mean(), e.boundary.stderr());
        res.exact(key("rearrangement_z", "x", &label), z);
        res.exact(key("successors", "x", &label), e.successors as f64);
        if e.v.mean() > 0.0 && e.v.stderr() / e.v.mean() > 0.1 {
            res.warn(format!(
                "relative stderr of v_hat at x=({label}) is {:.3}; increase inner_reps",
                e.v.stderr() / e.v.mean()
            ));
        }
        if norm > 0 && e.v.mean() > 0.0 {
            fit_x.push((norm as f64).ln());
            fit_y.push(e.v.mean().ln());
        }
        let [x1, x2, x3, x4] = e.x.0.map(|v| v.to_string());
        table.push([
            x1,
            x2,
            x3,
            x4,
            norm.to_string(),
            e.v.mean().to_string(),
            e.v.stderr().to_string(),
            e.pv.to_string(),
            e.pv_se.to_string(),
            residual.to_string(),
            residual_se.to_string(),
            e.boundary.mean().to_string(),
            e.boundary.stderr().to_string(),
        ]);
    }
    res.exact("max_rearrangement_z", max_z);
    if fit_x.len() >= 2 {
        let fit = ols(&fit_x, &fit_y);
        res.estimate("growth_exponent", fit.slope, fit.slope_stderr);
    } else {
        res.warn("fewer than two non-zero states; no growth exponent fitted");
    }
    res.table("drift.csv", table);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_has_zero_value() {
        let cfg = DriftConfig {
            states: vec![QState::new(0, 0, 0, 0)],
            inner_reps: 10,
            ..Default::default()
        };
        let res = drift_estimate(&cfg).unwrap();
        assert_eq!(res.get("v_hat[x=0,0,0,0]"), Some(0.0));
    }

    #[test]
    fn rejects_bad_power() {
        let cfg = DriftConfig {
            p: 3,
            ..Default::default()
        };
        assert!(matches!(drift_estimate(&cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn rearrangement_and_growth_small() {
        let cfg = DriftConfig {
            delta: 0.1,
            p: 1,
            t_mult: Some(10.0),
            states: [4, 8, 16].map(|k| QState::new(0, 0, 0, k)).to_vec(),
            inner_reps: 400,
            seed: 5,
        };
        let res = drift_estimate(&cfg).unwrap();
        assert!(res.get("max_rearrangement_z").unwrap() < 4.0, "{:?}", res.estimates);
        let g = res.get("growth_exponent").unwrap();
        assert!(g > 1.3 && g < 2.7, "{g}");
    }

    #[test]
    fn small_inner_reps_warns() {
        let cfg = DriftConfig {
            states: vec![QState::new(0, 0, 0, 3)],
            inner_reps: 20,
            ..Default::default()
        };
        let res = drift_estimate(&cfg).unwrap();
        assert!(res.warnings.iter().any(|w| w.contains("inner_reps")));
    }
}
