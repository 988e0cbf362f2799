//! Cascade events from `(0,0,0,x₄)`: buffer 4 drains while buffer 1 is
//! held (ending with everything in buffer 2), then buffer 2 drains while
//! buffer 3 is held (ending with everything in buffer 4).

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::{streams, try_replicate, ExperimentResult};
use crate::engine::{CapExceeded, SimState};
use crate::error::{Error, Result};
use crate::netmodel::{build_ksrs, QState};
use crate::policy::{derive_params, ln_psi_star, PolicyParams};
use crate::stats::{binomial_stderr, wilson_interval, Z95};

/// Acceptance windows for one starting level `x₄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CascadeEventSpec {
    pub epsilon: f64,
    pub x4: u64,
    /// `T₄ ∈ (1±ε)x₄/(μ₄−1)`.
    pub t4: (f64, f64),
    /// `Q₂(T₄) ∈ (1±ε)²x₄/(μ₄−1)`, all other buffers empty.
    pub q2_at_t4: (f64, f64),
    /// `T₂₄ − T₄ ∈ (1±ε)³x₄/((μ₄−1)(μ₂−1))`.
    pub t24_minus_t4: (f64, f64),
    /// `Q₄(T₂₄) ∈ (1±ε)⁴x₄/((μ₄−1)(μ₂−1))`, all other buffers empty.
    pub q4_at_t24: (f64, f64),
    /// Full-cycle time window `[γx₄/2, 2γx₄]`.
    pub cycle_time: (f64, f64),
    /// Full-cycle growth window for `Q₄(T)/T`: `[γ₂₄/(2γ), 2γ₂₄/γ]`.
    pub cycle_ratio: (f64, f64),
}

impl CascadeEventSpec {
    pub fn new(epsilon: f64, x4: u64, params: &PolicyParams) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.1) {
            return Err(Error::domain(format!("window epsilon must lie in (0, 1/10), got {epsilon}")));
        }
        if x4 == 0 {
            return Err(Error::domain("x4 must be positive"));
        }
        let x = x4 as f64;
        let d4 = params.mu - 1.0;
        let d2 = params.mu - 1.0;
        let w = |k: i32, scale: f64| ((1.0 - epsilon).powi(k) * scale, (1.0 + epsilon).powi(k) * scale);
        Ok(Self {
            epsilon,
            x4,
            t4: w(1, x / d4),
            q2_at_t4: w(2, x / d4),
            t24_minus_t4: w(3, x / (d4 * d2)),
            q4_at_t24: w(4, x / (d4 * d2)),
            cycle_time: (params.gamma * x / 2.0, 2.0 * params.gamma * x),
            cycle_ratio: (
                params.gamma24 / (2.0 * params.gamma),
                2.0 * params.gamma24 / params.gamma,
            ),
        })
    }
}

fn within(v: f64, w: (f64, f64)) -> bool {
    w.0 <= v && v <= w.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeStage {
    E4E1,
    Full,
}

/// Indicators for one replication. Window indicators are false when the
/// run was stopped early because a window could no longer be met.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CascadeOutcome {
    pub e4: bool,
    pub e1: bool,
    pub e42: bool,
    pub e13: bool,
    /// The full-cycle time and growth windows at `T = T₂₄`.
    pub cycle: bool,
    /// `Q(T₄) = (0,z,0,0)` with `z > 0`.
    pub state_t4: bool,
    /// `state_t4` and `Q(T₂₄) = (0,0,0,w)` with `w > 0`.
    pub state_full: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub delta: f64,
    pub x4: u64,
    pub epsilon: f64,
    pub reps: u64,
    pub seed: u64,
    pub stage: CascadeStage,
    /// Relaxed detector: emptiness patterns only, no early stopping.
    pub state_only: bool,
    /// Start here instead of `(0,0,0,x₄)`.
    pub start: Option<QState>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            x4: 40,
            epsilon: 0.09,
            reps: 1_000_000,
            seed: 1,
            stage: CascadeStage::E4E1,
            state_only: false,
            start: None,
        }
    }
}

fn only_buffer(q: &QState, b: usize) -> bool {
    (0..4).all(|i| (i == b) == (q.0[i] > 0))
}

fn cascade_run(
    sim: &mut SimState,
    spec: &CascadeEventSpec,
    stage: CascadeStage,
    state_only: bool,
) -> std::result::Result<CascadeOutcome, CapExceeded> {
    let mut out = CascadeOutcome::default();
    let t0 = sim.time();

    if sim.state().0[3] > 0 {
        let mut stopped = false;
        sim.step_until(|rec| {
            if rec.state_after.0[3] == 0 {
                return ControlFlow::Break(());
            }
            if !state_only && rec.t - t0 > spec.t4.1 {
                stopped = true;
                return ControlFlow::Break(());
            }
            ControlFlow::Continue(())
        })?;
        if stopped {
            return Ok(out);
        }
    }
    let t4 = sim.time() - t0;
    let q_t4 = sim.state();
    out.e4 = within(t4, spec.t4);
    out.e1 = only_buffer(&q_t4, 1) && within(q_t4.0[1] as f64, spec.q2_at_t4);
    out.state_t4 = only_buffer(&q_t4, 1);

    let continue_full = match stage {
        CascadeStage::E4E1 => false,
        CascadeStage::Full => {
            if state_only {
                out.state_t4
            } else {
                out.e4 && out.e1
            }
        }
    };
    if !continue_full {
        return Ok(out);
    }

    // T₂₄: first epoch after T₄ with buffer 2 empty
    if q_t4.0[1] > 0 {
        sim.run_until_next_hit(|q| q.0[1] == 0)?;
    }
    let t24 = sim.time() - t0;
    let q_t24 = sim.state();
    out.e42 = within(t24 - t4, spec.t24_minus_t4);
    out.e13 = only_buffer(&q_t24, 3) && within(q_t24.0[3] as f64, spec.q4_at_t24);
    out.cycle = only_buffer(&q_t24, 3)
        && within(t24, spec.cycle_time)
        && within(q_t24.0[3] as f64 / t24, spec.cycle_ratio);
    out.state_full = out.state_t4 && only_buffer(&q_t24, 3);
    Ok(out)
}

pub fn cascade_experiment(cfg: &CascadeConfig) -> Result<ExperimentResult> {
    let params = derive_params(cfg.delta)?;
    let spec = CascadeEventSpec::new(cfg.epsilon, cfg.x4, &params)?;
    if cfg.reps == 0 {
        return Err(Error::domain("reps must be positive"));
    }
    let net = build_ksrs(&params);
    let x0 = cfg.start.unwrap_or(QState::new(0, 0, 0, cfg.x4));
    let outcomes = try_replicate(cfg.seed, streams::CASCADE, cfg.reps, |_, rng| {
        let mut sim = SimState::with_rng(&net, &params, x0, rng)?;
        cascade_run(&mut sim, &spec, cfg.stage, cfg.state_only).map_err(Error::from)
    })?;

    let mut res = ExperimentResult::new("cascade", Some(&params), cfg, cfg.seed);
    super::regime_warning(&mut res, &params);
    res.replications = cfg.reps;
    if cfg.state_only {
        res.warn("state-only relaxation: window checks are not part of the detected event");
    }
    let mut report = |name: &str, pred: &dyn Fn(&CascadeOutcome) -> bool| {
        let k = outcomes.iter().filter(|o| pred(o)).count() as u64;
        let (lo, hi) = wilson_interval(k, cfg.reps, Z95);
        res.estimate(name, k as f64 / cfg.reps as f64, binomial_stderr(k, cfg.reps));
        res.exact(format!("{name}_count"), k as f64);
        res.exact(format!("{name}_ci_lo"), lo);
        res.exact(format!("{name}_ci_hi"), hi);
    };
    report("p_E4", &|o| o.e4);
    report("p_E4E1", &|o| o.e4 && o.e1);
    if cfg.state_only {
        report("p_state_T4", &|o| o.state_t4);
    }
    if cfg.stage == CascadeStage::Full {
        report("p_full", &|o| o.e4 && o.e1 && o.e42 && o.e13);
        report("p_E4E1_cycle", &|o| o.e4 && o.e1 && o.cycle);
        if cfg.state_only {
            report("p_state_full", &|o| o.state_full);
        }
    }
    res.exact(
        "hold_scale",
        (ln_psi_star(1.0, &params) - ln_psi_star(2.0 * params.gamma4 * cfg.x4 as f64, &params)).exp(),
    );
    res.exact(
        "full_cycle_scale",
        (-2.0 * ln_psi_star(4.0 * params.gamma24 * cfg.x4 as f64, &params)).exp(),
    );
    Ok(res)
}

/// Prop-level lower bound `αⁿ ∏_{m=1..n} Ψ*(β₂^{m+1})⁻²`, in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CascadeBound {
    pub n: u32,
    pub alpha: f64,
    /// Sum of per-factor log terms.
    pub ln_bound: f64,
    /// `n ln α − (ln β₁)²(n² + 4n)/2`, using `η ln β₂ = ln β₁`.
    pub ln_bound_closed: f64,
    /// `ln ∏ Ψ*(β₂^{m+1})²`.
    pub ln_product_sq: f64,
    /// `ln Ψ(β₁^{n+2})^{1/2}`.
    pub ln_telescoped_rhs: f64,
}

impl CascadeBound {
    pub fn bound(&self) -> f64 {
        self.ln_bound.exp()
    }

    pub fn telescoped_holds(&self) -> bool {
        self.ln_product_sq < self.ln_telescoped_rhs
    }
}

/// `ln Ψ*(s)` from `ln s`, valid where `s` itself would overflow.
fn ln_psi_star_of_ln(ln_s: f64, params: &PolicyParams) -> f64 {
    let l1 = params.beta1.ln();
    (l1 * l1 + 2.0 * params.eta * l1 * ln_s) / 4.0
}

pub fn cascade_bound(n: u32, alpha: f64, params: &PolicyParams) -> Result<CascadeBound> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let l1 = params.beta1.ln();
    let l2 = params.beta2.ln();
    let mut ln_product_sq = 0.0;
    for m in 1..=n {
        let ln_s = (m + 1) as f64 * l2;
        let s = ln_s.exp();
        let term = if s.is_finite() {
            ln_psi_star(s, params)
        } else {
            ln_psi_star_of_ln(ln_s, params)
        };
        ln_product_sq += 2.0 * term;
    }
    let nf = n as f64;
    Ok(CascadeBound {
        n,
        alpha,
        ln_bound: nf * alpha.ln() - ln_product_sq,
        ln_bound_closed: nf * alpha.ln() - l1 * l1 * (nf * nf + 4.0 * nf) / 2.0,
        ln_product_sq,
        ln_telescoped_rhs: 0.5 * ((nf + 2.0) * l1).powi(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::big_psi;

    fn p(delta: f64) -> PolicyParams {
        derive_params(delta).unwrap()
    }

    #[test]
    fn window_arithmetic() {
        let params = p(0.2);
        for eps in [0.01, 0.05, 0.09, 0.0999] {
            let spec = CascadeEventSpec::new(eps, 40, &params).unwrap();
            assert!(spec.q2_at_t4.1 < 2.0 * params.gamma4 * 40.0);
            assert!(spec.t4.0 < spec.t4.1);
        }
        assert!(CascadeEventSpec::new(0.1, 40, &params).is_err());
        assert!(CascadeEventSpec::new(0.0, 40, &params).is_err());
    }

    #[test]
    fn e1_means_only_buffer_two() {
        assert!(only_buffer(&QState::new(0, 5, 0, 0), 1));
        assert!(!only_buffer(&QState::new(0, 5, 1, 0), 1));
        assert!(!only_buffer(&QState::new(0, 0, 0, 0), 1));
    }

    #[test]
    fn e1_implies_state_pattern() {
        let params = p(0.2);
        let net = build_ksrs(&params);
        let spec = CascadeEventSpec::new(0.09, 10, &params).unwrap();
        let mut hits = 0;
        for seed in 0..3000 {
            let mut sim = SimState::init(&net, &params, QState::new(0, 0, 0, 10), seed, 0).unwrap();
            let o = cascade_run(&mut sim, &spec, CascadeStage::E4E1, false).unwrap();
            if o.e1 {
                hits += 1;
                let q = sim.state();
                assert!(q.0[0] == 0 && q.0[2] == 0 && q.0[3] == 0 && q.0[1] > 0);
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn bound_matches_direct_evaluation() {
        let params = p(0.1);
        for n in 1..=2u32 {
            let b = cascade_bound(n, 1.0, &params).unwrap();
            let mut direct = 1.0;
            for m in 1..=n {
                let s = params.beta2.powi(m as i32 + 1);
                let se = s.powf(params.eta);
                let star = (big_psi(params.beta1 * se) / big_psi(se)).powf(0.25);
                direct /= star * star;
            }
            assert!((b.bound() - direct).abs() / direct < 1e-10, "n={n}");
            assert!((b.ln_bound - b.ln_bound_closed).abs() < 1e-9 * b.ln_bound.abs());
        }
        let one = cascade_bound(1, 1.0, &params).unwrap();
        let l1 = params.beta1.ln();
        let l2 = params.beta2.ln();
        let expected = -(l1 * l1 + 4.0 * params.eta * l1 * l2) / 2.0;
        assert!((one.ln_bound - expected).abs() < 1e-10 * expected.abs());
    }

    #[test]
    fn bound_decreasing_and_telescoped() {
        let params = p(0.1);
        let mut prev = 0.0;
        for n in 1..=20 {
            let b = cascade_bound(n, 0.9, &params).unwrap();
            assert!(b.ln_bound < prev);
            assert!(b.telescoped_holds());
            prev = b.ln_bound;
        }
        assert!(cascade_bound(0, 1.0, &params).is_err());
        assert!(cascade_bound(1, 1.5, &params).is_err());
    }

    #[test]
    fn state_only_from_atom_positive() {
        let cfg = CascadeConfig {
            delta: 0.2,
            x4: 1,
            epsilon: 0.09,
            reps: 2000,
            seed: 4,
            stage: CascadeStage::Full,
            state_only: true,
            start: Some(QState::ATOM),
        };
        let res = cascade_experiment(&cfg).unwrap();
        assert!(res.get("p_state_full").unwrap() > 0.0);
        assert!(res.get("p_state_full").unwrap() <= res.get("p_state_T4").unwrap());
    }
}
