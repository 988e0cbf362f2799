//! The Ψ family, parameter derivation, and the randomized hold/flush
//! scheduling rules.
//!
//! All logarithms are natural. Ψ(s) = s^{ln s} grows so fast that every
//! quantity here is evaluated through its logarithm:
//!
//! ```text
//! ln Ψ(s)   = (ln s)²
//! ln Ψ*(s)  = ((ln β₁)² + 2 η ln β₁ ln s) / 4
//! ψ(n)      = Ψ*(n)/Ψ*(n+1) = (n/(n+1))^{η ln β₁ / 2}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::QState;

/// The scheduling parameter δ together with every constant derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub delta: f64,
    /// Common service rate of buffers 2 and 4.
    pub mu: f64,
    /// Common load of both servers.
    pub rho: f64,
    pub gamma2: f64,
    pub gamma4: f64,
    pub gamma24: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub c: f64,
    pub eta_condition_holds: bool,
    pub second_moment_holds: bool,
}

/// Which guarantees apply at a given δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// The summability condition on η holds.
    Certified,
    /// Hold counts have a finite second moment.
    SecondMoment,
    Exploratory,
}

impl PolicyParams {
    /// Exponent `η ln β₁ / 2` of the polynomial hold-survival law.
    pub fn hold_exponent(&self) -> f64 {
        0.5 * self.eta * self.beta1.ln()
    }

    pub fn regime(&self) -> Regime {
        if self.eta_condition_holds {
            Regime::Certified
        } else if self.second_moment_holds {
            Regime::SecondMoment
        } else {
            Regime::Exploratory
        }
    }
}

/// Derives all policy constants from δ, with `μ₂ = μ₄ = 1 + δ`.
pub fn derive_params(delta: f64) -> Result<PolicyParams> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    let mu = 1.0 + delta;
    let rho = 1.0 / mu;
    let beta1 = 1.0 / (4.0 * delta * delta);

    let mut violated = Vec::new();
    if !(beta1 > 1.0) {
        violated.push(format!("beta1 = {beta1} <= 1"));
    }
    if !(rho > 0.5) {
        violated.push(format!("rho = {rho} <= 1/2"));
    }
    if !violated.is_empty() {
        return Err(Error::domain(format!(
            "delta = {delta} outside (0, 1/2): {}",
            violated.join(", ")
        )));
    }

    // γ = ρ/(1-ρ) = 1/δ exactly; the closed form avoids cancellation in 1-ρ.
    let gamma2 = 1.0 / delta;
    let gamma4 = 1.0 / delta;
    let gamma24 = gamma2 * gamma4;
    let gamma = gamma4 + gamma24;
    let beta2 = 4.0 * gamma24;
    let eta = beta1.ln() / beta2.ln();

    let mut params = PolicyParams {
        delta,
        mu,
        rho,
        gamma2,
        gamma4,
        gamma24,
        gamma,
        beta1,
        beta2,
        eta,
        c: beta1,
        eta_condition_holds: false,
        second_moment_holds: eta * beta1.ln() > 4.0,
    };
    params.eta_condition_holds = check_eta_condition(&params);
    Ok(params)
}

/// `η > sqrt(12 / ln c)`.
pub fn check_eta_condition(params: &PolicyParams) -> bool {
    let lc = params.c.ln();
    lc > 0.0 && params.eta > (12.0 / lc).sqrt()
}

/// Ψ(s) = s^{ln s}, Ψ(0) = 0. Overflows to `inf` beyond s ≈ e^{26.6}.
pub fn big_psi(s: f64) -> f64 {
    debug_assert!(s >= 0.0, "big_psi needs s >= 0, got {s}");
    if s == 0.0 {
        0.0
    } else {
        let l = s.ln();
        (l * l).exp()
    }
}

/// `ln Ψ(s)` for `s > 0`.
pub fn ln_big_psi(s: f64) -> f64 {
    let l = s.ln();
    l * l
}

/// `ln Ψ*(s)` for `s ≥ 1`; no domain check.
#[inline]
pub fn ln_psi_star(s: f64, params: &PolicyParams) -> f64 {
    let lb = params.beta1.ln();
    (lb * lb + 2.0 * lb * params.eta * s.ln()) / 4.0
}

/// Ψ*(s) = (Ψ(β₁ s^η) / Ψ(s^η))^{1/4}.
pub fn psi_star(s: f64, params: &PolicyParams) -> Result<f64> {
    if !(s >= 1.0) {
        return Err(Error::domain(format!("psi_star needs s >= 1, got {s}")));
    }
    Ok(ln_psi_star(s, params).exp())
}

/// ψ(n) = Ψ*(n)/Ψ*(n+1), the probability of holding at the n-th queued
/// arrival.
///
/// # Panics
/// If `n == 0`.
#[inline]
pub fn psi_seq(n: u64, params: &PolicyParams) -> f64 {
    assert!(n >= 1, "psi_seq is defined for n >= 1");
    // ln(n/(n+1)) = -ln(1 + 1/n)
    (-params.hold_exponent() * (1.0 / n as f64).ln_1p()).exp()
}

/// `∏_{i=1..k} ψ(i) = Ψ*(1)/Ψ*(k+1)`; 1 for `k = 0`.
pub fn hold_survival(k: u64, params: &PolicyParams) -> f64 {
    if k == 0 {
        return 1.0;
    }
    (ln_psi_star(1.0, params) - ln_psi_star((k + 1) as f64, params)).exp()
}

/// Term `m² (Ψ(m^η)/Ψ(c m^η))^{1/4}` of the summability series.
pub fn summability_term(m: u64, params: &PolicyParams) -> f64 {
    let m = m as f64;
    let lc = params.c.ln();
    let ln_ratio = -(lc * lc + 2.0 * params.eta * lc * m.ln()) / 4.0;
    (2.0 * m.ln() + ln_ratio).exp()
}

/// Partial sums `S_M` for `M = 1..=m_max`.
pub fn summability_partial(params: &PolicyParams, m_max: u64) -> Vec<f64> {
    let mut sum = 0.0;
    (1..=m_max)
        .map(|m| {
            sum += summability_term(m, params);
            sum
        })
        .collect()
}

/// Which arrival stream fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arrival {
    Buffer1,
    Buffer3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyAction {
    /// No infinite-rate buffer is served; servers keep working on 2 and 4.
    ServeFinite,
    FlushBuffer1,
    FlushBuffer3,
    /// The randomized rule chose the partner buffer; the arrival stays queued.
    Hold,
}

/// Whether an arrival to `buffer` reaches the randomized rule. For buffer 1
/// this is `q₁>0 ∧ q₄>0 ∧ q₂=0` in the post-arrival state; buffer 3 mirrors it.
#[inline]
pub fn randomized_branch(buffer: Arrival, state: &QState) -> bool {
    let [q1, q2, q3, q4] = state.0;
    match buffer {
        Arrival::Buffer1 => q1 > 0 && q4 > 0 && q2 == 0,
        Arrival::Buffer3 => q3 > 0 && q2 > 0 && q4 == 0,
    }
}

/// Scheduling decision at an arrival epoch.
///
/// `state` already counts the arriving job. `u` is consumed only when
/// [`randomized_branch`] holds; otherwise the non-idling and priority rules
/// force a flush of the arrival's buffer.
pub fn decide_arrival(buffer: Arrival, state: &QState, u: f64, params: &PolicyParams) -> PolicyAction {
    let (m, flush) = match buffer {
        Arrival::Buffer1 => (state.0[0], PolicyAction::FlushBuffer1),
        Arrival::Buffer3 => (state.0[2], PolicyAction::FlushBuffer3),
    };
    if m == 0 {
        return PolicyAction::ServeFinite;
    }
    if randomized_branch(buffer, state) {
        if u < psi_seq(m, params) {
            PolicyAction::Hold
        } else {
            flush
        }
    } else {
        flush
    }
}

/// Result of [`flush_closure_counted`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Closure {
    pub state: QState,
    pub flushed1: u64,
    pub flushed3: u64,
    /// Both flush rules were enabled in the input state.
    pub both_enabled: bool,
}

/// Applies the flush rules (buffer 1 first, then buffer 3) until neither
/// applies, and reports how many jobs each rule moved.
pub fn flush_closure_counted(state: QState) -> Closure {
    let mut q = state.0;
    let rule1 = |q: &[u64; 4]| q[0] > 0 && (q[3] == 0 || q[1] > 0);
    let rule3 = |q: &[u64; 4]| q[2] > 0 && (q[1] == 0 || q[3] > 0);
    let both_enabled = rule1(&q) && rule3(&q);
    let (mut flushed1, mut flushed3) = (0, 0);
    loop {
        if rule1(&q) {
            flushed1 += q[0];
            q[1] += q[0];
            q[0] = 0;
        } else if rule3(&q) {
            flushed3 += q[2];
            q[3] += q[2];
            q[2] = 0;
        } else {
            break;
        }
    }
    Closure {
        state: QState(q),
        flushed1,
        flushed3,
        both_enabled,
    }
}

/// Stabilizes a state under the non-idling and priority flush rules.
pub fn flush_closure(state: QState) -> QState {
    flush_closure_counted(state).state
}
