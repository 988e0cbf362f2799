//! Long-run occupation of `‖Q‖₁` from regeneration cycles through `x*`.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::{key, streams, ExperimentResult, Table};
use crate::engine::{CycleStats, CycleTracker, OccupationHistogram, SimState, INTEGER_BINS};
use crate::error::{Error, Result};
use crate::netmodel::{build_ksrs, QState};
use crate::policy::derive_params;
use crate::rng::RngStream;
use crate::stats::{lag1_autocorrelation, ratio_estimate, Z95};

/// `sup_{t≥s} ‖Q(t)‖₁/t` along one path for `s` on the grid `2^{j/k}`,
/// `j ≥ 0`. Over a finite run this is a lower bound of the
/// infinite-horizon supremum.
#[derive(Debug, Clone, Default)]
pub struct SupRatio {
    per_octave: f64,
    /// Best `n/t_a` over pieces starting at `t_a ∈ [s_j, s_{j+1})`.
    starts: Vec<f64>,
    /// Best `n/s_j` over pieces straddling `s_j`.
    inside: Vec<f64>,
    end: f64,
}

impl SupRatio {
    pub fn new(per_octave: u32) -> Self {
        Self {
            per_octave: per_octave as f64,
            ..Default::default()
        }
    }

    pub fn grid_point(&self, j: usize) -> f64 {
        (j as f64 / self.per_octave).exp2()
    }

    fn index_at_or_below(&self, t: f64) -> Option<usize> {
        if t < 1.0 {
            return None;
        }
        let mut j = (self.per_octave * t.log2()).floor() as usize;
        while self.grid_point(j) > t {
            j -= 1;
        }
        while self.grid_point(j + 1) <= t {
            j += 1;
        }
        Some(j)
    }

    fn slot(v: &mut Vec<f64>, j: usize) -> &mut f64 {
        if v.len() <= j {
            v.resize(j + 1, 0.0);
        }
        &mut v[j]
    }

    /// The path holds `norm` on `[a, b)`.
    pub fn observe(&mut self, a: f64, b: f64, norm: u64) {
        self.end = self.end.max(b);
        if norm == 0 || b <= a {
            return;
        }
        let n = norm as f64;
        let first_inside = match self.index_at_or_below(a) {
            Some(k) => {
                let s = Self::slot(&mut self.starts, k);
                *s = s.max(n / a);
                k + 1
            }
            None => 0,
        };
        let mut j = first_inside;
        loop {
            let s = self.grid_point(j);
            if s >= b {
                break;
            }
            if s > a {
                let v = Self::slot(&mut self.inside, j);
                *v = v.max(n / s);
            }
            j += 1;
        }
    }

    /// `(s, sup)` for every grid point up to the end of the observed path.
    pub fn values(&self) -> Vec<(f64, f64)> {
        let len = self.starts.len().max(self.inside.len());
        let mut out = vec![0.0; len];
        let mut suffix: f64 = 0.0;
        for j in (0..len).rev() {
            suffix = suffix.max(self.starts.get(j).copied().unwrap_or(0.0));
            out[j] = suffix.max(self.inside.get(j).copied().unwrap_or(0.0));
        }
        out.into_iter()
            .enumerate()
            .map(|(j, v)| (self.grid_point(j), v))
            .filter(|(s, _)| *s <= self.end)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailConfig {
    pub delta: f64,
    /// Events simulated after burn-in.
    pub total_events: u64,
    pub burn_in: u64,
    pub seed: u64,
    /// Grid density of the sup-ratio statistic.
    pub ratio_per_octave: u32,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            total_events: 10_000_000,
            burn_in: 0,
            seed: 1,
            ratio_per_octave: 4,
        }
    }
}

/// Per-level sums over cycles for the regenerative ccdf intervals.
#[derive(Debug, Default)]
struct LevelSums {
    y: Vec<f64>,
    yy: Vec<f64>,
    yt: Vec<f64>,
}

impl LevelSums {
    fn add(&mut self, idx: usize, y: f64, tau: f64) {
        if self.y.len() <= idx {
            self.y.resize(idx + 1, 0.0);
            self.yy.resize(idx + 1, 0.0);
            self.yt.resize(idx + 1, 0.0);
        }
        self.y[idx] += y;
        self.yy[idx] += y * y;
        self.yt[idx] += y * tau;
    }
}

#[derive(Debug, Default)]
struct CycleAccumulator {
    durations: Vec<f64>,
    integrals: Vec<[f64; 4]>,
    histogram: OccupationHistogram,
    integer: LevelSums,
    geometric: LevelSums,
    max_norm: u64,
}

impl CycleAccumulator {
    fn add(&mut self, c: &CycleStats) {
        let tau = c.duration;
        self.durations.push(tau);
        self.integrals.push(c.norm_integrals);
        self.histogram.merge(&c.occupation);
        self.max_norm = self.max_norm.max(c.sup_norm);
        let n_int = c.occupation.integer.len();
        for (i, (_, above)) in c.occupation.time_above().into_iter().enumerate() {
            if above == 0.0 {
                continue;
            }
            if i < n_int {
                self.integer.add(i, above, tau);
            } else {
                self.geometric.add(i - n_int, above, tau);
            }
        }
    }
}

pub fn tail_occupation(cfg: &TailConfig) -> Result<ExperimentResult> {
    let params = derive_params(cfg.delta)?;
    if cfg.total_events == 0 {
        return Err(Error::domain("total_events must be positive"));
    }
    if cfg.ratio_per_octave == 0 {
        return Err(Error::domain("ratio_per_octave must be positive"));
    }
    let spec = build_ksrs(&params);
    let mut sim = SimState::with_rng(&spec, &params, QState::ATOM, RngStream::new(cfg.seed, streams::TAIL))?;
    let mut ratio = SupRatio::new(cfg.ratio_per_octave);

    let mut last = (sim.time(), sim.state().norm());
    let mut track = |ratio: &mut SupRatio, t: f64, norm: u64| {
        ratio.observe(last.0, t, last.1);
        last = (t, norm);
    };

    sim.set_event_cap(u64::MAX);
    if cfg.burn_in > 0 {
        let mut n = 0;
        sim.step_until(|rec| {
            track(&mut ratio, rec.t, rec.state_after.norm());
            n += 1;
            if n >= cfg.burn_in {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
    }

    let mut tracker = CycleTracker::new(QState::ATOM, sim.time(), sim.state());
    let mut acc = CycleAccumulator::default();
    let mut n = 0;
    sim.step_until(|rec| {
        track(&mut ratio, rec.t, rec.state_after.norm());
        if let Some(c) = tracker.observe(rec) {
            acc.add(&c);
        }
        n += 1;
        if n >= cfg.total_events {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;

    let mut res = ExperimentResult::new("tail", Some(&params), cfg, cfg.seed);
    super::regime_warning(&mut res, &params);
    let cycles = acc.durations.len();
    res.replications = cycles as u64;
    res.exact("cycles", cycles as f64);
    res.exact("events", (cfg.burn_in + cfg.total_events) as f64);
    res.exact("t_end", sim.time());
    res.exact("max_norm_in_cycles", acc.max_norm as f64);
    if cycles < 100 {
        res.warn(format!(
            "insufficient cycles: only {cycles} completed regeneration cycles (< 100); all confidence intervals are unreliable"
        ));
    }
    if cycles == 0 {
        return Ok(res);
    }

    let total_time: f64 = acc.durations.iter().sum();
    res.exact("cycle_time", total_time);
    res.exact("occupation_weight_sum", acc.histogram.total() / total_time);
    res.exact("cycle_duration_lag1", lag1_autocorrelation(&acc.durations));

    for p in 0..4 {
        let y: Vec<f64> = acc.integrals.iter().map(|v| v[p]).collect();
        let est = ratio_estimate(&y, &acc.durations);
        res.estimate(key("moment", "p", p + 1), est.value, est.stderr);
    }

    // disjoint halves, by cycle index
    let half = cycles / 2;
    if half >= 2 {
        let mut max_z: f64 = 0.0;
        for p in 0..4 {
            let y: Vec<f64> = acc.integrals.iter().map(|v| v[p]).collect();
            let a = ratio_estimate(&y[..half], &acc.durations[..half]);
            let b = ratio_estimate(&y[half..], &acc.durations[half..]);
            let z = (a.value - b.value).abs() / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            res.estimate(key("moment_first_half", "p", p + 1), a.value, a.stderr);
            res.estimate(key("moment_second_half", "p", p + 1), b.value, b.stderr);
            res.exact(key("half_run_z", "p", p + 1), z);
            max_z = max_z.max(z);
        }
        res.exact("max_half_run_z", max_z);
    }

    let nf = cycles as f64;
    let tbar = total_time / nf;
    let tt: f64 = acc.durations.iter().map(|t| t * t).sum();
    let ci = |sums: &LevelSums, i: usize| {
        let r = sums.y[i] / total_time;
        let var = if cycles > 1 {
            ((sums.yy[i] - 2.0 * r * sums.yt[i] + r * r * tt) / (nf - 1.0)).max(0.0)
        } else {
            f64::NAN
        };
        let se = var.sqrt() / (tbar * nf.sqrt());
        (r, se)
    };
    let mut table = Table::new(["s", "p_hat", "ci_lo", "ci_hi"]);
    let push = |table: &mut Table, s: u64, (r, se): (f64, f64)| {
        table.push([
            s.to_string(),
            r.to_string(),
            (r - Z95 * se).max(0.0).to_string(),
            (r + Z95 * se).min(1.0).to_string(),
        ]);
    };
    for i in 0..acc.integer.y.len() {
        push(&mut table, i as u64, ci(&acc.integer, i));
    }
    for k in 0..acc.geometric.y.len() {
        let s = OccupationHistogram::geometric_lower(k) - 1;
        push(&mut table, s, ci(&acc.geometric, k));
    }
    // first level never exceeded
    let s_top = if acc.geometric.y.is_empty() {
        acc.integer.y.len() as u64
    } else {
        OccupationHistogram::geometric_lower(acc.geometric.y.len()) - 1
    };
    push(&mut table, s_top.max(acc.max_norm), (0.0, 0.0));
    for s in [1u64, 10, 100, 1000] {
        if (s as usize) < acc.integer.y.len() && s <= INTEGER_BINS {
            let (r, se) = ci(&acc.integer, s as usize);
            res.estimate(key("ccdf", "s", s), r, se);
        }
    }
    res.table("ccdf.csv", table);

    let mut ratios = Table::new(["s", "sup_ratio_lower_bound"]);
    for (s, v) in ratio.values() {
        ratios.push([s, v]);
    }
    res.table("sup_ratio.csv", ratios);
    Ok(res)
}
