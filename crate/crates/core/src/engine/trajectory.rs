use std::io::Write;

use serde::Serialize;

use super::{EventRecord, SimState};
use crate::error::{Error, Result};
use crate::netmodel::QState;

/// How much of a run to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOptions {
    /// Keep every event until this many have been logged; beyond it the log
    /// is replaced by a regular time grid.
    pub full_limit: usize,
    /// Number of grid intervals over the horizon once thinned.
    pub grid_points: usize,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            full_limit: 1_000_000,
            grid_points: 100_000,
        }
    }
}

/// State of the network at a grid time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSample {
    pub t: f64,
    pub q: QState,
    pub busy: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub events: u64,
    /// Counts of Arr1, Arr3, Svc2, Svc4.
    pub counts: [u64; 4],
    pub t_end: f64,
    pub final_state: QState,
    pub busy: [f64; 2],
    pub max_norm: u64,
}

/// Event log of a run, either complete or thinned to a time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: QState,
    pub t0: f64,
    pub busy0: [f64; 2],
    pub horizon: f64,
    pub records: Vec<EventRecord>,
    pub samples: Vec<GridSample>,
    pub thinned: bool,
    pub summary: TrajectorySummary,
    opts: RecordOptions,
    last: GridSample,
    next_grid: usize,
}

impl Trajectory {
    pub(super) fn start(sim: &SimState, horizon: f64, opts: RecordOptions) -> Self {
        let last = GridSample {
            t: sim.t,
            q: sim.q,
            busy: sim.busy,
        };
        Self {
            initial: sim.q,
            t0: sim.t,
            busy0: sim.busy,
            horizon: horizon.max(sim.t),
            records: Vec::new(),
            samples: Vec::new(),
            thinned: false,
            summary: TrajectorySummary {
                events: 0,
                counts: [0; 4],
                t_end: sim.t,
                final_state: sim.q,
                busy: sim.busy,
                max_norm: sim.q.norm(),
            },
            opts,
            last,
            next_grid: 0,
        }
    }

    fn grid_step(&self) -> f64 {
        (self.horizon - self.t0) / self.opts.grid_points.max(1) as f64
    }

    fn grid_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.grid_step()
    }

    /// Emits grid samples strictly before `t` using the state held since `last`.
    fn fill_grid_until(&mut self, t: f64, inclusive: bool) {
        while self.next_grid <= self.opts.grid_points {
            let g = self.grid_time(self.next_grid);
            if g > t || (!inclusive && g == t) {
                break;
            }
            let elapsed = g - self.last.t;
            let mut busy = self.last.busy;
            if self.last.q.0[1] > 0 {
                busy[0] += elapsed;
            }
            if self.last.q.0[3] > 0 {
                busy[1] += elapsed;
            }
            self.samples.push(GridSample {
                t: g,
                q: self.last.q,
                busy,
            });
            self.next_grid += 1;
        }
    }

    fn thin(&mut self) {
        let records = std::mem::take(&mut self.records);
        self.thinned = true;
        self.last = GridSample {
            t: self.t0,
            q: self.initial,
            busy: self.busy0,
        };
        for rec in &records {
            self.fill_grid_until(rec.t, false);
            self.last = GridSample {
                t: rec.t,
                q: rec.state_after,
                busy: rec.busy,
            };
        }
    }

    pub(super) fn push(&mut self, rec: &EventRecord) {
        let s = &mut self.summary;
        s.events += 1;
        s.counts[rec.kind.index()] += 1;
        s.max_norm = s.max_norm.max(rec.state_after.norm());
        if self.thinned {
            self.fill_grid_until(rec.t, false);
        } else {
            self.records.push(*rec);
            if self.records.len() > self.opts.full_limit {
                self.thin();
            }
        }
        self.last = GridSample {
            t: rec.t,
            q: rec.state_after,
            busy: rec.busy,
        };
    }

    pub(super) fn finish(mut self, sim: &SimState) -> Self {
        if self.thinned {
            let end = self.horizon;
            self.fill_grid_until(end, true);
        }
        self.summary.t_end = sim.t;
        self.summary.final_state = sim.q;
        self.summary.busy = sim.busy;
        self
    }

    /// Latest time the log describes.
    pub fn covered_until(&self) -> f64 {
        self.summary.t_end.max(self.horizon)
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if t < self.t0 || t > self.covered_until() {
            Err(Error::Range(format!(
                "time {t} outside trajectory [{}, {}]",
                self.t0,
                self.covered_until()
            )))
        } else {
            Ok(())
        }
    }

    /// State and busy times at time `t` (right-continuous). Exact for
    /// complete logs and at grid points of thinned logs.
    pub fn sample_at(&self, t: f64) -> Result<GridSample> {
        self.check_range(t)?;
        if self.thinned {
            let step = self.grid_step();
            let k = if step > 0.0 {
                (((t - self.t0) / step).floor() as usize).min(self.samples.len().saturating_sub(1))
            } else {
                0
            };
            return self
                .samples
                .get(k)
                .copied()
                .ok_or_else(|| Error::Range("empty thinned trajectory".into()));
        }
        let idx = self.records.partition_point(|r| r.t <= t);
        let (t_last, q, busy) = if idx == 0 {
            (self.t0, self.initial, self.busy0)
        } else {
            let r = &self.records[idx - 1];
            (r.t, r.state_after, r.busy)
        };
        let mut busy = busy;
        let elapsed = t - t_last;
        if q.0[1] > 0 {
            busy[0] += elapsed;
        }
        if q.0[3] > 0 {
            busy[1] += elapsed;
        }
        Ok(GridSample { t, q, busy })
    }

    pub fn state_at(&self, t: f64) -> Result<QState> {
        Ok(self.sample_at(t)?.q)
    }

    /// Writes `t,q1,q2,q3,q4,kind,flushed1,flushed3`; the first row is the
    /// initial state (`kind = init`), grid rows of thinned logs use `grid`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "q1", "q2", "q3", "q4", "kind", "flushed1", "flushed3"])?;
        let row = |out: &mut csv::Writer<W>, t: f64, q: &QState, kind: &str, f1: u64, f3: u64| {
            out.write_record([
                t.to_string(),
                q.0[0].to_string(),
                q.0[1].to_string(),
                q.0[2].to_string(),
                q.0[3].to_string(),
                kind.to_string(),
                f1.to_string(),
                f3.to_string(),
            ])
        };
        row(&mut out, self.t0, &self.initial, "init", 0, 0)?;
        if self.thinned {
            for s in &self.samples {
                row(&mut out, s.t, &s.q, "grid", 0, 0)?;
            }
        } else {
            for r in &self.records {
                row(&mut out, r.t, &r.state_after, r.kind.as_str(), r.flushed1, r.flushed3)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::build_ksrs;
    use crate::policy::derive_params;

    fn sim(seed: u64) -> SimState {
        let params = derive_params(0.2).unwrap();
        SimState::init(&build_ksrs(&params), &params, QState::ATOM, seed, 0).unwrap()
    }

    #[test]
    fn zero_horizon_is_empty() {
        let mut s = sim(1);
        let traj = s.run_until_time(0.0, RecordOptions::default());
        assert!(traj.records.is_empty());
        assert_eq!(traj.summary.events, 0);
    }

    #[test]
    fn runs_past_horizon_once() {
        let mut s = sim(1);
        let traj = s.run_until_time(50.0, RecordOptions::default());
        let n = traj.records.len();
        assert!(traj.records[n - 1].t >= 50.0);
        assert!(traj.records[n - 2].t < 50.0);
        assert_eq!(traj.state_at(50.0).unwrap(), traj.records[n - 2].state_after);
        assert_eq!(traj.state_at(0.0).unwrap(), QState::ATOM);
        assert!(traj.state_at(-1.0).is_err());
    }

    #[test]
    fn identical_csv_for_same_seed() {
        let render = || {
            let mut s = sim(7);
            let traj = s.run_until_time(100.0, RecordOptions::default());
            let mut buf = Vec::new();
            traj.write_csv(&mut buf).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("t,q1,q2,q3,q4,kind,flushed1,flushed3\n0,0,0,0,1,init,0,0\n"));
    }

    #[test]
    fn thinning_matches_full_log_at_grid_points() {
        let opts_full = RecordOptions::default();
        let opts_thin = RecordOptions {
            full_limit: 100,
            grid_points: 500,
        };
        let full = sim(3).run_until_time(1000.0, opts_full);
        let thin = sim(3).run_until_time(1000.0, opts_thin);
        assert!(thin.thinned && !full.thinned);
        assert_eq!(thin.samples.len(), 501);
        assert_eq!(full.summary, thin.summary);
        for s in thin.samples.iter().step_by(7) {
            let exact = full.sample_at(s.t).unwrap();
            assert_eq!(exact.q, s.q, "t={}", s.t);
            for i in 0..2 {
                assert!((exact.busy[i] - s.busy[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn busy_interpolation_matches_records() {
        let traj = sim(4).run_until_time(200.0, RecordOptions::default());
        for r in traj.records.iter().take(500) {
            let s = traj.sample_at(r.t).unwrap();
            assert_eq!(s.q, r.state_after);
            assert!((s.busy[0] - r.busy[0]).abs() < 1e-12);
            assert!((s.busy[1] - r.busy[1]).abs() < 1e-12);
        }
    }
}
