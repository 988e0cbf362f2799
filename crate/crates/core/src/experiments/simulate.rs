//! A single recorded run, optionally followed by regeneration cycles.

use serde::{Deserialize, Serialize};

use super::{streams, ExperimentResult, Table};
use crate::engine::{RecordOptions, SimState, Trajectory, DEFAULT_EVENT_CAP};
use crate::error::{Error, Result};
use crate::netmodel::{build_ksrs, QState};
use crate::policy::derive_params;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub delta: f64,
    pub init: QState,
    pub horizon: f64,
    pub seed: u64,
    /// Regeneration cycles through `x*` to record after the horizon.
    pub cycles: u64,
    /// Per-cycle event cap.
    pub event_cap: u64,
    pub full_limit: usize,
    pub grid_points: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let rec = RecordOptions::default();
        Self {
            delta: 0.2,
            init: QState::ATOM,
            horizon: 100.0,
            seed: 1,
            cycles: 0,
            event_cap: DEFAULT_EVENT_CAP,
            full_limit: rec.full_limit,
            grid_points: rec.grid_points,
        }
    }
}

pub fn simulate(cfg: &SimulateConfig) -> Result<(ExperimentResult, Trajectory)> {
    let params = derive_params(cfg.delta)?;
    if !(cfg.horizon >= 0.0) || !cfg.horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be finite and >= 0, got {}", cfg.horizon)));
    }
    if cfg.grid_points == 0 || cfg.event_cap == 0 {
        return Err(Error::domain("grid_points and event_cap must be positive"));
    }
    let spec = build_ksrs(&params);
    let mut sim = SimState::with_rng(&spec, &params, cfg.init, RngStream::new(cfg.seed, streams::SIMULATE))?;
    sim.set_event_cap(cfg.event_cap);
    let traj = sim.run_until_time(
        cfg.horizon,
        RecordOptions {
            full_limit: cfg.full_limit,
            grid_points: cfg.grid_points,
        },
    );

    let mut res = ExperimentResult::new("simulate", Some(&params), cfg, cfg.seed);
    super::regime_warning(&mut res, &params);
    res.replications = 1;
    let s = &traj.summary;
    res.exact("events", s.events as f64);
    res.exact("t_end", s.t_end);
    res.exact("max_norm", s.max_norm as f64);
    res.exact("final_norm", s.final_state.norm() as f64);
    for (i, name) in ["arr1", "arr3", "svc2", "svc4"].iter().enumerate() {
        res.exact(format!("count_{name}"), s.counts[i] as f64);
    }
    res.exact("busy2", s.busy[0]);
    res.exact("busy4", s.busy[1]);
    if traj.thinned {
        res.warn(format!(
            "event log thinned to a grid of {} points after {} events",
            cfg.grid_points, cfg.full_limit
        ));
    }

    if cfg.cycles > 0 {
        let cycles = sim.regen_cycles(QState::ATOM, cfg.cycles as usize)?;
        let mut table = Table::new(["cycle_id", "start", "duration", "events", "sup_norm"]);
        for (i, c) in cycles.iter().enumerate() {
            table.push([
                i.to_string(),
                c.start.to_string(),
                c.duration.to_string(),
                c.events.to_string(),
                c.sup_norm.to_string(),
            ]);
        }
        let mean = cycles.iter().map(|c| c.duration).sum::<f64>() / cycles.len() as f64;
        res.exact("mean_cycle_duration", mean);
        res.table("cycles.csv", table);
    }
    Ok((res, traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_run() {
        let cfg = SimulateConfig {
            seed: 7,
            ..Default::default()
        };
        let (a, ta) = simulate(&cfg).unwrap();
        let (b, tb) = simulate(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        ta.write_csv(&mut wa).unwrap();
        tb.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
    }

    #[test]
    fn cycles_table_has_requested_rows() {
        let cfg = SimulateConfig {
            delta: 0.05,
            horizon: 10.0,
            cycles: 25,
            ..Default::default()
        };
        let (res, _) = simulate(&cfg).unwrap();
        assert_eq!(res.tables["cycles.csv"].rows.len(), 25);
    }
}
