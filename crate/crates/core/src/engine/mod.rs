//! Exact event-driven simulation of the KSRS network under the randomized
//! hold/flush policy.
//!
//! Events are drawn from competing exponential clocks (arrivals to buffers 1
//! and 3 at their external rates, completions at buffers 2 and 4 while those
//! are non-empty) with a full redraw after every event. Per event the
//! stream supplies one uniform for the holding time, one for the event kind,
//! and a third only when an arrival reaches the randomized rule.
//!
//! An arrival is processed as: increment the buffer, apply the randomized
//! rule if its guard holds, then run the flush closure. The recorded state is
//! the right-continuous post-closure state.

mod cycles;
mod trajectory;

use std::collections::VecDeque;
use std::fmt;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

pub use cycles::{Bin, CycleStats, CycleTracker, OccupationHistogram, INTEGER_BINS};
pub use trajectory::{GridSample, RecordOptions, Trajectory, TrajectorySummary};

use crate::error::Result;
use crate::netmodel::{NetworkSpec, QState};
use crate::policy::{self, Arrival, PolicyAction, PolicyParams};
use crate::rng::RngStream;

/// Default bound on the number of events a single run may take.
pub const DEFAULT_EVENT_CAP: u64 = 1_000_000_000;

const RECENT_EVENTS: usize = 64;
const FLUSH_LOG_LEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Arr1,
    Arr3,
    Svc2,
    Svc4,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Arr1 => "Arr1",
            EventKind::Arr3 => "Arr3",
            EventKind::Svc2 => "Svc2",
            EventKind::Svc4 => "Svc4",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One event epoch of the embedded chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    pub state_after: QState,
    /// Jobs moved out of buffer 1 (resp. 3) by a flush at this epoch.
    pub flushed1: u64,
    pub flushed3: u64,
    /// Cumulative busy time of buffers 2 and 4 at `t`.
    pub busy: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlushEntry {
    pub t: f64,
    pub buffer: u8,
    pub jobs: u64,
}

/// A hitting run reached its event cap.
#[derive(Debug, Clone)]
pub struct CapExceeded {
    pub cap: u64,
    pub t: f64,
    pub state: QState,
    /// The last events before the cap, oldest first.
    pub recent: Vec<EventRecord>,
}

impl fmt::Display for CapExceeded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "event cap of {} exceeded at t={} in state {}",
            self.cap, self.t, self.state
        )
    }
}

impl std::error::Error for CapExceeded {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub state: QState,
    /// Events taken by this run.
    pub events: u64,
}

/// Live simulation state: queues, clock, busy times and the random stream.
#[derive(Debug, Clone)]
pub struct SimState {
    q: QState,
    t: f64,
    busy: [f64; 2],
    events: u64,
    counts: [u64; 4],
    rng: RngStream,
    arrival_rates: [f64; 2],
    service_rates: [f64; 2],
    params: PolicyParams,
    event_cap: u64,
    flush_log: Option<VecDeque<FlushEntry>>,
}

impl SimState {
    /// Starts a run at the stabilized version of `x0`.
    pub fn init(
        spec: &NetworkSpec,
        params: &PolicyParams,
        x0: QState,
        seed: u64,
        stream_id: u64,
    ) -> Result<Self> {
        Self::with_rng(spec, params, x0, RngStream::new(seed, stream_id))
    }

    pub fn with_rng(
        spec: &NetworkSpec,
        params: &PolicyParams,
        x0: QState,
        rng: RngStream,
    ) -> Result<Self> {
        spec.require_ksrs()?;
        let closure = policy::flush_closure_counted(x0);
        if closure.both_enabled {
            log::debug!("initial state {x0} enables both flush rules; buffer 1 flushed first");
        }
        let rate = |i: usize| spec.service_rates[i].finite().expect("KSRS exit rate");
        Ok(Self {
            q: closure.state,
            t: 0.0,
            busy: [0.0; 2],
            events: 0,
            counts: [0; 4],
            rng,
            arrival_rates: [spec.arrival_rates[0], spec.arrival_rates[2]],
            service_rates: [rate(1), rate(3)],
            params: *params,
            event_cap: DEFAULT_EVENT_CAP,
            flush_log: None,
        })
    }

    pub fn state(&self) -> QState {
        self.q
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn busy(&self) -> [f64; 2] {
        self.busy
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    /// Event counts by kind, indexed by [`EventKind::index`].
    pub fn event_counts(&self) -> [u64; 4] {
        self.counts
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn event_cap(&self) -> u64 {
        self.event_cap
    }

    pub fn set_event_cap(&mut self, cap: u64) {
        self.event_cap = cap;
    }

    /// Keeps the most recent flushes for inspection.
    pub fn enable_flush_log(&mut self) {
        self.flush_log = Some(VecDeque::with_capacity(FLUSH_LOG_LEN));
    }

    pub fn flush_log(&self) -> Option<&VecDeque<FlushEntry>> {
        self.flush_log.as_ref()
    }

    pub fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    /// Advances to the next event epoch and applies the policy.
    pub fn next_event(&mut self) -> EventRecord {
        let [_, q2, _, q4] = self.q.0;
        let s2 = if q2 > 0 { self.service_rates[0] } else { 0.0 };
        let s4 = if q4 > 0 { self.service_rates[1] } else { 0.0 };
        let a1 = self.arrival_rates[0];
        let a3 = self.arrival_rates[1];
        let total = a1 + a3 + s2 + s4;

        let dt = self.rng.exponential(total);
        let pick = self.rng.uniform() * total;
        let kind = if pick < a1 {
            EventKind::Arr1
        } else if pick < a1 + a3 || s2 + s4 == 0.0 {
            EventKind::Arr3
        } else if s4 == 0.0 || (s2 > 0.0 && pick < a1 + a3 + s2) {
            EventKind::Svc2
        } else {
            EventKind::Svc4
        };

        self.t += dt;
        if q2 > 0 {
            self.busy[0] += dt;
        }
        if q4 > 0 {
            self.busy[1] += dt;
        }

        let before = self.q;
        let mut q = self.q.0;
        let mut flushed1 = 0;
        let mut flushed3 = 0;
        match kind {
            EventKind::Arr1 | EventKind::Arr3 => {
                let (buffer, idx, partner) = match kind {
                    EventKind::Arr1 => (Arrival::Buffer1, 0, 1),
                    _ => (Arrival::Buffer3, 2, 3),
                };
                q[idx] += 1;
                let post = QState(q);
                let u = if policy::randomized_branch(buffer, &post) {
                    self.rng.uniform()
                } else {
                    0.0
                };
                match policy::decide_arrival(buffer, &post, u, &self.params) {
                    PolicyAction::FlushBuffer1 | PolicyAction::FlushBuffer3 => {
                        if idx == 0 {
                            flushed1 += q[idx];
                        } else {
                            flushed3 += q[idx];
                        }
                        q[partner] += q[idx];
                        q[idx] = 0;
                    }
                    PolicyAction::Hold | PolicyAction::ServeFinite => {}
                }
            }
            EventKind::Svc2 => q[1] -= 1,
            EventKind::Svc4 => q[3] -= 1,
        }

        let closure = policy::flush_closure_counted(QState(q));
        debug_assert!(
            !closure.both_enabled,
            "both flush rules enabled after {kind} from {before}"
        );
        flushed1 += closure.flushed1;
        flushed3 += closure.flushed3;
        self.q = closure.state;
        self.events += 1;
        self.counts[kind.index()] += 1;

        debug_assert!(self.q.is_stable(), "unstable state {} after {kind}", self.q);
        debug_assert_eq!(
            self.q.norm().abs_diff(before.norm()),
            1,
            "skip-free violated: {before} -> {} on {kind}",
            self.q
        );

        if let Some(log) = self.flush_log.as_mut() {
            for (buffer, jobs) in [(1u8, flushed1), (3u8, flushed3)] {
                if jobs > 0 {
                    if log.len() == FLUSH_LOG_LEN {
                        log.pop_front();
                    }
                    log.push_back(FlushEntry { t: self.t, buffer, jobs });
                }
            }
        }

        EventRecord {
            t: self.t,
            kind,
            state_after: self.q,
            flushed1,
            flushed3,
            busy: self.busy,
        }
    }

    /// Runs events, handing each to `visit`, until `visit` breaks or the
    /// event cap for this call is reached. Returns the number of events.
    pub fn step_until<F>(&mut self, mut visit: F) -> std::result::Result<u64, CapExceeded>
    where
        F: FnMut(&EventRecord) -> ControlFlow<()>,
    {
        let cap = self.event_cap;
        let mut recent: VecDeque<EventRecord> = VecDeque::with_capacity(RECENT_EVENTS);
        let mut n = 0u64;
        loop {
            if n >= cap {
                return Err(CapExceeded {
                    cap,
                    t: self.t,
                    state: self.q,
                    recent: recent.into_iter().collect(),
                });
            }
            let rec = self.next_event();
            n += 1;
            if recent.len() == RECENT_EVENTS {
                recent.pop_front();
            }
            recent.push_back(rec);
            if visit(&rec).is_break() {
                return Ok(n);
            }
        }
    }

    /// First epoch (including the current one) whose state satisfies `pred`.
    pub fn run_until_hit<P>(&mut self, mut pred: P) -> std::result::Result<Hit, CapExceeded>
    where
        P: FnMut(&QState) -> bool,
    {
        if pred(&self.q) {
            return Ok(Hit {
                t: self.t,
                state: self.q,
                events: 0,
            });
        }
        self.run_until_next_hit(pred)
    }

    /// First epoch strictly after the current one whose state satisfies `pred`.
    pub fn run_until_next_hit<P>(&mut self, mut pred: P) -> std::result::Result<Hit, CapExceeded>
    where
        P: FnMut(&QState) -> bool,
    {
        self.run_until_next_hit_observed(|s| pred(s), |_| {})
    }

    /// Like [`run_until_next_hit`](Self::run_until_next_hit), also passing
    /// every event (including the hitting one) to `observe`.
    pub fn run_until_next_hit_observed<P, O>(
        &mut self,
        mut pred: P,
        mut observe: O,
    ) -> std::result::Result<Hit, CapExceeded>
    where
        P: FnMut(&QState) -> bool,
        O: FnMut(&EventRecord),
    {
        let events = self.step_until(|rec| {
            observe(rec);
            if pred(&rec.state_after) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
        Ok(Hit {
            t: self.t,
            state: self.q,
            events,
        })
    }

    /// Simulates until the clock reaches `horizon`, recording per `opts`.
    pub fn run_until_time(&mut self, horizon: f64, opts: RecordOptions) -> Trajectory {
        let mut traj = Trajectory::start(self, horizon, opts);
        if horizon <= self.t {
            return traj.finish(self);
        }
        loop {
            let rec = self.next_event();
            traj.push(&rec);
            if rec.t >= horizon {
                break;
            }
        }
        traj.finish(self)
    }

    /// Runs `n` events, counting invariant violations.
    pub fn run_checked(&mut self, n: u64) -> InvariantReport {
        let mut report = InvariantReport::default();
        let mut prev = self.q;
        for _ in 0..n {
            let rec = self.next_event();
            report.check(&prev, &rec);
            prev = rec.state_after;
        }
        report
    }
}

/// Counts of structural invariant violations over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub events: u64,
    /// `|‖X(n+1)‖₁ − ‖X(n)‖₁| ≠ 1`.
    pub skip_free_violations: u64,
    pub stability_violations: u64,
    /// `q₁ > 0` and `q₃ > 0` together.
    pub simultaneous_holds: u64,
    /// Arrivals that did not add one job, or completions that did not remove one.
    pub conservation_violations: u64,
}

impl InvariantReport {
    pub fn check(&mut self, prev: &QState, rec: &EventRecord) {
        let s = &rec.state_after;
        self.events += 1;
        let (a, b) = (prev.norm() as i64, s.norm() as i64);
        if (b - a).abs() != 1 {
            self.skip_free_violations += 1;
        }
        let expected = match rec.kind {
            EventKind::Arr1 | EventKind::Arr3 => 1,
            EventKind::Svc2 | EventKind::Svc4 => -1,
        };
        if b - a != expected {
            self.conservation_violations += 1;
        }
        if !s.is_stable() {
            self.stability_violations += 1;
        }
        if s.0[0] > 0 && s.0[2] > 0 {
            self.simultaneous_holds += 1;
        }
    }

    pub fn is_clean(&self) -> bool {
        self.skip_free_violations == 0
            && self.stability_violations == 0
            && self.simultaneous_holds == 0
            && self.conservation_violations == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::build_ksrs;
    use crate::policy::{derive_params, psi_seq};

    fn sim(delta: f64, x0: QState, seed: u64) -> SimState {
        let params = derive_params(delta).unwrap();
        SimState::init(&build_ksrs(&params), &params, x0, seed, 0).unwrap()
    }

    #[test]
    fn init_stabilizes() {
        assert_eq!(sim(0.2, QState::ATOM, 1).state(), QState::ATOM);
        assert_eq!(sim(0.2, QState::new(5, 0, 0, 0), 1).state(), QState::new(0, 5, 0, 0));
        let s = sim(0.2, QState::EMPTY, 1);
        assert_eq!(s.state(), QState::EMPTY);
        assert_eq!(s.time(), 0.0);
        assert_eq!(s.busy(), [0.0, 0.0]);
    }

    #[test]
    fn empty_network_starts_with_arrival() {
        for seed in 0..50 {
            let mut s = sim(0.2, QState::EMPTY, seed);
            let rec = s.next_event();
            assert!(matches!(rec.kind, EventKind::Arr1 | EventKind::Arr3));
        }
    }

    #[test]
    fn rejects_other_topologies() {
        let params = derive_params(0.2).unwrap();
        let mut spec = build_ksrs(&params);
        spec.routing[2][3] = 0;
        assert!(SimState::init(&spec, &params, QState::ATOM, 1, 0).is_err());
    }

    #[test]
    fn exit_departure_from_atom() {
        // Find a seed whose first event is Svc4.
        let rec = (0..1000)
            .map(|seed| sim(0.2, QState::ATOM, seed).next_event())
            .find(|r| r.kind == EventKind::Svc4)
            .unwrap();
        assert_eq!(rec.state_after, QState::EMPTY);
    }

    #[test]
    fn held_arrival_to_buffer3() {
        let params = derive_params(0.2).unwrap();
        let psi1 = psi_seq(1, &params);
        let mut held = 0;
        let mut flushed = 0;
        for seed in 0..20_000 {
            let mut s = sim(0.2, QState::new(0, 3, 0, 0), seed);
            let rec = s.next_event();
            if rec.kind == EventKind::Arr3 {
                if rec.state_after == QState::new(0, 3, 1, 0) {
                    held += 1;
                } else {
                    assert_eq!(rec.state_after, QState::new(0, 3, 0, 1));
                    assert_eq!(rec.flushed3, 1);
                    flushed += 1;
                }
            }
        }
        let frac = held as f64 / (held + flushed) as f64;
        let se = (psi1 * (1.0 - psi1) / (held + flushed) as f64).sqrt();
        assert!((frac - psi1).abs() < 4.0 * se, "{frac} vs {psi1}");
    }

    #[test]
    fn buffer1_flushes_when_buffer4_empties() {
        // From (2,0,0,4), any path with four Svc4 and no arrivals ends at (0,2,0,0).
        let mut found = false;
        for seed in 0..200_000 {
            let mut s = sim(0.2, QState::new(2, 0, 0, 4), seed);
            let recs: Vec<_> = (0..4).map(|_| s.next_event()).collect();
            if recs.iter().all(|r| r.kind == EventKind::Svc4) {
                assert_eq!(recs[3].state_after, QState::new(0, 2, 0, 0));
                assert_eq!(recs[3].flushed1, 2);
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn busy_times_bounded_by_clock() {
        let mut s = sim(0.2, QState::ATOM, 3);
        let mut prev = [0.0; 2];
        for _ in 0..10_000 {
            let rec = s.next_event();
            for i in 0..2 {
                assert!(rec.busy[i] >= prev[i]);
                assert!(rec.busy[i] <= rec.t + 1e-9);
            }
            prev = rec.busy;
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let mut a = sim(0.2, QState::ATOM, 11);
        let mut b = sim(0.2, QState::ATOM, 11);
        for _ in 0..10_000 {
            assert_eq!(a.next_event(), b.next_event());
        }
    }

    #[test]
    fn invariants_hold_over_run() {
        let mut s = sim(0.2, QState::ATOM, 5);
        let report = s.run_checked(200_000);
        assert!(report.is_clean(), "{report:?}");
        assert_eq!(report.events, 200_000);
    }

    #[test]
    fn hit_already_satisfied() {
        let mut s = sim(0.2, QState::EMPTY, 1);
        let hit = s.run_until_hit(|q| q.norm() == 0).unwrap();
        assert_eq!(hit.t, 0.0);
        assert_eq!(hit.events, 0);
    }

    #[test]
    fn cap_exceeded_carries_recent_events() {
        let mut s = sim(0.2, QState::ATOM, 1);
        s.set_event_cap(1000);
        let err = s.run_until_hit(|q| q.norm() > 1_000_000).unwrap_err();
        assert_eq!(err.cap, 1000);
        assert_eq!(err.recent.len(), RECENT_EVENTS);
        assert_eq!(err.recent.last().unwrap().state_after, err.state);
    }

    #[test]
    fn flush_log_records() {
        let mut s = sim(0.2, QState::ATOM, 1);
        s.enable_flush_log();
        s.run_checked(10_000);
        let log = s.flush_log().unwrap();
        assert!(!log.is_empty());
        assert!(log.iter().all(|f| f.jobs > 0 && (f.buffer == 1 || f.buffer == 3)));
    }
}
