use ksrs::netmodel::validate_network;
use ksrs::policy::{decide_arrival, flush_closure, flush_closure_counted, Arrival, PolicyAction};
use ksrs::{build_ksrs, derive_params, EventKind, QState, SimState};
use proptest::prelude::*;

fn any_state() -> impl Strategy<Value = QState> {
    prop::array::uniform4(0u64..60).prop_map(QState)
}

fn any_delta() -> impl Strategy<Value = f64> {
    prop_oneof![1e-4..1e-2f64, 1e-2..0.45f64]
}

proptest! {
    #[test]
    fn ksrs_spec_always_valid(delta in any_delta()) {
        let params = derive_params(delta).unwrap();
        prop_assert!(validate_network(&build_ksrs(&params)).is_valid());
    }

    #[test]
    fn derived_identities(delta in any_delta()) {
        let p = derive_params(delta).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        prop_assert!(rel(p.beta2, 16.0 * p.beta1) < 1e-12);
        prop_assert!(rel(p.gamma24, p.gamma2 * p.gamma4) < 1e-12);
        prop_assert!(rel(p.gamma, p.gamma4 + p.gamma24) < 1e-12);
    }

    #[test]
    fn closure_idempotent_norm_preserving_stable(q in any_state()) {
        let c = flush_closure(q);
        prop_assert_eq!(flush_closure(c), c);
        prop_assert_eq!(c.norm(), q.norm());
        prop_assert!(c.is_stable());
        prop_assert!(!(c.0[0] > 0 && c.0[2] > 0));
        let counted = flush_closure_counted(q);
        prop_assert_eq!(counted.flushed1 + counted.flushed3 <= q.0[0] + q.0[2], true);
    }

    #[test]
    fn forced_decisions_ignore_the_uniform(q in any_state(), u in 0.0..1.0f64, delta in any_delta()) {
        let params = derive_params(delta).unwrap();
        for arrival in [Arrival::Buffer1, Arrival::Buffer3] {
            let a = decide_arrival(arrival, &q, u, &params);
            if !ksrs::policy::randomized_branch(arrival, &q) {
                prop_assert_eq!(a, decide_arrival(arrival, &q, 0.0, &params));
                prop_assert_ne!(a, PolicyAction::Hold);
            }
        }
    }

    #[test]
    fn engine_runs_are_clean(q in any_state(), delta in 0.02..0.4f64, seed in any::<u64>()) {
        let params = derive_params(delta).unwrap();
        let mut sim = SimState::init(&build_ksrs(&params), &params, q, seed, 0).unwrap();
        prop_assert_eq!(sim.state().norm(), q.norm());
        let report = sim.run_checked(3000);
        prop_assert!(report.is_clean(), "{:?}", report);
    }

    #[test]
    fn servers_never_idle_with_work(q in any_state(), seed in any::<u64>()) {
        let params = derive_params(0.1).unwrap();
        let mut sim = SimState::init(&build_ksrs(&params), &params, q, seed, 0).unwrap();
        let mut prev = sim.state();
        let mut busy = sim.busy();
        let mut t = sim.time();
        for _ in 0..2000 {
            let rec = sim.next_event();
            let dt = rec.t - t;
            for (i, b) in [1usize, 3].into_iter().enumerate() {
                let expect = if prev.0[b] > 0 { dt } else { 0.0 };
                prop_assert!((rec.busy[i] - busy[i] - expect).abs() <= 1e-9 * rec.t.max(1.0));
            }
            // only buffers 2 and 4 complete service
            if rec.kind == EventKind::Svc2 { prop_assert!(prev.0[1] > 0); }
            if rec.kind == EventKind::Svc4 { prop_assert!(prev.0[3] > 0); }
            prev = rec.state_after;
            busy = rec.busy;
            t = rec.t;
        }
    }

    #[test]
    fn same_seed_same_path(q in any_state(), seed in any::<u64>(), stream in any::<u64>()) {
        let params = derive_params(0.2).unwrap();
        let spec = build_ksrs(&params);
        let mut a = SimState::init(&spec, &params, q, seed, stream).unwrap();
        let mut b = SimState::init(&spec, &params, q, seed, stream).unwrap();
        for _ in 0..500 {
            prop_assert_eq!(a.next_event(), b.next_event());
        }
    }
}

#[test]
fn long_run_from_atom_is_clean() {
    let params = derive_params(0.2).unwrap();
    let mut sim = SimState::init(&build_ksrs(&params), &params, QState::ATOM, 1, 0).unwrap();
    let report = sim.run_checked(1_000_000);
    assert!(report.is_clean(), "{report:?}");
    assert_eq!(report.events, 1_000_000);
}
