use ksrs::experiments::{
    drain_experiment, fluid_scale, mm1_emptying_time, tail_occupation, DrainConfig, TailConfig,
};
use ksrs::engine::RecordOptions;
use ksrs::stats::{ks_two_sample, lag1_autocorrelation};
use ksrs::{build_ksrs, derive_params, EventKind, QState, RngStream, SimState};
use proptest::prelude::*;

/// Arrival counts match unit rates, and completions match `μ` times the
/// recorded busy time, within Poisson fluctuations.
#[test]
fn event_rates_match_busy_time() {
    let params = derive_params(0.05).unwrap();
    let mut sim = SimState::init(&build_ksrs(&params), &params, QState::ATOM, 4, 0).unwrap();
    let mut counts = [0u64; 4];
    for _ in 0..2_000_000 {
        let rec = sim.next_event();
        counts[rec.kind.index()] += 1;
    }
    let t = sim.time();
    let busy = sim.busy();
    let z = |n: u64, mean: f64| (n as f64 - mean).abs() / mean.sqrt();
    assert!(z(counts[EventKind::Arr1.index()], t) < 5.0);
    assert!(z(counts[EventKind::Arr3.index()], t) < 5.0);
    assert!(z(counts[EventKind::Svc2.index()], params.mu * busy[0]) < 5.0);
    assert!(z(counts[EventKind::Svc4.index()], params.mu * busy[1]) < 5.0);
}

/// Regeneration cycles are i.i.d.; durations show no lag-1 correlation.
#[test]
fn cycle_durations_uncorrelated() {
    let params = derive_params(0.05).unwrap();
    let mut sim = SimState::init(&build_ksrs(&params), &params, QState::ATOM, 9, 0).unwrap();
    let cycles = sim.regen_cycles(QState::ATOM, 10_000).unwrap();
    let d: Vec<f64> = cycles.iter().map(|c| c.duration).collect();
    let r = lag1_autocorrelation(&d);
    assert!(r.abs() < 4.0 / (d.len() as f64).sqrt(), "lag-1 autocorrelation {r}");
}

/// From `(0,0,0,x₄)` buffer 4 empties like a plain M/M/1 queue.
#[test]
fn buffer4_emptying_matches_mm1() {
    let params = derive_params(0.1).unwrap();
    let spec = build_ksrs(&params);
    let engine: Vec<f64> = (0..1500)
        .map(|rep| {
            let mut sim = SimState::init(&spec, &params, QState::new(0, 0, 0, 10), 21, rep).unwrap();
            sim.run_until_hit(|q| q.0[3] == 0).unwrap().t
        })
        .collect();
    let mut rng = RngStream::new(22, 0);
    let oracle: Vec<f64> = (0..1500).map(|_| mm1_emptying_time(10, params.mu, &mut rng).0).collect();
    let ks = ks_two_sample(&engine, &oracle);
    assert!(ks.p_value > 0.001, "{ks:?}");
}

#[test]
fn tail_halves_agree() {
    let res = tail_occupation(&TailConfig {
        delta: 0.05,
        total_events: 3_000_000,
        burn_in: 0,
        seed: 2,
        ratio_per_octave: 4,
    })
    .unwrap();
    assert!(res.get("cycles").unwrap() > 1000.0);
    for p in 1..=4 {
        let z = res.get(&format!("half_run_z[p={p}]")).unwrap();
        assert!(z < 4.0, "p={p}: z={z}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn drain_acceptance_nested(seed in 0u64..1000) {
        let eps = vec![0.05, 0.1, 0.3, 1.0];
        let res = drain_experiment(&DrainConfig {
            delta: 0.1,
            n: 50,
            epsilons: eps.clone(),
            reps: 20,
            seed,
            horizon_mult: 1.0,
        })
        .unwrap();
        let p: Vec<f64> = eps.iter().map(|e| res.get(&format!("p_hat[eps={e}]")).unwrap()).collect();
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn scaled_start_within_floor_error(
        x in prop::array::uniform4(0.0..3.0f64),
        kappa in 1.0..500.0f64,
        seed in any::<u64>(),
    ) {
        let params = derive_params(0.1).unwrap();
        let q0 = QState(x.map(|v| (kappa * v).floor() as u64));
        let mut sim = SimState::init(&build_ksrs(&params), &params, q0, seed, 0).unwrap();
        let traj = sim.run_until_time(1.0, RecordOptions::default());
        let scaled = fluid_scale(&traj, kappa, &[0.0]).unwrap();
        let l1: f64 = scaled.q_scaled[0].iter().sum();
        prop_assert!((l1 - x.iter().sum::<f64>()).abs() <= 4.0 / kappa + 1e-12);
    }
}
