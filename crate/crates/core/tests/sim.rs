use idapbc::control::U_MIN;
use idapbc::estimator::EstimatorHyper;
use idapbc::models::{ConverterKind, PhysicalParams};
use idapbc::sim::{run, AdaptiveConfig, Hold, LoadEvent, ReferenceEvent, Scenario, Setpoint};
use idapbc::Error;
use proptest::prelude::*;

fn buck() -> Scenario {
    Scenario::new("buck", ConverterKind::Buck, PhysicalParams::bench(), [0.015, 1.15], 0.1, 20.0 / 24.0)
}

fn adaptive(gamma: f64) -> AdaptiveConfig {
    AdaptiveConfig::new(EstimatorHyper::new(gamma, 1.0, 10.0, 4.0, [0.01, 0.002]).unwrap())
}

fn final_with(base: &Scenario, dt: f64) -> [f64; 2] {
    let mut s = base.clone();
    s.dt = dt;
    s.record_every = usize::MAX;
    run(&s).unwrap().final_state
}

#[test]
fn continuous_hold_is_fourth_order() {
    let mut s = Scenario::new("bb", ConverterKind::BuckBoost, PhysicalParams::bench(), [0.1, 1.3], 2.0, 1.25);
    s.hold = Hold::Continuous;
    s.t_end = 20.0;
    let (a, b, c) = (final_with(&s, 0.2), final_with(&s, 0.1), final_with(&s, 0.05));
    let e1 = (a[0] - b[0]).abs().max((a[1] - b[1]).abs());
    let e2 = (b[0] - c[0]).abs().max((b[1] - c[1]).abs());
    let ratio = e1 / e2;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_order_hold_is_first_order() {
    let mut s = buck();
    s.t_end = 20.0;
    let (a, b, c) = (final_with(&s, 0.04), final_with(&s, 0.02), final_with(&s, 0.01));
    let e1 = (a[0] - b[0]).abs().max((a[1] - b[1]).abs());
    let e2 = (b[0] - c[0]).abs().max((b[1] - c[1]).abs());
    let ratio = e1 / e2;
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn energy_never_rises_inside_level_set() {
    let mut s = buck();
    s.hold = Hold::Continuous;
    let tr = run(&s).unwrap();
    let p: Vec<f64> = tr.rows.iter().map(|r| r.p.unwrap()).collect();
    assert!(p[0] <= 0.0003);
    assert!(p.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn adaptive_run_recovers_load_and_is_deterministic() {
    let mut s = buck();
    s.adaptive = Some(adaptive(10.0));
    s.t_end = 20.0;
    s.record_every = 50;
    let a = run(&s).unwrap();
    assert_eq!(a, run(&s).unwrap());
    let tc = a.tc.unwrap();
    for r in a.rows.iter().filter(|r| r.t > tc + 0.01) {
        let f = r.est.unwrap().theta_fct.unwrap();
        assert!((f[0] - 0.4).abs() < 1e-6 && (f[1] - 0.05).abs() < 1e-6, "t {}", r.t);
    }
}

#[test]
fn measurement_noise_depends_on_seed() {
    let mut s = buck();
    let mut cfg = adaptive(10.0);
    cfg.noise_std = 1e-3;
    s.adaptive = Some(cfg);
    s.t_end = 2.0;
    let a = run(&s).unwrap();
    assert_eq!(a, run(&s).unwrap());
    cfg.seed = 1;
    s.adaptive = Some(cfg);
    assert_ne!(a.final_state, run(&s).unwrap().final_state);
}

#[test]
fn load_step_that_breaks_the_assumption_is_reported_with_time() {
    let mut s = buck();
    s.references[0].setpoint = Setpoint::Volts(10.0);
    s.loads.push(LoadEvent { t: 5.0, g: 1.0 / 60.0, p_cpl: 3.0 });
    let err = run(&s).unwrap_err();
    match err {
        Error::Simulation { t, source } => {
            assert_eq!(t, 5.0);
            assert!(matches!(*source, Error::ReferenceBelowCplFloor { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn reference_step_moves_the_setpoint() {
    let mut s = buck();
    s.x0 = [0.0285, 20.0 / 24.0];
    s.references.push(ReferenceEvent { t: 1.0, setpoint: Setpoint::Volts(18.0) });
    s.t_end = 2.0;
    s.record_every = 100;
    let tr = run(&s).unwrap();
    assert_eq!(tr.rows[0].x2_ref, 20.0 / 24.0);
    assert_eq!(tr.last().x2_ref, 0.75);
}

#[test]
fn voltage_collapse_is_an_error() {
    let mut s = buck();
    s.x0 = [0.0, 0.3];
    let err = run(&s).unwrap_err();
    assert!(matches!(err.root(), Error::VoltageFloorViolation { .. }));
}

#[test]
fn record_stride_keeps_uniform_grid() {
    let mut s = buck();
    s.t_end = 1.0;
    s.record_every = 7;
    let tr = run(&s).unwrap();
    let t = tr.times();
    assert!(t.windows(2).all(|w| ((w[1] - w[0]) - 7e-3).abs() < 1e-12));
    assert_eq!(tr.final_t, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn saturated_inputs_stay_in_range(x1 in 0.0f64..0.06, x2 in 0.7f64..1.05) {
        let mut s = buck();
        s.x0 = [x1, x2];
        s.saturate = true;
        s.t_end = 5.0;
        let tr = run(&s).unwrap();
        prop_assert!(tr.rows.iter().all(|r| r.u_applied >= U_MIN && r.u_applied <= 1.0));
    }
}
