use idapbc::control::{
    control_law_derivative, control_law_raw, matching_ode_residual, min_gain, structure_functions, ControllerSpec,
};
use idapbc::models::{ConverterKind, ConverterModel, LoadRelation, PhysicalParams};
use idapbc::Error;
use proptest::prelude::*;


fn bench(kind: ConverterKind) -> ConverterModel {
    ConverterModel::from_physical(kind, &PhysicalParams::bench())
}

// h(x2) = R x2 + P / x2 written out from the physical parameters
fn oracle_h(x2: f64) -> f64 {
    let z = (1e-3f64 / 330e-6).sqrt();
    let r = z / 60.0;
    let p = 1.2 / (24.0 * 24.0) * z;
    r * x2 + p / x2
}

#[test]
fn normalized_load_matches_hand_computation() {
    let n = PhysicalParams::new(24.0, 1e-3, 330e-6, 0.0167, 1.2).unwrap().normalize();
    assert!((n.r - 0.0167 * 1.7407765595569784).abs() < 1e-15);
    assert!((n.p - 1.2 / 576.0 * 1.7407765595569784).abs() < 1e-15);
}

#[test]
fn buck_and_buck_boost_equilibria_by_hand() {
    let eq = bench(ConverterKind::Buck).equilibrium_for(20.0 / 24.0).unwrap();
    assert!((eq.x1_star - oracle_h(20.0 / 24.0)).abs() < 1e-15);
    assert!((eq.u_star - 20.0 / 24.0).abs() < 1e-15);
    let eq = bench(ConverterKind::BuckBoost).equilibrium_for(1.25).unwrap();
    assert!((eq.x1_star - 2.25 * oracle_h(1.25)).abs() < 1e-15);
    assert!((eq.u_star - 1.0 / 2.25).abs() < 1e-15);
}

#[test]
fn boost_cannot_step_down() {
    let err = bench(ConverterKind::Boost).equilibrium_for(0.5).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_)));
}

#[test]
fn reference_below_cpl_floor() {
    let err = bench(ConverterKind::Buck).equilibrium_for(0.2).unwrap_err();
    assert!(matches!(err, Error::ReferenceBelowCplFloor { .. }));
}

#[test]
fn gain_bound_against_hand_formula() {
    let x2 = 1.25;
    let z = (1e-3f64 / 330e-6).sqrt();
    let (r, p) = (z / 60.0, 1.2 / 576.0 * z);
    let hp = r - p / (x2 * x2);
    let expected = 1.0 + oracle_h(x2) / (hp * (x2 + 1.0));
    let eq = bench(ConverterKind::BuckBoost).equilibrium_for(x2).unwrap();
    assert!((min_gain(&eq).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 1.6523).abs() < 5e-4);
}

#[test]
fn below_minimum_gain_rejected() {
    let err = ControllerSpec::new(&bench(ConverterKind::BuckBoost), 1.0, 1.25).unwrap_err();
    assert!(matches!(err, Error::GainBelowMinimum { .. }));
    assert!(ControllerSpec::new_unchecked(&bench(ConverterKind::BuckBoost), 1.0, 1.25).is_ok());
}

#[test]
fn custom_load_without_derivative() {
    let load = LoadRelation::Custom(idapbc::models::CustomLoad::new(|x| 0.03 * x + 0.002 * x * x));
    let m = ConverterModel::new(ConverterKind::Buck, load);
    let eq = m.equilibrium_for(0.8).unwrap();
    assert!((eq.h_prime_star - (0.03 + 0.004 * 0.8)).abs() < 1e-8);
}

fn spec_strategy() -> impl Strategy<Value = (ConverterKind, f64, f64)> {
    prop_oneof![
        (0.6f64..1.0, 0.02f64..2.0).prop_map(|(x2, k)| (ConverterKind::Buck, x2, k)),
        (1.05f64..2.0, 0.0f64..3.0).prop_map(|(x2, dk)| (ConverterKind::Boost, x2, dk)),
        (0.6f64..2.0, 0.0f64..3.0).prop_map(|(x2, dk)| (ConverterKind::BuckBoost, x2, dk)),
    ]
}

fn build(kind: ConverterKind, x2s: f64, kk: f64) -> (ConverterModel, ControllerSpec) {
    let m = bench(kind);
    let spec = if kind == ConverterKind::Buck {
        ControllerSpec::new(&m, kk, x2s).unwrap()
    } else {
        let eq = m.equilibrium_for(x2s).unwrap();
        ControllerSpec::new(&m, min_gain(&eq).unwrap() + kk, x2s).unwrap()
    };
    (m, spec)
}

proptest! {
    #[test]
    fn equilibrium_is_a_rest_point((kind, x2s, kk) in spec_strategy()) {
        let (m, spec) = build(kind, x2s, kk);
        let f = m.dynamics(spec.eq.state(), spec.eq.u_star).unwrap();
        prop_assert!(f[0].abs() < 1e-14 && f[1].abs() < 1e-14);
        prop_assert!((control_law_raw(&spec, x2s).unwrap() - spec.eq.u_star).abs() < 1e-13);
    }

    #[test]
    fn matching_residual_vanishes((kind, x2s, kk) in spec_strategy(), x2 in 0.5f64..2.5) {
        let (_, spec) = build(kind, x2s, kk);
        prop_assert!(matching_ode_residual(&spec, x2).unwrap().abs() < 1e-10);
    }

    #[test]
    fn law_slope_matches_difference_quotient((kind, x2s, kk) in spec_strategy(), x2 in 0.5f64..2.5) {
        let (_, spec) = build(kind, x2s, kk);
        let s = 1e-6;
        let fd = (control_law_raw(&spec, x2 + s).unwrap() - control_law_raw(&spec, x2 - s).unwrap()) / (2.0 * s);
        prop_assert!((fd - control_law_derivative(&spec, x2).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn interconnection_times_field_is_the_closed_loop_gradient(
        (kind, x2s, kk) in spec_strategy(), x1 in 0.01f64..0.3, x2 in 0.5f64..2.5
    ) {
        let (m, spec) = build(kind, x2s, kk);
        let sf = structure_functions(&m, &spec);
        let u = control_law_raw(&spec, x2).unwrap();
        let f = m.dynamics([x1, x2], u).unwrap();
        let (a1, a2, b) = sf.hat([x1, x2]).unwrap();
        let qf = [a1 * f[0] + b * f[1], -b * f[0] + a2 * f[1]];
        let d = sf.d_hat([x1, x2]).unwrap();
        prop_assert!((qf[0] - d[0]).abs() < 1e-12 && (qf[1] - d[1]).abs() < 1e-12);
    }

    #[test]
    fn physical_state_round_trip(i in -5.0f64..5.0, v in 0.1f64..60.0) {
        let p = PhysicalParams::bench();
        let (i2, v2) = p.to_physical_state(p.to_normalized_state(i, v));
        prop_assert!((i - i2).abs() < 1e-12 * (1.0 + i.abs()) && (v - v2).abs() < 1e-12 * v);
    }
}
