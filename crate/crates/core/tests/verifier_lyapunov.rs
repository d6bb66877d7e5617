use idapbc::control::{structure_functions, ControllerSpec};
use idapbc::lyapunov::{eval_p_dot, estimate_roa, LyapunovFn, Rect, RoaOptions};
use idapbc::models::{ConverterKind, ConverterModel, PhysicalParams};
use idapbc::sim::{run, Hold, Scenario};
use idapbc::verifier::{check_c3_symmetry, check_c5_hessian, reconstruct_p_line_integral, verify_all, VerificationRegion};
use idapbc::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(kind: ConverterKind, k: f64, x2s: f64) -> (ConverterModel, ControllerSpec) {
    let m = ConverterModel::from_physical(kind, &PhysicalParams::bench());
    let s = ControllerSpec::new_unchecked(&m, k, x2s).unwrap();
    (m, s)
}

#[test]
fn buck_energy_equals_path_integral() {
    let (m, s) = setup(ConverterKind::Buck, 0.1, 20.0 / 24.0);
    let lf = LyapunovFn::new(&s).unwrap();
    let rep = reconstruct_p_line_integral(&m, &s, s.eq.state(), [0.04, 0.9], 3).unwrap();
    let p = lf.eval([0.04, 0.9]).unwrap();
    for v in rep.values {
        assert!((v - p).abs() < 1e-7, "{v} vs {p}");
    }
}

#[test]
fn buck_boost_gradient_is_closed_loop_field() {
    let (m, s) = setup(ConverterKind::BuckBoost, 1.6523, 1.25);
    let lf = LyapunovFn::new(&s).unwrap();
    let sf = structure_functions(&m, &s);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let x = [rng.random_range(0.01..0.3), rng.random_range(0.3..2.5)];
        let d = sf.d_hat(x).unwrap();
        let h = 1e-6;
        let g1 = (lf.eval([x[0] + h, x[1]]).unwrap() - lf.eval([x[0] - h, x[1]]).unwrap()) / (2.0 * h);
        let g2 = (lf.eval([x[0], x[1] + h]).unwrap() - lf.eval([x[0], x[1] - h]).unwrap()) / (2.0 * h);
        assert!((g1 - d[0]).abs() < 1e-5 && (g2 - d[1]).abs() < 1e-5, "{x:?}");
    }
}

#[test]
fn boost_closed_form_matches_path_integral_with_corrected_constant() {
    let (m, s) = setup(ConverterKind::Boost, 3.0, 1.25);
    let lf = LyapunovFn::new(&s).unwrap();
    let to = [0.12, 1.4];
    let rep = reconstruct_p_line_integral(&m, &s, s.eq.state(), to, 3).unwrap();
    assert!((rep.values[0] - lf.eval(to).unwrap()).abs() < 1e-7);
    let chk = lf.boost_constant_check().unwrap();
    assert!(!chk.consistent);
}

#[test]
fn energy_positive_near_equilibrium() {
    for (kind, k, x2s) in [
        (ConverterKind::Buck, 0.1, 20.0 / 24.0),
        (ConverterKind::Boost, 3.0, 1.25),
        (ConverterKind::BuckBoost, 1.6523, 1.25),
    ] {
        let (_, s) = setup(kind, k, x2s);
        let lf = LyapunovFn::new(&s).unwrap();
        let xs = s.eq.state();
        let r_small = 0.05 * xs[0].hypot(xs[1]);
        for i in 0..40 {
            for j in 1..=10 {
                let a = i as f64 * std::f64::consts::TAU / 40.0;
                let r = r_small * j as f64 / 10.0;
                let x = [xs[0] + r * a.cos(), xs[1] + r * a.sin()];
                assert!(lf.eval(x).unwrap() > 0.0, "{kind} {x:?}");
            }
        }
    }
}

#[test]
fn energy_rate_matches_numerical_derivative_along_flow() {
    let (m, s) = setup(ConverterKind::Buck, 0.1, 20.0 / 24.0);
    let lf = LyapunovFn::new(&s).unwrap();
    let errs: Vec<f64> = [0.02, 0.01].iter().map(|&dt| {
        let mut scn = Scenario::new("pd", ConverterKind::Buck, PhysicalParams::bench(), [0.015, 1.15], 0.1, 20.0 / 24.0);
        scn.dt = dt;
        scn.t_end = 4.0 * dt;
        scn.hold = Hold::Continuous;
        let tr = run(&scn).unwrap();
        let p: Vec<f64> = tr.rows.iter().map(|r| lf.eval(r.x).unwrap()).collect();
        // centered difference at the middle row
        let num = (p[3] - p[1]) / (2.0 * dt);
        (num - eval_p_dot(&m, &s, tr.rows[2].x).unwrap()).abs()
    }).collect();
    assert!(errs[0] < 1e-8);
    let ratio = errs[0] / errs[1];
    assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
}

#[test]
fn three_paths_agree_for_buck_boost() {
    let (m, s) = setup(ConverterKind::BuckBoost, 1.6523, 1.25);
    let rep = reconstruct_p_line_integral(&m, &s, s.eq.state(), [0.05, 0.9], 3).unwrap();
    assert_eq!(rep.values.len(), 3);
    assert!(rep.max_spread < 1e-7);
}

#[test]
fn c3_small_on_25_grid_and_c5_fails_below_bound() {
    let (m, s) = setup(ConverterKind::BuckBoost, 1.6523, 1.25);
    let region = VerificationRegion::around(s.eq.state(), 0.5, 1.5, 25).unwrap();
    assert!(check_c3_symmetry(&m, &s, &region).unwrap() < 1e-6);
    let (m, s) = setup(ConverterKind::BuckBoost, 1.0, 1.25);
    assert!(!check_c5_hessian(&m, &s).unwrap().pass);
    assert!(!verify_all(&m, &s, &region).all_pass);
}

#[test]
fn roa_without_equilibrium_in_box() {
    let (m, s) = setup(ConverterKind::BuckBoost, 3.0, 1.25);
    let lf = LyapunovFn::new(&s).unwrap();
    let rect = Rect { x1_range: [0.0, 0.3], x2_range: [1.5, 4.0] };
    let err = estimate_roa(&lf, &m, &rect, &[0.0025], &RoaOptions::default()).unwrap_err();
    assert_eq!(err, Error::NoPassingLevel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dissipation_non_positive(kind in 0usize..3, x1 in 0.0f64..0.5, x2 in 0.05f64..3.0) {
        let (kind, k, x2s) = [
            (ConverterKind::Buck, 0.1, 20.0 / 24.0),
            (ConverterKind::Boost, 3.0, 1.25),
            (ConverterKind::BuckBoost, 1.6523, 1.25),
        ][kind];
        let (m, s) = setup(kind, k, x2s);
        prop_assert!(eval_p_dot(&m, &s, [x1, x2]).unwrap() <= 0.0);
    }

    #[test]
    fn closed_form_gradient_equals_field(kind in 0usize..3, x1 in 0.0f64..0.5, x2 in 0.3f64..3.0) {
        let (kind, k, x2s) = [
            (ConverterKind::Buck, 0.1, 20.0 / 24.0),
            (ConverterKind::Boost, 3.0, 1.25),
            (ConverterKind::BuckBoost, 1.6523, 1.25),
        ][kind];
        let (m, s) = setup(kind, k, x2s);
        let g = LyapunovFn::new(&s).unwrap().gradient([x1, x2]).unwrap();
        let d = structure_functions(&m, &s).d_hat([x1, x2]).unwrap();
        prop_assert!((g[0] - d[0]).abs() < 1e-12 && (g[1] - d[1]).abs() < 1e-12);
    }
}
