//! Numerical certification of the stability conditions C1-C6 for a
//! (plant, controller) pair, and path-independent reconstruction of the
//! closed-loop energy from the field `D`.
//!
//! Derivatives are central differences; C6 is a falsification probe (grid
//! sampling plus short closed-loop flows) and never claims a proof.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{control_law_derivative, structure_functions, ControllerSpec, StructureFunctions};
use crate::error::{Error, Result};
use crate::models::{ConverterKind, ConverterModel, State, VOLTAGE_FLOOR};
use crate::ode::rk4_step;
use crate::quadrature::integrate_gl16;

/// Relative central-difference step for cross partials.
pub const FD_STEP: f64 = 1e-5;
pub const TOL_C1: f64 = 1e-12;
pub const TOL_C3: f64 = 1e-6;
pub const TOL_C4: f64 = 1e-10;
pub const TOL_PD: f64 = 1e-10;
/// Dissipation magnitude below which a point counts as inside the C6 set.
pub const TOL_SET: f64 = 1e-12;
/// Entrywise agreement required between the numerical and analytic C5 matrices.
pub const TOL_C5_ANALYTIC: f64 = 1e-6;

const C6_HORIZON: f64 = 20.0;
const C6_DT: f64 = 1e-2;
const C6_EQ_RADIUS: f64 = 1e-6;
const C6_SCAN_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationRegion {
    pub x1_range: [f64; 2],
    pub x2_range: [f64; 2],
    pub grid_n: usize,
}

impl VerificationRegion {
    pub fn new(x1_range: [f64; 2], x2_range: [f64; 2], grid_n: usize) -> Result<Self> {
        let r = Self {
            x1_range,
            x2_range,
            grid_n,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[1] > r[0];
        if !ok_range(self.x1_range) || !ok_range(self.x2_range) {
            return Err(Error::InvalidParameter(format!(
                "region ranges must have positive length: {:?} x {:?}",
                self.x1_range, self.x2_range
            )));
        }
        if self.x2_range[0] < VOLTAGE_FLOOR {
            return Err(Error::InvalidParameter(format!(
                "region lower voltage {} is below the floor {VOLTAGE_FLOOR}",
                self.x2_range[0]
            )));
        }
        if self.grid_n < 2 {
            return Err(Error::InvalidParameter("grid_n must be at least 2".into()));
        }
        Ok(())
    }

    /// Region `[a x1*, b x1*] x [a x2*, b x2*]`.
    pub fn around(x_star: State, lo: f64, hi: f64, grid_n: usize) -> Result<Self> {
        Self::new(
            [lo * x_star[0], hi * x_star[0]],
            [lo * x_star[1], hi * x_star[1]],
            grid_n,
        )
    }

    pub fn contains(&self, x: State) -> bool {
        (self.x1_range[0]..=self.x1_range[1]).contains(&x[0])
            && (self.x2_range[0]..=self.x2_range[1]).contains(&x[1])
    }

    fn axis(range: [f64; 2], n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64)
    }

    pub fn points(&self) -> Vec<State> {
        let mut pts = Vec::with_capacity(self.grid_n * self.grid_n);
        for x1 in Self::axis(self.x1_range, self.grid_n) {
            for x2 in Self::axis(self.x2_range, self.grid_n) {
                pts.push([x1, x2]);
            }
        }
        pts
    }
}

fn step_for(v: f64, rel: f64) -> f64 {
    rel * v.abs().max(1e-3)
}

/// Central-difference Jacobian, `J[i][j] = d field_i / d x_j`.
pub fn jacobian_fd<F>(field: &F, x: State, rel_step: f64) -> Result<[[f64; 2]; 2]>
where
    F: Fn(State) -> Result<[f64; 2]>,
{
    let mut jac = [[0.0; 2]; 2];
    for j in 0..2 {
        let s = step_for(x[j], rel_step);
        let mut xp = x;
        let mut xm = x;
        xp[j] += s;
        xm[j] -= s;
        let fp = field(xp)?;
        let fm = field(xm)?;
        for i in 0..2 {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * s);
        }
    }
    Ok(jac)
}

/// Largest `|d field_1/d x2 - d field_2/d x1|` over the region grid.
pub fn max_asymmetry<F>(field: F, region: &VerificationRegion, rel_step: f64) -> Result<f64>
where
    F: Fn(State) -> Result<[f64; 2]> + Sync,
{
    region
        .points()
        .par_iter()
        .map(|&x| {
            let j = jacobian_fd(&field, x, rel_step)?;
            Ok((j[0][1] - j[1][0]).abs())
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

pub fn check_c3_symmetry(model: &ConverterModel, spec: &ControllerSpec, region: &VerificationRegion) -> Result<f64> {
    let sf = structure_functions(model, spec);
    max_asymmetry(|x| sf.d_hat(x), region, FD_STEP)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C5Result {
    /// Numerical Jacobian of `D` at the equilibrium.
    pub matrix: [[f64; 2]; 2],
    /// Closed-form Jacobian at the equilibrium.
    pub analytic: [[f64; 2]; 2],
    pub max_analytic_deviation: f64,
    /// Eigenvalues of the symmetric part, ascending.
    pub eigenvalues: [f64; 2],
    pub leading_minors: [f64; 2],
    pub pass: bool,
}

pub fn check_c5_hessian(model: &ConverterModel, spec: &ControllerSpec) -> Result<C5Result> {
    let eq = &spec.eq;
    if !(eq.h_prime_star > 0.0) {
        return Err(Error::AssumptionViolated(format!("h'(x2*) = {}", eq.h_prime_star)));
    }
    let sf = structure_functions(model, spec);
    let matrix = jacobian_fd(&|x| sf.d_hat(x), eq.state(), FD_STEP)?;
    let analytic = match spec.kind {
        ConverterKind::Buck => [[1.0, 0.0], [0.0, spec.k * eq.h_prime_star]],
        _ => {
            let du = control_law_derivative(spec, eq.x2_star)?;
            let km1 = spec.k - 1.0;
            [[km1, 0.0], [0.0, km1 * (du / (eq.u_star * eq.u_star) + 1.0)]]
        }
    };
    let mut dev: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            dev = dev.max((matrix[i][j] - analytic[i][j]).abs());
        }
    }
    let m = Matrix2::new(matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]);
    let sym = (m + m.transpose()) * 0.5;
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let eigenvalues = [eig[0], eig[1]];
    let leading_minors = [matrix[0][0], m.determinant()];
    let pass = eigenvalues[0] > TOL_PD && leading_minors.iter().all(|&v| v > TOL_PD);
    Ok(C5Result {
        matrix,
        analytic,
        max_analytic_deviation: dev,
        eigenvalues,
        leading_minors,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C6Report {
    pub lines_scanned: usize,
    pub points_in_set: usize,
    pub equilibrium_hits: usize,
    pub left_set: usize,
    /// Points of the set whose short flow never left it.
    pub counterexamples: Vec<State>,
    pub note: String,
    pub pass: Option<bool>,
}

fn bisect_root<F>(f: &F, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Candidate points of `{alpha1 f1^2 + alpha2 f2^2 = 0}` on the vertical line `x1`.
fn set_points_on_line(sf: &StructureFunctions<'_>, x1: f64, x2_range: [f64; 2]) -> Result<Vec<State>> {
    let n = C6_SCAN_POINTS;
    let xs: Vec<f64> = VerificationRegion::axis(x2_range, n).collect();
    let mut out = Vec::new();
    // each factor whose zero can put a point in the set
    let factors: [&dyn Fn(f64) -> Result<f64>; 4] = [
        &|x2| Ok(sf.f_hat([x1, x2])?[0]),
        &|x2| Ok(sf.f_hat([x1, x2])?[1]),
        &|x2| Ok(sf.hat([x1, x2])?.0),
        &|x2| Ok(sf.hat([x1, x2])?.1),
    ];
    for factor in factors {
        let vals: Vec<f64> = xs.iter().map(|&x2| factor(x2)).collect::<Result<_>>()?;
        for i in 0..n {
            if vals[i] == 0.0 {
                out.push([x1, xs[i]]);
            } else if i + 1 < n && vals[i + 1] != 0.0 && (vals[i] < 0.0) != (vals[i + 1] < 0.0) {
                out.push([x1, bisect_root(&factor, xs[i], xs[i + 1], vals[i])?]);
            }
        }
    }
    let mut in_set = Vec::new();
    for p in out {
        if sf.dissipation(p)?.abs() < TOL_SET && !in_set.contains(&p) {
            in_set.push(p);
        }
    }
    Ok(in_set)
}

fn leaves_set(sf: &StructureFunctions<'_>, x0: State) -> Result<bool> {
    let steps = (C6_HORIZON / C6_DT).round() as usize;
    let mut x = x0;
    for _ in 0..steps {
        x = rk4_step(|y| sf.f_hat(*y), &x, C6_DT)?;
        if sf.dissipation(x)?.abs() >= TOL_SET {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn check_c6_residual_set(
    model: &ConverterModel,
    spec: &ControllerSpec,
    region: &VerificationRegion,
    n_samples: usize,
) -> C6Report {
    if n_samples == 0 {
        return C6Report {
            lines_scanned: 0,
            points_in_set: 0,
            equilibrium_hits: 0,
            left_set: 0,
            counterexamples: Vec::new(),
            note: "no samples requested; condition undetermined".into(),
            pass: None,
        };
    }
    let sf = structure_functions(model, spec);
    let x_star = spec.eq.state();
    let lines: Vec<f64> = VerificationRegion::axis(region.x1_range, n_samples.max(2))
        .take(n_samples)
        .collect();
    let mut candidates = Vec::new();
    let mut failure = None;
    for &x1 in &lines {
        match set_points_on_line(&sf, x1, region.x2_range) {
            Ok(p) => candidates.extend(p),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let mut report = C6Report {
        lines_scanned: lines.len(),
        points_in_set: candidates.len(),
        equilibrium_hits: 0,
        left_set: 0,
        counterexamples: Vec::new(),
        note: String::new(),
        pass: None,
    };
    if let Some(e) = failure {
        report.note = format!("probe aborted: {e}");
        return report;
    }
    let outcomes: Vec<(State, Result<bool>)> = candidates
        .par_iter()
        .map(|&p| {
            let near_eq = (p[0] - x_star[0]).abs().max((p[1] - x_star[1]).abs()) < C6_EQ_RADIUS;
            if near_eq {
                (p, Ok(false))
            } else {
                (p, leaves_set(&sf, p))
            }
        })
        .collect();
    for (p, outcome) in outcomes {
        let near_eq = (p[0] - x_star[0]).abs().max((p[1] - x_star[1]).abs()) < C6_EQ_RADIUS;
        match outcome {
            _ if near_eq => report.equilibrium_hits += 1,
            Ok(true) => report.left_set += 1,
            // a flow that hits the voltage floor has left the set as well
            Err(_) => report.left_set += 1,
            Ok(false) => report.counterexamples.push(p),
        }
    }
    report.pass = Some(report.counterexamples.is_empty());
    report.note = if report.counterexamples.is_empty() {
        format!(
            "no counterexample found: {} set points sampled, {} left the set within t = {C6_HORIZON}, {} at the equilibrium",
            report.points_in_set, report.left_set, report.equilibrium_hits
        )
    } else {
        format!(
            "{} set points stayed in the set for t = {C6_HORIZON}",
            report.counterexamples.len()
        )
    };
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineIntegralReport {
    pub values: Vec<f64>,
    pub max_spread: f64,
}

const SEGMENT_PIECES: usize = 8;

/// `int D . dx` along the polyline through `waypoints`.
pub fn line_integral<F>(field: F, waypoints: &[State]) -> Result<f64>
where
    F: Fn(State) -> Result<[f64; 2]>,
{
    let mut total = 0.0;
    for seg in waypoints.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        if d == [0.0, 0.0] {
            continue;
        }
        for piece in 0..SEGMENT_PIECES {
            let s0 = piece as f64 / SEGMENT_PIECES as f64;
            let s1 = (piece + 1) as f64 / SEGMENT_PIECES as f64;
            total += integrate_gl16(
                |s| {
                    let v = field([a[0] + s * d[0], a[1] + s * d[1]])?;
                    Ok(v[0] * d[0] + v[1] * d[1])
                },
                s0,
                s1,
            )?;
        }
    }
    Ok(total)
}

/// Distinct piecewise-linear paths from `from` to `to`: the two L-shapes,
/// the straight segment, then two-segment paths bent alternately to either
/// side of the chord.
pub fn candidate_paths(from: State, to: State, n_paths: usize) -> Vec<Vec<State>> {
    let d = [to[0] - from[0], to[1] - from[1]];
    let mid = [0.5 * (from[0] + to[0]), 0.5 * (from[1] + to[1])];
    (0..n_paths)
        .map(|i| match i {
            0 => vec![from, [to[0], from[1]], to],
            1 => vec![from, [from[0], to[1]], to],
            2 => vec![from, to],
            _ => {
                let j = (i - 2) as f64;
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let off = 0.15 * j.sqrt() * sign;
                vec![from, [mid[0] - off * d[1], mid[1] + off * d[0]], to]
            }
        })
        .collect()
}

pub fn reconstruct_p_line_integral(
    model: &ConverterModel,
    spec: &ControllerSpec,
    from: State,
    to: State,
    n_paths: usize,
) -> Result<LineIntegralReport> {
    let sf = structure_functions(model, spec);
    let values = candidate_paths(from, to, n_paths)
        .iter()
        .map(|path| line_integral(|x| sf.d_hat(x), path))
        .collect::<Result<Vec<_>>>()?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_spread = if values.is_empty() { 0.0 } else { max - min };
    Ok(LineIntegralReport { values, max_spread })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConditionFlags {
    pub c1: Option<bool>,
    pub c2: Option<bool>,
    pub c3: Option<bool>,
    pub c4: Option<bool>,
    pub c5: Option<bool>,
    pub c6: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub converter: ConverterKind,
    pub k: f64,
    pub x_star: State,
    pub u_star: f64,
    pub region: VerificationRegion,
    pub c1_min_abs: Option<f64>,
    pub c2_max: Option<f64>,
    pub c3_max_asym: Option<f64>,
    pub c4_residual: Option<f64>,
    pub c5: Option<C5Result>,
    pub c6: C6Report,
    pub pass: ConditionFlags,
    pub errors: BTreeMap<String, String>,
    pub all_pass: bool,
}

fn grid_fold<F>(region: &VerificationRegion, init: f64, eval: F, pick: fn(f64, f64) -> f64) -> Result<f64>
where
    F: Fn(State) -> Result<f64> + Sync,
{
    region
        .points()
        .par_iter()
        .map(|&x| eval(x))
        .try_reduce(|| init, |a, b| Ok(pick(a, b)))
}

pub fn verify_all(model: &ConverterModel, spec: &ControllerSpec, region: &VerificationRegion) -> VerificationReport {
    let sf = structure_functions(model, spec);
    let mut errors = BTreeMap::new();
    let mut pass = ConditionFlags::default();
    let mut record = |name: &str, e: Error| {
        errors.insert(name.to_string(), e.to_string());
    };

    let c1_min_abs = match grid_fold(region, f64::INFINITY, |x| Ok(sf.det_q_hat(x)?.abs()), |a, b| {
        if a.is_nan() || b.is_nan() {
            f64::NAN
        } else {
            a.min(b)
        }
    }) {
        Ok(v) => {
            pass.c1 = Some(v > TOL_C1);
            Some(v)
        }
        Err(e) => {
            record("c1", e);
            pass.c1 = Some(false);
            None
        }
    };

    let positive = VerificationRegion {
        x1_range: [region.x1_range[0].max(0.0), region.x1_range[1]],
        ..*region
    };
    let c2_max = if positive.x1_range[1] < positive.x1_range[0] {
        None
    } else {
        match grid_fold(&positive, f64::NEG_INFINITY, |x| {
            let (a1, a2, _) = sf.hat(x)?;
            Ok(a1.max(a2))
        }, f64::max)
        {
            Ok(v) => {
                pass.c2 = Some(v <= 0.0);
                Some(v)
            }
            Err(e) => {
                record("c2", e);
                pass.c2 = Some(false);
                None
            }
        }
    };

    let c3_max_asym = match check_c3_symmetry(model, spec, region) {
        Ok(v) => {
            pass.c3 = Some(v < TOL_C3);
            Some(v)
        }
        Err(e) => {
            record("c3", e);
            pass.c3 = Some(false);
            None
        }
    };

    let c4_residual = match sf.f_hat(spec.eq.state()) {
        Ok(f) => {
            let r = f[0].abs().max(f[1].abs());
            pass.c4 = Some(r < TOL_C4);
            Some(r)
        }
        Err(e) => {
            record("c4", e);
            pass.c4 = Some(false);
            None
        }
    };

    let c5 = match check_c5_hessian(model, spec) {
        Ok(r) => {
            pass.c5 = Some(r.pass);
            Some(r)
        }
        Err(e) => {
            record("c5", e);
            pass.c5 = Some(false);
            None
        }
    };

    let c6 = check_c6_residual_set(model, spec, region, region.grid_n);
    pass.c6 = c6.pass;

    let all_pass = [pass.c1, pass.c2, pass.c3, pass.c4, pass.c5]
        .iter()
        .all(|p| *p == Some(true))
        && pass.c6 != Some(false);

    VerificationReport {
        converter: spec.kind,
        k: spec.k,
        x_star: spec.eq.state(),
        u_star: spec.eq.u_star,
        region: *region,
        c1_min_abs,
        c2_max,
        c3_max_asym,
        c4_residual,
        c5,
        c6,
        pass,
        errors,
        all_pass,
    }
}
