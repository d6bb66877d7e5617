//! Closed-form Lyapunov functions for the resistive + constant-power load and
//! sublevel-set estimates of the region of attraction.
//!
//! Every function is separable, `P(x) = a(x1) + m(x2)`, with `grad P = D`
//! along the closed loop and `P(x*) = 0`:
//!
//! ```text
//! Buck:       a = (x1 - x1*)^2 / 2
//!             m = k R (x2^2 - x2*^2) / 2 - k x1* (x2 - x2*) + k P ln(x2 / x2*)
//! Boost:      a = (k - 1)(x1 - x1*)^2 / 2
//!             m = c/(2R) [ k ln((x2 h + c) / (k x1*)) - ln(x2 h / x1*) ]
//! Buck-Boost: a = (k - 1)(x1 - x1*)^2 / 2
//!             m = k (x2^2 - x2*^2) / 2 + k (x2 - x2*) - c/(2R) ln(x2 h / (x2* h*))
//!                 - k int_{x2*}^{x2} g^2 h / (g h + c) ds
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{contours, Polyline, ScalarGrid};
use crate::control::{structure_functions, ControllerSpec};
use crate::error::{Error, Result};
use crate::models::{ConverterKind, ConverterModel, NormalizedLoadParams, State, VOLTAGE_FLOOR};
use crate::ode::rk4_step;
use crate::quadrature::{adaptive_simpson, integrate_gl16};

/// Absolute tolerance of the Buck-Boost integral term.
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LyapunovFn {
    pub kind: ConverterKind,
    pub spec: ControllerSpec,
    pub load: NormalizedLoadParams,
}

/// Additive constant of the Boost energy: the value that makes `P(x*) = 0`
/// next to the constant `+(c/2R) ln((k x1*)^k / x1*)` found in the printed
/// form of the function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantCheck {
    pub printed: f64,
    pub derived: f64,
    pub consistent: bool,
}

impl LyapunovFn {
    pub fn new(spec: &ControllerSpec) -> Result<Self> {
        let load = spec.load.params().ok_or_else(|| {
            Error::InvalidParameter("closed-form energy needs the resistive + constant-power load".into())
        })?;
        if spec.kind != ConverterKind::Buck && !(load.r > 0.0) {
            return Err(Error::InvalidParameter(
                "Boost/Buck-Boost energy requires R > 0".into(),
            ));
        }
        Ok(Self {
            kind: spec.kind,
            spec: spec.clone(),
            load,
        })
    }

    fn h(&self, x2: f64) -> Result<f64> {
        if !(x2 >= VOLTAGE_FLOOR) {
            return Err(Error::VoltageFloorViolation {
                x2,
                floor: VOLTAGE_FLOOR,
            });
        }
        Ok(self.load.r * x2 + self.load.p / x2)
    }

    /// The `x1` part of `P`.
    pub fn current_part(&self, x1: f64) -> f64 {
        let d = x1 - self.spec.eq.x1_star;
        match self.kind {
            ConverterKind::Buck => 0.5 * d * d,
            _ => 0.5 * (self.spec.k - 1.0) * d * d,
        }
    }

    fn bb_integrand(&self, s: f64) -> Result<f64> {
        let h = self.h(s)?;
        let g = s + 1.0;
        Ok(g * g * h / (g * h + self.spec.c))
    }

    /// The `x2` part of `P`.
    pub fn voltage_part(&self, x2: f64) -> Result<f64> {
        let h = self.h(x2)?;
        let eq = &self.spec.eq;
        let (k, c) = (self.spec.k, self.spec.c);
        let NormalizedLoadParams { r, p } = self.load;
        let xs = eq.x2_star;
        Ok(match self.kind {
            ConverterKind::Buck => {
                0.5 * k * r * (x2 * x2 - xs * xs) - k * eq.x1_star * (x2 - xs) + k * p * (x2 / xs).ln()
            }
            ConverterKind::Boost => {
                let x1s = eq.x1_star;
                c / (2.0 * r) * (k * ((x2 * h + c) / (k * x1s)).ln() - (x2 * h / x1s).ln())
            }
            ConverterKind::BuckBoost => {
                let integral = adaptive_simpson(|s| self.bb_integrand(s), xs, x2, QUADRATURE_TOL)?;
                0.5 * k * (x2 * x2 - xs * xs) + k * (x2 - xs) - c / (2.0 * r) * (x2 * h / (xs * eq.h_star)).ln()
                    - k * integral
            }
        })
    }

    pub fn eval(&self, x: State) -> Result<f64> {
        Ok(self.current_part(x[0]) + self.voltage_part(x[1])?)
    }

    /// `P(to) - P(from)`; the Buck-Boost integral is taken over `[from2, to2]`
    /// only, which keeps per-step increments along trajectories accurate.
    pub fn increment(&self, from: State, to: State) -> Result<f64> {
        let da = self.current_part(to[0]) - self.current_part(from[0]);
        match self.kind {
            ConverterKind::BuckBoost => {
                let (k, c, r) = (self.spec.k, self.spec.c, self.load.r);
                let (a, b) = (from[1], to[1]);
                let ha = self.h(a)?;
                let hb = self.h(b)?;
                let integral = if a == b {
                    0.0
                } else {
                    integrate_gl16(|s| self.bb_integrand(s), a, b)?
                };
                let dm = 0.5 * k * (b * b - a * a) + k * (b - a) - c / (2.0 * r) * ((b * hb) / (a * ha)).ln()
                    - k * integral;
                Ok(da + dm)
            }
            _ => Ok(da + self.voltage_part(to[1])? - self.voltage_part(from[1])?),
        }
    }

    /// Closed-form gradient.
    pub fn gradient(&self, x: State) -> Result<[f64; 2]> {
        let h = self.h(x[1])?;
        let eq = &self.spec.eq;
        let (k, c) = (self.spec.k, self.spec.c);
        Ok(match self.kind.g(x[1]) {
            None => [x[0] - eq.x1_star, k * (h - eq.h_star)],
            Some(g) => [(k - 1.0) * (x[0] - eq.x1_star), -c / h + k * c * g / (g * h + c)],
        })
    }

    /// For the Boost, compares the constant enforcing `P(x*) = 0` with the
    /// printed `+(c/2R) ln((k x1*)^k / x1*)`.
    pub fn boost_constant_check(&self) -> Option<ConstantCheck> {
        if self.kind != ConverterKind::Boost {
            return None;
        }
        let (k, c, r) = (self.spec.k, self.spec.c, self.load.r);
        let x1s = self.spec.eq.x1_star;
        let printed = c / (2.0 * r) * (k * (k * x1s).ln() - x1s.ln());
        // P(x*) = 0 fixes the constant at minus the log terms evaluated at x*
        let xs = self.spec.eq.x2_star;
        let hs = self.spec.eq.h_star;
        let derived = -c / (2.0 * r) * (k * (xs * hs + c).ln() - (xs * hs).ln());
        let consistent = (printed - derived).abs() <= 1e-12 * (1.0 + derived.abs());
        Some(ConstantCheck {
            printed,
            derived,
            consistent,
        })
    }
}

/// `alpha1 f1^2 + alpha2 f2^2` along the closed loop, i.e. `dP/dt`.
pub fn eval_p_dot(model: &ConverterModel, spec: &ControllerSpec, x: State) -> Result<f64> {
    structure_functions(model, spec).dissipation(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x1_range: [f64; 2],
    pub x2_range: [f64; 2],
}

impl Rect {
    pub fn contains(&self, x: State) -> bool {
        (self.x1_range[0]..=self.x1_range[1]).contains(&x[0])
            && (self.x2_range[0]..=self.x2_range[1]).contains(&x[1])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x1_range[1] > self.x1_range[0]
            && self.x2_range[1] > self.x2_range[0]
            && self.x1_range[0] >= 0.0
            && self.x2_range[0] >= VOLTAGE_FLOOR;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "constraint region must be a non-empty box in the positive orthant with x2 >= {VOLTAGE_FLOOR}: {:?} x {:?}",
                self.x1_range, self.x2_range
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoaOptions {
    pub grid_n: usize,
    pub n_boundary: usize,
    pub horizon: f64,
    pub dt: f64,
    pub convergence_tol: f64,
    pub monotonicity_tol: f64,
    /// Points kept per probe trajectory for plotting.
    pub trace_points: usize,
}

impl Default for RoaOptions {
    fn default() -> Self {
        Self {
            grid_n: 400,
            n_boundary: 64,
            horizon: 2000.0,
            dt: 1e-2,
            convergence_tol: 1e-4,
            monotonicity_tol: 1e-9,
            trace_points: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub start: State,
    pub end: State,
    pub converged: bool,
    pub monotone: bool,
    pub stayed_in_region: bool,
    /// Largest single-step increase of `P`.
    pub max_increase: f64,
    pub failure: Option<String>,
    #[serde(skip)]
    pub trace: Vec<State>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub p_bar: f64,
    pub contours: Vec<Polyline>,
    /// Index into `contours` of the curve bounding the component of `x*`.
    pub enclosing: Option<usize>,
    pub contained: bool,
    pub probes: Vec<ProbeOutcome>,
    pub all_converged: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoaEstimate {
    pub p_bar: f64,
    pub contained_in_orthant: bool,
    pub invariance_samples: usize,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoaOutcome {
    pub best: RoaEstimate,
    pub levels: Vec<LevelReport>,
}

/// `P` on the `grid_n x grid_n` grid over `rect`; non-evaluable nodes are NaN.
pub fn energy_grid(lf: &LyapunovFn, rect: &Rect, grid_n: usize) -> ScalarGrid {
    let xs = ScalarGrid::linspace(rect.x1_range, grid_n);
    let ys = ScalarGrid::linspace(rect.x2_range, grid_n);
    let a: Vec<f64> = xs.iter().map(|&x1| lf.current_part(x1)).collect();
    let b: Vec<f64> = ys
        .par_iter()
        .map(|&x2| lf.voltage_part(x2).unwrap_or(f64::NAN))
        .collect();
    ScalarGrid::separable(xs, ys, &a, &b)
}

/// Whether the grid component of `{P <= p_bar}` holding `x*` stays off the
/// grid border.
fn component_contained(grid: &ScalarGrid, x_star: State, p_bar: f64) -> bool {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (i0, j0) = grid.nearest(x_star);
    if !(grid.at(i0, j0) <= p_bar) {
        return false;
    }
    let mut seen = vec![false; nx * ny];
    let mut stack = vec![(i0, j0)];
    seen[j0 * nx + i0] = true;
    while let Some((i, j)) = stack.pop() {
        if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
            return false;
        }
        for (a, b) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
            let idx = b * nx + a;
            if !seen[idx] && grid.at(a, b) <= p_bar {
                seen[idx] = true;
                stack.push((a, b));
            }
        }
    }
    true
}

pub fn level_curves(grid: &ScalarGrid, p_bar: f64) -> Vec<Polyline> {
    contours(grid, p_bar)
}

/// Closed-loop flow from `start`: `P` must not rise by more than the
/// monotonicity tolerance per step and the state must end within the
/// convergence tolerance of `x*`.
pub fn probe_trajectory(
    lf: &LyapunovFn,
    model: &ConverterModel,
    rect: &Rect,
    start: State,
    opts: &RoaOptions,
) -> ProbeOutcome {
    let sf = structure_functions(model, &lf.spec);
    let x_star = lf.spec.eq.state();
    let steps = (opts.horizon / opts.dt).round() as usize;
    let stride = (steps / opts.trace_points.max(1)).max(1);
    let mut out = ProbeOutcome {
        start,
        end: start,
        converged: false,
        monotone: true,
        stayed_in_region: rect.contains(start),
        max_increase: f64::NEG_INFINITY,
        failure: None,
        trace: vec![start],
    };
    let mut x = start;
    for n in 0..steps {
        let next = match rk4_step(|y| sf.f_hat(*y), &x, opts.dt) {
            Ok(v) => v,
            Err(e) => {
                out.failure = Some(e.to_string());
                break;
            }
        };
        match lf.increment(x, next) {
            Ok(d) => {
                out.max_increase = out.max_increase.max(d);
                if d > opts.monotonicity_tol {
                    out.monotone = false;
                }
            }
            Err(e) => {
                out.failure = Some(e.to_string());
                break;
            }
        }
        if !rect.contains(next) {
            out.stayed_in_region = false;
        }
        x = next;
        if (n + 1) % stride == 0 {
            out.trace.push(x);
        }
    }
    out.end = x;
    out.converged = out.failure.is_none() && (x[0] - x_star[0]).abs().max((x[1] - x_star[1]).abs()) < opts.convergence_tol;
    out
}

pub fn analyze_level(
    lf: &LyapunovFn,
    model: &ConverterModel,
    rect: &Rect,
    grid: &ScalarGrid,
    p_bar: f64,
    opts: &RoaOptions,
) -> LevelReport {
    let x_star = lf.spec.eq.state();
    let curves = level_curves(grid, p_bar);
    let contained = rect.contains(x_star) && component_contained(grid, x_star, p_bar);
    let enclosing = curves
        .iter()
        .enumerate()
        .filter(|(_, c)| c.closed && c.contains(x_star))
        .max_by(|a, b| a.1.signed_area().abs().total_cmp(&b.1.signed_area().abs()))
        .map(|(i, _)| i);
    let mut report = LevelReport {
        p_bar,
        contours: curves,
        enclosing,
        contained,
        probes: Vec::new(),
        all_converged: false,
        passed: false,
    };
    let Some(idx) = enclosing.filter(|_| contained) else {
        return report;
    };
    let starts = report.contours[idx].resample(opts.n_boundary);
    report.probes = starts
        .par_iter()
        .map(|&s| probe_trajectory(lf, model, rect, s, opts))
        .collect();
    report.all_converged = !report.probes.is_empty() && report.probes.iter().all(|p| p.converged);
    report.passed = report.all_converged && report.probes.iter().all(|p| p.monotone && p.stayed_in_region);
    report
}

/// Analyzes candidate levels in descending order. With `stop_at_pass` the
/// scan ends at the first passing level.
pub fn scan_levels(
    lf: &LyapunovFn,
    model: &ConverterModel,
    rect: &Rect,
    p_bars: &[f64],
    opts: &RoaOptions,
    stop_at_pass: bool,
) -> Result<Vec<LevelReport>> {
    rect.validate()?;
    if opts.grid_n < 2 || !(opts.dt > 0.0) || !(opts.horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "invalid region-of-attraction options: grid_n={}, dt={}, horizon={}",
            opts.grid_n, opts.dt, opts.horizon
        )));
    }
    let mut levels: Vec<f64> = p_bars.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    if !rect.contains(lf.spec.eq.state()) {
        return Ok(Vec::new());
    }
    let grid = energy_grid(lf, rect, opts.grid_n);
    let mut reports = Vec::new();
    for p_bar in levels {
        let rep = analyze_level(lf, model, rect, &grid, p_bar, opts);
        let passed = rep.passed;
        reports.push(rep);
        if passed && stop_at_pass {
            break;
        }
    }
    Ok(reports)
}

/// Summary of the largest passing level among `reports`.
pub fn best_level(reports: &[LevelReport]) -> Option<RoaEstimate> {
    reports
        .iter()
        .filter(|r| r.passed)
        .max_by(|a, b| a.p_bar.total_cmp(&b.p_bar))
        .map(|r| RoaEstimate {
            p_bar: r.p_bar,
            contained_in_orthant: r.contained,
            invariance_samples: r.probes.len(),
            all_converged: r.all_converged,
        })
}

/// Largest candidate level whose sublevel component around `x*` lies in
/// `rect` and whose boundary flows all decrease `P` and converge.
pub fn estimate_roa(
    lf: &LyapunovFn,
    model: &ConverterModel,
    rect: &Rect,
    p_bars: &[f64],
    opts: &RoaOptions,
) -> Result<RoaOutcome> {
    let levels = scan_levels(lf, model, rect, p_bars, opts, true)?;
    let best = best_level(&levels).ok_or(Error::NoPassingLevel)?;
    Ok(RoaOutcome { best, levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PhysicalParams;

    fn setup(kind: ConverterKind, k: f64, x2s: f64) -> (ConverterModel, LyapunovFn) {
        let m = ConverterModel::from_physical(kind, &PhysicalParams::bench());
        let spec = ControllerSpec::new(&m, k, x2s).unwrap();
        let lf = LyapunovFn::new(&spec).unwrap();
        (m, lf)
    }

    #[test]
    fn zero_at_equilibrium() {
        for (kind, k, x2s) in [
            (ConverterKind::Buck, 0.1, 20.0 / 24.0),
            (ConverterKind::Boost, 3.0, 1.25),
            (ConverterKind::BuckBoost, 1.6523, 1.25),
        ] {
            let (_, lf) = setup(kind, k, x2s);
            assert!(lf.eval(lf.spec.eq.state()).unwrap().abs() < 1e-15, "{kind}");
        }
    }

    #[test]
    fn closed_form_gradient_matches_finite_difference() {
        for (kind, k, x2s) in [
            (ConverterKind::Buck, 0.1, 20.0 / 24.0),
            (ConverterKind::Boost, 3.0, 1.25),
            (ConverterKind::BuckBoost, 1.6523, 1.25),
        ] {
            let (_, lf) = setup(kind, k, x2s);
            for x in [[0.02, 0.7], [0.09, 1.4], [0.05, 1.0]] {
                let g = lf.gradient(x).unwrap();
                let s = 1e-6;
                let d1 = (lf.eval([x[0] + s, x[1]]).unwrap() - lf.eval([x[0] - s, x[1]]).unwrap()) / (2.0 * s);
                let d2 = (lf.eval([x[0], x[1] + s]).unwrap() - lf.eval([x[0], x[1] - s]).unwrap()) / (2.0 * s);
                assert!((g[0] - d1).abs() < 1e-7 && (g[1] - d2).abs() < 1e-7, "{kind} {x:?}");
            }
        }
    }

    #[test]
    fn boost_printed_constant_has_opposite_sign() {
        let (_, lf) = setup(ConverterKind::Boost, 3.0, 1.25);
        let chk = lf.boost_constant_check().unwrap();
        assert!(!chk.consistent);
        assert!((chk.printed + chk.derived).abs() < 1e-12 * (1.0 + chk.derived.abs()));
    }

    #[test]
    fn increment_matches_difference() {
        let (_, lf) = setup(ConverterKind::BuckBoost, 3.0, 1.25);
        let (a, b) = ([0.07, 1.1], [0.071, 1.1004]);
        let d = lf.increment(a, b).unwrap();
        let e = lf.eval(b).unwrap() - lf.eval(a).unwrap();
        assert!((d - e).abs() < 1e-12, "{d} vs {e}");
    }

    #[test]
    fn p_dot_non_positive() {
        let (m, lf) = setup(ConverterKind::Buck, 0.1, 20.0 / 24.0);
        let v = eval_p_dot(&m, &lf.spec, [0.04, 0.9]).unwrap();
        assert!(v < 0.0);
        assert_eq!(eval_p_dot(&m, &lf.spec, lf.spec.eq.state()).unwrap(), 0.0);
    }

    #[test]
    fn region_without_equilibrium_has_no_level() {
        let (m, lf) = setup(ConverterKind::Buck, 0.1, 20.0 / 24.0);
        let rect = Rect {
            x1_range: [0.05, 0.1],
            x2_range: [0.1, 2.0],
        };
        let r = estimate_roa(&lf, &m, &rect, &[0.0003], &RoaOptions::default());
        assert_eq!(r.unwrap_err(), Error::NoPassingLevel);
    }

    #[test]
    fn containment_rejects_levels_crossing_the_border() {
        let (_, lf) = setup(ConverterKind::Buck, 0.1, 20.0 / 24.0);
        let rect = Rect {
            x1_range: [0.0, 0.1],
            x2_range: [0.01, 2.5],
        };
        let grid = energy_grid(&lf, &rect, 200);
        assert!(component_contained(&grid, lf.spec.eq.state(), 0.0003));
        // x1 half-width sqrt(2 p_bar) exceeds x1*
        assert!(!component_contained(&grid, lf.spec.eq.state(), 0.001));
    }
}
