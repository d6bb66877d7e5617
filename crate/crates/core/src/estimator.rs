//! Least-squares load identification with forgetting and finite-convergence-time
//! reconstruction.
//!
//! The load current satisfies `i_L = phi(x2)^T theta` with `phi = (x2, 1/x2)`
//! and `theta = (G E, P_cpl / E)`. The estimator runs
//!
//! ```text
//! theta_hat' = gamma F phi (i_L - phi^T theta_hat)
//! F'         = -gamma F phi phi^T F + chi F,   chi = chi0 (1 - |F|_F / sigma)
//! z'         = -chi z
//! ```
//!
//! and `theta_fct = [I - z f0 F]^-1 [theta_hat - z f0 F theta0]`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::VOLTAGE_FLOOR;
use crate::ode::rk4_step;

pub const BLOWUP_NORM: f64 = 1e12;
pub const MAX_CONDITION: f64 = 1e10;
pub const DEFAULT_KAPPA: f64 = 1e-4;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorHyper {
    pub gamma: f64,
    pub chi0: f64,
    pub sigma: f64,
    pub f0: f64,
    pub theta0: [f64; 2],
}

impl EstimatorHyper {
    pub fn new(gamma: f64, chi0: f64, sigma: f64, f0: f64, theta0: [f64; 2]) -> Result<Self> {
        let h = Self {
            gamma,
            chi0,
            sigma,
            f0,
            theta0,
        };
        h.validate()?;
        Ok(h)
    }

    /// Plain least squares: no forgetting, `z` stays at one.
    pub fn without_forgetting(gamma: f64, f0: f64, theta0: [f64; 2]) -> Result<Self> {
        let h = Self {
            gamma,
            chi0: 0.0,
            sigma: f64::INFINITY,
            f0,
            theta0,
        };
        if !(gamma > 0.0 && f0 > 0.0 && f0.is_finite()) || !theta0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!("estimator gains gamma={gamma}, f0={f0}")));
        }
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.chi0 > 0.0 && self.chi0.is_finite()) {
            return bad(format!("chi0 must be positive, got {}", self.chi0));
        }
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return bad(format!("f0 must be positive, got {}", self.f0));
        }
        if !(self.sigma >= 1.0 / self.f0) {
            return bad(format!("sigma must be at least 1/f0 = {}, got {}", 1.0 / self.f0, self.sigma));
        }
        if !self.theta0.iter().all(|v| v.is_finite()) {
            return bad("theta0 must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorState {
    pub theta_hat: [f64; 2],
    pub f: Mat2,
    pub z: f64,
    pub t: f64,
}

pub fn regressor(x2: f64) -> Result<[f64; 2]> {
    if !(x2 >= VOLTAGE_FLOOR) {
        return Err(Error::VoltageFloorViolation {
            x2,
            floor: VOLTAGE_FLOOR,
        });
    }
    Ok([x2, 1.0 / x2])
}

pub fn frobenius(m: &Mat2) -> f64 {
    (m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2)).sqrt()
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym_eigenvalues(m: &Mat2) -> [f64; 2] {
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let mean = 0.5 * (a + d);
    let rad = (0.5 * (a - d)).hypot(b);
    [mean - rad, mean + rad]
}

fn rhs(y: &[f64; 7], hyper: &EstimatorHyper, phi: [f64; 2], i_l: f64) -> [f64; 7] {
    let th = [y[0], y[1]];
    let f = [[y[2], y[3]], [y[4], y[5]]];
    let z = y[6];
    let chi = hyper.chi0 * (1.0 - frobenius(&f) / hyper.sigma);
    let fphi = [f[0][0] * phi[0] + f[0][1] * phi[1], f[1][0] * phi[0] + f[1][1] * phi[1]];
    let phif = [phi[0] * f[0][0] + phi[1] * f[1][0], phi[0] * f[0][1] + phi[1] * f[1][1]];
    let err = i_l - (phi[0] * th[0] + phi[1] * th[1]);
    let g = hyper.gamma;
    [
        g * fphi[0] * err,
        g * fphi[1] * err,
        -g * fphi[0] * phif[0] + chi * f[0][0],
        -g * fphi[0] * phif[1] + chi * f[0][1],
        -g * fphi[1] * phif[0] + chi * f[1][0],
        -g * fphi[1] * phif[1] + chi * f[1][1],
        -chi * z,
    ]
}

impl EstimatorState {
    pub fn init(hyper: &EstimatorHyper) -> Self {
        let d = 1.0 / hyper.f0;
        Self {
            theta_hat: hyper.theta0,
            f: [[d, 0.0], [0.0, d]],
            z: 1.0,
            t: 0.0,
        }
    }

    /// One RK4 step with `phi` and `i_l` held over the step.
    pub fn step(&self, hyper: &EstimatorHyper, phi: [f64; 2], i_l: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let y = [
            self.theta_hat[0],
            self.theta_hat[1],
            self.f[0][0],
            self.f[0][1],
            self.f[1][0],
            self.f[1][1],
            self.z,
        ];
        let n = rk4_step(|y| Ok(rhs(y, hyper, phi, i_l)), &y, dt)?;
        let off = 0.5 * (n[3] + n[4]);
        let f = [[n[2], off], [off, n[5]]];
        let norm = frobenius(&f);
        if !(norm <= BLOWUP_NORM) || !n.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBlowup(format!("|F| = {norm:e} at t = {}", self.t + dt)));
        }
        if !(sym_eigenvalues(&f)[0] > 0.0) {
            return Err(Error::NumericalBlowup(format!(
                "F lost positive definiteness at t = {}",
                self.t + dt
            )));
        }
        Ok(Self {
            theta_hat: [n[0], n[1]],
            f,
            z: n[6],
            t: self.t + dt,
        })
    }

    pub fn fct(&self, hyper: &EstimatorHyper) -> Option<[f64; 2]> {
        fct_reconstruct(self, hyper)
    }
}

/// `None` when `I - z f0 F` is singular or its condition number reaches 1e10.
pub fn fct_reconstruct(state: &EstimatorState, hyper: &EstimatorHyper) -> Option<[f64; 2]> {
    let f = Matrix2::new(state.f[0][0], state.f[0][1], state.f[1][0], state.f[1][1]);
    let zf = state.z * hyper.f0;
    let m = Matrix2::identity() - f * zf;
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || !(smax / smin < MAX_CONDITION) {
        return None;
    }
    let rhs = Vector2::from(state.theta_hat) - f * Vector2::from(hyper.theta0) * zf;
    let sol = m.lu().solve(&rhs)?;
    Some([sol[0], sol[1]])
}

/// `(G, P_cpl)` from `theta = (G E, P_cpl / E)`.
pub fn recover_physical(theta: [f64; 2], e: f64) -> (f64, f64) {
    (theta[0] / e, e * theta[1])
}

/// Running Gram matrix of the regressor, trapezoidal in time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcitationMonitor {
    pub gram: Mat2,
    pub kappa_threshold: f64,
    pub t: f64,
    pub tc: Option<f64>,
    last_phi: [f64; 2],
}

impl ExcitationMonitor {
    pub fn new(kappa_threshold: f64, phi0: [f64; 2]) -> Self {
        Self {
            gram: [[0.0; 2]; 2],
            kappa_threshold,
            t: 0.0,
            tc: None,
            last_phi: phi0,
        }
    }

    pub fn update(&mut self, phi: [f64; 2], dt: f64) {
        let p = self.last_phi;
        for i in 0..2 {
            for j in 0..2 {
                self.gram[i][j] += 0.5 * dt * (p[i] * p[j] + phi[i] * phi[j]);
            }
        }
        self.last_phi = phi;
        self.t += dt;
        if self.tc.is_none() && (self.kappa_threshold <= 0.0 || self.min_eigenvalue() >= self.kappa_threshold) {
            self.tc = Some(self.t);
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eigenvalues(&self.gram)[0]
    }

    /// First time the Gram minimum eigenvalue reached the threshold.
    pub fn ie_satisfied(&self) -> Option<f64> {
        self.tc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> EstimatorHyper {
        EstimatorHyper::new(10.0, 1.0, 10.0, 4.0, [0.01, 0.002]).unwrap()
    }

    #[test]
    fn regressor_values() {
        assert_eq!(regressor(1.0).unwrap(), [1.0, 1.0]);
        let p = regressor(0.8333).unwrap();
        assert!((p[1] - 1.2000480).abs() < 1e-6);
        assert!(regressor(VOLTAGE_FLOOR / 2.0).is_err());
    }

    #[test]
    fn hyper_validation() {
        assert!(EstimatorHyper::new(0.0, 1.0, 10.0, 4.0, [0.0; 2]).is_err());
        assert!(EstimatorHyper::new(1.0, 0.0, 10.0, 4.0, [0.0; 2]).is_err());
        assert!(EstimatorHyper::new(1.0, 1.0, 0.2, 4.0, [0.0; 2]).is_err());
        assert!(EstimatorHyper::new(1.0, 1.0, 0.25, 4.0, [0.0; 2]).is_ok());
    }

    #[test]
    fn zero_regressor_keeps_estimate() {
        let h = hyper();
        let s = EstimatorState::init(&h);
        let n = s.step(&h, [0.0, 0.0], 0.3, 0.01).unwrap();
        assert_eq!(n.theta_hat, s.theta_hat);
        // F' = chi F with chi > 0 at the start
        assert!(n.f[0][0] > s.f[0][0]);
        assert!(n.z < 1.0);
    }

    #[test]
    fn singular_at_start() {
        let h = hyper();
        assert!(fct_reconstruct(&EstimatorState::init(&h), &h).is_none());
    }

    #[test]
    fn lucky_initialization_is_fixed_point() {
        let theta = [0.4, 0.05];
        let h = EstimatorHyper::new(10.0, 1.0, 10.0, 4.0, theta).unwrap();
        let mut s = EstimatorState::init(&h);
        for n in 0..2000 {
            let x2 = 0.8 + 0.3 * (n as f64 * 0.01).sin();
            let phi = regressor(x2).unwrap();
            s = s.step(&h, phi, phi[0] * theta[0] + phi[1] * theta[1], 1e-3).unwrap();
            if let Some(f) = s.fct(&h) {
                assert!((f[0] - theta[0]).abs() < 1e-9 && (f[1] - theta[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn recover_physical_values() {
        let (g, p) = recover_physical([0.4, 0.05], 24.0);
        assert!((g - 1.0 / 60.0).abs() < 1e-15);
        assert!((p - 1.2).abs() < 1e-12);
        assert_eq!(recover_physical([0.0, 0.0], 3.0), (0.0, 0.0));
        assert_eq!(recover_physical([1.0, 1.0], 1.0), (1.0, 1.0));
    }

    #[test]
    fn eigenvalues_closed_form() {
        let e = sym_eigenvalues(&[[5.0, 2.0], [2.0, 1.25]]);
        let tr: f64 = 6.25;
        let det: f64 = 6.25 - 4.0;
        let disc = (tr * tr - 4.0 * det).sqrt();
        assert!((e[0] - (tr - disc) / 2.0).abs() < 1e-14);
        assert!((e[1] - (tr + disc) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn monitor_zero_threshold_fires_at_first_step() {
        let mut m = ExcitationMonitor::new(0.0, [1.0, 1.0]);
        assert_eq!(m.ie_satisfied(), None);
        m.update([1.0, 1.0], 0.01);
        assert_eq!(m.ie_satisfied(), Some(0.01));
    }
}
