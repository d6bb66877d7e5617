//! Normalized average models of the Buck, Boost and Buck-Boost converters.
//!
//! States are dimensionless: `x1` is the scaled inductor current and `x2` the
//! scaled capacitor voltage. With physical inductor current `i`, capacitor
//! voltage `v` and time `tau`,
//!
//! ```text
//! x1 = sqrt(L/C) i / E,   x2 = v / E,   t = tau / sqrt(L C)
//! ```
//!
//! and the averaged dynamics read
//!
//! ```text
//! Buck:              x1' = -x2 + u,         x2' = x1 - h(x2)
//! Boost, Buck-Boost: x1' = -g(x2) u + 1,    x2' = x1 u - h(x2)
//! ```
//!
//! with `g(x2) = x2` (Boost) or `x2 + 1` (Buck-Boost) and `h` the static load
//! relation in normalized units.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest admissible normalized voltage where the load relation is singular.
pub const VOLTAGE_FLOOR: f64 = 1e-6;

/// Central-difference step used when a custom load does not supply `h'`.
pub const CUSTOM_DERIVATIVE_STEP: f64 = 1e-6;

/// Normalized state `[x1, x2]`.
pub type State = [f64; 2];

/// Converter parameters in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Source voltage (V).
    #[serde(rename = "E")]
    pub e: f64,
    /// Inductance (H).
    #[serde(rename = "L")]
    pub l: f64,
    /// Capacitance (F).
    #[serde(rename = "C")]
    pub c: f64,
    /// Load conductance (S).
    #[serde(rename = "G")]
    pub g: f64,
    /// Constant-power-load power (W).
    #[serde(rename = "P_cpl")]
    pub p_cpl: f64,
}

impl PhysicalParams {
    pub fn new(e: f64, l: f64, c: f64, g: f64, p_cpl: f64) -> Result<Self> {
        let p = Self { e, l, c, g, p_cpl };
        p.validate()?;
        Ok(p)
    }

    /// The laboratory converter: 24 V source, 1 mH, 330 uF, a 60 ohm resistor
    /// (0.0167 S to four digits) in parallel with a 1.2 W constant power load.
    pub fn bench() -> Self {
        Self {
            e: 24.0,
            l: 1e-3,
            c: 330e-6,
            g: 1.0 / 60.0,
            p_cpl: 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.e, self.l, self.c, self.g, self.p_cpl]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite physical parameter".into()));
        }
        if self.e <= 0.0 || self.l <= 0.0 || self.c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "E, L, C must be positive (got E={}, L={}, C={})",
                self.e, self.l, self.c
            )));
        }
        if self.g < 0.0 || self.p_cpl < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "G and P_cpl must be non-negative (got G={}, P_cpl={})",
                self.g, self.p_cpl
            )));
        }
        Ok(())
    }

    /// Characteristic impedance `sqrt(L/C)`.
    pub fn impedance(&self) -> f64 {
        (self.l / self.c).sqrt()
    }

    /// Dimensionless load parameters `(R, P)`.
    pub fn normalize(&self) -> NormalizedLoadParams {
        let z = self.impedance();
        NormalizedLoadParams {
            r: self.g * z,
            p: self.p_cpl / (self.e * self.e) * z,
        }
    }

    pub fn with_load(&self, g: f64, p_cpl: f64) -> Result<Self> {
        Self::new(self.e, self.l, self.c, g, p_cpl)
    }

    pub fn to_normalized_state(&self, i: f64, v: f64) -> State {
        [self.impedance() * i / self.e, v / self.e]
    }

    pub fn to_physical_state(&self, x: State) -> (f64, f64) {
        (x[0] * self.e / self.impedance(), x[1] * self.e)
    }

    pub fn normalized_time(&self, tau: f64) -> f64 {
        tau / (self.l * self.c).sqrt()
    }

    pub fn physical_time(&self, t: f64) -> f64 {
        t * (self.l * self.c).sqrt()
    }

    /// Scale factor between normalized load current and amperes, `E sqrt(C/L)`.
    pub fn current_scale(&self) -> f64 {
        self.e / self.impedance()
    }

    /// Load parameter vector `(G E, P_cpl / E)` of the linear regression
    /// `i_L = G v + P_cpl / v = phi(x2)^T theta`.
    pub fn theta(&self) -> [f64; 2] {
        [self.g * self.e, self.p_cpl / self.e]
    }

    /// Normalized load parameters corresponding to a regression vector.
    pub fn load_from_theta(&self, theta: [f64; 2]) -> NormalizedLoadParams {
        let s = 1.0 / self.current_scale();
        NormalizedLoadParams {
            r: theta[0] * s,
            p: theta[1] * s,
        }
    }
}

/// Dimensionless resistive + constant-power load, `h(x2) = R x2 + P / x2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedLoadParams {
    pub r: f64,
    pub p: f64,
}

impl NormalizedLoadParams {
    pub fn new(r: f64, p: f64) -> Result<Self> {
        if !(r.is_finite() && p.is_finite()) || r < 0.0 || p < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "load parameters must be finite and non-negative (R={r}, P={p})"
            )));
        }
        Ok(Self { r, p })
    }

    /// Lowest reference satisfying `h'(x2*) > 0`, i.e. `sqrt(P/R)`.
    pub fn cpl_floor(&self) -> f64 {
        if self.p == 0.0 {
            0.0
        } else if self.r == 0.0 {
            f64::INFINITY
        } else {
            (self.p / self.r).sqrt()
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied load relation.
#[derive(Clone)]
pub struct CustomLoad {
    h: ScalarFn,
    h_prime: Option<ScalarFn>,
}

impl CustomLoad {
    pub fn new<H>(h: H) -> Self
    where
        H: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            h: Arc::new(h),
            h_prime: None,
        }
    }

    pub fn with_derivative<D>(mut self, h_prime: D) -> Self
    where
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.h_prime = Some(Arc::new(h_prime));
        self
    }
}

impl fmt::Debug for CustomLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLoad")
            .field("analytic_derivative", &self.h_prime.is_some())
            .finish()
    }
}

/// Static relation between normalized load current and voltage.
#[derive(Debug, Clone)]
pub enum LoadRelation {
    Parametric(NormalizedLoadParams),
    Custom(CustomLoad),
}

impl LoadRelation {
    pub fn parametric(r: f64, p: f64) -> Result<Self> {
        Ok(Self::Parametric(NormalizedLoadParams::new(r, p)?))
    }

    pub fn params(&self) -> Option<NormalizedLoadParams> {
        match self {
            Self::Parametric(p) => Some(*p),
            Self::Custom(_) => None,
        }
    }

    fn check_floor(&self, x2: f64) -> Result<()> {
        match self {
            Self::Parametric(p) if p.p > 0.0 && !(x2 >= VOLTAGE_FLOOR) => {
                Err(Error::VoltageFloorViolation {
                    x2,
                    floor: VOLTAGE_FLOOR,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn h(&self, x2: f64) -> Result<f64> {
        self.check_floor(x2)?;
        Ok(match self {
            Self::Parametric(p) => p.r * x2 + p.p / x2,
            Self::Custom(c) => (c.h)(x2),
        })
    }

    pub fn h_prime(&self, x2: f64) -> Result<f64> {
        self.check_floor(x2)?;
        Ok(match self {
            Self::Parametric(p) => p.r - p.p / (x2 * x2),
            Self::Custom(c) => match &c.h_prime {
                Some(d) => d(x2),
                None => {
                    let s = CUSTOM_DERIVATIVE_STEP;
                    ((c.h)(x2 + s) - (c.h)(x2 - s)) / (2.0 * s)
                }
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConverterKind {
    Buck,
    Boost,
    BuckBoost,
}

impl ConverterKind {
    /// Input gain `g(x2)`; not defined for the Buck.
    pub fn g(self, x2: f64) -> Option<f64> {
        match self {
            Self::Buck => None,
            Self::Boost => Some(x2),
            Self::BuckBoost => Some(x2 + 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Buck => "buck",
            Self::Boost => "boost",
            Self::BuckBoost => "buck_boost",
        }
    }
}

impl fmt::Display for ConverterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A converter topology feeding a static load.
#[derive(Debug, Clone)]
pub struct ConverterModel {
    pub kind: ConverterKind,
    pub load: LoadRelation,
}

impl ConverterModel {
    pub fn new(kind: ConverterKind, load: LoadRelation) -> Self {
        Self { kind, load }
    }

    pub fn from_physical(kind: ConverterKind, p: &PhysicalParams) -> Self {
        Self::new(kind, LoadRelation::Parametric(p.normalize()))
    }

    pub fn dynamics(&self, x: State, u: f64) -> Result<State> {
        let h = self.load.h(x[1])?;
        Ok(match self.kind.g(x[1]) {
            None => [-x[1] + u, x[0] - h],
            Some(g) => [-g * u + 1.0, x[0] * u - h],
        })
    }

    /// Assignable equilibrium regulating `x2` to `x2_star`.
    pub fn equilibrium_for(&self, x2_star: f64) -> Result<EquilibriumPoint> {
        if !(x2_star > 0.0 && x2_star.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reference x2* must be positive, got {x2_star}"
            )));
        }
        if let LoadRelation::Parametric(p) = &self.load {
            let floor = p.cpl_floor();
            if x2_star <= floor {
                return Err(Error::ReferenceBelowCplFloor { x2_star, floor });
            }
        }
        let h_prime_star = self.load.h_prime(x2_star)?;
        if !(h_prime_star > 0.0) {
            return Err(Error::AssumptionViolated(format!(
                "load slope h'(x2*) = {h_prime_star} must be positive"
            )));
        }
        let eq = self.equilibrium_unchecked(x2_star)?;
        if !(eq.u_star > 0.0 && eq.u_star <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "x2* = {x2_star} is not assignable for the {}: duty ratio {} outside (0, 1]",
                self.kind, eq.u_star
            )));
        }
        Ok(eq)
    }

    /// Equilibrium formulas without the load-slope, CPL-floor and duty-ratio
    /// checks. Certainty-equivalent control with a poor load estimate needs it.
    pub fn equilibrium_unchecked(&self, x2_star: f64) -> Result<EquilibriumPoint> {
        if !(x2_star >= VOLTAGE_FLOOR && x2_star.is_finite()) {
            return Err(Error::VoltageFloorViolation {
                x2: x2_star,
                floor: VOLTAGE_FLOOR,
            });
        }
        let h_star = self.load.h(x2_star)?;
        let h_prime_star = self.load.h_prime(x2_star)?;
        let g_star = self.kind.g(x2_star);
        let (x1_star, u_star) = match g_star {
            None => (h_star, x2_star),
            Some(g) => (g * h_star, 1.0 / g),
        };
        Ok(EquilibriumPoint {
            kind: self.kind,
            x1_star,
            x2_star,
            u_star,
            h_star,
            g_star,
            h_prime_star,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub kind: ConverterKind,
    pub x1_star: f64,
    pub x2_star: f64,
    pub u_star: f64,
    pub h_star: f64,
    pub g_star: Option<f64>,
    pub h_prime_star: f64,
}

impl EquilibriumPoint {
    pub fn state(&self) -> State {
        [self.x1_star, self.x2_star]
    }
}
