//! Voltage-feedback IDA-PBC laws and their interconnection/damping structure.
//!
//! Buck:
//! ```text
//! u(x2) = -k [h(x2) - x1*] + x2,                alpha1 = -1/k, alpha2 = 0, beta = 1
//! ```
//! Boost and Buck-Boost:
//! ```text
//! u(x2) = k h(x2) / (h(x2) g(x2) + c),          alpha1 = -x1, alpha2 = 0, beta = -g(x2) + k/u
//! c = (k - 1) h* g*,   k >= 1 + h* / (h'* g*)
//! ```
//! With `Q = [[alpha1, beta], [-beta, alpha2]]` the closed-loop field
//! `D = Q f` is a gradient, `D(x, u(x2)) = grad P(x)`.

use crate::error::{Error, Result};
use crate::models::{ConverterKind, ConverterModel, EquilibriumPoint, LoadRelation, State};

/// Lower duty-ratio clamp applied in simulation.
pub const U_MIN: f64 = 1e-3;

pub fn saturate(u: f64) -> f64 {
    u.clamp(U_MIN, 1.0)
}

/// A tuned controller: gain, target equilibrium and the load model it uses.
#[derive(Debug, Clone)]
pub struct ControllerSpec {
    pub kind: ConverterKind,
    pub k: f64,
    pub eq: EquilibriumPoint,
    /// `(k - 1) h* g*` for Boost/Buck-Boost, zero for the Buck.
    pub c: f64,
    pub load: LoadRelation,
}

impl ControllerSpec {
    /// Builds and validates a controller for `model` regulating `x2` to `x2_star`.
    pub fn new(model: &ConverterModel, k: f64, x2_star: f64) -> Result<Self> {
        let eq = model.equilibrium_for(x2_star)?;
        Self::from_equilibrium(model.load.clone(), eq, k)
    }

    pub fn from_equilibrium(load: LoadRelation, eq: EquilibriumPoint, k: f64) -> Result<Self> {
        let spec = Self::assemble(load, eq, k)?;
        match spec.kind {
            ConverterKind::Buck => {
                if !(k > 0.0) {
                    return Err(Error::InvalidParameter(format!("Buck gain must be positive, got {k}")));
                }
            }
            _ => {
                let k_min = min_gain(&eq)?;
                if !(k >= k_min) {
                    return Err(Error::GainBelowMinimum { k, k_min });
                }
            }
        }
        Ok(spec)
    }

    /// Skips the gain-admissibility check; the equilibrium is still validated.
    /// Used to study gains for which the stability conditions fail.
    pub fn new_unchecked(model: &ConverterModel, k: f64, x2_star: f64) -> Result<Self> {
        let eq = model.equilibrium_for(x2_star)?;
        Self::assemble(model.load.clone(), eq, k)
    }

    pub fn from_equilibrium_unchecked(load: LoadRelation, eq: EquilibriumPoint, k: f64) -> Result<Self> {
        Self::assemble(load, eq, k)
    }

    fn assemble(load: LoadRelation, eq: EquilibriumPoint, k: f64) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::InvalidParameter(format!("gain must be finite, got {k}")));
        }
        let c = match eq.g_star {
            None => 0.0,
            Some(g) => (k - 1.0) * eq.h_star * g,
        };
        Ok(Self {
            kind: eq.kind,
            k,
            eq,
            c,
            load,
        })
    }

    pub fn gain_admissible(&self) -> bool {
        match self.kind {
            ConverterKind::Buck => self.k > 0.0,
            _ => min_gain(&self.eq).map(|m| self.k >= m).unwrap_or(false),
        }
    }
}

/// Smallest admissible Boost/Buck-Boost gain, `1 + h* / (h'* g*)`.
pub fn min_gain(eq: &EquilibriumPoint) -> Result<f64> {
    let g = eq.g_star.ok_or_else(|| {
        Error::InvalidParameter("the gain bound applies to Boost and Buck-Boost only".into())
    })?;
    if !(eq.h_prime_star > 0.0) {
        return Err(Error::AssumptionViolated(format!(
            "h'(x2*) = {} must be positive",
            eq.h_prime_star
        )));
    }
    Ok(1.0 + eq.h_star / (eq.h_prime_star * g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub raw: f64,
    pub saturated: f64,
}

pub fn control_law(spec: &ControllerSpec, x2: f64) -> Result<ControlOutput> {
    let raw = control_law_raw(spec, x2)?;
    Ok(ControlOutput {
        raw,
        saturated: saturate(raw),
    })
}

pub fn control_law_raw(spec: &ControllerSpec, x2: f64) -> Result<f64> {
    let h = spec.load.h(x2)?;
    Ok(match spec.kind.g(x2) {
        None => -spec.k * (h - spec.eq.x1_star) + x2,
        Some(g) => spec.k * h / (h * g + spec.c),
    })
}

/// `du/dx2` of the raw law, by the chain rule (g' = 1).
pub fn control_law_derivative(spec: &ControllerSpec, x2: f64) -> Result<f64> {
    let h = spec.load.h(x2)?;
    let hp = spec.load.h_prime(x2)?;
    Ok(match spec.kind.g(x2) {
        None => 1.0 - spec.k * hp,
        Some(g) => {
            let den = h * g + spec.c;
            spec.k * (spec.c * hp - h * h) / (den * den)
        }
    })
}

/// Residual of the matching ODE for the controller's own law.
pub fn matching_ode_residual(spec: &ControllerSpec, x2: f64) -> Result<f64> {
    let u = control_law_raw(spec, x2)?;
    let du = control_law_derivative(spec, x2)?;
    matching_ode_residual_for(spec.kind, spec.k, &spec.load, u, du, x2)
}

/// Residual of the matching ODE for an arbitrary candidate law with value `u`
/// and slope `du` at `x2`:
///
/// * Buck: `u' - 1 + k h'`
/// * Boost/Buck-Boost: `(g h' + h) u^2 / k - h' u + h u'`
pub fn matching_ode_residual_for(
    kind: ConverterKind,
    k: f64,
    load: &LoadRelation,
    u: f64,
    du: f64,
    x2: f64,
) -> Result<f64> {
    let hp = load.h_prime(x2)?;
    Ok(match kind.g(x2) {
        None => du - 1.0 + k * hp,
        Some(g) => {
            let h = load.h(x2)?;
            (g * hp + h) * u * u / k - hp * u + h * du
        }
    })
}

/// The mappings `alpha1, alpha2, beta` and the field `D = Q f` for a
/// (plant, controller) pair.
#[derive(Debug, Clone, Copy)]
pub struct StructureFunctions<'a> {
    pub model: &'a ConverterModel,
    pub spec: &'a ControllerSpec,
}

pub fn structure_functions<'a>(model: &'a ConverterModel, spec: &'a ControllerSpec) -> StructureFunctions<'a> {
    StructureFunctions { model, spec }
}

impl StructureFunctions<'_> {
    pub fn alpha1(&self, x: State, _u: f64) -> f64 {
        match self.spec.kind {
            ConverterKind::Buck => -1.0 / self.spec.k,
            _ => -x[0],
        }
    }

    pub fn alpha2(&self, _x: State, _u: f64) -> f64 {
        0.0
    }

    pub fn beta(&self, x: State, u: f64) -> f64 {
        match self.spec.kind.g(x[1]) {
            None => 1.0,
            Some(g) => -g + self.spec.k / u,
        }
    }

    /// `(D1, D2) = (alpha1 f1 + beta f2, -beta f1 + alpha2 f2)`.
    pub fn d(&self, x: State, u: f64) -> Result<[f64; 2]> {
        let f = self.model.dynamics(x, u)?;
        let (a1, a2, b) = (self.alpha1(x, u), self.alpha2(x, u), self.beta(x, u));
        Ok([a1 * f[0] + b * f[1], -b * f[0] + a2 * f[1]])
    }

    pub fn u_hat(&self, x: State) -> Result<f64> {
        control_law_raw(self.spec, x[1])
    }

    /// `D` along the closed loop `u = u(x2)`.
    pub fn d_hat(&self, x: State) -> Result<[f64; 2]> {
        let u = self.u_hat(x)?;
        self.d(x, u)
    }

    /// `(alpha1, alpha2, beta)` along the closed loop.
    pub fn hat(&self, x: State) -> Result<(f64, f64, f64)> {
        let u = self.u_hat(x)?;
        Ok((self.alpha1(x, u), self.alpha2(x, u), self.beta(x, u)))
    }

    /// `alpha1 alpha2 + beta^2` along the closed loop, i.e. `det Q`.
    pub fn det_q_hat(&self, x: State) -> Result<f64> {
        let (a1, a2, b) = self.hat(x)?;
        Ok(a1 * a2 + b * b)
    }

    /// Closed-loop vector field `f(x, u(x2))`.
    pub fn f_hat(&self, x: State) -> Result<State> {
        let u = self.u_hat(x)?;
        self.model.dynamics(x, u)
    }

    /// `alpha1 f1^2 + alpha2 f2^2` along the closed loop.
    pub fn dissipation(&self, x: State) -> Result<f64> {
        let u = self.u_hat(x)?;
        let f = self.model.dynamics(x, u)?;
        Ok(self.alpha1(x, u) * f[0] * f[0] + self.alpha2(x, u) * f[1] * f[1])
    }
}
