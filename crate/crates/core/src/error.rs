use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("voltage floor violated: x2 = {x2:e} is below {floor:e}")]
    VoltageFloorViolation { x2: f64, floor: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("reference x2* = {x2_star} is not above the constant-power floor sqrt(P/R) = {floor}")]
    ReferenceBelowCplFloor { x2_star: f64, floor: f64 },

    #[error("gain k = {k} is below the admissible minimum {k_min}")]
    GainBelowMinimum { k: f64, k_min: f64 },

    #[error("quadrature failed to reach tolerance {tol:e} on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64, tol: f64 },

    #[error("estimator blow-up: {0}")]
    NumericalBlowup(String),

    #[error("no candidate level passed the region-of-attraction probe")]
    NoPassingLevel,

    #[error("simulation failed at t = {t}: {source}")]
    Simulation {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Strip any simulation-time wrapper.
    pub fn root(&self) -> &Error {
        match self {
            Error::Simulation { source, .. } => source.root(),
            other => other,
        }
    }
}
