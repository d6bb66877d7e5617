//! JSON run configuration.
//!
//! ```json
//! {
//!   "converter": "buck",
//!   "physical": {"E": 24, "L": 0.001, "C": 0.00033, "G": 0.0166667, "P_cpl": 1.2},
//!   "controller": {"k": 0.1},
//!   "schedule": {"reference": [{"t": 0, "v_star": 20}], "load": [{"t": 100, "G": 0.0333, "P_cpl": 1.8}]},
//!   "estimator": {"gamma": 10, "chi0": 1, "sigma": 10, "f0": 4, "theta0": [0.01, 0.002]},
//!   "sim": {"dt": 0.001, "t_end": 200, "x0": [0.015, 1.15]},
//!   "verify": {"x1_range": [0.01, 0.05], "x2_range": [0.4, 1.2], "grid_n": 25},
//!   "roa": {"x1_range": [0, 0.1], "x2_range": [0.01, 2.5], "p_bar": [0.0003]}
//! }
//! ```
//!
//! Only `converter`, `controller` and `schedule` are required. Omitted fields
//! stay omitted on re-serialization; defaults are applied when a section is
//! turned into a scenario, region or option set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorHyper, DEFAULT_KAPPA};
use crate::lyapunov::{Rect, RoaOptions};
use crate::models::{ConverterKind, PhysicalParams, State, VOLTAGE_FLOOR};
use crate::sim::{AdaptiveConfig, Hold, LoadEvent, ReferenceEvent, Scenario, Setpoint, DEFAULT_DT};
use crate::verifier::VerificationRegion;

pub const DEFAULT_T_END: f64 = 200.0;
pub const DEFAULT_VERIFY_GRID: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub converter: ConverterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalParams>,
    pub controller: ControllerSection,
    pub schedule: ScheduleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roa: Option<RoaSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub reference: Vec<ReferenceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<Vec<LoadEntry>>,
}

/// Exactly one of `v_star` (volts) and `x2_star` (normalized) is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2_star: Option<f64>,
}

impl ReferenceEntry {
    fn setpoint(&self) -> Result<Setpoint> {
        match (self.v_star, self.x2_star) {
            (Some(v), None) => Ok(Setpoint::Volts(v)),
            (None, Some(x)) => Ok(Setpoint::Normalized(x)),
            _ => Err(Error::Config(format!(
                "reference at t = {} needs exactly one of v_star and x2_star",
                self.t
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub t: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "P_cpl")]
    pub p_cpl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub gamma: f64,
    pub chi0: f64,
    pub sigma: f64,
    pub f0: f64,
    pub theta0: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

/// Physical inductor current (A) and capacitor voltage (V).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalState {
    pub i: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<State>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_physical: Option<PhysicalState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturate: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold: Option<Hold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoaSection {
    pub p_bar: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boundary: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks that need no model evaluation.
    fn check(&self) -> Result<()> {
        if self.schedule.reference.is_empty() {
            return Err(Error::Config("schedule.reference must not be empty".into()));
        }
        for r in &self.schedule.reference {
            r.setpoint()?;
        }
        if let Some(sim) = &self.sim {
            if sim.x0.is_some() && sim.initial_physical.is_some() {
                return Err(Error::Config("give at most one of sim.x0 and sim.initial_physical".into()));
            }
        }
        if let Some(roa) = &self.roa {
            if roa.p_bar.is_empty() {
                return Err(Error::Config("roa.p_bar must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn physical(&self) -> PhysicalParams {
        self.physical.unwrap_or_else(PhysicalParams::bench)
    }

    /// Normalized first reference.
    pub fn x2_star(&self) -> Result<f64> {
        Ok(self.schedule.reference[0].setpoint()?.x2(self.physical().e))
    }

    pub fn scenario(&self, id: &str, seed: u64) -> Result<Scenario> {
        let phys = self.physical();
        phys.validate()?;
        let sim = self.sim.clone().unwrap_or_default();
        let references = self
            .schedule
            .reference
            .iter()
            .map(|r| Ok(ReferenceEvent { t: r.t, setpoint: r.setpoint()? }))
            .collect::<Result<Vec<_>>>()?;
        let loads = self
            .schedule
            .load
            .iter()
            .flatten()
            .map(|l| LoadEvent {
                t: l.t,
                g: l.g,
                p_cpl: l.p_cpl,
            })
            .collect();
        let x2s = self.x2_star()?;
        let x0 = match (sim.x0, sim.initial_physical) {
            (Some(x), _) => x,
            (None, Some(p)) => phys.to_normalized_state(p.i, p.v),
            (None, None) => {
                let model = crate::models::ConverterModel::from_physical(self.converter, &phys);
                model.equilibrium_for(x2s)?.state()
            }
        };
        let adaptive = match &self.estimator {
            None => None,
            Some(e) => Some(AdaptiveConfig {
                hyper: EstimatorHyper::new(e.gamma, e.chi0, e.sigma, e.f0, e.theta0)?,
                kappa: e.kappa.unwrap_or(DEFAULT_KAPPA),
                noise_std: e.noise_std.unwrap_or(0.0),
                seed,
            }),
        };
        let mut scn = Scenario::new(id, self.converter, phys, x0, self.controller.k, x2s);
        scn.references = references;
        scn.loads = loads;
        scn.adaptive = adaptive;
        scn.dt = sim.dt.unwrap_or(DEFAULT_DT);
        scn.t_end = sim.t_end.unwrap_or(DEFAULT_T_END);
        scn.saturate = sim.saturate.unwrap_or(false);
        scn.hold = sim.hold.unwrap_or_default();
        scn.record_every = sim.record_every.unwrap_or(1);
        Ok(scn)
    }

    /// Verification grid; by default `[0.5, 1.5]` times the equilibrium, 25 x 25.
    pub fn verification_region(&self, x_star: State) -> Result<VerificationRegion> {
        let v = self.verify.clone().unwrap_or_default();
        let def = VerificationRegion::around(x_star, 0.5, 1.5, DEFAULT_VERIFY_GRID)?;
        VerificationRegion::new(
            v.x1_range.unwrap_or(def.x1_range),
            v.x2_range.unwrap_or(def.x2_range),
            v.grid_n.unwrap_or(DEFAULT_VERIFY_GRID),
        )
    }

    /// Constraint box, candidate levels and probe options for the `roa` command.
    /// The default box is `[0, 3 x1*] x [max(0.05 x2*, floor), 3 x2*]`.
    pub fn roa_setup(&self, x_star: State) -> Result<(Rect, Vec<f64>, RoaOptions)> {
        let roa = self
            .roa
            .as_ref()
            .ok_or_else(|| Error::Config("the roa section is required for this command".into()))?;
        let rect = Rect {
            x1_range: roa.x1_range.unwrap_or([0.0, 3.0 * x_star[0]]),
            x2_range: roa
                .x2_range
                .unwrap_or([(0.05 * x_star[1]).max(VOLTAGE_FLOOR), 3.0 * x_star[1]]),
        };
        let d = RoaOptions::default();
        let opts = RoaOptions {
            grid_n: roa.grid_n.unwrap_or(d.grid_n),
            n_boundary: roa.n_boundary.unwrap_or(d.n_boundary),
            horizon: roa.horizon.unwrap_or(d.horizon),
            dt: roa.dt.unwrap_or(d.dt),
            ..d
        };
        Ok((rect, roa.p_bar.clone(), opts))
    }
}
