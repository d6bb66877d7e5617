//! Fixed-step closed-loop simulation with reference and load schedules and an
//! optional load estimator running alongside the plant.

use std::fmt::Write as _;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{control_law_raw, saturate, ControllerSpec};
use crate::error::{Error, Result};
use crate::estimator::{
    fct_reconstruct, regressor, EstimatorHyper, EstimatorState, ExcitationMonitor, DEFAULT_KAPPA,
};
use crate::lyapunov::LyapunovFn;
use crate::models::{ConverterKind, ConverterModel, LoadRelation, PhysicalParams, State};
use crate::ode::rk4_step;

pub const DEFAULT_DT: f64 = 1e-3;

/// How the control input is applied across an integration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hold {
    /// Evaluated once from `x2` at the start of the step.
    #[default]
    Zoh,
    /// Evaluated at every Runge-Kutta stage.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Setpoint {
    /// Output voltage in volts.
    Volts(f64),
    /// Normalized voltage `v / E`.
    Normalized(f64),
}

impl Setpoint {
    pub fn x2(self, e: f64) -> f64 {
        match self {
            Self::Volts(v) => v / e,
            Self::Normalized(x) => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEvent {
    pub t: f64,
    pub setpoint: Setpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadEvent {
    pub t: f64,
    pub g: f64,
    pub p_cpl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub hyper: EstimatorHyper,
    pub kappa: f64,
    /// Standard deviation (A) of Gaussian noise on the measured load current.
    pub noise_std: f64,
    pub seed: u64,
}

impl AdaptiveConfig {
    pub fn new(hyper: EstimatorHyper) -> Self {
        Self {
            hyper,
            kappa: DEFAULT_KAPPA,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub kind: ConverterKind,
    /// Initial plant parameters; load events replace `G` and `P_cpl`.
    pub physical: PhysicalParams,
    /// Normalized initial state.
    pub x0: State,
    pub k: f64,
    /// Must start at `t = 0`.
    pub references: Vec<ReferenceEvent>,
    pub loads: Vec<LoadEvent>,
    pub adaptive: Option<AdaptiveConfig>,
    pub dt: f64,
    pub t_end: f64,
    pub saturate: bool,
    pub hold: Hold,
    pub record_every: usize,
}

impl Scenario {
    pub fn new(id: impl Into<String>, kind: ConverterKind, physical: PhysicalParams, x0: State, k: f64, x2_star: f64) -> Self {
        Self {
            id: id.into(),
            kind,
            physical,
            x0,
            k,
            references: vec![ReferenceEvent {
                t: 0.0,
                setpoint: Setpoint::Normalized(x2_star),
            }],
            loads: Vec::new(),
            adaptive: None,
            dt: DEFAULT_DT,
            t_end: 200.0,
            saturate: false,
            hold: Hold::Zoh,
            record_every: 1,
        }
    }

    fn step_index(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }

    /// Checks shape and, eagerly, that every reference is admissible under
    /// the load active when it applies.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        self.physical.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("horizon must be non-negative, got {}", self.t_end));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return bad("initial state must be finite".into());
        }
        match self.references.first() {
            Some(r) if r.t == 0.0 => {}
            _ => return bad("the reference schedule must start at t = 0".into()),
        }
        let sorted = |ts: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = ts.collect();
            v.iter().all(|t| t.is_finite() && *t >= 0.0) && v.windows(2).all(|w| w[0] <= w[1])
        };
        if !sorted(&mut self.references.iter().map(|r| r.t)) || !sorted(&mut self.loads.iter().map(|l| l.t)) {
            return bad("schedules must be time-sorted with non-negative times".into());
        }
        if let Some(a) = &self.adaptive {
            a.hyper.validate()?;
            if !(a.noise_std >= 0.0) {
                return bad(format!("noise_std must be non-negative, got {}", a.noise_std));
            }
        }
        for (t, phys, x2s) in self.event_states()? {
            let model = ConverterModel::from_physical(self.kind, &phys);
            let res = if self.adaptive.is_some() {
                model.equilibrium_for(x2s).map(|_| ())
            } else {
                ControllerSpec::new(&model, self.k, x2s).map(|_| ())
            };
            res.map_err(|e| Error::Simulation {
                t,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    /// `(time, plant, x2*)` right after each event.
    fn event_states(&self) -> Result<Vec<(f64, PhysicalParams, f64)>> {
        let mut times: Vec<f64> = self
            .references
            .iter()
            .map(|r| r.t)
            .chain(self.loads.iter().map(|l| l.t))
            .collect();
        times.sort_by(|a, b| a.total_cmp(b));
        times.dedup();
        let mut out = Vec::new();
        for t in times {
            let phys = self.plant_at(t)?;
            let x2s = self.reference_at(t);
            out.push((t, phys, x2s));
        }
        Ok(out)
    }

    fn plant_at(&self, t: f64) -> Result<PhysicalParams> {
        let mut p = self.physical;
        for l in self.loads.iter().filter(|l| l.t <= t) {
            p = p.with_load(l.g, l.p_cpl)?;
        }
        Ok(p)
    }

    fn reference_at(&self, t: f64) -> f64 {
        let e = self.physical.e;
        self.references
            .iter()
            .rev()
            .find(|r| r.t <= t)
            .map(|r| r.setpoint.x2(e))
            .unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub theta_hat: [f64; 2],
    pub z: f64,
    pub f: [f64; 3],
    pub theta_fct: Option<[f64; 2]>,
    pub ie_fired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Row {
    pub t: f64,
    pub x: State,
    pub u_raw: f64,
    pub u_applied: f64,
    pub p: Option<f64>,
    pub x2_ref: f64,
    pub g: f64,
    pub p_cpl: f64,
    pub est: Option<EstimatorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub id: String,
    pub kind: ConverterKind,
    pub dt: f64,
    pub rows: Vec<Row>,
    pub final_t: f64,
    pub final_state: State,
    /// First time the excitation monitor fired.
    pub tc: Option<f64>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &Row {
        self.rows.last().expect("a trajectory has at least one row")
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["t", "x1", "x2", "u_raw", "u_applied", "P", "x2_ref", "G", "P_cpl"];
        if self.rows.iter().any(|r| r.est.is_some()) {
            h.extend([
                "theta_hat_1",
                "theta_hat_2",
                "z",
                "F11",
                "F12",
                "F22",
                "theta_fct_1",
                "theta_fct_2",
                "ie_fired",
            ]);
        }
        h
    }

    /// CSV with 15 significant digits; missing values are `NaN`.
    pub fn to_csv(&self) -> String {
        let header = self.header();
        let with_est = header.len() > 9;
        let mut s = header.join(",");
        s.push('\n');
        let num = |s: &mut String, v: f64| {
            let _ = write!(s, ",{}", fmt_num(v));
        };
        for r in &self.rows {
            s.push_str(&fmt_num(r.t));
            for v in [r.x[0], r.x[1], r.u_raw, r.u_applied, r.p.unwrap_or(f64::NAN), r.x2_ref, r.g, r.p_cpl] {
                num(&mut s, v);
            }
            if with_est {
                match &r.est {
                    Some(e) => {
                        let fct = e.theta_fct.unwrap_or([f64::NAN; 2]);
                        for v in [e.theta_hat[0], e.theta_hat[1], e.z, e.f[0], e.f[1], e.f[2], fct[0], fct[1]] {
                            num(&mut s, v);
                        }
                        let _ = write!(s, ",{}", u8::from(e.ie_fired));
                    }
                    None => s.push_str(&",NaN".repeat(9)),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// `{:.14e}`, i.e. 15 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.14e}")
    }
}

struct Segment {
    model: ConverterModel,
    phys: PhysicalParams,
    x2_ref: f64,
}

struct Adaptive {
    cfg: AdaptiveConfig,
    state: EstimatorState,
    monitor: ExcitationMonitor,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    fct: Option<[f64; 2]>,
}

impl Adaptive {
    fn row(&self) -> EstimatorRow {
        let f = self.state.f;
        EstimatorRow {
            theta_hat: self.state.theta_hat,
            z: self.state.z,
            f: [f[0][0], f[0][1], f[1][1]],
            theta_fct: self.fct,
            ie_fired: self.monitor.ie_satisfied().is_some(),
        }
    }

    /// Estimate used by the controller: `theta_fct` once the monitor has fired
    /// and the reconstruction is available, `theta_hat` otherwise.
    fn theta_for_control(&self) -> [f64; 2] {
        match (self.monitor.ie_satisfied(), self.fct) {
            (Some(_), Some(t)) => t,
            _ => self.state.theta_hat,
        }
    }
}

fn wrap(t: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Simulation { .. } => e,
        other => Error::Simulation {
            t,
            source: Box::new(other),
        },
    }
}

fn controller_for(scn: &Scenario, seg: &Segment, adaptive: Option<&Adaptive>) -> Result<ControllerSpec> {
    match adaptive {
        None => ControllerSpec::new(&seg.model, scn.k, seg.x2_ref),
        Some(a) => {
            let load = LoadRelation::Parametric(seg.phys.load_from_theta(a.theta_for_control()));
            let est_model = ConverterModel::new(scn.kind, load.clone());
            let eq = est_model.equilibrium_unchecked(seg.x2_ref)?;
            ControllerSpec::from_equilibrium_unchecked(load, eq, scn.k)
        }
    }
}

fn energy(spec: &ControllerSpec) -> Option<LyapunovFn> {
    LyapunovFn::new(spec).ok()
}

/// Runs `scn` to its horizon.
pub fn run(scn: &Scenario) -> Result<Trajectory> {
    scn.validate()?;
    let dt = scn.dt;
    let n_steps = scn.step_index(scn.t_end);
    let e = scn.physical.e;

    let mut ref_events: Vec<(usize, f64)> = scn.references.iter().map(|r| (scn.step_index(r.t), r.setpoint.x2(e))).collect();
    let mut load_events: Vec<(usize, LoadEvent)> = scn.loads.iter().map(|l| (scn.step_index(l.t), *l)).collect();
    ref_events.reverse();
    load_events.reverse();

    let mut seg = Segment {
        model: ConverterModel::from_physical(scn.kind, &scn.physical),
        phys: scn.physical,
        x2_ref: f64::NAN,
    };

    let mut adaptive = match &scn.adaptive {
        None => None,
        Some(cfg) => {
            let phi0 = regressor(scn.x0[1]).map_err(wrap(0.0))?;
            let noise = if cfg.noise_std > 0.0 {
                Some(Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?)
            } else {
                None
            };
            let state = EstimatorState::init(&cfg.hyper);
            Some(Adaptive {
                cfg: *cfg,
                fct: fct_reconstruct(&state, &cfg.hyper),
                state,
                monitor: ExcitationMonitor::new(cfg.kappa, phi0),
                rng: ChaCha8Rng::seed_from_u64(cfg.seed),
                noise,
            })
        }
    };

    let mut x = scn.x0;
    let mut rows = Vec::with_capacity(n_steps / scn.record_every + 1);
    let mut spec: Option<ControllerSpec> = None;
    let mut lf: Option<LyapunovFn> = None;
    let mut p_val: Option<f64> = None;

    for n in 0..=n_steps {
        let t = n as f64 * dt;
        let mut changed = false;
        while ref_events.last().is_some_and(|(i, _)| *i <= n) {
            seg.x2_ref = ref_events.pop().unwrap().1;
            changed = true;
        }
        while load_events.last().is_some_and(|(i, _)| *i <= n) {
            let ev = load_events.pop().unwrap().1;
            seg.phys = seg.phys.with_load(ev.g, ev.p_cpl).map_err(wrap(t))?;
            seg.model = ConverterModel::from_physical(scn.kind, &seg.phys);
            changed = true;
        }
        if changed || adaptive.is_some() || spec.is_none() {
            match controller_for(scn, &seg, adaptive.as_ref()) {
                Ok(s) => {
                    let same = spec.as_ref().is_some_and(|old| {
                        old.k == s.k && old.eq == s.eq && old.load.params() == s.load.params()
                    });
                    if !same {
                        lf = energy(&s);
                        p_val = None;
                        if changed {
                            debug!("{}: controller updated at t = {t}", scn.id);
                        }
                    }
                    spec = Some(s);
                }
                // a poor estimate keeps the last usable law
                Err(err) if adaptive.is_some() && spec.is_some() => {
                    debug!("{}: estimate-based law unavailable at t = {t}: {err}", scn.id);
                }
                Err(err) => return Err(wrap(t)(err)),
            }
        }
        let sp = spec.as_ref().expect("controller initialized");
        if p_val.is_none() {
            p_val = lf.as_ref().and_then(|f| f.eval(x).ok());
        }

        let u_raw = control_law_raw(sp, x[1]).map_err(wrap(t))?;
        let u_applied = if scn.saturate { saturate(u_raw) } else { u_raw };

        if n % scn.record_every == 0 {
            rows.push(Row {
                t,
                x,
                u_raw,
                u_applied,
                p: p_val,
                x2_ref: seg.x2_ref,
                g: seg.phys.g,
                p_cpl: seg.phys.p_cpl,
                est: adaptive.as_ref().map(Adaptive::row),
            });
        }
        if n == n_steps {
            break;
        }

        let next = match scn.hold {
            Hold::Zoh => rk4_step(|y| seg.model.dynamics(*y, u_applied), &x, dt),
            Hold::Continuous => rk4_step(
                |y| {
                    let u = control_law_raw(sp, y[1])?;
                    seg.model.dynamics(*y, if scn.saturate { saturate(u) } else { u })
                },
                &x,
                dt,
            ),
        }
        .map_err(wrap(t))?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(wrap(t)(Error::NumericalBlowup(format!("state {next:?}"))));
        }

        if let Some(a) = adaptive.as_mut() {
            let phi = regressor(x[1]).map_err(wrap(t))?;
            let theta = seg.phys.theta();
            let mut i_l = phi[0] * theta[0] + phi[1] * theta[1];
            if let Some(nd) = &a.noise {
                i_l += nd.sample(&mut a.rng);
            }
            a.state = a.state.step(&a.cfg.hyper, phi, i_l, dt).map_err(wrap(t))?;
            let phi_next = regressor(next[1]).map_err(wrap(t + dt))?;
            a.monitor.update(phi_next, dt);
            a.fct = fct_reconstruct(&a.state, &a.cfg.hyper);
        }

        p_val = match (&lf, p_val) {
            (Some(f), Some(p)) => f.increment(x, next).ok().map(|d| p + d),
            _ => None,
        };
        x = next;
    }

    Ok(Trajectory {
        id: scn.id.clone(),
        kind: scn.kind,
        dt,
        rows,
        final_t: n_steps as f64 * dt,
        final_state: x,
        tc: adaptive.as_ref().and_then(|a| a.monitor.ie_satisfied()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BuckRefsteps,
    BuckLoadsteps,
    BoostRefsteps,
    BoostLoadsteps,
    BbRefsteps,
    BbLoadsteps,
}

impl ExperimentKind {
    pub const ALL: [Self; 6] = [
        Self::BuckRefsteps,
        Self::BuckLoadsteps,
        Self::BoostRefsteps,
        Self::BoostLoadsteps,
        Self::BbRefsteps,
        Self::BbLoadsteps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::BuckRefsteps => "buck_refsteps",
            Self::BuckLoadsteps => "buck_loadsteps",
            Self::BoostRefsteps => "boost_refsteps",
            Self::BoostLoadsteps => "boost_loadsteps",
            Self::BbRefsteps => "bb_refsteps",
            Self::BbLoadsteps => "bb_loadsteps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Spacing between events in the experiment re-creations.
pub const EXPERIMENT_EVENT_SPACING: f64 = 3000.0;

/// Normalized re-creation of a bench experiment: saturated, non-adaptive,
/// starting from rest at 80 % of the first reference voltage.
pub fn experiment_scenario(kind: ExperimentKind) -> Scenario {
    let bench = PhysicalParams::bench();
    let s = EXPERIMENT_EVENT_SPACING;
    let (ck, k, refs, loadsteps): (ConverterKind, f64, Vec<f64>, bool) = match kind {
        ExperimentKind::BuckRefsteps => (ConverterKind::Buck, 0.01, vec![20.0, 15.0, 10.0], false),
        ExperimentKind::BuckLoadsteps => (ConverterKind::Buck, 0.01, vec![15.0], true),
        ExperimentKind::BoostRefsteps => (ConverterKind::Boost, 3.0, vec![26.0, 30.0, 40.0], false),
        ExperimentKind::BoostLoadsteps => (ConverterKind::Boost, 3.0, vec![30.0], true),
        ExperimentKind::BbRefsteps => (ConverterKind::BuckBoost, 2.0, vec![20.0, 24.0, 30.0], false),
        ExperimentKind::BbLoadsteps => (ConverterKind::BuckBoost, 2.0, vec![30.0], true),
    };
    let x2_0 = refs[0] / bench.e;
    let model = ConverterModel::from_physical(ck, &bench);
    let x1_0 = model.equilibrium_for(x2_0).map(|eq| eq.x1_star).unwrap_or(0.0);
    let mut scn = Scenario::new(kind.name(), ck, bench, [x1_0, 0.8 * x2_0], k, x2_0);
    scn.references = refs
        .iter()
        .enumerate()
        .map(|(i, v)| ReferenceEvent {
            t: i as f64 * s,
            setpoint: Setpoint::Volts(*v),
        })
        .collect();
    if loadsteps {
        scn.loads = vec![
            LoadEvent {
                t: s,
                g: 1.0 / 30.0,
                p_cpl: bench.p_cpl,
            },
            LoadEvent {
                t: 2.0 * s,
                g: 1.0 / 30.0,
                p_cpl: 1.8,
            },
        ];
    }
    scn.t_end = 3.0 * s;
    scn.saturate = true;
    scn.record_every = 100;
    scn
}

pub fn run_experiment_suite(kinds: &[ExperimentKind]) -> Vec<(ExperimentKind, Result<Trajectory>)> {
    kinds
        .par_iter()
        .map(|&k| (k, run(&experiment_scenario(k))))
        .collect()
}
