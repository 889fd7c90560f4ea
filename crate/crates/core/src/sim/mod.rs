//! Fixed-step closed-loop simulation of the delayed plant under a filter.

mod metrics;
mod output;
mod scenarios;
mod sweep;

pub use metrics::{metrics, Quartiles, RunMetrics, VIOLATION_TOL};
pub use output::{trace_header, write_gnuplot, write_metrics_csv, write_trace_csv, METRICS_COLUMNS};
pub use scenarios::{
    exoskeleton, lane_keeping, scenario_names, ExoParams, LaneParams, LANE_GAIN,
};
pub use sweep::{min_safe_um, run_cell, sweep_um, SweepCell};

use std::fmt;
use std::sync::Arc;

use crate::baselines::{prev_cbf, AmaxModel, StandardCbf};
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, Nominal, Policy, SafetyFilter};
use crate::lprev::LPrevEngine;
use crate::matops::{conv_const, expm, Mat, Propagator, Vector};
use crate::plant::{grid_steps, predict_state_with, DelaySystem, DisturbanceSignal, InputHistory, PreviewWindow};

/// How the initial condition is given.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// The plant state `x(0)`.
    Plant(Vector),
    /// The predicted state `z(0) = x(T_i)`; `x(0)` is solved backwards
    /// through the pre-delay input and the disturbance.
    Predicted(Vector),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: DelaySystem,
    pub disturbance: Arc<dyn DisturbanceSignal>,
    pub initial: InitialState,
    /// Constant input applied over `[−T_i, 0)`.
    pub pre_input: Vector,
    pub nominal: Nominal,
    pub amax: AmaxModel,
    pub duration: f64,
    pub step: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        grid_steps(self.duration, self.step)?;
        grid_steps(self.system.input_delay(), self.step)?;
        if !self.system.has_unlimited_preview() {
            grid_steps(self.system.preview_horizon(), self.step)?;
        }
        if self.disturbance.dim() != self.system.disturbances() {
            return Err(Error::Dimension(format!(
                "disturbance has {} channels, system expects {}",
                self.disturbance.dim(),
                self.system.disturbances()
            )));
        }
        Ok(())
    }

    pub fn with_input_bound(mut self, u_m: f64) -> Result<Self> {
        let n = self.system.inputs();
        self.system = self.system.with_input_bound(Vector::from_element(n, u_m))?;
        Ok(self)
    }

    pub fn with_preview_horizon(mut self, t_p: f64) -> Result<Self> {
        self.system = self.system.with_preview_horizon(t_p)?;
        Ok(self)
    }

    pub fn with_timing(mut self, step: f64, duration: f64) -> Result<Self> {
        self.step = step;
        self.duration = duration;
        self.validate()?;
        Ok(self)
    }

    pub fn filter_config(&self, alpha_gain: f64) -> FilterConfig {
        FilterConfig { alpha_gain, nominal: self.nominal.clone() }
    }

    pub fn u_m(&self) -> f64 {
        self.system.u_m()[0]
    }

    /// The barrier a policy uses on this scenario.
    pub fn build_filter(&self, policy: Policy, alpha_gain: f64) -> Result<SafetyFilter> {
        Ok(match policy {
            Policy::None => SafetyFilter::Passthrough,
            Policy::Standard => {
                let a_max = self.amax.a_max(self.u_m())?;
                SafetyFilter::Standard(StandardCbf::new(self.system.clone(), a_max)?.with_alpha(alpha_gain)?)
            }
            Policy::LPrev => {
                SafetyFilter::Preview(LPrevEngine::new(self.system.clone(), self.step)?.with_alpha(alpha_gain)?)
            }
            Policy::Prev => SafetyFilter::Preview(prev_cbf(&self.system, self.step)?.with_alpha(alpha_gain)?),
        })
    }

    fn initial_plant_state(&self, predictor: &Predictor, hist: &InputHistory) -> Result<Vector> {
        match &self.initial {
            InitialState::Plant(x) => Ok(x.clone()),
            InitialState::Predicted(z0) => {
                let window = self.window(0.0, self.system.input_delay())?;
                let zero = Vector::zeros(self.system.states());
                let offset = predictor.predict(&self.system, &zero, hist, &window)?;
                Ok(expm(self.system.a(), -self.system.input_delay())? * (z0 - offset))
            }
        }
    }

    fn window(&self, t: f64, horizon: f64) -> Result<PreviewWindow> {
        PreviewWindow::from_signal(&self.disturbance, t, horizon, self.step)
    }
}

struct Predictor {
    prop: Propagator,
    gamma_u: Mat,
}

impl Predictor {
    fn new(sys: &DelaySystem, step: f64) -> Result<Self> {
        Ok(Self {
            prop: Propagator::new(sys.a(), step)?,
            gamma_u: conv_const(sys.a(), sys.b(), step)?,
        })
    }

    fn predict(&self, sys: &DelaySystem, x: &Vector, hist: &InputHistory, prev: &PreviewWindow) -> Result<Vector> {
        predict_state_with(sys, &self.prop, &self.gamma_u, x, hist, prev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// No filter in the loop.
    Unfiltered,
    /// Nominal command already safe.
    Slack,
    /// Command modified by the filter.
    Active,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Unfiltered => "none",
            QpStatus::Slack => "slack",
            QpStatus::Active => "active",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: Vector,
    pub z: Vector,
    /// Output of the predicted state, `C z(t) = y(t + T_i)`.
    pub y: f64,
    pub u: f64,
    pub k: f64,
    pub intervened: bool,
    pub h: Option<f64>,
    pub t_s: Option<f64>,
    pub qp_status: QpStatus,
    pub extremal_feasible: bool,
    /// `P u − q`, non-positive when the constraint holds.
    pub constraint_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scenario: String,
    pub policy: Policy,
    pub u_m: f64,
    pub y_m: f64,
    pub step: f64,
    pub records: Vec<StepRecord>,
}

impl SimTrace {
    pub fn states(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.len())
    }
}

/// A run that stopped early; `trace` holds every completed step.
#[derive(Debug, Clone)]
pub struct SimFailure {
    pub step: usize,
    pub t: f64,
    pub cause: Error,
    pub trace: Box<SimTrace>,
}

impl fmt::Display for SimFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} (t = {:.4} s): {}", self.step, self.t, self.cause)
    }
}

impl std::error::Error for SimFailure {}

/// Run `scn` in closed loop with `policy` using RK4 at the scenario step.
/// The delayed input is held over each step, the disturbance is evaluated
/// at every RK4 stage.
pub fn simulate(scn: &Scenario, policy: Policy, alpha_gain: f64) -> std::result::Result<SimTrace, SimFailure> {
    let cfg = scn.filter_config(alpha_gain);
    let mut trace = SimTrace {
        scenario: scn.name.clone(),
        policy,
        u_m: scn.u_m(),
        y_m: scn.system.y_m(),
        step: scn.step,
        records: Vec::new(),
    };
    let fail = |step: usize, cause: Error, trace: SimTrace| SimFailure {
        step,
        t: step as f64 * scn.step,
        cause,
        trace: Box::new(trace),
    };
    let setup = (|| {
        scn.validate()?;
        cfg.validate()?;
        let n = grid_steps(scn.duration, scn.step)?;
        let filter = scn.build_filter(policy, cfg.alpha_gain)?;
        let predictor = Predictor::new(&scn.system, scn.step)?;
        let hist = InputHistory::new(scn.step, scn.system.input_delay(), scn.pre_input.clone(), scn.system.u_m().clone())?;
        let x = scn.initial_plant_state(&predictor, &hist)?;
        Ok::<_, Error>((n, filter, predictor, hist, x))
    })();
    let (n, filter, predictor, mut hist, mut x) = match setup {
        Ok(s) => s,
        Err(e) => return Err(fail(0, e, trace)),
    };
    trace.records.reserve(n + 1);

    let sys = &scn.system;
    let nominal = &cfg.nominal;
    let horizon = match &filter {
        SafetyFilter::Preview(e) if e.is_unlimited() => f64::INFINITY,
        SafetyFilter::Preview(_) => sys.preview_horizon(),
        _ => sys.input_delay(),
    };
    let t_i = sys.input_delay();
    let h = scn.step;

    for i in 0..=n {
        let t = i as f64 * h;
        let outcome = (|| {
            let window = scn.window(t, horizon)?;
            let z = predictor.predict(sys, &x, &hist, &window)?;
            let d_now = scn.disturbance.value(t + t_i);
            let fs = filter.step(nominal, &z, &window, &d_now, t, sys.u_m())?;
            Ok::<_, Error>((z, fs))
        })();
        let (z, fs) = match outcome {
            Ok(v) => v,
            Err(e) => return Err(fail(i, e, trace)),
        };
        let y = (sys.c() * &z)[0];
        trace.records.push(StepRecord {
            t,
            x: x.clone(),
            z,
            y,
            u: fs.u[0],
            k: fs.k[0],
            intervened: fs.intervened,
            h: fs.row.map(|r| r.h),
            t_s: fs.row.map(|r| r.t_s),
            qp_status: match (&fs.row, fs.intervened) {
                (None, _) => QpStatus::Unfiltered,
                (Some(_), false) => QpStatus::Slack,
                (Some(_), true) => QpStatus::Active,
            },
            extremal_feasible: fs.row.is_none_or(|r| r.extremal_feasible),
            constraint_residual: fs.row.map(|r| r.p * fs.u[0] - r.q),
        });
        if i == n {
            break;
        }
        let applied = match hist.push(fs.u) {
            Ok(u) => u,
            Err(e) => return Err(fail(i, e, trace)),
        };
        x = rk4_step(sys, scn.disturbance.as_ref(), &x, &applied, t, h);
    }
    Ok(trace)
}

fn rk4_step(sys: &DelaySystem, d: &dyn DisturbanceSignal, x: &Vector, u: &Vector, t: f64, h: f64) -> Vector {
    let f = |s: f64, x: &Vector| sys.vector_field(x, u, &d.value(s));
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}
