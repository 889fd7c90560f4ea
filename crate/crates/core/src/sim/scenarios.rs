use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{InitialState, Scenario};
use crate::baselines::{lane_f0_max, AmaxModel};
use crate::error::Result;
use crate::filter::{Feedforward, Nominal};
use crate::matops::{mat, Mat, Vector};
use crate::plant::{DelaySystem, Sinusoid};

/// LQR gain for the lane-keeping model at `v0 = 27.7 m/s` with
/// `Q = diag(10, 1, 10, 1)`, `R = 50` (see `scripts/lane_lqr_gain.py`).
pub const LANE_GAIN: [f64; 4] = [
    0.4472135954999572,
    0.06963479382557322,
    3.971238334924369,
    0.22854798887907163,
];

pub fn scenario_names() -> &'static [&'static str] {
    &["exo", "lane"]
}

/// Shoulder exoskeleton under admittance control: `I ë + B ė + K e = u + τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExoParams {
    pub inertia: f64,
    pub damping: f64,
    pub stiffness: f64,
    pub t_i: f64,
    pub t_p: f64,
    pub u_m: f64,
    pub d_m: f64,
    pub y_m: f64,
    /// Interaction torque frequency (Hz).
    pub freq: f64,
    /// Bounds used by the acceleration-bound filter.
    pub e_dot_max: f64,
    pub e_max: f64,
    pub tau_max: f64,
    pub duration: f64,
    pub step: f64,
}

impl Default for ExoParams {
    fn default() -> Self {
        Self {
            inertia: 1.0,
            damping: 2.0,
            stiffness: 2.0,
            t_i: 0.008,
            t_p: 0.010,
            u_m: 1.119,
            d_m: 0.43,
            y_m: 0.2,
            freq: 0.1,
            e_dot_max: 0.1326,
            e_max: 0.2,
            tau_max: 0.43,
            duration: 20.0,
            step: 0.001,
        }
    }
}

pub fn exoskeleton(p: &ExoParams) -> Result<Scenario> {
    let (i, b, k) = (p.inertia, p.damping, p.stiffness);
    let system = DelaySystem::new(
        mat(2, 2, &[0.0, 1.0, -k / i, -b / i])?,
        mat(2, 1, &[0.0, 1.0 / i])?,
        mat(2, 1, &[0.0, 1.0 / i])?,
        mat(1, 2, &[1.0, 0.0])?,
        p.t_i,
        p.t_p,
        Vector::from_element(1, p.u_m),
        Vector::from_element(1, p.d_m),
        p.y_m,
    )?;
    let scn = Scenario {
        name: "exo".into(),
        system,
        disturbance: Arc::new(Sinusoid {
            amplitude: p.d_m,
            omega: 2.0 * PI * p.freq,
            phase: 0.0,
        }),
        initial: InitialState::Plant(Vector::zeros(2)),
        pre_input: Vector::zeros(1),
        nominal: Nominal::Zero,
        amax: AmaxModel::Exoskeleton {
            e_dot_max: p.e_dot_max,
            e_max: p.e_max,
            tau_max: p.tau_max,
            inertia: i,
            damping: b,
            stiffness: k,
        },
        duration: p.duration,
        step: p.step,
    };
    scn.validate()?;
    Ok(scn)
}

/// Lateral bicycle model in road-error coordinates, state `[y, ν, ψ, r]`,
/// steering input, road yaw-rate disturbance `r_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaneParams {
    pub mass: f64,
    pub a: f64,
    pub b: f64,
    pub c_f: f64,
    pub c_r: f64,
    pub i_z: f64,
    pub v0: f64,
    pub t_i: f64,
    pub t_p: f64,
    pub u_m: f64,
    pub d_m: f64,
    pub y_m: f64,
    /// Road yaw-rate period (s).
    pub period: f64,
    pub nu_max: f64,
    pub r_max: f64,
    pub z0: Vec<f64>,
    pub gain: Vec<f64>,
    pub duration: f64,
    pub step: f64,
}

impl Default for LaneParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            a: 1.11,
            b: 1.59,
            c_f: 98800.0,
            c_r: 133000.0,
            i_z: 2315.3,
            v0: 27.7,
            t_i: 0.010,
            t_p: 0.020,
            u_m: 0.2,
            d_m: 0.3,
            y_m: 0.6,
            period: 4.0,
            nu_max: 1.2,
            r_max: 0.5,
            z0: vec![0.5, 1.2, 0.0, 0.0],
            gain: LANE_GAIN.to_vec(),
            duration: 15.0,
            step: 0.001,
        }
    }
}

impl LaneParams {
    pub fn f0_max(&self) -> f64 {
        lane_f0_max(
            self.c_f, self.c_r, self.a, self.b, self.mass, self.v0, self.nu_max, self.r_max, self.d_m,
        )
    }

    fn matrices(&self) -> Result<(Mat, Mat, Mat, Mat)> {
        let (m, a, b, cf, cr, iz, v) = (self.mass, self.a, self.b, self.c_f, self.c_r, self.i_z, self.v0);
        let a_mat = mat(
            4,
            4,
            &[
                0.0, 1.0, v, 0.0,
                0.0, -(cf + cr) / (m * v), 0.0, (b * cr - a * cf) / (m * v) - v,
                0.0, 0.0, 0.0, 1.0,
                0.0, (b * cr - a * cf) / (iz * v), 0.0, -(a * a * cf + b * b * cr) / (iz * v),
            ],
        )?;
        let b_mat = mat(4, 1, &[0.0, cf / m, 0.0, a * cf / iz])?;
        let bd_mat = mat(4, 1, &[0.0, 0.0, -1.0, 0.0])?;
        let c_mat = mat(1, 4, &[1.0, 0.0, 0.0, 0.0])?;
        Ok((a_mat, b_mat, bd_mat, c_mat))
    }
}

pub fn lane_keeping(p: &LaneParams) -> Result<Scenario> {
    let (a, b, bd, c) = p.matrices()?;
    let system = DelaySystem::new(
        a,
        b,
        bd,
        c,
        p.t_i,
        p.t_p,
        Vector::from_element(1, p.u_m),
        Vector::from_element(1, p.d_m),
        p.y_m,
    )?;
    let signal = Arc::new(Sinusoid {
        amplitude: p.d_m,
        omega: 2.0 * PI / p.period,
        phase: 0.0,
    });
    let gain = mat(1, 4, &p.gain)?;
    let scn = Scenario {
        name: "lane".into(),
        system,
        disturbance: signal.clone(),
        initial: InitialState::Predicted(Vector::from_vec(p.z0.clone())),
        pre_input: Vector::zeros(1),
        nominal: Nominal::StateFeedback {
            gain,
            feedforward: Some(Feedforward {
                signal,
                channel: 0,
                state_index: 3,
                lead: p.t_i,
            }),
        },
        amax: AmaxModel::LaneKeeping {
            c_f: p.c_f,
            mass: p.mass,
            f0_max: p.f0_max(),
        },
        duration: p.duration,
        step: p.step,
    };
    scn.validate()?;
    Ok(scn)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_relative_degree_gains() {
        let scn = lane_keeping(&LaneParams::default()).unwrap();
        let sys = &scn.system;
        let ca = sys.c() * sys.a();
        assert!(((&ca * sys.b())[0] - 98800.0 / 1650.0).abs() < 1e-12);
        assert!(((&ca * sys.bd())[0] + 27.7).abs() < 1e-12);
    }

    #[test]
    fn lane_gain_is_stabilizing() {
        let scn = lane_keeping(&LaneParams::default()).unwrap();
        let k = mat(1, 4, &LANE_GAIN).unwrap();
        let closed = scn.system.a() - scn.system.b() * k;
        let eig = closed.complex_eigenvalues();
        assert!(eig.iter().all(|l| l.re < 0.0), "{eig}");
    }

    #[test]
    fn exo_amax_bounds_match_parameters() {
        let scn = exoskeleton(&ExoParams::default()).unwrap();
        assert!((scn.amax.a_max(1.119).unwrap() - 0.0238).abs() < 1e-4);
        assert!((scn.amax.a_max(2.0).unwrap() - 0.9048).abs() < 1e-4);
    }
}
