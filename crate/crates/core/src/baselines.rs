//! Comparison filters: the no-preview acceleration-bound CBF and the
//! unlimited-preview variant of the barrier engine.

use crate::error::{Error, Result};
use crate::lprev::LPrevEngine;
use crate::matops::Vector;
use crate::plant::DelaySystem;

/// `h = (y_m − sgn(ẏ) y) − ẏ² / (2 a_max)`. At rest the sign of `y` is used,
/// which keeps `h` even in `(y, ẏ)`.
pub fn standard_h(y_m: f64, a_max: f64, y: f64, y_dot: f64) -> f64 {
    let sigma = direction(y, y_dot);
    (y_m - sigma * y) - y_dot * y_dot / (2.0 * a_max)
}

fn direction(y: f64, y_dot: f64) -> f64 {
    let v = if y_dot.abs() <= crate::lprev::SIGN_TOL { y } else { y_dot };
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Output acceleration bound for the exoskeleton:
/// `a_max = (u_m − B ė_max − K e_max − τ_max) / I`.
pub fn standard_amax_exo(
    u_m: f64,
    e_dot_max: f64,
    e_max: f64,
    tau_e_max: f64,
    inertia: f64,
    damping: f64,
    stiffness: f64,
) -> Result<f64> {
    let a = (u_m - damping * e_dot_max - stiffness * e_max - tau_e_max) / inertia;
    positive_amax(a, u_m)
}

/// Output acceleration bound for lane keeping: `a_max = (C_f u_m − F0_max) / M`.
pub fn standard_amax_lane(u_m: f64, c_f: f64, mass: f64, f0_max: f64) -> Result<f64> {
    positive_amax((c_f * u_m - f0_max) / mass, u_m)
}

fn positive_amax(a: f64, u_m: f64) -> Result<f64> {
    // Endpoint arithmetic such as 1.0952 − 0.2652 − 0.4 − 0.43 leaves
    // rounding residue around zero.
    if a > 1e-12 {
        Ok(a)
    } else {
        Err(Error::ConfigInfeasible(format!(
            "u_m = {u_m} leaves no acceleration authority (a_max = {a:.3e})"
        )))
    }
}

/// Largest `|F_0|` for `F_0 = C_f(ν + a r)/v0 + C_r(ν − b r)/v0 + M v0 r_d`
/// over `|ν| ≤ ν_max`, `|r| ≤ r_max`, `|r_d| ≤ d_m`.
#[allow(clippy::too_many_arguments)]
pub fn lane_f0_max(
    c_f: f64,
    c_r: f64,
    a: f64,
    b: f64,
    mass: f64,
    v0: f64,
    nu_max: f64,
    r_max: f64,
    d_m: f64,
) -> f64 {
    ((c_f + c_r) / v0).abs() * nu_max + ((a * c_f - b * c_r) / v0).abs() * r_max + (mass * v0).abs() * d_m
}

/// `[−scale·a_max + force_scale·F0, scale·a_max + force_scale·F0]`:
/// exoskeleton uses `scale = I`, `force_scale = 1`; lane keeping uses
/// `scale = M/C_f`, `force_scale = 1/C_f`.
pub fn standard_input_box(a_max: f64, f0: f64, scale: f64, force_scale: f64) -> (f64, f64) {
    (
        -scale * a_max + force_scale * f0,
        scale * a_max + force_scale * f0,
    )
}

/// How `a_max` follows from the input bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmaxModel {
    Exoskeleton {
        e_dot_max: f64,
        e_max: f64,
        tau_max: f64,
        inertia: f64,
        damping: f64,
        stiffness: f64,
    },
    LaneKeeping {
        c_f: f64,
        mass: f64,
        f0_max: f64,
    },
}

impl AmaxModel {
    pub fn a_max(&self, u_m: f64) -> Result<f64> {
        match *self {
            AmaxModel::Exoskeleton {
                e_dot_max,
                e_max,
                tau_max,
                inertia,
                damping,
                stiffness,
            } => standard_amax_exo(u_m, e_dot_max, e_max, tau_max, inertia, damping, stiffness),
            AmaxModel::LaneKeeping { c_f, mass, f0_max } => {
                standard_amax_lane(u_m, c_f, mass, f0_max)
            }
        }
    }
}

/// The acceleration-bound CBF evaluated on the predicted state.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardEval {
    pub h: f64,
    /// `|ẏ| / a_max`, the stopping time under the assumed deceleration.
    pub t_s: f64,
    pub sigma: f64,
    pub y: f64,
    pub y_dot: f64,
    pub p: f64,
    pub q: f64,
    /// Admissible input interval (acceleration box intersected with `±u_m`).
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct StandardCbf {
    sys: DelaySystem,
    a_max: f64,
    alpha_gain: f64,
    // ẏ = ca·z and ÿ = ca2·z + cab·u + cabd·d.
    ca: Vector,
    ca2: Vector,
    cab: f64,
    cabd: Vector,
}

impl StandardCbf {
    pub fn new(sys: DelaySystem, a_max: f64) -> Result<Self> {
        if sys.inputs() != 1 {
            return Err(Error::Dimension(
                "the acceleration-bound CBF supports a single input".into(),
            ));
        }
        if !(a_max > 0.0) {
            return Err(Error::ConfigInfeasible(format!("a_max = {a_max} must be > 0")));
        }
        let ca = sys.c() * sys.a();
        let cab = (&ca * sys.b())[0];
        let cabd = (&ca * sys.bd()).row(0).transpose();
        let ca2 = (&ca * sys.a()).row(0).transpose();
        Ok(Self {
            ca: ca.row(0).transpose(),
            ca2,
            sys,
            a_max,
            alpha_gain: 1.0,
            cab,
            cabd,
        })
    }

    pub fn with_alpha(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("alpha gain {gamma} must be > 0")));
        }
        self.alpha_gain = gamma;
        Ok(self)
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn system(&self) -> &DelaySystem {
        &self.sys
    }

    /// Barrier value, QP row and input box at predicted state `z` with the
    /// current (delay-shifted) disturbance `d_now`.
    pub fn evaluate(&self, z: &Vector, d_now: &Vector) -> StandardEval {
        let y = (self.sys.c() * z)[0];
        let y_dot = self.ca.dot(z);
        let drift = self.ca2.dot(z) + self.cabd.dot(d_now);
        let a = self.a_max;
        let sigma = direction(y, y_dot);
        let h = standard_h(self.sys.y_m(), a, y, y_dot);

        // ḣ = −σẏ − ẏ(drift + cab·u)/a ≥ −γh
        let p = y_dot * self.cab / a;
        let q = self.alpha_gain * h - sigma * y_dot - y_dot * drift / a;

        // |ÿ| ≤ a_max
        let (mut lo, mut hi) = ((-a - drift) / self.cab, (a - drift) / self.cab);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        let u_m = self.sys.u_m()[0];
        StandardEval {
            h,
            t_s: y_dot.abs() / a,
            sigma,
            y,
            y_dot,
            p,
            q,
            lo: lo.max(-u_m),
            hi: hi.min(u_m),
        }
    }
}

/// The unlimited-preview engine: the same barrier with the preview
/// extended on demand, so the tail is never worst-cased.
pub fn prev_cbf(sys: &DelaySystem, step: f64) -> Result<LPrevEngine> {
    LPrevEngine::new(sys.with_preview_horizon(f64::INFINITY)?, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXO: (f64, f64, f64, f64, f64, f64) = (0.1326, 0.2, 0.43, 1.0, 2.0, 2.0);

    fn exo_amax(u_m: f64) -> Result<f64> {
        let (ed, e, tau, i, b, k) = EXO;
        standard_amax_exo(u_m, ed, e, tau, i, b, k)
    }

    #[test]
    fn standard_h_center_and_boundary() {
        assert_eq!(standard_h(0.2, 0.9048, 0.0, 0.0), 0.2);
        assert_eq!(standard_h(0.2, 0.9048, 0.2, 0.0), 0.0);
        assert_eq!(standard_h(0.2, 0.9048, -0.2, 0.0), 0.0);
    }

    #[test]
    fn standard_h_substitution() {
        let h = standard_h(0.2, 0.9048, 0.1, 0.1);
        let expected = 0.2 - 0.1 - 0.01 / (2.0 * 0.9048);
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 0.094_473_917).abs() < 1e-9);
    }

    #[test]
    fn amax_endpoints() {
        assert!((exo_amax(1.119).unwrap() - 0.0238).abs() < 1e-4);
        assert!((exo_amax(2.0).unwrap() - 0.9048).abs() < 1e-4);
        assert!(matches!(exo_amax(1.0952), Err(Error::ConfigInfeasible(_))));
        assert!(matches!(exo_amax(1.0), Err(Error::ConfigInfeasible(_))));
    }

    #[test]
    fn symmetric_box_without_f0() {
        assert_eq!(standard_input_box(0.5, 0.0, 1.0, 1.0), (-0.5, 0.5));
        let (m, cf, a) = (1650.0, 98800.0, 0.7);
        let (lo, hi) = standard_input_box(a, 0.0, m / cf, 1.0 / cf);
        assert!((hi - m * a / cf).abs() < 1e-15 && (lo + m * a / cf).abs() < 1e-15);
    }

    #[test]
    fn lane_f0_max_is_attained_at_a_corner() {
        let (cf, cr, a, b, m, v0) = (98800.0, 133000.0, 1.11, 1.59, 1650.0, 27.7);
        let (nu, r, d) = (0.3, 0.2, 0.05);
        let f0 = |n: f64, rr: f64, dd: f64| cf * (n + a * rr) / v0 + cr * (n - b * rr) / v0 + m * v0 * dd;
        let mut best: f64 = 0.0;
        for sn in [-1.0, 1.0] {
            for sr in [-1.0, 1.0] {
                for sd in [-1.0, 1.0] {
                    best = best.max(f0(sn * nu, sr * r, sd * d).abs());
                }
            }
        }
        assert!((lane_f0_max(cf, cr, a, b, m, v0, nu, r, d) - best).abs() < 1e-9);
    }
}
