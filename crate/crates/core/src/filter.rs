//! Minimal-intervention safety filter and nominal controllers.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::StandardCbf;
use crate::error::{Error, Result};
use crate::lprev::LPrevEngine;
use crate::matops::{Mat, Vector};
use crate::plant::{DisturbanceSignal, PreviewWindow};

/// `|u − k|` above this counts as an intervention.
pub const INTERVENTION_TOL: f64 = 1e-9;

/// Exact minimizer of `½(u − k)²` over `{u ∈ [lo, hi] : P u ≤ q}`.
pub fn solve_qp_scalar(k: f64, p: f64, q: f64, bounds: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = bounds;
    if !(lo <= hi) {
        return Err(Error::Domain(format!("input box [{lo}, {hi}] is empty")));
    }
    let infeasible = || Error::Infeasible { p, q, lo: bounds.0, hi: bounds.1 };
    if p > 0.0 {
        hi = hi.min(q / p);
    } else if p < 0.0 {
        lo = lo.max(q / p);
    } else if q < 0.0 {
        return Err(infeasible());
    }
    if lo > hi {
        return Err(infeasible());
    }
    Ok(k.clamp(lo, hi))
}

pub fn nominal_zero(inputs: usize) -> Vector {
    Vector::zeros(inputs)
}

/// `K (z_ff − z)` saturated elementwise to `±u_m`.
pub fn nominal_statefb(gain: &Mat, z_ff: &Vector, z: &Vector, u_m: &Vector) -> Result<Vector> {
    if gain.ncols() != z.len() || z_ff.len() != z.len() || gain.nrows() != u_m.len() {
        return Err(Error::Dimension(format!(
            "gain {}x{}, z_ff {}, z {}, u_m {}",
            gain.nrows(),
            gain.ncols(),
            z_ff.len(),
            z.len(),
            u_m.len()
        )));
    }
    let raw = gain * (z_ff - z);
    Ok(raw.zip_map(u_m, |u, m| u.clamp(-m, m)))
}

/// Nominal controller `k(x, z, t)` that the filter minimally modifies.
#[derive(Debug, Clone)]
pub enum Nominal {
    Zero,
    /// State feedback on the predicted state. One state coordinate of the
    /// feedforward tracks a disturbance channel read `lead` seconds ahead.
    StateFeedback {
        gain: Mat,
        feedforward: Option<Feedforward>,
    },
}

#[derive(Debug, Clone)]
pub struct Feedforward {
    pub signal: Arc<dyn DisturbanceSignal>,
    pub channel: usize,
    pub state_index: usize,
    pub lead: f64,
}

impl Nominal {
    pub fn command(&self, z: &Vector, t: f64, u_m: &Vector) -> Result<Vector> {
        match self {
            Nominal::Zero => Ok(nominal_zero(u_m.len())),
            Nominal::StateFeedback { gain, feedforward } => {
                let mut z_ff = Vector::zeros(z.len());
                if let Some(ff) = feedforward {
                    z_ff[ff.state_index] = ff.signal.value(t + ff.lead)[ff.channel];
                }
                nominal_statefb(gain, &z_ff, z, u_m)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    None,
    Standard,
    LPrev,
    Prev,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::None, Policy::Standard, Policy::LPrev, Policy::Prev];
    pub const FILTERS: [Policy; 3] = [Policy::Standard, Policy::LPrev, Policy::Prev];

    pub fn name(self) -> &'static str {
        match self {
            Policy::None => "none",
            Policy::Standard => "standard",
            Policy::LPrev => "lprev",
            Policy::Prev => "prev",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}' (none | standard | lprev | prev)")))
    }
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub alpha_gain: f64,
    pub nominal: Nominal,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { alpha_gain: 1.0, nominal: Nominal::Zero }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_gain > 0.0 && self.alpha_gain.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("alpha gain {} must be > 0", self.alpha_gain)))
        }
    }
}

/// The barrier used by a policy.
#[derive(Debug, Clone)]
pub enum SafetyFilter {
    Passthrough,
    Standard(StandardCbf),
    Preview(LPrevEngine),
}

/// Barrier quantities recorded per step, common to all filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub h: f64,
    pub t_s: f64,
    pub p: f64,
    pub q: f64,
    pub lo: f64,
    pub hi: f64,
    /// Whether the extremal input satisfies the row (always true for the
    /// acceleration-bound filter, which has no extremal input).
    pub extremal_feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub u: Vector,
    pub k: Vector,
    pub row: Option<ConstraintRow>,
    pub intervened: bool,
}

impl SafetyFilter {
    /// Evaluate the nominal command and project it onto the safe set.
    /// `d_now` is the disturbance at the end of the delay (`t + T_i`).
    pub fn step(
        &self,
        nominal: &Nominal,
        z: &Vector,
        prev: &PreviewWindow,
        d_now: &Vector,
        t: f64,
        u_m: &Vector,
    ) -> Result<FilterStep> {
        let k = nominal.command(z, t, u_m)?;
        let row = match self {
            SafetyFilter::Passthrough => None,
            SafetyFilter::Standard(cbf) => {
                let e = cbf.evaluate(z, d_now);
                Some(ConstraintRow {
                    h: e.h,
                    t_s: e.t_s,
                    p: e.p,
                    q: e.q,
                    lo: e.lo,
                    hi: e.hi,
                    extremal_feasible: true,
                })
            }
            SafetyFilter::Preview(engine) => {
                let e = engine.barrier(z, prev)?;
                if e.p.len() != 1 {
                    return Err(Error::Dimension("the safety QP supports a single input".into()));
                }
                Some(ConstraintRow {
                    h: e.h,
                    t_s: e.t_s,
                    p: e.p[0],
                    q: e.q,
                    lo: -u_m[0],
                    hi: u_m[0],
                    extremal_feasible: e.p.dot(&e.u_hat) <= e.q + 1e-12,
                })
            }
        };
        let u = match &row {
            None => k.clone(),
            Some(r) => Vector::from_element(1, solve_qp_scalar(k[0], r.p, r.q, (r.lo, r.hi))?),
        };
        let intervened = (&u - &k).amax() > INTERVENTION_TOL;
        Ok(FilterStep { u, k, row, intervened })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn objective(u: f64, k: f64) -> f64 {
        0.5 * (u - k) * (u - k)
    }

    #[test]
    fn inactive_constraint_returns_nominal() {
        assert_eq!(solve_qp_scalar(0.3, 0.0, 1.0, (-1.0, 1.0)).unwrap(), 0.3);
    }

    #[test]
    fn active_constraint_projects() {
        assert_eq!(solve_qp_scalar(0.5, 1.0, 0.2, (-1.0, 1.0)).unwrap(), 0.2);
        assert_eq!(solve_qp_scalar(-0.5, -2.0, 0.4, (-1.0, 1.0)).unwrap(), -0.2);
    }

    #[test]
    fn empty_feasible_set_is_infeasible() {
        assert!(matches!(
            solve_qp_scalar(0.0, 1.0, -2.0, (-1.0, 1.0)),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(
            solve_qp_scalar(0.0, 0.0, -1e-3, (-1.0, 1.0)),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(solve_qp_scalar(0.0, 1.0, 0.0, (1.0, -1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn state_feedback_basics() {
        let gain = Mat::from_row_slice(1, 2, &[3.0, 1.0]);
        let z = Vector::from_vec(vec![0.1, -0.2]);
        let um = Vector::from_element(1, 10.0);
        assert_eq!(nominal_statefb(&gain, &z, &z, &um).unwrap()[0], 0.0);
        assert_eq!(nominal_statefb(&Mat::zeros(1, 2), &Vector::zeros(2), &z, &um).unwrap()[0], 0.0);
        let u = nominal_statefb(&gain, &Vector::zeros(2), &z, &um).unwrap()[0];
        assert!((u + 0.1).abs() < 1e-15);
        let sat = nominal_statefb(&gain, &Vector::from_vec(vec![100.0, 0.0]), &z, &um).unwrap()[0];
        assert_eq!(sat, 10.0);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("cbf".parse::<Policy>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn minimal_over_feasibility_grid(
            k in -3.0..3.0f64,
            p in -2.0..2.0f64,
            q in -1.0..2.0f64,
            lo in -2.0..0.0f64,
            w in 0.0..3.0f64,
        ) {
            let hi = lo + w;
            let n = 1000;
            let grid: Vec<f64> = (0..=n).map(|i| lo + w * i as f64 / n as f64).collect();
            let feasible: Vec<f64> = grid.iter().copied().filter(|u| p * u <= q).collect();
            match solve_qp_scalar(k, p, q, (lo, hi)) {
                Ok(u) => {
                    prop_assert!(p * u <= q + 1e-12);
                    prop_assert!(u >= lo && u <= hi);
                    for v in feasible {
                        prop_assert!((u - k).abs() <= (v - k).abs() + 1e-12);
                    }
                }
                Err(_) => prop_assert!(feasible.is_empty()),
            }
        }

        #[test]
        fn matches_million_point_grid(
            k in -3.0..3.0f64,
            p in -2.0..2.0f64,
            q in -1.0..2.0f64,
            lo in -2.0..0.0f64,
            w in 0.01..3.0f64,
        ) {
            let hi = lo + w;
            let n = 1_000_000usize;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                let u = lo + w * i as f64 / n as f64;
                if p * u <= q {
                    best = best.min(objective(u, k));
                }
            }
            if let Ok(u) = solve_qp_scalar(k, p, q, (lo, hi)) {
                prop_assert!(p * u <= q + 1e-12);
                // The solver is exact; the grid can only do worse.
                let spacing = w / n as f64;
                prop_assert!(objective(u, k) <= best + 1e-10);
                prop_assert!(best - objective(u, k) <= spacing * (3.0 + k.abs() + 2.0) + 1e-10);
            }
        }
    }
}
