use rayon::prelude::*;

use super::{metrics, simulate, RunMetrics, Scenario, VIOLATION_TOL};
use crate::error::{Error, Result};
use crate::filter::Policy;

pub type SweepCell = RunMetrics;

/// One closed-loop run at input bound `u_m`. Setup and solver failures are
/// recorded in the returned metrics.
pub fn run_cell(scn: &Scenario, policy: Policy, u_m: f64, alpha_gain: f64) -> RunMetrics {
    let scn = match scn.clone().with_input_bound(u_m) {
        Ok(s) => s,
        Err(e) => return empty(scn, policy, u_m).with_failure(e.to_string()),
    };
    match simulate(&scn, policy, alpha_gain) {
        Ok(trace) => metrics(&trace, VIOLATION_TOL),
        Err(fail) => {
            let msg = fail.to_string();
            if fail.trace.records.is_empty() {
                empty(&scn, policy, u_m).with_failure(msg)
            } else {
                metrics(&fail.trace, VIOLATION_TOL).with_failure(msg)
            }
        }
    }
}

fn empty(scn: &Scenario, policy: Policy, u_m: f64) -> RunMetrics {
    RunMetrics {
        scenario: scn.name.clone(),
        policy,
        u_m,
        failure: None,
        violation_time: None,
        t1: None,
        t_s: None,
        max_abs_u: 0.0,
        min_h: None,
        max_constraint_residual: None,
        extremal_infeasible_steps: 0,
        steps: 0,
    }
}

/// Every `(policy, u_m)` pair, run in parallel; rows ordered policy-major.
pub fn sweep_um(scn: &Scenario, policies: &[Policy], grid: &[f64], alpha_gain: f64) -> Vec<SweepCell> {
    let cells: Vec<(Policy, f64)> = policies
        .iter()
        .flat_map(|&p| grid.iter().map(move |&u| (p, u)))
        .collect();
    cells
        .into_par_iter()
        .map(|(p, u)| run_cell(scn, p, u, alpha_gain))
        .collect()
}

/// Smallest `u_m` on the `resolution` grid inside `[lo, hi]` for which the
/// run is safe, found by bisection (safety is assumed monotone in `u_m`).
/// `None` when even `hi` is unsafe.
pub fn min_safe_um(
    scn: &Scenario,
    policy: Policy,
    lo: f64,
    hi: f64,
    resolution: f64,
    alpha_gain: f64,
) -> Result<Option<f64>> {
    if !(resolution > 0.0 && lo > 0.0 && lo <= hi) {
        return Err(Error::Config(format!(
            "bad search range [{lo}, {hi}] at resolution {resolution}"
        )));
    }
    let mut a = (lo / resolution - 1e-9).ceil() as i64;
    let mut b = (hi / resolution + 1e-9).floor() as i64;
    let at = |i: i64| i as f64 * resolution;
    let safe = |i: i64| run_cell(scn, policy, at(i), alpha_gain).safe();
    if a > b || !safe(b) {
        return Ok(None);
    }
    if safe(a) {
        return Ok(Some(at(a)));
    }
    while b - a > 1 {
        let mid = a + (b - a) / 2;
        if safe(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(Some(at(b)))
}
