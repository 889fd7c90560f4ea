use super::SimTrace;
use crate::filter::Policy;

/// `|y| > y_m + VIOLATION_TOL` counts as leaving the safe set.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Linear-interpolation quantiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub policy: Policy,
    pub u_m: f64,
    /// Set when the run stopped early (solver failure).
    pub failure: Option<String>,
    pub violation_time: Option<f64>,
    /// First intervention instant.
    pub t1: Option<f64>,
    /// Stopping-time statistics over intervened steps.
    pub t_s: Option<Quartiles>,
    pub max_abs_u: f64,
    pub min_h: Option<f64>,
    pub max_constraint_residual: Option<f64>,
    pub extremal_infeasible_steps: usize,
    pub steps: usize,
}

impl RunMetrics {
    pub fn violated(&self) -> bool {
        self.violation_time.is_some()
    }

    /// Completed the full horizon without leaving the safe set.
    pub fn safe(&self) -> bool {
        self.failure.is_none() && !self.violated()
    }

    pub fn with_failure(mut self, cause: impl Into<String>) -> Self {
        self.failure = Some(cause.into());
        self
    }
}

pub fn metrics(trace: &SimTrace, tol: f64) -> RunMetrics {
    let recs = &trace.records;
    let ts: Vec<f64> = recs.iter().filter(|r| r.intervened).filter_map(|r| r.t_s).collect();
    let min_h = recs.iter().filter_map(|r| r.h).reduce(f64::min);
    let max_res = recs.iter().filter_map(|r| r.constraint_residual).reduce(f64::max);
    RunMetrics {
        scenario: trace.scenario.clone(),
        policy: trace.policy,
        u_m: trace.u_m,
        failure: None,
        violation_time: recs.iter().find(|r| r.y.abs() > trace.y_m + tol).map(|r| r.t),
        t1: recs.iter().find(|r| r.intervened).map(|r| r.t),
        t_s: Quartiles::of(&ts),
        max_abs_u: recs.iter().map(|r| r.u.abs()).fold(0.0, f64::max),
        min_h,
        max_constraint_residual: max_res,
        extremal_infeasible_steps: recs
            .iter()
            .filter(|r| !r.extremal_feasible && r.h.is_some_and(|h| h >= 0.0))
            .count(),
        steps: recs.len(),
    }
}
