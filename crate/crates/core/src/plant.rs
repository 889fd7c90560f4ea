//! The delayed plant, its input history and disturbance preview, and the
//! exact predicted state `z(t) = x(t + T_i)`.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matops::{conv_const, ensure_finite, expm, Mat, Propagator, Vector};

/// Relative tolerance for the relative-degree-2 checks (`CB = CB_d = 0`).
const RELDEG_TOL: f64 = 1e-12;

/// Number of whole grid steps in `duration`, rejecting durations that are
/// not an integer multiple of `step`.
pub fn grid_steps(duration: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Alignment(format!("step {step} must be positive")));
    }
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::Alignment(format!("duration {duration} must be finite and >= 0")));
    }
    let ratio = duration / step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Alignment(format!(
            "{duration} s is not a multiple of the {step} s step"
        )));
    }
    Ok(n as usize)
}

/// `ẋ = A x + B u(t − T_i) + B_d d(t)`, `y = C x`, with symmetric bounds on
/// input, disturbance and output.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySystem {
    a: Mat,
    b: Mat,
    bd: Mat,
    c: Mat,
    t_i: f64,
    t_p: f64,
    u_m: Vector,
    d_m: Vector,
    y_m: f64,
}

impl DelaySystem {
    /// `t_p` may be `f64::INFINITY` for an unlimited preview.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Mat,
        b: Mat,
        bd: Mat,
        c: Mat,
        t_i: f64,
        t_p: f64,
        u_m: Vector,
        d_m: Vector,
        y_m: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n || bd.nrows() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows and B_d has {} rows, expected {n}",
                b.nrows(),
                bd.nrows()
            )));
        }
        if c.nrows() != 1 || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C must be 1x{n}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if u_m.len() != b.ncols() || d_m.len() != bd.ncols() {
            return Err(Error::Dimension(format!(
                "bounds u_m[{}], d_m[{}] do not match B ({} cols), B_d ({} cols)",
                u_m.len(),
                d_m.len(),
                b.ncols(),
                bd.ncols()
            )));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&bd, "B_d"), (&c, "C")] {
            ensure_finite(m, name)?;
        }
        if !(t_i > 0.0 && t_i.is_finite()) {
            return Err(Error::InvalidSystem(format!("input delay {t_i} must be > 0")));
        }
        if !(t_p > t_i) {
            return Err(Error::InvalidSystem(format!(
                "preview horizon {t_p} must exceed the input delay {t_i}"
            )));
        }
        if !u_m.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidSystem("u_m must be positive".into()));
        }
        if !d_m.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidSystem("d_m must be non-negative".into()));
        }
        if !(y_m > 0.0 && y_m.is_finite()) {
            return Err(Error::InvalidSystem(format!("y_m {y_m} must be positive")));
        }

        let scale = |m: &Mat| m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let cb = &c * &b;
        let cbd = &c * &bd;
        if cb.amax() > RELDEG_TOL * scale(&c) * scale(&b)
            || cbd.amax() > RELDEG_TOL * scale(&c) * scale(&bd)
        {
            return Err(Error::InvalidSystem(
                "relative degree 2 requires CB = 0 and CB_d = 0".into(),
            ));
        }
        let ca = &c * &a;
        if (&ca * &b).iter().any(|v| *v == 0.0) || (&ca * &bd).iter().any(|v| *v == 0.0) {
            return Err(Error::InvalidSystem(
                "relative degree 2 requires every entry of CAB and CAB_d to be nonzero".into(),
            ));
        }

        Ok(Self {
            a,
            b,
            bd,
            c,
            t_i,
            t_p,
            u_m,
            d_m,
            y_m,
        })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn bd(&self) -> &Mat {
        &self.bd
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn input_delay(&self) -> f64 {
        self.t_i
    }
    pub fn preview_horizon(&self) -> f64 {
        self.t_p
    }
    pub fn has_unlimited_preview(&self) -> bool {
        self.t_p.is_infinite()
    }
    pub fn u_m(&self) -> &Vector {
        &self.u_m
    }
    pub fn d_m(&self) -> &Vector {
        &self.d_m
    }
    pub fn y_m(&self) -> f64 {
        self.y_m
    }
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn disturbances(&self) -> usize {
        self.bd.ncols()
    }

    /// Length of the previewed stretch beyond the delay, `T_p − T_i`.
    pub fn preview_margin(&self) -> f64 {
        self.t_p - self.t_i
    }

    pub fn with_preview_horizon(&self, t_p: f64) -> Result<Self> {
        if !(t_p > self.t_i) {
            return Err(Error::InvalidSystem(format!(
                "preview horizon {t_p} must exceed the input delay {}",
                self.t_i
            )));
        }
        Ok(Self { t_p, ..self.clone() })
    }

    pub fn with_input_bound(&self, u_m: Vector) -> Result<Self> {
        if u_m.len() != self.inputs() || !u_m.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidSystem("u_m must be positive, one per input".into()));
        }
        Ok(Self { u_m, ..self.clone() })
    }

    pub fn with_disturbance_bound(&self, d_m: Vector) -> Result<Self> {
        if d_m.len() != self.disturbances() || !d_m.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidSystem("d_m must be non-negative, one per channel".into()));
        }
        Ok(Self { d_m, ..self.clone() })
    }

    /// Plant vector field for a held delayed input.
    pub fn vector_field(&self, x: &Vector, delayed_u: &Vector, d: &Vector) -> Vector {
        &self.a * x + &self.b * delayed_u + &self.bd * d
    }
}

/// Applied inputs over `[t − T_i, t)`, one zero-order-hold entry per step,
/// oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct InputHistory {
    step: f64,
    buffer: VecDeque<Vector>,
    u_m: Vector,
}

impl InputHistory {
    pub fn new(step: f64, t_i: f64, fill: Vector, u_m: Vector) -> Result<Self> {
        let len = grid_steps(t_i, step)?;
        if len == 0 {
            return Err(Error::Alignment("input delay shorter than one step".into()));
        }
        if fill.len() != u_m.len() {
            return Err(Error::Dimension(format!(
                "history fill has {} channels, bound has {}",
                fill.len(),
                u_m.len()
            )));
        }
        check_bound(&fill, &u_m)?;
        Ok(Self {
            step,
            buffer: std::iter::repeat_n(fill, len).collect(),
            u_m,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// The input reaching the plant now, `u(t − T_i)`.
    pub fn delayed(&self) -> &Vector {
        &self.buffer[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vector> {
        self.buffer.iter()
    }

    /// Records `u(t)` and returns the evicted `u(t − T_i)`.
    pub fn push(&mut self, u: Vector) -> Result<Vector> {
        if u.len() != self.u_m.len() {
            return Err(Error::Dimension(format!(
                "input has {} channels, history holds {}",
                u.len(),
                self.u_m.len()
            )));
        }
        check_bound(&u, &self.u_m)?;
        self.buffer.push_back(u);
        Ok(self.buffer.pop_front().expect("history is never empty"))
    }
}

fn check_bound(u: &Vector, u_m: &Vector) -> Result<()> {
    for (v, m) in u.iter().zip(u_m.iter()) {
        if !(v.abs() <= m * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("input {v} exceeds the bound {m}")));
        }
    }
    Ok(())
}

/// A previewable disturbance `d(t)` with its bound and, when available,
/// an analytic time derivative.
pub trait DisturbanceSignal: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, t: f64) -> Vector;
    /// `None` when no analytic derivative is known.
    fn derivative(&self, t: f64) -> Option<Vector>;
    fn bound(&self) -> Vector;
}

/// `amplitude · sin(omega · t + phase)` on a single channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl DisturbanceSignal for Sinusoid {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, t: f64) -> Vector {
        Vector::from_element(1, self.amplitude * (self.omega * t + self.phase).sin())
    }
    fn derivative(&self, t: f64) -> Option<Vector> {
        Some(Vector::from_element(
            1,
            self.amplitude * self.omega * (self.omega * t + self.phase).cos(),
        ))
    }
    fn bound(&self) -> Vector {
        Vector::from_element(1, self.amplitude.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroDisturbance(pub usize);

impl DisturbanceSignal for ZeroDisturbance {
    fn dim(&self) -> usize {
        self.0
    }
    fn value(&self, _t: f64) -> Vector {
        Vector::zeros(self.0)
    }
    fn derivative(&self, _t: f64) -> Option<Vector> {
        Some(Vector::zeros(self.0))
    }
    fn bound(&self) -> Vector {
        Vector::zeros(self.0)
    }
}

/// Disturbance given by a closure, without an analytic derivative.
pub struct FnDisturbance<F> {
    f: F,
    bound: Vector,
}

impl<F: Fn(f64) -> Vector + Send + Sync> FnDisturbance<F> {
    pub fn new(f: F, bound: Vector) -> Self {
        Self { f, bound }
    }
}

impl<F> fmt::Debug for FnDisturbance<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDisturbance").field("bound", &self.bound).finish()
    }
}

impl<F: Fn(f64) -> Vector + Send + Sync> DisturbanceSignal for FnDisturbance<F> {
    fn dim(&self) -> usize {
        self.bound.len()
    }
    fn value(&self, t: f64) -> Vector {
        (self.f)(t)
    }
    fn derivative(&self, _t: f64) -> Option<Vector> {
        None
    }
    fn bound(&self) -> Vector {
        self.bound.clone()
    }
}

/// Disturbance samples `d(t + j·step)` for `j = 0..=T_p/step`, with
/// derivatives on the same grid. An unlimited window keeps a handle on the
/// signal and produces samples on demand.
#[derive(Debug, Clone)]
pub struct PreviewWindow {
    anchor: f64,
    step: f64,
    values: Vec<Vector>,
    derivs: Vec<Vector>,
    source: Option<Arc<dyn DisturbanceSignal>>,
}

impl PreviewWindow {
    /// Samples `signal` over `[t, t + horizon]`; an infinite horizon gives
    /// an on-demand window.
    pub fn from_signal(
        signal: &Arc<dyn DisturbanceSignal>,
        t: f64,
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        if horizon.is_infinite() {
            if !(step > 0.0) {
                return Err(Error::Alignment(format!("step {step} must be positive")));
            }
            return Ok(Self {
                anchor: t,
                step,
                values: Vec::new(),
                derivs: Vec::new(),
                source: Some(Arc::clone(signal)),
            });
        }
        let n = grid_steps(horizon, step)?;
        let times: Vec<f64> = (0..=n).map(|j| t + j as f64 * step).collect();
        let values: Vec<Vector> = times.iter().map(|&s| signal.value(s)).collect();
        let derivs = match times
            .iter()
            .map(|&s| signal.derivative(s))
            .collect::<Option<Vec<_>>>()
        {
            Some(d) => d,
            None => central_differences(&values, step),
        };
        Ok(Self {
            anchor: t,
            step,
            values,
            derivs,
            source: None,
        })
    }

    /// A limited window from raw samples; derivatives default to central
    /// differences.
    pub fn from_samples(
        anchor: f64,
        step: f64,
        values: Vec<Vector>,
        derivs: Option<Vec<Vector>>,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Coverage {
                needed: 2,
                available: values.len(),
            });
        }
        let derivs = match derivs {
            Some(d) if d.len() == values.len() => d,
            Some(d) => {
                return Err(Error::Dimension(format!(
                    "{} derivative samples for {} values",
                    d.len(),
                    values.len()
                )))
            }
            None => central_differences(&values, step),
        };
        Ok(Self {
            anchor,
            step,
            values,
            derivs,
            source: None,
        })
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn is_unlimited(&self) -> bool {
        self.source.is_some()
    }

    /// Stored sample count for a limited window.
    pub fn stored(&self) -> usize {
        self.values.len()
    }

    /// `d(anchor + j·step)`, or `None` past the end of a limited window.
    pub fn value(&self, j: usize) -> Option<Vector> {
        match &self.source {
            Some(src) => Some(src.value(self.anchor + j as f64 * self.step)),
            None => self.values.get(j).cloned(),
        }
    }

    pub fn derivative(&self, j: usize) -> Option<Vector> {
        match &self.source {
            Some(src) => {
                let t = self.anchor + j as f64 * self.step;
                Some(src.derivative(t).unwrap_or_else(|| {
                    (src.value(t + self.step) - src.value(t - self.step)) / (2.0 * self.step)
                }))
            }
            None => self.derivs.get(j).cloned(),
        }
    }

    pub fn values_from(&self, start: usize, count: usize) -> Result<Vec<Vector>> {
        self.collect(start, count, |j| self.value(j))
    }

    pub fn derivatives_from(&self, start: usize, count: usize) -> Result<Vec<Vector>> {
        self.collect(start, count, |j| self.derivative(j))
    }

    fn collect(
        &self,
        start: usize,
        count: usize,
        get: impl Fn(usize) -> Option<Vector>,
    ) -> Result<Vec<Vector>> {
        (start..start + count)
            .map(|j| {
                get(j).ok_or(Error::Coverage {
                    needed: start + count,
                    available: self.values.len(),
                })
            })
            .collect()
    }
}

fn central_differences(values: &[Vector], step: f64) -> Vec<Vector> {
    let n = values.len();
    (0..n)
        .map(|j| match j {
            0 => (&values[1] - &values[0]) / step,
            j if j == n - 1 => (&values[j] - &values[j - 1]) / step,
            j => (&values[j + 1] - &values[j - 1]) / (2.0 * step),
        })
        .collect()
}

/// Samples needed to integrate over `[0, t]` on the propagator grid.
pub(crate) fn samples_needed(prop: &Propagator, t: f64) -> usize {
    let (k, rem) = prop.split(t);
    if rem > 0.0 {
        k + 2
    } else {
        k + 1
    }
}

pub(crate) fn delay_steps(sys: &DelaySystem, step: f64) -> Result<usize> {
    grid_steps(sys.input_delay(), step)
}

/// `z(t) = e^{AT_i} x(t) + ∫₀^{T_i} e^{A(T_i−τ)} (B u(t−T_i+τ) + B_d d(t+τ)) dτ`.
pub fn predict_state(
    sys: &DelaySystem,
    x: &Vector,
    hist: &InputHistory,
    prev: &PreviewWindow,
) -> Result<Vector> {
    let prop = Propagator::new(sys.a(), hist.step())?;
    let gamma_u = conv_const(sys.a(), sys.b(), hist.step())?;
    predict_state_with(sys, &prop, &gamma_u, x, hist, prev)
}

pub(crate) fn predict_state_with(
    sys: &DelaySystem,
    prop: &Propagator,
    gamma_u: &Mat,
    x: &Vector,
    hist: &InputHistory,
    prev: &PreviewWindow,
) -> Result<Vector> {
    if x.len() != sys.states() {
        return Err(Error::Dimension(format!(
            "state has {} entries, system has {}",
            x.len(),
            sys.states()
        )));
    }
    if (hist.step() - prev.step()).abs() > 1e-12 * hist.step() {
        return Err(Error::Alignment(format!(
            "history step {} differs from preview step {}",
            hist.step(),
            prev.step()
        )));
    }
    let n_i = delay_steps(sys, hist.step())?;
    if hist.len() != n_i {
        return Err(Error::Alignment(format!(
            "history holds {} steps, delay needs {n_i}",
            hist.len()
        )));
    }
    let mut acc = x.clone();
    for u in hist.iter() {
        acc = &prop.phi * acc + gamma_u * u;
    }
    let samples = prev.values_from(0, n_i + 1)?;
    Ok(acc + prop.grid_integral(sys.bd(), &samples, n_i))
}

/// `φ(t, T) = e^{AT} z + ∫₀^{T_δ} e^{A(T−τ)} B_d d(t+T_i+τ) dτ`,
/// `T_δ = min(T_p − T_i, T)`.
pub fn phi(sys: &DelaySystem, z: &Vector, prev: &PreviewWindow, t: f64) -> Result<Vector> {
    let prop = Propagator::new(sys.a(), prev.step())?;
    phi_with(sys, &prop, z, prev, t)
}

pub(crate) fn phi_with(
    sys: &DelaySystem,
    prop: &Propagator,
    z: &Vector,
    prev: &PreviewWindow,
    t: f64,
) -> Result<Vector> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("phi horizon {t} must be >= 0")));
    }
    let t_delta = sys.preview_margin().min(t);
    let n_i = delay_steps(sys, prev.step())?;
    let samples = prev.values_from(n_i, samples_needed(prop, t_delta))?;
    let integral = prop.integral(sys.a(), sys.bd(), &samples, t_delta)?;
    let head = expm(sys.a(), t)? * z;
    if t > t_delta {
        Ok(head + expm(sys.a(), t - t_delta)? * integral)
    } else {
        Ok(head + integral)
    }
}
