//! Limited-preview barrier engine.
//!
//! For a predicted state `z` and a disturbance preview, the engine finds the
//! worst-case stopping time `T_s` (the first zero of the worst-case output
//! velocity under the extremal input `û` and, past the preview, the
//! extremal disturbance `d̂`), evaluates the barrier
//! `h = y_m − sgn(ẏ)·C z_w(t+T_s)` and the affine row `P u ≤ q` that
//! encodes `ḣ ≥ −α(h)`.
//!
//! The worst-case trajectory is marched exactly on the preview grid: the
//! held `û` and `d̂` go through one-step block exponentials, the previewed
//! disturbance through composite Simpson. Inside the bracketing interval
//! the output velocity is a power series in the offset, which makes the
//! bisection cheap.

use crate::error::{Error, Result};
use crate::matops::{conv_const, expm, Mat, Propagator, Vector};
use crate::plant::{delay_steps, grid_steps, phi_with, samples_needed, DelaySystem, PreviewWindow};
use crate::plant::DisturbanceSignal;

use std::sync::Arc;

/// Below this `|ẏ|` the output is treated as stationary.
pub const SIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub sign_tol: f64,
    /// Longest stopping time searched before giving up.
    pub scan_horizon: f64,
    /// `|g(T_s)|` target for the root.
    pub root_tol: f64,
    /// Bracket width target (s).
    pub width_tol: f64,
    pub max_bisections: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            sign_tol: SIGN_TOL,
            scan_horizon: 60.0,
            root_tol: 1e-10,
            width_tol: 1e-9,
            max_bisections: 200,
        }
    }
}

/// Everything the barrier evaluation produces at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub t: f64,
    pub h: f64,
    pub t_s: f64,
    pub t_delta: f64,
    /// `sgn(ẏ)` with the stationary convention applied.
    pub sigma: f64,
    pub u_hat: Vector,
    pub d_hat: Vector,
    pub z: Vector,
    pub z_w: Vector,
    /// `ε̂`: the worst-case unpreviewed tail contribution to `z_w`.
    pub eps_hat: Vector,
    pub psi: f64,
    /// `C e^{A T_s}`.
    pub c_exp: Mat,
    pub p: Vector,
    pub q: f64,
    pub y: f64,
    pub y_dot: f64,
}

impl BarrierEval {
    /// `ḣ` for input `u`, recovered from the QP row.
    pub fn h_dot(&self, u: &Vector, alpha_h: f64) -> f64 {
        self.q - alpha_h - self.p.dot(u)
    }
}

fn sgn(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `û = −σ·diag(sgn(CAB))·u_m`, `d̂ = σ·diag(sgn(CAB_d))·d_m` for a given
/// direction `σ = ±1`.
pub(crate) fn extremal_for_sign(sys: &DelaySystem, sigma: f64) -> (Vector, Vector) {
    let ca = sys.c() * sys.a();
    let cab = &ca * sys.b();
    let cabd = &ca * sys.bd();
    let u_hat = Vector::from_iterator(
        sys.inputs(),
        cab.iter().zip(sys.u_m().iter()).map(|(g, m)| -sigma * sgn(*g) * m),
    );
    let d_hat = Vector::from_iterator(
        sys.disturbances(),
        cabd.iter().zip(sys.d_m().iter()).map(|(g, m)| sigma * sgn(*g) * m),
    );
    (u_hat, d_hat)
}

/// Extremal input and disturbance for output velocity `y_dot`; at rest
/// (`|ẏ| ≤ SIGN_TOL`) the sign is taken as `+1`.
pub fn extremal_inputs(sys: &DelaySystem, y_dot: f64) -> (Vector, Vector) {
    let sigma = if y_dot.abs() <= SIGN_TOL { 1.0 } else { sgn(y_dot) };
    extremal_for_sign(sys, sigma)
}

/// Affine constraint `P u ≤ q` equivalent to `ḣ ≥ −α(h)`.
pub fn qp_row(sys: &DelaySystem, eval: &BarrierEval, d_at_ti: &Vector, alpha_h: f64) -> (Vector, f64) {
    let p = (&eval.c_exp * sys.b()).transpose() * eval.sigma;
    let drift = sys.a() * &eval.z + sys.bd() * d_at_ti;
    let q = alpha_h - eval.sigma * (eval.psi + (&eval.c_exp * drift)[0]);
    (p.column(0).into_owned(), q)
}

/// Power series of the worst-case output velocity inside one grid interval.
struct BracketSeries {
    /// `g(s) = Σ main[j] s^j / j! + (s/2)(Σ half[j] s^j / j! + lin0 + lin1·s)`.
    main: Vec<f64>,
    half: Vec<f64>,
    lin0: f64,
    lin1: f64,
    sigma: f64,
}

impl BracketSeries {
    fn eval(&self, s: f64) -> f64 {
        let horner = |c: &[f64]| {
            c.iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (j, cj)| cj + acc * s / (j as f64 + 1.0))
        };
        let g = horner(&self.main) + 0.5 * s * (horner(&self.half) + self.lin0 + self.lin1 * s);
        self.sigma * g
    }
}

/// Limited-preview barrier engine for one system on one sampling grid.
/// A system with an infinite preview horizon yields the unlimited-preview
/// variant: the tail is never worst-cased.
#[derive(Debug, Clone)]
pub struct LPrevEngine {
    sys: DelaySystem,
    settings: SolverSettings,
    alpha_gain: f64,
    prop: Propagator,
    gamma_u: Mat,
    gamma_d: Mat,
    /// `C A^j` for `j = 0..=series_terms + 1`.
    ca_pows: Vec<Mat>,
    series_terms: usize,
    n_delay: usize,
    /// Grid steps in `T_p − T_i`; `None` for an unlimited preview.
    n_window: Option<usize>,
}

impl LPrevEngine {
    pub fn new(sys: DelaySystem, step: f64) -> Result<Self> {
        let n_delay = delay_steps(&sys, step)?;
        let n_window = if sys.has_unlimited_preview() {
            None
        } else {
            Some(grid_steps(sys.preview_margin(), step)?)
        };
        let prop = Propagator::new(sys.a(), step)?;
        let gamma_u = conv_const(sys.a(), sys.b(), step)?;
        let gamma_d = conv_const(sys.a(), sys.bd(), step)?;

        let x = sys.a().abs().row_sum().max() * step;
        let mut series_terms = 4usize;
        let mut term = x.powi(4) / 24.0;
        while term > 1e-22 && series_terms < 60 {
            series_terms += 1;
            term *= x / series_terms as f64;
        }
        let mut ca_pows = Vec::with_capacity(series_terms + 2);
        ca_pows.push(sys.c().clone());
        for j in 1..=series_terms + 1 {
            let next = &ca_pows[j - 1] * sys.a();
            ca_pows.push(next);
        }

        Ok(Self {
            sys,
            settings: SolverSettings::default(),
            alpha_gain: 1.0,
            prop,
            gamma_u,
            gamma_d,
            ca_pows,
            series_terms,
            n_delay,
            n_window,
        })
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Gain `γ` of the linear class-K∞ function `α(h) = γ h`.
    pub fn with_alpha(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("alpha gain {gamma} must be > 0")));
        }
        self.alpha_gain = gamma;
        Ok(self)
    }

    pub fn system(&self) -> &DelaySystem {
        &self.sys
    }

    pub fn step(&self) -> f64 {
        self.prop.step
    }

    pub fn alpha_gain(&self) -> f64 {
        self.alpha_gain
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn is_unlimited(&self) -> bool {
        self.n_window.is_none()
    }

    /// The preview window this engine consumes at time `t`.
    pub fn preview_window(&self, signal: &Arc<dyn DisturbanceSignal>, t: f64) -> Result<PreviewWindow> {
        PreviewWindow::from_signal(signal, t, self.sys.preview_horizon(), self.step())
    }

    fn check_window(&self, z: &Vector, prev: &PreviewWindow) -> Result<()> {
        if z.len() != self.sys.states() {
            return Err(Error::Dimension(format!(
                "state has {} entries, system has {}",
                z.len(),
                self.sys.states()
            )));
        }
        if (prev.step() - self.step()).abs() > 1e-12 * self.step() {
            return Err(Error::Alignment(format!(
                "preview step {} differs from engine step {}",
                prev.step(),
                self.step()
            )));
        }
        Ok(())
    }

    fn sample(&self, prev: &PreviewWindow, k: usize) -> Result<Vector> {
        prev.value(self.n_delay + k).ok_or(Error::Coverage {
            needed: self.n_delay + k + 1,
            available: prev.stored(),
        })
    }

    fn direction(&self, z: &Vector) -> (f64, f64, f64) {
        let y = (self.sys.c() * z)[0];
        let y_dot = (&self.ca_pows[1] * z)[0];
        let sigma = if y_dot.abs() <= self.settings.sign_tol {
            sgn(y)
        } else {
            sgn(y_dot)
        };
        (y, y_dot, sigma)
    }

    /// Worst-case stopping time; zero when the output is already at rest.
    pub fn stopping_time(&self, z: &Vector, prev: &PreviewWindow) -> Result<f64> {
        self.check_window(z, prev)?;
        let (_, y_dot, sigma) = self.direction(z);
        if y_dot.abs() <= self.settings.sign_tol {
            return Ok(0.0);
        }
        let (u_hat, d_hat) = extremal_for_sign(&self.sys, sigma);
        self.solve_stop(z, prev, sigma, &u_hat, &d_hat)
    }

    fn dot(row: &Mat, v: &Vector) -> f64 {
        row.row(0).transpose().dot(v)
    }

    fn solve_stop(
        &self,
        z: &Vector,
        prev: &PreviewWindow,
        sigma: f64,
        u_hat: &Vector,
        d_hat: &Vector,
    ) -> Result<f64> {
        let h = self.step();
        let phi = &self.prop.phi;
        let phi2 = &self.prop.phi2;
        let bd = self.sys.bd();
        let ca = &self.ca_pows[1];
        let u_drive = &self.gamma_u * u_hat;
        let tail_drive = &u_drive + &self.gamma_d * d_hat;

        let k_max = (self.settings.scan_horizon / h).ceil() as usize;
        let mut e = z.clone();
        let mut i_even = Vector::zeros(z.len());
        let mut w = z.clone();
        // Forced disturbance `B_d d` at the two most recent preview nodes.
        let mut f_km2 = Vector::zeros(z.len());
        let mut f_km1 = bd * self.sample(prev, 0)?;
        let mut d_km1 = self.sample(prev, 0)?;

        for k in 1..=k_max {
            let w_prev = w.clone();
            let in_preview = self.n_window.is_none_or(|nw| k <= nw);
            let mut d_k = None;
            if in_preview {
                let dk = self.sample(prev, k)?;
                let f_k = bd * &dk;
                e = phi * &e + &u_drive;
                let i_k = if k % 2 == 1 {
                    phi * &i_even + (phi * &f_km1 + &f_k) * (h / 2.0)
                } else {
                    let next = phi2 * &i_even + (phi2 * &f_km2 + phi * &f_km1 * 4.0 + &f_k) * (h / 3.0);
                    i_even = next.clone();
                    next
                };
                w = &e + i_k;
                f_km2 = std::mem::replace(&mut f_km1, f_k);
                d_k = Some(dk);
            } else {
                w = phi * &w + &tail_drive;
            }
            let g = sigma * Self::dot(ca, &w);
            if g <= 0.0 {
                let base = (k - 1) as f64 * h;
                if g == 0.0 {
                    return Ok(k as f64 * h);
                }
                let series = match &d_k {
                    Some(dk) => self.preview_series(&w_prev, u_hat, &d_km1, dk, sigma),
                    None => self.tail_series(&w_prev, u_hat, d_hat, sigma),
                };
                return Ok(base + self.bisect(&series));
            }
            if let Some(dk) = d_k {
                d_km1 = dk;
            }
        }
        Err(Error::NoStoppingTime {
            horizon: self.settings.scan_horizon,
            y_dot: Self::dot(ca, z),
        })
    }

    fn tail_series(&self, w0: &Vector, u_hat: &Vector, d_hat: &Vector, sigma: f64) -> BracketSeries {
        let v = self.sys.a() * w0 + self.sys.b() * u_hat + self.sys.bd() * d_hat;
        let mut main = Vec::with_capacity(self.series_terms + 1);
        main.push(Self::dot(&self.ca_pows[1], w0));
        for j in 1..=self.series_terms {
            main.push(Self::dot(&self.ca_pows[j], &v));
        }
        BracketSeries {
            main,
            half: Vec::new(),
            lin0: 0.0,
            lin1: 0.0,
            sigma,
        }
    }

    fn preview_series(
        &self,
        w0: &Vector,
        u_hat: &Vector,
        d0: &Vector,
        d1: &Vector,
        sigma: f64,
    ) -> BracketSeries {
        let bu = self.sys.b() * u_hat;
        let f0 = self.sys.bd() * d0;
        let slope = self.sys.bd() * (d1 - d0) / self.step();
        let mut main = Vec::with_capacity(self.series_terms + 1);
        let mut half = Vec::with_capacity(self.series_terms + 1);
        for j in 0..=self.series_terms {
            let row = &self.ca_pows[j + 1];
            let mut c = Self::dot(row, w0);
            if j >= 1 {
                c += Self::dot(&self.ca_pows[j], &bu);
            }
            main.push(c);
            half.push(Self::dot(row, &f0));
        }
        BracketSeries {
            main,
            half,
            lin0: Self::dot(&self.ca_pows[1], &f0),
            lin1: Self::dot(&self.ca_pows[1], &slope),
            sigma,
        }
    }

    fn bisect(&self, series: &BracketSeries) -> f64 {
        let (mut lo, mut hi) = (0.0, self.step());
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..self.settings.max_bisections {
            mid = 0.5 * (lo + hi);
            let gm = series.eval(mid);
            if gm.abs() <= self.settings.root_tol && hi - lo <= self.settings.width_tol {
                return mid;
            }
            if gm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        mid
    }

    /// Worst-case output velocity `g(T) = C A z_w(t+T)` for a trial `T`,
    /// computed by direct evaluation (no marching).
    pub fn stop_residual(&self, z: &Vector, prev: &PreviewWindow, t: f64) -> Result<f64> {
        self.check_window(z, prev)?;
        let (_, _, sigma) = self.direction(z);
        let (u_hat, d_hat) = extremal_for_sign(&self.sys, sigma);
        let (z_w, _, _) = self.worst_case_state(z, prev, t, &u_hat, &d_hat)?;
        Ok(Self::dot(&self.ca_pows[1], &z_w))
    }

    fn t_delta(&self, t_s: f64) -> f64 {
        if self.is_unlimited() {
            t_s
        } else {
            self.sys.preview_margin().min(t_s)
        }
    }

    fn worst_case_state(
        &self,
        z: &Vector,
        prev: &PreviewWindow,
        t_s: f64,
        u_hat: &Vector,
        d_hat: &Vector,
    ) -> Result<(Vector, Vector, f64)> {
        let t_delta = self.t_delta(t_s);
        let phi = phi_with(&self.sys, &self.prop, z, prev, t_s)?;
        let eps_hat = conv_const(self.sys.a(), self.sys.bd(), t_s - t_delta)? * d_hat;
        let z_w = phi + &eps_hat + conv_const(self.sys.a(), self.sys.b(), t_s)? * u_hat;
        Ok((z_w, eps_hat, t_delta))
    }

    /// Full barrier evaluation at the window anchor.
    pub fn barrier(&self, z: &Vector, prev: &PreviewWindow) -> Result<BarrierEval> {
        self.check_window(z, prev)?;
        let (y, y_dot, sigma) = self.direction(z);
        let (u_hat, d_hat) = extremal_for_sign(&self.sys, sigma);
        let at_rest = y_dot.abs() <= self.settings.sign_tol;
        let t_s = if at_rest {
            0.0
        } else {
            self.solve_stop(z, prev, sigma, &u_hat, &d_hat)?
        };

        let (z_w, eps_hat, t_delta) = self.worst_case_state(z, prev, t_s, &u_hat, &d_hat)?;
        let h = self.sys.y_m() - sigma * (self.sys.c() * &z_w)[0];
        let tail = expm(self.sys.a(), t_s - t_delta)?;
        let c_exp = self.sys.c() * expm(self.sys.a(), t_s)?;

        let derivs = prev.derivatives_from(self.n_delay, samples_needed(&self.prop, t_delta))?;
        let psi_int = self.prop.integral(self.sys.a(), self.sys.bd(), &derivs, t_delta)?;
        let psi = (self.sys.c() * &tail * psi_int)[0];

        let mut eval = BarrierEval {
            t: prev.anchor(),
            h,
            t_s,
            t_delta,
            sigma,
            u_hat,
            d_hat,
            z: z.clone(),
            z_w,
            eps_hat,
            psi,
            c_exp,
            p: Vector::zeros(self.sys.inputs()),
            q: 0.0,
            y,
            y_dot,
        };
        let d_now = self.sample(prev, 0)?;
        let (p, q) = qp_row(&self.sys, &eval, &d_now, self.alpha_gain * h);
        eval.p = p;
        eval.q = q;
        Ok(eval)
    }
}
