//! Independent numerical oracles shared by the integration tests. Nothing
//! here calls the library's exponential or quadrature routines.
#![allow(dead_code)]

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use lprev_cbf::matops::{mat, Mat, Vector};
use lprev_cbf::plant::{DelaySystem, DisturbanceSignal, Sinusoid};

pub const EXO_T_I: f64 = 0.008;
pub const EXO_T_P: f64 = 0.010;

pub fn exo_system(u_m: f64, d_m: f64, t_p: f64) -> DelaySystem {
    DelaySystem::new(
        mat(2, 2, &[0.0, 1.0, -2.0, -2.0]).unwrap(),
        mat(2, 1, &[0.0, 1.0]).unwrap(),
        mat(2, 1, &[0.0, 1.0]).unwrap(),
        mat(1, 2, &[1.0, 0.0]).unwrap(),
        EXO_T_I,
        t_p,
        Vector::from_element(1, u_m),
        Vector::from_element(1, d_m),
        0.2,
    )
    .unwrap()
}

pub fn exo_signal(d_m: f64) -> Arc<dyn DisturbanceSignal> {
    Arc::new(Sinusoid {
        amplitude: d_m,
        omega: 0.2 * std::f64::consts::PI,
        phase: 0.0,
    })
}

/// `e^{M t}` by a 40-term Taylor series with scaling and squaring.
pub fn taylor_expm(m: &Mat, t: f64) -> Mat {
    let n = m.nrows();
    let a = m * t;
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let mut sum = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..40 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Composite Simpson rule for `∫₀^T e^{A(T−τ)} B dτ` with `n` (even) panels.
pub fn quad_conv(a: &Mat, b: &Mat, t: f64, n: usize) -> Mat {
    let h = t / n as f64;
    let mut acc = Mat::zeros(a.nrows(), b.ncols());
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += taylor_expm(a, t - i as f64 * h) * b * w;
    }
    acc * (h / 3.0)
}

/// Classical RK4 for `ẋ = f(t, x)` from `t0` to `t1` with roughly step `h`.
pub fn rk4<F: Fn(f64, &Vector) -> Vector>(f: F, x0: &Vector, t0: f64, t1: f64, h: f64) -> Vector {
    let n = ((t1 - t0).abs() / h).round().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut x = x0.clone();
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Worst-case predicted trajectory from `z`: extremal input throughout, the
/// real disturbance while it is previewed, the extremal disturbance after.
pub struct WorstCase<'a> {
    pub sys: &'a DelaySystem,
    pub signal: &'a dyn DisturbanceSignal,
    pub anchor: f64,
    pub sigma: f64,
    pub u_hat: Vector,
    pub d_hat: Vector,
}

impl WorstCase<'_> {
    pub fn new<'a>(sys: &'a DelaySystem, signal: &'a dyn DisturbanceSignal, anchor: f64, z: &Vector) -> WorstCase<'a> {
        let ca = sys.c() * sys.a();
        let y_dot = (&ca * z)[0];
        let sigma = if y_dot < 0.0 { -1.0 } else { 1.0 };
        let cab = (&ca * sys.b())[0];
        let cabd = (&ca * sys.bd())[0];
        WorstCase {
            sys,
            signal,
            anchor,
            sigma,
            u_hat: Vector::from_element(1, -sigma * cab.signum() * sys.u_m()[0]),
            d_hat: Vector::from_element(1, sigma * cabd.signum() * sys.d_m()[0]),
        }
    }

    fn disturbance(&self, tau: f64) -> Vector {
        let margin = self.sys.preview_horizon() - self.sys.input_delay();
        if tau < margin - 1e-12 {
            self.signal.value(self.anchor + self.sys.input_delay() + tau)
        } else {
            self.d_hat.clone()
        }
    }

    fn field(&self, tau: f64, z: &Vector) -> Vector {
        self.sys.a() * z + self.sys.b() * &self.u_hat + self.sys.bd() * self.disturbance(tau)
    }

    /// State after `t` seconds.
    pub fn state_at(&self, z: &Vector, t: f64, h: f64) -> Vector {
        rk4(|s, x| self.field(s, x), z, 0.0, t, h)
    }

    /// First time `σ ẏ_w` reaches zero, located by stepping at `h` and
    /// interpolating linearly inside the crossing step.
    pub fn stop_time(&self, z: &Vector, h: f64, horizon: f64) -> Option<f64> {
        let ca = self.sys.c() * self.sys.a();
        let g = |x: &Vector| self.sigma * (&ca * x)[0];
        let mut x = z.clone();
        let mut g_prev = g(&x);
        let n = (horizon / h).ceil() as usize;
        for i in 0..n {
            let t = i as f64 * h;
            x = rk4(|s, v| self.field(s, v), &x, t, t + h, h);
            let g_now = g(&x);
            if g_now <= 0.0 {
                return Some(t + h * g_prev / (g_prev - g_now));
            }
            g_prev = g_now;
        }
        None
    }
}

/// Seeded generator so the oracle draws are reproducible.
pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random exoskeleton predicted states with a clearly nonzero velocity.
pub fn sample_exo_states(rng: &mut StdRng, count: usize, min_speed: f64) -> Vec<(f64, Vector)> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let e: f64 = rng.random_range(-0.15..0.15);
        let v: f64 = rng.random_range(-0.3..0.3);
        if v.abs() < min_speed {
            continue;
        }
        let t = (rng.random_range(0.0..10.0f64) * 1000.0).round() / 1000.0;
        out.push((t, Vector::from_vec(vec![e, v])));
    }
    out
}
