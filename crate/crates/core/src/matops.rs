//! Small dense matrix helpers: matrix exponential, exact constant-input
//! convolution (block-augmented exponential) and quadrature of the
//! convolution against a sampled signal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Build a matrix from row-major data, rejecting empty shapes and
/// non-finite entries.
pub fn mat(rows: usize, cols: usize, row_major: &[f64]) -> Result<Mat> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("empty matrix {rows}x{cols}")));
    }
    if row_major.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} entries for a {rows}x{cols} matrix",
            row_major.len()
        )));
    }
    let m = DMatrix::from_row_slice(rows, cols, row_major);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

pub(crate) fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite entries")))
    }
}

/// `e^{M t}` for a square matrix `M`.
pub fn expm(m: &Mat, t: f64) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("expm time {t} is not finite")));
    }
    let r = (m * t).exp();
    ensure_finite(&r, "matrix exponential")?;
    Ok(r)
}

/// `∫₀^T e^{A(T−τ)} B dτ`, read off the top-right block of
/// `exp([[A, B], [0, 0]] T)`.
pub fn conv_const(a: &Mat, b: &Mat, t: f64) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "conv_const needs square A, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if b.nrows() != n {
        return Err(Error::Dimension(format!(
            "B has {} rows, A is {n}x{n}",
            b.nrows()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("conv_const horizon {t} must be >= 0")));
    }
    let m = b.ncols();
    if t == 0.0 {
        return Ok(Mat::zeros(n, m));
    }
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, m)).copy_from(b);
    let e = expm(&aug, t)?;
    Ok(e.view((0, n), (n, m)).into_owned())
}

/// Per-grid-step propagation data for `ẋ = A x` on a uniform grid.
#[derive(Debug, Clone)]
pub(crate) struct Propagator {
    pub step: f64,
    pub phi: Mat,
    pub phi2: Mat,
}

impl Propagator {
    pub fn new(a: &Mat, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::Domain(format!("grid step {step} must be > 0")));
        }
        let phi = expm(a, step)?;
        let phi2 = &phi * &phi;
        Ok(Self { step, phi, phi2 })
    }

    /// Whole grid intervals in `[0, t]` and the leftover fraction of a step.
    pub fn split(&self, t: f64) -> (usize, f64) {
        let ratio = t / self.step;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
            (nearest as usize, 0.0)
        } else {
            let k = ratio.floor();
            (k as usize, t - k * self.step)
        }
    }

    /// `∫₀^{k·step} e^{A(k·step−τ)} B_d d(τ) dτ` by composite Simpson over
    /// pairs of intervals, trapezoid on a final odd interval.
    pub fn grid_integral(&self, bd: &Mat, samples: &[Vector], k: usize) -> Vector {
        let h = self.step;
        let n = self.phi.nrows();
        let mut acc = Vector::zeros(n);
        let pairs = k / 2;
        for p in 0..pairs {
            let j = 2 * p;
            let f0 = &self.phi2 * (bd * &samples[j]);
            let f1 = &self.phi * (bd * &samples[j + 1]);
            let f2 = bd * &samples[j + 2];
            acc = &self.phi2 * acc + (f0 + f1 * 4.0 + f2) * (h / 3.0);
        }
        if k % 2 == 1 {
            let f0 = &self.phi * (bd * &samples[k - 1]);
            let f1 = bd * &samples[k];
            acc = &self.phi * acc + (f0 + f1) * (h / 2.0);
        }
        acc
    }

    /// Same as [`grid_integral`](Self::grid_integral) for an arbitrary
    /// horizon: the fractional remainder is a trapezoid against the
    /// linearly interpolated sample.
    pub fn integral(&self, a: &Mat, bd: &Mat, samples: &[Vector], t: f64) -> Result<Vector> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("integration horizon {t} must be >= 0")));
        }
        let (k, rem) = self.split(t);
        let needed = if rem > 0.0 { k + 2 } else { k + 1 };
        if samples.len() < needed {
            return Err(Error::Coverage {
                needed,
                available: samples.len(),
            });
        }
        if let Some(bad) = samples[..needed].iter().find(|s| s.len() != bd.ncols()) {
            return Err(Error::Dimension(format!(
                "sample of length {} for a {}-column B_d",
                bad.len(),
                bd.ncols()
            )));
        }
        let grid = self.grid_integral(bd, samples, k);
        if rem == 0.0 {
            return Ok(grid);
        }
        let e_rem = expm(a, rem)?;
        let frac = rem / self.step;
        let d_end = &samples[k] + (&samples[k + 1] - &samples[k]) * frac;
        let tail = (&e_rem * (bd * &samples[k]) + bd * d_end) * (rem / 2.0);
        Ok(&e_rem * grid + tail)
    }
}

/// `C_left · ∫₀^T e^{A(T−τ)} B_d d(τ) dτ` for `d` sampled on a uniform grid
/// starting at offset zero.
pub fn conv_signal(
    a: &Mat,
    bd: &Mat,
    c_left: &Mat,
    samples: &[Vector],
    step: f64,
    t: f64,
) -> Result<Vector> {
    let n = a.nrows();
    if a.ncols() != n || bd.nrows() != n || c_left.ncols() != n {
        return Err(Error::Dimension(format!(
            "conv_signal: A {}x{}, B_d {}x{}, C_left {}x{}",
            a.nrows(),
            a.ncols(),
            bd.nrows(),
            bd.ncols(),
            c_left.nrows(),
            c_left.ncols()
        )));
    }
    let prop = Propagator::new(a, step)?;
    let integral = prop.integral(a, bd, samples, t)?;
    Ok(c_left * integral)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exo_a() -> Mat {
        mat(2, 2, &[0.0, 1.0, -2.0, -2.0]).unwrap()
    }

    fn max_abs(m: &Mat) -> f64 {
        m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn expm_at_zero_is_identity() {
        let m = mat(3, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0, 7.0, 8.0, -9.0]).unwrap();
        assert_eq!(expm(&m, 0.0).unwrap(), Mat::identity(3, 3));
    }

    #[test]
    fn expm_diagonal() {
        let m = mat(2, 2, &[-1.5, 0.0, 0.0, 0.7]).unwrap();
        let e = expm(&m, 2.0).unwrap();
        assert!((e[(0, 0)] - (-3.0f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - 1.4f64.exp()).abs() < 1e-13);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_large_norm_uses_squaring() {
        // Rotation generator: e^{θJ} is a rotation by θ.
        let j = mat(2, 2, &[0.0, -1.0, 1.0, 0.0]).unwrap();
        let e = expm(&j, 20.0).unwrap();
        let expected = mat(2, 2, &[20f64.cos(), -20f64.sin(), 20f64.sin(), 20f64.cos()]).unwrap();
        assert!(max_abs(&(e - expected)) < 1e-12);
    }

    #[test]
    fn expm_rejects_non_square() {
        let m = Mat::zeros(2, 3);
        assert!(matches!(expm(&m, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_const_zero_a_is_t_times_b() {
        let a = Mat::zeros(3, 3);
        let b = mat(3, 1, &[1.0, -2.0, 0.5]).unwrap();
        let g = conv_const(&a, &b, 0.37).unwrap();
        assert!(max_abs(&(g - &b * 0.37)) < 1e-15);
    }

    #[test]
    fn conv_const_empty_interval() {
        let b = mat(2, 1, &[0.0, 1.0]).unwrap();
        assert_eq!(conv_const(&exo_a(), &b, 0.0).unwrap(), Mat::zeros(2, 1));
    }

    #[test]
    fn conv_const_dimension_mismatch() {
        let b = Mat::zeros(3, 1);
        assert!(matches!(conv_const(&exo_a(), &b, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_signal_zero_samples() {
        let a = exo_a();
        let bd = mat(2, 1, &[0.0, 1.0]).unwrap();
        let samples = vec![Vector::zeros(1); 11];
        let v = conv_signal(&a, &bd, &Mat::identity(2, 2), &samples, 1e-3, 0.01).unwrap();
        assert_eq!(v, Vector::zeros(2));
    }

    #[test]
    fn conv_signal_constant_matches_conv_const() {
        let a = exo_a();
        let bd = mat(2, 1, &[0.0, 1.0]).unwrap();
        let d0 = Vector::from_element(1, 0.3);
        let samples = vec![d0.clone(); 12];
        let c_left = mat(1, 2, &[1.0, 0.5]).unwrap();
        for t in [0.01, 0.009, 0.0075] {
            let v = conv_signal(&a, &bd, &c_left, &samples, 1e-3, t).unwrap();
            let exact = &c_left * conv_const(&a, &bd, t).unwrap() * &d0;
            assert!((v[0] - exact[0]).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn conv_signal_coverage_error() {
        let a = exo_a();
        let bd = mat(2, 1, &[0.0, 1.0]).unwrap();
        let samples = vec![Vector::zeros(1); 5];
        let err = conv_signal(&a, &bd, &Mat::identity(2, 2), &samples, 1e-3, 0.01).unwrap_err();
        assert_eq!(
            err,
            Error::Coverage {
                needed: 11,
                available: 5
            }
        );
    }
}
