//! Composite Simpson quadrature with Richardson error control.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    const ZERO: Self;
    fn magnitude(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// Simpson's rule on `n` (even) uniform intervals.
pub(crate) fn simpson<T: Scalar>(f: &impl Fn(f64) -> T, a: f64, b: f64, n: usize) -> T {
    debug_assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc = acc + f(a + h * k as f64) * w;
    }
    acc * (h / 3.0)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Estimate<T> {
    pub value: T,
    pub error: f64,
}

const MAX_INTERVALS: usize = 1 << 22;

/// Doubles the interval count from `min_intervals` until the Richardson
/// estimate drops below `rel_tol` relative (or `abs_floor` absolute).
pub(crate) fn integrate<T: Scalar>(
    f: &impl Fn(f64) -> T,
    a: f64,
    b: f64,
    min_intervals: usize,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<Estimate<T>> {
    let mut n = min_intervals.max(2);
    n += n % 2;
    let mut coarse = simpson(f, a, b, n);
    loop {
        let fine = simpson(f, a, b, 2 * n);
        let diff = fine - coarse;
        let error = diff.magnitude() / 15.0;
        if error <= rel_tol * fine.magnitude() || error <= abs_floor {
            return Ok(Estimate { value: fine + diff * (1.0 / 15.0), error });
        }
        n *= 2;
        if n > MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "Simpson on [{a}, {b}] stalled at {n} intervals, error estimate {error:e}"
            )));
        }
        coarse = fine;
    }
}

/// Integral over the real line via z = s·tan θ; the integrand must decay
/// faster than 1/z².
pub(crate) fn integrate_line<T: Scalar>(
    f: &impl Fn(f64) -> T,
    scale: f64,
    min_intervals: usize,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<Estimate<T>> {
    let g = |theta: f64| {
        if theta.abs() >= FRAC_PI_2 {
            return T::ZERO;
        }
        let c = theta.cos();
        f(scale * theta.tan()) * (scale / (c * c))
    };
    integrate(&g, -FRAC_PI_2, FRAC_PI_2, min_intervals, rel_tol, abs_floor)
}
