//! Single-photon reduced density matrices sampled on a quadrature grid.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = -1e-8;

/// Nodes and trapezoid weights on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadGrid {
    pub fn trapezoid(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("grid.points", "need at least 2 nodes"));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::param("grid.range", format!("need finite a < b, got [{a}, {b}]")));
        }
        let h = (b - a) / (n - 1) as f64;
        let points = (0..n).map(|k| a + h * k as f64).collect();
        let weights = (0..n).map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h }).collect();
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ∫f over the grid.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Running trapezoid integral of f, starting at 0 at the first node.
    pub fn cumulative(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let vals: Vec<f64> = self.points.iter().map(|&x| f(x)).collect();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(vals.len());
        out.push(0.0);
        for k in 1..vals.len() {
            acc += 0.5 * (vals[k] + vals[k - 1]) * (self.points[k] - self.points[k - 1]);
            out.push(acc);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonDensityMatrix {
    pub grid: QuadGrid,
    pub rho: DMatrix<Complex64>,
}

impl PhotonDensityMatrix {
    pub fn new(grid: QuadGrid, rho: DMatrix<Complex64>) -> Result<Self> {
        let n = grid.len();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::param("rho", format!("expected {n}x{n}, got {}x{}", rho.nrows(), rho.ncols())));
        }
        Ok(Self { grid, rho })
    }

    pub fn from_fn(grid: QuadGrid, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let n = grid.len();
        Self { rho: DMatrix::from_fn(n, n, f), grid }
    }

    pub fn zeros(grid: QuadGrid) -> Self {
        let n = grid.len();
        Self { rho: DMatrix::zeros(n, n), grid }
    }

    pub fn trace(&self) -> f64 {
        self.grid.weights.iter().enumerate().map(|(i, w)| w * self.rho[(i, i)].re).sum()
    }

    /// tr ρ² = ∫∫ρ(x,y)ρ(y,x).
    pub fn trace_of_square(&self) -> f64 {
        let w = &self.grid.weights;
        let n = w.len();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                acc += w[i] * w[j] * (self.rho[(i, j)] * self.rho[(j, i)]).re;
            }
        }
        acc
    }

    pub fn purity(&self) -> Result<f64> {
        let t = self.trace();
        if t <= 0.0 {
            return Err(Error::Domain(format!("purity undefined for trace {t:e}")));
        }
        Ok(self.trace_of_square() / (t * t))
    }

    /// max |ρ(x,y) − ρ*(y,x)|.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.grid.len();
        let mut d: f64 = 0.0;
        for j in 0..n {
            for i in 0..j {
                d = d.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        d
    }

    /// Smallest eigenvalue of the operator, from the weight-symmetrised matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let s: Vec<f64> = self.grid.weights.iter().map(|w| w.sqrt()).collect();
        let n = s.len();
        if n == 0 {
            return 0.0;
        }
        let m = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (self.rho[(i, j)] + self.rho[(j, i)].conj()) * (s[i] * s[j])
        });
        SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let h = self.hermiticity_defect();
        if h > HERMITIAN_TOL {
            return Err(Error::Invariant(format!("density matrix not Hermitian: defect {h:e}")));
        }
        let t = self.trace();
        if !(-1e-12..=1.0 + 1e-9).contains(&t) {
            return Err(Error::Invariant(format!("trace {t} outside [0, 1]")));
        }
        let e = self.min_eigenvalue();
        if e < PSD_TOL {
            return Err(Error::Invariant(format!("negative eigenvalue {e:e}")));
        }
        Ok(())
    }

    /// Row-major (x, y, ρ) triples.
    pub fn entries(&self) -> impl Iterator<Item = (f64, f64, Complex64)> + '_ {
        let p = &self.grid.points;
        (0..p.len()).flat_map(move |i| (0..p.len()).map(move |j| (p[i], p[j], self.rho[(i, j)])))
    }

    /// |ρ(x,y)|/tr ρ.
    pub fn normalized_magnitude(&self) -> Result<DMatrix<f64>> {
        let t = self.trace();
        if t <= 0.0 {
            return Err(Error::Domain("cannot normalise a zero density matrix".into()));
        }
        Ok(self.rho.map(|z| z.norm() / t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(x: f64) -> f64 {
        std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp()
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let g = QuadGrid::trapezoid(-2.0, 3.0, 11).unwrap();
        assert!((g.weights.iter().sum::<f64>() - 5.0).abs() < 1e-14);
        assert!((g.integrate(|x| gaussian(x).powi(2)) - 1.0).abs() < 1e-2);
        assert!(QuadGrid::trapezoid(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn cumulative_matches_integral() {
        let g = QuadGrid::trapezoid(-8.0, 8.0, 801).unwrap();
        let f = g.cumulative(|x| gaussian(x).powi(2));
        assert!((f[f.len() - 1] - 1.0).abs() < 1e-10);
        assert!((f[400] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn rank_one_pure_state() {
        let g = QuadGrid::trapezoid(-7.0, 7.0, 161).unwrap();
        let p = g.points.clone();
        let c = Complex64::new(0.3, 0.4);
        let m = PhotonDensityMatrix::from_fn(g, |i, j| {
            let phase = Complex64::from_polar(1.0, 0.2 * (p[i] - p[j]));
            c.norm_sqr() * gaussian(p[i]) * gaussian(p[j]) * phase
        });
        assert!((m.trace() - 0.25).abs() < 1e-9);
        assert!((m.purity().unwrap() - 1.0).abs() < 1e-9);
        m.check_invariants().unwrap();
    }

    #[test]
    fn non_hermitian_is_flagged() {
        let g = QuadGrid::trapezoid(0.0, 1.0, 3).unwrap();
        let mut m = PhotonDensityMatrix::zeros(g);
        m.rho[(0, 1)] = Complex64::new(0.0, 0.1);
        assert!(m.hermiticity_defect() > 0.09);
        assert!(m.check_invariants().is_err());
        assert!(m.purity().is_err());
    }
}
