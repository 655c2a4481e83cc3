//! Output statistics of the heralded single-photon subtractor in the
//! low-density limit: an n-photon Fock or coherent pulse scatters off the
//! control atom photon by photon, and at most one photon flips.
//!
//! Pulse times are in the retarded frame of the output; `F(u)` is the
//! cumulative pulse intensity.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{PhotonDensityMatrix, QuadGrid};
use crate::error::{Error, Result};
use crate::scatter1d::ScatterCoeffs;
use crate::timedomain::PulseShape;

/// Grid half-width in pulse durations.
pub const GRID_HALF_WIDTH: f64 = 6.0;
pub const MIN_HALF_WIDTH: f64 = 5.0;
pub const DEFAULT_POINTS: usize = 2001;
const NORM_TOL: f64 = 1e-6;
const PASSIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhotonStatistics {
    Fock { n: u32 },
    Coherent { alpha2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtractorInput {
    pub statistics: PhotonStatistics,
    pub t_coeff: Complex64,
    pub r_coeff: Complex64,
    pub pulse: PulseShape,
    pub grid: QuadGrid,
}

/// Default ±6Δt grid around the pulse centre.
pub fn pulse_grid(pulse: &PulseShape, points: usize) -> Result<QuadGrid> {
    let h = GRID_HALF_WIDTH * pulse.dt;
    QuadGrid::trapezoid(pulse.t0 - h, pulse.t0 + h, points)
}

impl SubtractorInput {
    pub fn new(
        statistics: PhotonStatistics,
        t_coeff: Complex64,
        r_coeff: Complex64,
        pulse: PulseShape,
        grid: QuadGrid,
    ) -> Result<Self> {
        match statistics {
            PhotonStatistics::Fock { n } if n == 0 => {
                return Err(Error::param("statistics.n", "need at least one photon"))
            }
            PhotonStatistics::Coherent { alpha2 } if !(alpha2.is_finite() && alpha2 > 0.0) => {
                return Err(Error::param("statistics.alpha2", format!("must be finite and > 0, got {alpha2}")))
            }
            _ => {}
        }
        let p = t_coeff.norm_sqr() + r_coeff.norm_sqr();
        if !(p <= 1.0 + PASSIVITY_TOL) {
            return Err(Error::param("t_coeff", format!("|T|^2 + |R|^2 = {p} exceeds 1")));
        }
        let (lo, hi) = (grid.points[0], grid.points[grid.len() - 1]);
        if lo > pulse.t0 - MIN_HALF_WIDTH * pulse.dt || hi < pulse.t0 + MIN_HALF_WIDTH * pulse.dt {
            return Err(Error::param("grid", format!("grid [{lo}, {hi}] must cover ±{MIN_HALF_WIDTH} pulse durations")));
        }
        let norm = grid.integrate(|t| pulse.amplitude(t).powi(2));
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::param("pulse", format!("pulse norm on the grid is {norm}, expected 1")));
        }
        Ok(Self { statistics, t_coeff, r_coeff, pulse, grid })
    }

    pub fn from_scatter(statistics: PhotonStatistics, coeffs: &ScatterCoeffs, pulse: PulseShape) -> Result<Self> {
        let grid = pulse_grid(&pulse, DEFAULT_POINTS)?;
        Self::new(statistics, coeffs.t_coeff, coeffs.r_coeff, pulse, grid)
    }
}

/// Pulse samples and cumulative intensity on a grid.
struct Sampled {
    h: Vec<f64>,
    f: Vec<f64>,
}

impl Sampled {
    fn new(grid: &QuadGrid, pulse: &PulseShape) -> Self {
        let h = grid.points.iter().map(|&t| pulse.amplitude(t)).collect();
        let f = grid.cumulative(|t| pulse.amplitude(t).powi(2));
        Self { h, f }
    }
}

/// Lower-triangle kernel ρ(x_i, x_j), i ≥ j, for a given statistics.
fn kernel(stats: PhotonStatistics, t: Complex64, r2: f64) -> impl Fn(f64, f64, f64, f64) -> Complex64 {
    let t2 = t.norm_sqr();
    move |hi: f64, hj: f64, fi: f64, fj: f64| match stats {
        PhotonStatistics::Fock { n } => {
            let g = t2 * fj + t * (fi - fj) + (1.0 - fi);
            g.powi(n as i32 - 1) * (n as f64 * r2 * hi * hj)
        }
        PhotonStatistics::Coherent { alpha2 } => {
            let e = -(alpha2 * (1.0 - t2) * fj) - (1.0 - t) * (alpha2 * (fi - fj));
            e.exp() * (alpha2 * r2 * hi * hj)
        }
    }
}

/// Density matrix with Hermitian completion above the diagonal.
pub fn density_matrix(input: &SubtractorInput) -> PhotonDensityMatrix {
    let s = Sampled::new(&input.grid, &input.pulse);
    let k = kernel(input.statistics, input.t_coeff, input.r_coeff.norm_sqr());
    PhotonDensityMatrix::from_fn(input.grid.clone(), |i, j| {
        if i >= j {
            k(s.h[i], s.h[j], s.f[i], s.f[j])
        } else {
            k(s.h[j], s.h[i], s.f[j], s.f[i]).conj()
        }
    })
}

pub fn fock_density_matrix(input: &SubtractorInput) -> Result<PhotonDensityMatrix> {
    match input.statistics {
        PhotonStatistics::Fock { .. } => Ok(density_matrix(input)),
        _ => Err(Error::param("statistics", "expected Fock statistics")),
    }
}

pub fn coherent_density_matrix(input: &SubtractorInput) -> Result<PhotonDensityMatrix> {
    match input.statistics {
        PhotonStatistics::Coherent { .. } => Ok(density_matrix(input)),
        _ => Err(Error::param("statistics", "expected coherent statistics")),
    }
}

/// (tr ρ, tr ρ²) on a grid without storing the matrix.
fn moments_on(grid: &QuadGrid, pulse: &PulseShape, stats: PhotonStatistics, t: Complex64, r2: f64) -> (f64, f64) {
    let s = Sampled::new(grid, pulse);
    let k = kernel(stats, t, r2);
    let w = &grid.weights;
    let mut trace = 0.0;
    let mut sq = 0.0;
    for i in 0..w.len() {
        let d = k(s.h[i], s.h[i], s.f[i], s.f[i]).re;
        trace += w[i] * d;
        sq += w[i] * w[i] * d * d;
        let off: f64 = (0..i).map(|j| w[j] * k(s.h[i], s.h[j], s.f[i], s.f[j]).norm_sqr()).sum();
        sq += 2.0 * w[i] * off;
    }
    (trace, sq)
}

/// Grid moments with one Richardson step (grid and its bisection).
pub fn quadrature_moments(input: &SubtractorInput) -> (f64, f64) {
    let r2 = input.r_coeff.norm_sqr();
    let coarse = moments_on(&input.grid, &input.pulse, input.statistics, input.t_coeff, r2);
    let n = input.grid.len();
    let (a, b) = (input.grid.points[0], input.grid.points[n - 1]);
    let fine_grid = QuadGrid::trapezoid(a, b, 2 * n - 1).expect("refined grid");
    let fine = moments_on(&fine_grid, &input.pulse, input.statistics, input.t_coeff, r2);
    ((4.0 * fine.0 - coarse.0) / 3.0, (4.0 * fine.1 - coarse.1) / 3.0)
}

/// Spin-flip probability |R|²(1−|T|^{2n})/(1−|T|²) of an n-photon Fock pulse.
pub fn fock_trace(n: u32, t: Complex64, r: Complex64) -> f64 {
    let t2 = t.norm_sqr();
    let r2 = r.norm_sqr();
    if (1.0 - t2).abs() < 1e-12 {
        return r2 * n as f64;
    }
    r2 * (1.0 - t2.powi(n as i32)) / (1.0 - t2)
}

/// Closed-form purity for real T.
pub fn fock_purity_real(n: u32, t: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "need at least one photon"));
    }
    if !(t.abs() < 1.0) {
        return Err(Error::Domain(format!("purity undefined for |T| = {}", t.abs())));
    }
    let n = n as i32;
    Ok(n as f64 * (1.0 + t) * (1.0 - t.powi(2 * n - 1)) / ((2 * n - 1) as f64 * (1.0 - t.powi(2 * n))))
}

/// Purity for complex T by grid quadrature (independent of pulse shape and |R|).
pub fn fock_purity_quadrature(n: u32, t: Complex64, points: usize) -> Result<f64> {
    if !(t.norm() < 1.0) {
        return Err(Error::Domain(format!("purity undefined for |T| = {}", t.norm())));
    }
    let pulse = PulseShape::gaussian(1.0, 0.0)?;
    let grid = pulse_grid(&pulse, points)?;
    let r = Complex64::new((1.0 - t.norm_sqr()).sqrt(), 0.0);
    let input = SubtractorInput::new(PhotonStatistics::Fock { n }, t, r, pulse, grid)?;
    let (tr, sq) = quadrature_moments(&input);
    Ok(sq / (tr * tr))
}

/// Closed form when T is real, quadrature otherwise.
pub fn fock_purity(n: u32, t: Complex64) -> Result<f64> {
    if t.im == 0.0 {
        fock_purity_real(n, t.re)
    } else {
        fock_purity_quadrature(n, t, DEFAULT_POINTS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtractionStats {
    pub eta: f64,
    pub purity: f64,
}

/// (1 − e^{−2a·x})/x, continuous at x = 0.
fn decay_ratio(alpha2: f64, x: f64) -> f64 {
    let b = 2.0 * alpha2;
    if (b * x).abs() < 1e-8 {
        return b * (1.0 - 0.5 * b * x);
    }
    -(-b * x).exp_m1() / x
}

/// d/dx of [`decay_ratio`].
fn decay_ratio_slope(alpha2: f64, x: f64) -> f64 {
    let b = 2.0 * alpha2;
    let bx = b * x;
    if bx.abs() < 1e-4 {
        return -0.5 * b * b * (1.0 - 2.0 * bx / 3.0);
    }
    (bx * (-bx).exp() + (-bx).exp_m1()) / (x * x)
}

/// Efficiency and purity for a coherent pulse with general (possibly lossy) T, R.
pub fn coherent_stats_with(alpha2: f64, t: Complex64, r: Complex64) -> Result<SubtractionStats> {
    if !(alpha2.is_finite() && alpha2 > 0.0) {
        return Err(Error::param("alpha2", format!("must be finite and > 0, got {alpha2}")));
    }
    let t2 = t.norm_sqr();
    let r2 = r.norm_sqr();
    let a1 = 1.0 - t.re;
    let a2 = 1.0 - t2;
    let eta = r2 * decay_ratio(0.5 * alpha2, a2);
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("efficiency is {eta}, purity undefined")));
    }
    let diff = a2 - a1;
    let bracket = if diff.abs() > 1e-6 * a1.max(1e-300) {
        (decay_ratio(alpha2, a1) - decay_ratio(alpha2, a2)) / diff
    } else {
        -decay_ratio_slope(alpha2, 0.5 * (a1 + a2))
    };
    Ok(SubtractionStats { eta, purity: r2 * r2 * bracket / (2.0 * eta * eta) })
}

/// Lossless coherent statistics, |R|² = 1 − |T|².
pub fn coherent_stats(alpha2: f64, t: Complex64) -> Result<SubtractionStats> {
    let r = Complex64::new((1.0 - t.norm_sqr()).max(0.0).sqrt(), 0.0);
    coherent_stats_with(alpha2, t, r)
}

/// Poisson-weighted sum of Fock efficiencies, truncated where the weights vanish.
pub fn coherent_eta_poisson(alpha2: f64, t: Complex64, r: Complex64) -> f64 {
    let cut = (alpha2 + 40.0 * alpha2.sqrt() + 60.0).ceil() as u32;
    let mut log_w = -alpha2;
    let mut acc = 0.0;
    for n in 1..=cut {
        log_w += alpha2.ln() - (n as f64).ln();
        acc += log_w.exp() * fock_trace(n, t, r);
    }
    acc
}

fn lossless_t(r2: f64, theta: f64) -> Complex64 {
    Complex64::from_polar((1.0 - r2).max(0.0).sqrt(), theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub r2: f64,
    pub eta: f64,
    pub purity: f64,
}

/// Fock trade-off curve for lossless T = √(1−|R|²)e^{iθ}.
pub fn fock_tradeoff(n: u32, r2: &[f64], theta: f64) -> Result<Vec<TradeoffPoint>> {
    r2.iter()
        .map(|&r2| {
            let t = lossless_t(r2, theta);
            let r = Complex64::new(r2.sqrt(), 0.0);
            Ok(TradeoffPoint { r2, eta: fock_trace(n, t, r), purity: fock_purity(n, t)? })
        })
        .collect()
}

pub fn coherent_tradeoff(alpha2: f64, r2: &[f64], theta: f64) -> Result<Vec<TradeoffPoint>> {
    r2.iter()
        .map(|&r2| {
            let s = coherent_stats(alpha2, lossless_t(r2, theta))?;
            Ok(TradeoffPoint { r2, eta: s.eta, purity: s.purity })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalRate {
    pub r2: f64,
    pub eta: f64,
    pub purity: f64,
}

pub const RATE_EDGE: f64 = 1e-9;
pub const RATE_TOL: f64 = 1e-12;

/// |R|² at which η = 𝒫 for a coherent pulse, by bisection.
pub fn optimize_rate(alpha2: f64, theta: f64) -> Result<OptimalRate> {
    let g = |r2: f64| coherent_stats(alpha2, lossless_t(r2, theta)).map(|s| s.eta - s.purity);
    let (mut lo, mut hi) = (RATE_EDGE, 1.0 - RATE_EDGE);
    let (glo, ghi) = (g(lo)?, g(hi)?);
    if glo.signum() == ghi.signum() {
        return Err(Error::RootNotBracketed { lo, hi });
    }
    while hi - lo > RATE_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid)?.signum() == glo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r2 = 0.5 * (lo + hi);
    let s = coherent_stats(alpha2, lossless_t(r2, theta))?;
    Ok(OptimalRate { r2, eta: s.eta, purity: s.purity })
}

/// Coherent-pulse purity versus the phase of T at fixed |R|².
pub fn purity_vs_phase(alpha2: f64, r2: f64, thetas: &[f64]) -> Result<Vec<(f64, f64)>> {
    thetas
        .iter()
        .map(|&th| coherent_stats(alpha2, lossless_t(r2, th)).map(|s| (th, s.purity)))
        .collect()
}

/// Large-|α|² purity (1−|T|²)/(2(1−|T|cos θ)).
pub fn large_alpha_purity(t_abs: f64, theta: f64) -> f64 {
    (1.0 - t_abs * t_abs) / (2.0 * (1.0 - t_abs * theta.cos()))
}

pub fn fock_purity_vs_phase(n: u32, r2: f64, thetas: &[f64]) -> Result<Vec<(f64, f64)>> {
    thetas.iter().map(|&th| fock_purity(n, lossless_t(r2, th)).map(|p| (th, p))).collect()
}
