//! Control-atom interaction potentials along the beam.
//!
//! Positions `z` are measured from the control atom along the propagation axis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Derived, PotentialKind, SystemParams};
use crate::quad;

/// ∫dx/(1+x⁶) over the real line.
pub const DRESSED_LINE_INTEGRAL: f64 = 2.0 * std::f64::consts::PI / 3.0;
/// ∫dx/(1+x²)³ over the real line.
pub const VDW_LINE_INTEGRAL: f64 = 3.0 * std::f64::consts::PI / 8.0;

const POINTS_PER_SCALE: f64 = 40.0;
const REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Dressed,
    OffDiagonalVdw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialProfile {
    pub kind: ProfileKind,
    pub u0: f64,
    /// R_c (dressed) or d⊥ (vdW), μm.
    pub scale: f64,
    /// Beam offset (dressed) or deviation from d⊥ (vdW), μm.
    pub r_perp: f64,
}

/// Integration range for [`PotentialProfile::line_integral`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Span {
    Line,
    Interval { from: f64, to: f64 },
}

impl PotentialProfile {
    pub fn new(kind: ProfileKind, u0: f64, scale: f64, r_perp: f64) -> Result<Self> {
        if !(u0.is_finite() && u0 >= 0.0) {
            return Err(Error::param("u0", format!("must be finite and >= 0, got {u0}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::param("scale", format!("must be finite and > 0, got {scale}")));
        }
        Ok(Self { kind, u0, scale, r_perp })
    }

    pub fn from_params(params: &SystemParams, derived: &Derived) -> Result<Self> {
        let kind = match params.potential {
            PotentialKind::Dressed => ProfileKind::Dressed,
            PotentialKind::OffDiagonalVdw { .. } => ProfileKind::OffDiagonalVdw,
        };
        Self::new(kind, derived.u0, derived.rc, params.r_perp)
    }

    /// Distance from the control atom to the beam line.
    pub fn transverse_distance(&self) -> f64 {
        match self.kind {
            ProfileKind::Dressed => self.r_perp.abs(),
            ProfileKind::OffDiagonalVdw => self.scale + self.r_perp,
        }
    }

    /// Same potential seen along a parallel line at distance `d` from the atom.
    pub fn at_transverse_distance(&self, d: f64) -> Self {
        let r_perp = match self.kind {
            ProfileKind::Dressed => d,
            ProfileKind::OffDiagonalVdw => d - self.scale,
        };
        Self { r_perp, ..*self }
    }

    pub fn u_at(&self, z: f64) -> f64 {
        let rho = self.transverse_distance();
        let r2 = (z * z + rho * rho) / (self.scale * self.scale);
        match self.kind {
            ProfileKind::Dressed => self.u0 / (1.0 + r2 * r2 * r2),
            ProfileKind::OffDiagonalVdw => {
                let s = 1.0 / r2;
                self.u0 * s * s * s
            }
        }
    }

    /// 𝒱 = U/(1 + 2iU/γ_EIT).
    pub fn effective_at(&self, z: f64, gamma_eit: f64) -> Complex64 {
        effective_potential(self.u_at(z), gamma_eit)
    }

    pub fn line_integral(&self, span: Span) -> Result<f64> {
        if self.u0 == 0.0 {
            return Ok(0.0);
        }
        let f = |z: f64| self.u_at(z);
        let est = match span {
            Span::Line => quad::integrate_line(&f, self.scale, 256, REL_TOL, 0.0)?,
            Span::Interval { from, to } => {
                let n = (POINTS_PER_SCALE * (to - from).abs() / self.scale).ceil() as usize;
                quad::integrate(&f, from, to, n.max(16), REL_TOL, 0.0)?
            }
        };
        log::trace!("∫U dz = {:e} ± {:e}", est.value, est.error);
        Ok(est.value)
    }

    /// ∫𝒱 dz over `span`.
    pub fn effective_integral(&self, span: Span, gamma_eit: f64) -> Result<Complex64> {
        if self.u0 == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let f = |z: f64| self.effective_at(z, gamma_eit);
        let est = match span {
            Span::Line => quad::integrate_line(&f, self.scale, 256, REL_TOL, 0.0)?,
            Span::Interval { from, to } => {
                let n = (POINTS_PER_SCALE * (to - from).abs() / self.scale).ceil() as usize;
                quad::integrate(&f, from, to, n.max(16), REL_TOL, 0.0)?
            }
        };
        Ok(est.value)
    }
}

/// Complex effective potential for a local real potential `u`.
pub fn effective_potential(u: f64, gamma_eit: f64) -> Complex64 {
    let u = Complex64::new(u, 0.0);
    u / (1.0 + Complex64::new(0.0, 2.0) * u / gamma_eit)
}
