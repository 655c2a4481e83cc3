//! Physical inputs, unit conversion and derived quantities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in μm/μs.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Converts a frequency ν in MHz to an angular frequency in rad/μs.
pub fn mhz_to_angular(nu_mhz: f64) -> f64 {
    2.0 * PI * nu_mhz
}

/// Converts an angular frequency in rad/μs to ν in MHz.
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// How the control-atom interaction strength is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Dressing {
    /// Dressing laser Rabi frequency and detuning (rad/μs) and the C₆ coefficient (rad/μs·μm⁶).
    Microscopic { omega_dress: f64, delta_dress: f64, c6: f64 },
    /// Interaction ratio ξ = U₀/γ_EIT given directly.
    ///
    /// `rc` is the soft-core radius (required for the dressed potential) and
    /// `delta_over_omega` the dressing detuning ratio, used only for `n_max`.
    Ratio { xi: f64, rc: Option<f64>, delta_over_omega: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    Dressed,
    /// Off-diagonal van der Waals exchange at perpendicular distance `d_perp` (μm).
    OffDiagonalVdw { d_perp: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega_up: f64,
    pub omega_down: f64,
    pub gamma: f64,
    pub od_c: f64,
    pub dressing: Dressing,
    pub length: f64,
    /// Transverse offset of the beam axis from the control atom; for the vdW
    /// potential this is the deviation from `d_perp`.
    pub r_perp: f64,
    pub waist: f64,
    pub lambda0: f64,
    pub potential: PotentialKind,
    /// Permit media shorter than four interaction lengths.
    #[serde(default)]
    pub allow_short_medium: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub u0: f64,
    /// Interaction length: R_c for the dressed potential, d⊥ for vdW.
    pub rc: f64,
    pub gp2: f64,
    pub v_up: f64,
    pub v_down: f64,
    pub gamma_eit: f64,
    pub xi: f64,
    pub od: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub mixing_up: f64,
    pub mixing_down: f64,
    pub eit_bandwidth: f64,
    pub n_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub cond_geometry: bool,
    pub rayleigh_length: f64,
    pub cond_spinwave: f64,
    pub cond_control: f64,
    pub n_max: Option<f64>,
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite and > 0, got {value}")))
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite and >= 0, got {value}")))
    }
}

/// 2Ω↑²Ω↓²/((Ω↑²+Ω↓²)γ).
pub fn gamma_eit(omega_up: f64, omega_down: f64, gamma: f64) -> f64 {
    let (a, b) = (omega_up * omega_up, omega_down * omega_down);
    2.0 * a * b / ((a + b) * gamma)
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        positive("omega_up", self.omega_up)?;
        positive("omega_down", self.omega_down)?;
        positive("gamma", self.gamma)?;
        positive("od_c", self.od_c)?;
        positive("length", self.length)?;
        positive("waist", self.waist)?;
        positive("lambda0", self.lambda0)?;
        if !self.r_perp.is_finite() {
            return Err(Error::param("r_perp", "must be finite"));
        }
        match self.dressing {
            Dressing::Microscopic { omega_dress, delta_dress, c6 } => {
                positive("dressing.omega_dress", omega_dress)?;
                positive("dressing.delta_dress", delta_dress)?;
                positive("dressing.c6", c6)?;
                if omega_dress >= delta_dress {
                    return Err(Error::param(
                        "dressing.omega_dress",
                        "must be smaller than delta_dress (large-detuning regime)",
                    ));
                }
            }
            Dressing::Ratio { xi, rc, delta_over_omega } => {
                non_negative("dressing.xi", xi)?;
                if let Some(rc) = rc {
                    positive("dressing.rc", rc)?;
                } else if self.potential == PotentialKind::Dressed {
                    return Err(Error::param("dressing.rc", "required for the dressed potential"));
                }
                if let Some(d) = delta_over_omega {
                    positive("dressing.delta_over_omega", d)?;
                }
            }
        }
        match self.potential {
            PotentialKind::Dressed => {
                if self.r_perp < 0.0 {
                    return Err(Error::param("r_perp", "must be >= 0 for the dressed potential"));
                }
            }
            PotentialKind::OffDiagonalVdw { d_perp } => {
                positive("potential.d_perp", d_perp)?;
                if d_perp + self.r_perp <= 0.0 {
                    return Err(Error::param("r_perp", "places the beam on the control atom"));
                }
            }
        }
        Ok(())
    }

    /// Interaction length scale (R_c or d⊥) without the remaining derivation.
    pub fn interaction_length(&self) -> Result<f64> {
        match (self.potential, self.dressing) {
            (PotentialKind::OffDiagonalVdw { d_perp }, _) => Ok(d_perp),
            (PotentialKind::Dressed, Dressing::Microscopic { delta_dress, c6, .. }) => {
                Ok((c6 / delta_dress).powf(1.0 / 6.0))
            }
            (PotentialKind::Dressed, Dressing::Ratio { rc: Some(rc), .. }) => Ok(rc),
            (PotentialKind::Dressed, Dressing::Ratio { rc: None, .. }) => {
                Err(Error::param("dressing.rc", "required for the dressed potential"))
            }
        }
    }

    pub fn derive(&self) -> Result<Derived> {
        self.validate()?;
        let rc = self.interaction_length()?;
        if !self.allow_short_medium && self.length < 4.0 * rc * (1.0 - 1e-12) {
            return Err(Error::param(
                "length",
                format!("{} um is shorter than 4 interaction lengths ({} um)", self.length, 4.0 * rc),
            ));
        }
        let gamma_eit = gamma_eit(self.omega_up, self.omega_down, self.gamma);
        let (u0, n_max) = match (self.dressing, self.potential) {
            (Dressing::Microscopic { omega_dress, delta_dress, .. }, PotentialKind::Dressed) => {
                (omega_dress * omega_dress / delta_dress, Some((delta_dress / omega_dress).powi(2)))
            }
            (Dressing::Microscopic { omega_dress, delta_dress, c6 }, PotentialKind::OffDiagonalVdw { d_perp }) => {
                (c6 / d_perp.powi(6), Some((delta_dress / omega_dress).powi(2)))
            }
            (Dressing::Ratio { xi, delta_over_omega, .. }, _) => {
                (xi * gamma_eit, delta_over_omega.map(|d| d * d))
            }
        };
        let gp2 = self.od_c * self.gamma * SPEED_OF_LIGHT / rc;
        let v_up = SPEED_OF_LIGHT * self.omega_up.powi(2) / gp2;
        let v_down = SPEED_OF_LIGHT * self.omega_down.powi(2) / gp2;
        let od = self.length / rc * self.od_c;
        Ok(Derived {
            u0,
            rc,
            gp2,
            v_up,
            v_down,
            gamma_eit,
            xi: u0 / gamma_eit,
            od,
            tau: self.length / v_up,
            tau_prime: self.length / v_down,
            mixing_up: gp2.sqrt() / self.omega_up,
            mixing_down: gp2.sqrt() / self.omega_down,
            eit_bandwidth: self.omega_up.powi(2) / (self.gamma * od.sqrt()),
            n_max,
        })
    }

    /// Experimental-feasibility numbers for spin-wave dephasing `gamma_s`,
    /// control-atom decoherence `gamma_c` and pulse width `pulse_dt`.
    pub fn feasibility(&self, gamma_s: f64, gamma_c: f64, pulse_dt: f64) -> Result<FeasibilityReport> {
        non_negative("gamma_s", gamma_s)?;
        non_negative("gamma_c", gamma_c)?;
        non_negative("pulse_dt", pulse_dt)?;
        let d = self.derive()?;
        let rayleigh_length = PI * self.waist.powi(2) / self.lambda0;
        let transit = 4.0 * d.rc / d.v_down;
        Ok(FeasibilityReport {
            cond_geometry: self.waist < d.rc && d.rc < rayleigh_length,
            rayleigh_length,
            cond_spinwave: gamma_s * transit,
            cond_control: gamma_c * (pulse_dt + transit),
            n_max: d.n_max,
        })
    }
}
