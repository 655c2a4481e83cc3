//! JSON run configuration with unit-suffixed keys.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use rydex::params::{mhz_to_angular, Dressing, PotentialKind, SystemParams};
use rydex::scatter1d::SolverSettings;
use rydex::subtractor::PhotonStatistics;
use rydex::timedomain::{DspGrid, SynthesisGrid};
use rydex::twophoton::TwoPhotonGrid;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: Option<ParamsConfig>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub emit_plots: bool,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub pulse: PulseConfig,
    #[serde(default)]
    pub subtract: SubtractConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub two_photon: TwoPhotonConfig,
    #[serde(default)]
    pub repeater: RepeaterConfig,
    #[serde(default)]
    pub feasibility: FeasibilityConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(rename = "omega_up_MHz")]
    pub omega_up_mhz: f64,
    #[serde(rename = "omega_down_MHz")]
    pub omega_down_mhz: f64,
    #[serde(rename = "gamma_MHz")]
    pub gamma_mhz: f64,
    pub od_c: f64,
    pub dressing: DressingConfig,
    /// Defaults to four interaction lengths.
    #[serde(default)]
    pub length_um: Option<f64>,
    #[serde(default)]
    pub r_perp_um: f64,
    #[serde(default = "default_waist")]
    pub waist_um: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0_um: f64,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub allow_short_medium: bool,
}

fn default_waist() -> f64 {
    2.0
}

fn default_lambda0() -> f64 {
    0.78
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DressingConfig {
    Ratio {
        xi: f64,
        #[serde(default)]
        rc_um: Option<f64>,
        #[serde(default)]
        delta_over_omega: Option<f64>,
    },
    Microscopic {
        #[serde(rename = "omega_dress_MHz")]
        omega_dress_mhz: f64,
        #[serde(rename = "delta_dress_MHz")]
        delta_dress_mhz: f64,
        #[serde(rename = "c6_MHz_um6")]
        c6_mhz_um6: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    #[default]
    Dressed,
    OffDiagonalVdw { d_perp_um: f64 },
}

impl ParamsConfig {
    /// Internal units: rad/μs and μm.
    pub fn to_params(&self) -> CliResult<SystemParams> {
        let dressing = match self.dressing {
            DressingConfig::Ratio { xi, rc_um, delta_over_omega } => Dressing::Ratio { xi, rc: rc_um, delta_over_omega },
            DressingConfig::Microscopic { omega_dress_mhz, delta_dress_mhz, c6_mhz_um6 } => Dressing::Microscopic {
                omega_dress: mhz_to_angular(omega_dress_mhz),
                delta_dress: mhz_to_angular(delta_dress_mhz),
                c6: mhz_to_angular(c6_mhz_um6),
            },
        };
        let potential = match self.potential {
            PotentialConfig::Dressed => PotentialKind::Dressed,
            PotentialConfig::OffDiagonalVdw { d_perp_um } => PotentialKind::OffDiagonalVdw { d_perp: d_perp_um },
        };
        let mut p = SystemParams {
            omega_up: mhz_to_angular(self.omega_up_mhz),
            omega_down: mhz_to_angular(self.omega_down_mhz),
            gamma: mhz_to_angular(self.gamma_mhz),
            od_c: self.od_c,
            dressing,
            length: 0.0,
            r_perp: self.r_perp_um,
            waist: self.waist_um,
            lambda0: self.lambda0_um,
            potential,
            allow_short_medium: self.allow_short_medium,
        };
        p.length = match self.length_um {
            Some(l) => l,
            None => 4.0 * p.interaction_length()?,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub quantity: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl SweepConfig {
    pub fn new(quantity: &str, min: f64, max: f64, points: usize, scale: Scale) -> Self {
        Self { quantity: quantity.into(), min, max, points, scale }
    }

    /// Checks bounds and the allowed quantities, then returns the sample points.
    pub fn values(&self, allowed: &[&str]) -> CliResult<Vec<f64>> {
        if !allowed.contains(&self.quantity.as_str()) {
            return Err(CliError::config(
                "sweep.quantity",
                format!("`{}` is not one of {}", self.quantity, allowed.join(", ")),
            ));
        }
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(CliError::config("sweep.min", "bounds must be finite"));
        }
        if self.points < 2 {
            return Err(CliError::config("sweep.points", format!("need at least 2, got {}", self.points)));
        }
        if self.max <= self.min {
            return Err(CliError::config("sweep.max", format!("must exceed min ({} <= {})", self.max, self.min)));
        }
        if self.scale == Scale::Log && self.min <= 0.0 {
            return Err(CliError::config("sweep.min", "log sweeps need min > 0"));
        }
        let n = self.points - 1;
        Ok((0..=n)
            .map(|k| {
                let f = k as f64 / n as f64;
                match self.scale {
                    Scale::Linear => self.min + f * (self.max - self.min),
                    Scale::Log => (self.min.ln() + f * (self.max.ln() - self.min.ln())).exp(),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Frequency axis in units of the EIT bandwidth Γ.
    #[serde(rename = "omega_min_over_Gamma")]
    pub omega_min: f64,
    #[serde(rename = "omega_max_over_Gamma")]
    pub omega_max: f64,
    pub points: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { omega_min: -3.0, omega_max: 3.0, points: 121 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    /// Pulse width Δt in units of 1/Γ.
    #[serde(rename = "dt_times_Gamma")]
    pub dt_times_gamma: f64,
    pub synthesis: SynthesisGrid,
    pub dsp: DspGrid,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self { dt_times_gamma: 10.0, synthesis: SynthesisGrid::default(), dsp: DspGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubtractConfig {
    pub statistics: PhotonStatistics,
    /// Phase θ of T.
    pub theta_rad: f64,
    /// |R|² of the phase curve and exported density matrices.
    pub phase_r2: f64,
    pub phase_points: usize,
    pub density_r2: Vec<f64>,
    pub grid_points: usize,
}

impl Default for SubtractConfig {
    fn default() -> Self {
        Self {
            statistics: PhotonStatistics::Fock { n: 2 },
            theta_rad: 0.0,
            phase_r2: 0.5,
            phase_points: 65,
            density_r2: vec![0.1, 0.5, 0.9],
            grid_points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub theta_rad: f64,
    /// |α|² values whose θ-curves at |R_opt|² are exported.
    pub phase_alpha2: Vec<f64>,
    pub phase_points: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { theta_rad: 0.0, phase_alpha2: vec![2.0, 10.0, 100.0], phase_points: 65 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPhotonConfig {
    pub n_eff: f64,
    /// Exchange phase φ the potential is tuned to.
    pub phi_rad: f64,
    /// Length unit R_c and spin-down velocity; only their ratio sets the time scale.
    pub rc_um: f64,
    pub v_down_um_per_us: f64,
    /// |R|² values whose normalised density matrices are exported.
    pub rho_r2: Vec<f64>,
    pub grid: TwoPhotonGrid,
}

impl Default for TwoPhotonConfig {
    fn default() -> Self {
        Self {
            n_eff: 0.1,
            phi_rad: FRAC_PI_2,
            rc_um: 1.0,
            v_down_um_per_us: 1.0,
            rho_r2: vec![0.1, 0.5, 0.9],
            grid: TwoPhotonGrid::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientsConfig {
    /// T(0), R(0) of the configured medium on the beam axis offset.
    Medium,
    Direct { t_abs: f64, t_phase_rad: f64, r_abs: f64, r_phase_rad: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepeaterConfig {
    pub coefficients: CoefficientsConfig,
    pub detector_efficiency: f64,
    pub phi_rad: f64,
}

impl Default for RepeaterConfig {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            coefficients: CoefficientsConfig::Direct { t_abs: h, t_phase_rad: 0.0, r_abs: h, r_phase_rad: 0.0 },
            detector_efficiency: 1.0,
            phi_rad: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeasibilityConfig {
    #[serde(rename = "gamma_s_MHz")]
    pub gamma_s_mhz: f64,
    #[serde(rename = "gamma_c_MHz")]
    pub gamma_c_mhz: f64,
    #[serde(rename = "dt_times_Gamma")]
    pub dt_times_gamma: f64,
}

impl Default for FeasibilityConfig {
    fn default() -> Self {
        Self { gamma_s_mhz: 0.1, gamma_c_mhz: 0.005, dt_times_gamma: 10.0 }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::config("config", e.to_string()))?;
        if cfg.jobs == 0 {
            return Err(CliError::config("jobs", "must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn system_params(&self) -> CliResult<SystemParams> {
        self.params.as_ref().ok_or_else(|| CliError::config("params", "required by this command"))?.to_params()
    }

    /// The configured sweep, or `fallback` when none is given.
    pub fn sweep_or(&self, fallback: SweepConfig) -> SweepConfig {
        self.sweep.clone().unwrap_or(fallback)
    }
}
