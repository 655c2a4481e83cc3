//! Single-photon pulse propagation: spectral synthesis of the full model and
//! direct time stepping of polariton transport.
//!
//! Amplitudes are flux-normalised (∫|E|²dt is a probability). Output traces
//! use retarded time: the spin-down channel is shifted by τ′ and the spin-up
//! channel by τ.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scatter1d::Medium;
use crate::transport::{Channel, Lattice, LatticeSpec, PolaritonLine};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Gaussian single-photon envelope h(t) = (πΔt²)^{-1/4} exp(−(t−t₀)²/2Δt²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub dt: f64,
    pub t0: f64,
}

impl PulseShape {
    pub fn gaussian(dt: f64, t0: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("pulse.dt", format!("must be finite and > 0, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::param("pulse.t0", "must be finite"));
        }
        Ok(Self { dt, t0 })
    }

    pub fn amplitude(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        (PI * self.dt * self.dt).powf(-0.25) * (-0.5 * x * x).exp()
    }

    /// ∫h(t)e^{−iωt}dt.
    pub fn spectrum(&self, omega: f64) -> Complex64 {
        let a = (4.0 * PI * self.dt * self.dt).powf(0.25) * (-0.5 * (omega * self.dt).powi(2)).exp();
        (-I * omega * self.t0).exp() * a
    }
}

/// Output amplitudes of both channels on a shared time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTrace {
    pub times: Vec<f64>,
    pub down: Vec<Complex64>,
    pub up: Vec<Complex64>,
}

impl FieldTrace {
    pub fn channel(&self, ch: Channel) -> &[Complex64] {
        match ch {
            Channel::Down => &self.down,
            Channel::Up => &self.up,
        }
    }

    fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        }
    }

    /// ∫|E|²dt on the (uniform) grid.
    pub fn energy(&self, ch: Channel) -> f64 {
        self.channel(ch).iter().map(|x| x.norm_sqr()).sum::<f64>() * self.step()
    }

    /// Linear interpolation; zero outside the grid.
    pub fn sample(&self, ch: Channel, t: f64) -> Complex64 {
        let n = self.times.len();
        if n < 2 || t < self.times[0] || t > self.times[n - 1] {
            return ZERO;
        }
        let x = (t - self.times[0]) / self.step();
        let k = (x.floor() as usize).min(n - 2);
        let f = x - k as f64;
        let v = self.channel(ch);
        v[k] * (1.0 - f) + v[k + 1] * f
    }

    /// |⟨h|E⟩|²/(⟨E|E⟩⟨h|h⟩) with h centred at the pulse centre.
    pub fn overlap_fidelity(&self, ch: Channel, pulse: &PulseShape) -> f64 {
        let dt = self.step();
        let v = self.channel(ch);
        let ov: Complex64 = self.times.iter().zip(v).map(|(&t, &e)| e * pulse.amplitude(t)).sum::<Complex64>() * dt;
        let hh: f64 = self.times.iter().map(|&t| pulse.amplitude(t).powi(2)).sum::<f64>() * dt;
        ov.norm_sqr() / (self.energy(ch) * hh)
    }

    /// ‖|E_other|² − |E_self|²‖₂/‖|E_self|²‖₂ on this trace's grid.
    pub fn relative_intensity_error(&self, other: &FieldTrace, ch: Channel) -> f64 {
        let v = self.channel(ch);
        let (num, den) = self.times.iter().zip(v).fold((0.0, 0.0), |(n, d), (&t, &e)| {
            let a = e.norm_sqr();
            (n + (other.sample(ch, t).norm_sqr() - a).powi(2), d + a * a)
        });
        (num / den).sqrt()
    }

    /// ‖E_other − E_self‖₂/‖E_self‖₂ on this trace's grid.
    pub fn relative_l2_error(&self, other: &FieldTrace, ch: Channel) -> f64 {
        let v = self.channel(ch);
        let (num, den) = self.times.iter().zip(v).fold((0.0, 0.0), |(n, d), (&t, &e)| {
            (n + (other.sample(ch, t) - e).norm_sqr(), d + e.norm_sqr())
        });
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisGrid {
    pub omega_points: usize,
    /// Half-width of the frequency grid in units of 1/Δt.
    pub span: f64,
    /// Output sampling step in units of Δt.
    pub time_step: f64,
    /// Keep free-medium absorption and dispersion beyond the group delay.
    pub include_free_medium: bool,
}

impl Default for SynthesisGrid {
    fn default() -> Self {
        Self { omega_points: 1024, span: 8.0, time_step: 0.05, include_free_medium: false }
    }
}

pub const MIN_OMEGA_POINTS: usize = 1024;
pub const MIN_SPAN: f64 = 8.0;
/// Pulse support used for windows, in units of Δt.
pub const PULSE_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub trace: FieldTrace,
    pub omega_grid: Vec<f64>,
    pub t_coeff: Vec<Complex64>,
    pub r_coeff: Vec<Complex64>,
}

impl Synthesis {
    /// ∫|C(ω)|²e^{−(ωΔt)²}dω / ∫e^{−(ωΔt)²}dω for the spin-up (`Up`) or spin-down channel.
    pub fn spectral_weight(&self, ch: Channel, pulse: &PulseShape) -> f64 {
        let c = match ch {
            Channel::Down => &self.t_coeff,
            Channel::Up => &self.r_coeff,
        };
        let n = self.omega_grid.len();
        let (mut num, mut den) = (0.0, 0.0);
        for (k, (&w, x)) in self.omega_grid.iter().zip(c).enumerate() {
            let wt = if k == 0 || k == n - 1 { 0.5 } else { 1.0 } * (-(w * pulse.dt).powi(2)).exp();
            num += wt * x.norm_sqr();
            den += wt;
        }
        num / den
    }
}

/// Retarded-time window covering both output channels.
fn output_window(medium: &Medium, pulse: &PulseShape) -> (f64, f64) {
    let d = medium.derived();
    let spread = (d.tau - d.tau_prime).abs();
    (pulse.t0 - PULSE_SIGMAS * pulse.dt - spread, pulse.t0 + PULSE_SIGMAS * pulse.dt + spread)
}

/// Full-model output by multiplying the input spectrum with T(ω), R(ω).
pub fn synthesize_response(
    medium: &Medium,
    pulse: &PulseShape,
    r_perp: f64,
    grid: &SynthesisGrid,
) -> Result<Synthesis> {
    if grid.omega_points < MIN_OMEGA_POINTS || grid.span < MIN_SPAN {
        return Err(Error::BandCoverage(format!(
            "need >= {MIN_OMEGA_POINTS} points over >= ±{MIN_SPAN}/dt, got {} over ±{}/dt",
            grid.omega_points, grid.span
        )));
    }
    if !(grid.time_step > 0.0) {
        return Err(Error::param("synthesis.time_step", "must be > 0"));
    }
    let n = grid.omega_points;
    let half = grid.span / pulse.dt;
    let dw = 2.0 * half / (n - 1) as f64;
    let omega_grid: Vec<f64> = (0..n).map(|k| -half + dw * k as f64).collect();
    let spec = medium.spectrum(&omega_grid, r_perp)?;
    let (mut t_coeff, mut r_coeff): (Vec<_>, Vec<_>) = spec.coeffs.iter().map(|c| (c.t_coeff, c.r_coeff)).unzip();
    if grid.include_free_medium {
        for (k, &w) in omega_grid.iter().enumerate() {
            let (fd, fu) = medium.retarded_free_factors(w);
            t_coeff[k] *= fd;
            r_coeff[k] *= fu;
        }
    }
    let (t_lo, t_hi) = output_window(medium, pulse);
    let step = grid.time_step * pulse.dt;
    let nt = ((t_hi - t_lo) / step).ceil() as usize + 1;
    let times: Vec<f64> = (0..nt).map(|k| t_lo + step * k as f64).collect();
    let weights: Vec<(Complex64, Complex64)> = omega_grid
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let trap = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            let a = pulse.spectrum(w) * (trap * dw / (2.0 * PI));
            (a * t_coeff[k], a * r_coeff[k])
        })
        .collect();
    let (down, up): (Vec<_>, Vec<_>) = times
        .iter()
        .map(|&t| {
            // phasor recurrence e^{iω_k t} = e^{iω_0 t}(e^{iΔω t})^k
            let mut ph = (I * omega_grid[0] * t).exp();
            let rot = (I * dw * t).exp();
            let (mut a, mut b) = (ZERO, ZERO);
            for (k, &(wt, wr)) in weights.iter().enumerate() {
                if k % 64 == 0 {
                    ph = (I * omega_grid[k] * t).exp();
                }
                a += wt * ph;
                b += wr * ph;
                ph *= rot;
            }
            (a, b)
        })
        .unzip();
    Ok(Synthesis { trace: FieldTrace { times, down, up }, omega_grid, t_coeff, r_coeff })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspGrid {
    pub cells: usize,
    /// Courant number when velocities are not snapped.
    pub courant: f64,
    /// Denominator bound for velocity snapping; `None` runs plain upwind.
    pub snap_denominator: Option<u32>,
}

impl Default for DspGrid {
    fn default() -> Self {
        Self { cells: 400, courant: 0.9, snap_denominator: Some(8) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormLedger {
    pub injected: f64,
    pub emitted: f64,
    /// Largest |inside + emitted − injected| over the run.
    pub max_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspRun {
    pub trace: FieldTrace,
    pub lattice: Lattice,
    pub norm: NormLedger,
}

/// Direct time stepping of the polariton Hamiltonian with the real potential.
pub fn evolve_dsp(medium: &Medium, pulse: &PulseShape, r_perp: f64, grid: &DspGrid) -> Result<DspRun> {
    let d = medium.derived();
    let length = medium.params().length;
    let lattice = Lattice::new(&LatticeSpec {
        cells: grid.cells,
        length,
        v_down: d.v_down,
        v_up: d.v_up,
        courant: grid.courant,
        snap_denominator: grid.snap_denominator,
    })?;
    let profile = crate::potential::PotentialProfile { r_perp, ..*medium.profile() };
    let u: Vec<f64> = lattice.centres().map(|s| profile.u_at(s - 0.5 * length)).collect();
    let mut line = PolaritonLine::new(lattice, &u)?;

    let t_start = pulse.t0 - PULSE_SIGMAS * pulse.dt;
    let t_inject_end = pulse.t0 + PULSE_SIGMAS * pulse.dt;
    let delays = [lattice.delay(Channel::Down), lattice.delay(Channel::Up)];
    let v_eff = [lattice.velocity(Channel::Down), lattice.velocity(Channel::Up)];
    let t_end = t_inject_end + delays[0].max(delays[1]) + 2.0 * lattice.dt * lattice.stride[0].max(lattice.stride[1]) as f64;
    let steps = ((t_end - t_start) / lattice.dt).ceil() as usize;

    let mut samples: [Vec<(f64, Complex64)>; 2] = [Vec::new(), Vec::new()];
    let mut ledger = NormLedger { injected: 0.0, emitted: 0.0, max_defect: 0.0 };
    let dz = lattice.dz;
    for n in 0..steps {
        let t_in = t_start + lattice.crossing_time(Channel::Down, n);
        let inflow = if lattice.advects(Channel::Down, n) && t_in <= t_inject_end {
            Complex64::new(pulse.amplitude(t_in) / v_eff[0].sqrt(), 0.0)
        } else {
            ZERO
        };
        ledger.injected += lattice.nu[0] * inflow.norm_sqr() * dz;
        let exits = line.step(n, inflow);
        for (ch, e) in [(Channel::Down, exits.down), (Channel::Up, exits.up)] {
            if let Some(psi) = e {
                let i = ch.index();
                ledger.emitted += lattice.nu[i] * psi.norm_sqr() * dz;
                let t_ret = t_start + lattice.crossing_time(ch, n) - delays[i];
                samples[i].push((t_ret, psi * v_eff[i].sqrt()));
            }
        }
        let defect = (line.norm() + ledger.emitted - ledger.injected).abs();
        ledger.max_defect = ledger.max_defect.max(defect);
    }

    let (t_lo, t_hi) = output_window(medium, pulse);
    let step = lattice.dt * lattice.stride[0].min(lattice.stride[1]) as f64;
    let nt = ((t_hi - t_lo) / step).ceil() as usize + 1;
    let times: Vec<f64> = (0..nt).map(|k| t_lo + step * k as f64).collect();
    let interp = |s: &[(f64, Complex64)], t: f64| -> Complex64 {
        let k = s.partition_point(|p| p.0 <= t);
        if k == 0 || k == s.len() {
            return ZERO;
        }
        let (a, b) = (s[k - 1], s[k]);
        let f = (t - a.0) / (b.0 - a.0);
        a.1 * (1.0 - f) + b.1 * f
    };
    let down = times.iter().map(|&t| interp(&samples[0], t)).collect();
    let up = times.iter().map(|&t| interp(&samples[1], t)).collect();
    Ok(DspRun { trace: FieldTrace { times, down, up }, lattice, norm: ledger })
}
