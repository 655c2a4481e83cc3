//! Uniform-grid transport of the two polariton channels.
//!
//! Each channel advects once every `stride` time steps with Courant number
//! `nu`. With `nu = 1` an advection is an exact one-cell shift; velocity
//! snapping picks a rational velocity ratio so that both channels can use it.
//! Per step: half interaction, advection of the channels due this step, half
//! interaction.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Down,
    Up,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Down, Channel::Up];

    pub fn index(self) -> usize {
        match self {
            Channel::Down => 0,
            Channel::Up => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub cells: usize,
    pub length: f64,
    pub v_down: f64,
    pub v_up: f64,
    /// Courant number of the faster channel; ignored when snapping.
    pub courant: f64,
    /// Largest denominator of the snapped velocity ratio; `None` keeps the exact velocities.
    pub snap_denominator: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub cells: usize,
    pub length: f64,
    pub dz: f64,
    pub dt: f64,
    pub stride: [usize; 2],
    pub nu: [f64; 2],
}

pub const COURANT_LIMIT: f64 = 1.0;

/// Best p/q ≈ `ratio` (≥ 1) with q ≤ `max_q`.
fn rational(ratio: f64, max_q: u32) -> (usize, usize) {
    (1..=max_q.max(1) as usize)
        .map(|q| ((ratio * q as f64).round().max(q as f64) as usize, q))
        .min_by(|a, b| {
            let ea = (a.0 as f64 / a.1 as f64 - ratio).abs();
            let eb = (b.0 as f64 / b.1 as f64 - ratio).abs();
            ea.partial_cmp(&eb).unwrap().then(a.1.cmp(&b.1))
        })
        .unwrap()
}

impl Lattice {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        if spec.cells < 2 {
            return Err(Error::param("cells", "need at least 2 cells"));
        }
        for (f, v) in [("length", spec.length), ("v_down", spec.v_down), ("v_up", spec.v_up)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(f, format!("must be finite and > 0, got {v}")));
            }
        }
        let dz = spec.length / spec.cells as f64;
        let v = [spec.v_down, spec.v_up];
        let fast = if v[0] >= v[1] { 0 } else { 1 };
        let slow = 1 - fast;
        let ratio = v[fast] / v[slow];
        let mut stride = [1usize; 2];
        let mut nu = [1.0; 2];
        let dt = match spec.snap_denominator {
            Some(qmax) => {
                let (p, q) = rational(ratio, qmax);
                stride[fast] = q;
                stride[slow] = p;
                dz / (v[fast] * q as f64)
            }
            None => {
                if !(spec.courant > 0.0 && spec.courant <= COURANT_LIMIT) {
                    return Err(Error::Cfl { courant: spec.courant, limit: COURANT_LIMIT });
                }
                let dt = spec.courant * dz / v[fast];
                nu[fast] = spec.courant;
                let k = (ratio.floor() as usize).max(1);
                stride[slow] = k;
                nu[slow] = k as f64 * v[slow] * dt / dz;
                dt
            }
        };
        Ok(Self { cells: spec.cells, length: spec.length, dz, dt, stride, nu })
    }

    /// Effective velocity of a channel on this lattice.
    pub fn velocity(&self, ch: Channel) -> f64 {
        let i = ch.index();
        self.nu[i] * self.dz / (self.stride[i] as f64 * self.dt)
    }

    /// Transit time through the medium.
    pub fn delay(&self, ch: Channel) -> f64 {
        self.length / self.velocity(ch)
    }

    pub fn is_exact(&self) -> bool {
        self.nu == [1.0, 1.0]
    }

    /// Whether channel `ch` advects during step `n`.
    pub fn advects(&self, ch: Channel, n: usize) -> bool {
        (n + 1) % self.stride[ch.index()] == 0
    }

    /// Centre time of step `n`.
    pub fn step_time(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.dt
    }

    /// Boundary-crossing time attributed to an advection of `ch` at step `n`.
    pub fn crossing_time(&self, ch: Channel, n: usize) -> f64 {
        self.step_time(n) - 0.5 * self.stride[ch.index()] as f64 * self.dt
    }

    /// Cell-centre coordinates.
    pub fn centres(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.cells).map(move |j| (j as f64 + 0.5) * self.dz)
    }
}

/// Advects one channel's cells; returns the amplitude leaving the last cell.
pub(crate) fn advect(cells: &mut [Complex64], nu: f64, inflow: Complex64) -> Complex64 {
    let last = cells[cells.len() - 1];
    if nu == 1.0 {
        cells.rotate_right(1);
        cells[0] = inflow;
    } else {
        let mut prev = inflow;
        for c in cells.iter_mut() {
            let old = *c;
            *c = old * (1.0 - nu) + prev * nu;
            prev = old;
        }
    }
    last
}

/// Coefficients `c = (e^{−2iU·τ} − 1)/2` of exp(−iUτ[[1,1],[1,1]]) = 1 + c[[1,1],[1,1]].
pub(crate) fn mixing_coefficients(u: &[f64], tau: f64) -> Vec<Complex64> {
    u.iter().map(|&u| ((-2.0 * I * u * tau).exp() - 1.0) * 0.5).collect()
}

/// Two-channel single-excitation polariton line.
#[derive(Debug, Clone)]
pub struct PolaritonLine {
    lattice: Lattice,
    half: Vec<Complex64>,
    psi: [Vec<Complex64>; 2],
}

/// Amplitudes (in cell units) that left the medium during one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Exits {
    pub down: Option<Complex64>,
    pub up: Option<Complex64>,
}

impl PolaritonLine {
    pub fn new(lattice: Lattice, u_cells: &[f64]) -> Result<Self> {
        if u_cells.len() != lattice.cells {
            return Err(Error::param("u_cells", "length must match the lattice"));
        }
        let half = mixing_coefficients(u_cells, 0.5 * lattice.dt);
        let n = lattice.cells;
        Ok(Self { lattice, half, psi: [vec![ZERO; n], vec![ZERO; n]] })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn cells(&self, ch: Channel) -> &[Complex64] {
        &self.psi[ch.index()]
    }

    pub fn cells_mut(&mut self, ch: Channel) -> &mut [Complex64] {
        &mut self.psi[ch.index()]
    }

    pub fn clear(&mut self) {
        self.psi.iter_mut().for_each(|v| v.fill(ZERO));
    }

    /// Probability inside the medium.
    pub fn norm(&self) -> f64 {
        self.psi.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>() * self.lattice.dz
    }

    pub fn mix_half(&mut self) {
        let [d, u] = &mut self.psi;
        for ((a, b), c) in d.iter_mut().zip(u.iter_mut()).zip(&self.half) {
            let s = (*a + *b) * c;
            *a += s;
            *b += s;
        }
    }

    /// Advects the channels due at step `n`; `inflow` feeds the spin-down channel.
    pub fn advect_step(&mut self, n: usize, inflow: Complex64) -> Exits {
        let mut exits = Exits::default();
        if self.lattice.advects(Channel::Down, n) {
            exits.down = Some(advect(&mut self.psi[0], self.lattice.nu[0], inflow));
        }
        if self.lattice.advects(Channel::Up, n) {
            exits.up = Some(advect(&mut self.psi[1], self.lattice.nu[1], ZERO));
        }
        exits
    }

    /// One full time step.
    pub fn step(&mut self, n: usize, inflow: Complex64) -> Exits {
        self.mix_half();
        let e = self.advect_step(n, inflow);
        self.mix_half();
        e
    }
}
