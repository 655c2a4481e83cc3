//! Two-photon scattering off the dressed control atom by direct time stepping.
//!
//! Labelled amplitudes on the interior grid [0, L]²: `S` has both photons
//! spin-down and the atom up, `A` (`B`) has photon 1 (photon 2) spin-up and the
//! atom down. The labelled norm is ½(‖S‖² + ‖A‖² + ‖B‖²).
//!
//! Each step: shifts along z₁, single-photon transport, shifts along z₂, then
//! the exact local 3×3 interaction. While one photon is still outside, the
//! other follows the single-photon line. Once a photon has left spin-down, its
//! partner continues on a single-excitation line of its own until the
//! exit-time bin closes, and then on a line shared by the whole bin.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{PhotonDensityMatrix, QuadGrid};
use crate::error::{Error, Result};
use crate::potential::{PotentialProfile, ProfileKind};
use crate::scatter1d::{steady_state_coeffs, Medium, ScatterCoeffs};
use crate::timedomain::PulseShape;
use crate::transport::{advect, mixing_coefficients, Channel, Lattice, LatticeSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub const MIN_CELLS: usize = 200;
pub const PULSE_SIGMAS: f64 = 6.0;
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;
pub const NORM_TOL: f64 = 1e-4;

/// Polariton-level description of the medium seen by both photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonModel {
    pub length: f64,
    /// Interaction length R_c.
    pub rc: f64,
    pub v_down: f64,
    pub v_up: f64,
    pub profile: PotentialProfile,
}

impl TwoPhotonModel {
    pub fn from_medium(medium: &Medium, r_perp: f64) -> Self {
        let d = medium.derived();
        Self {
            length: medium.params().length,
            rc: d.rc,
            v_down: d.v_down,
            v_up: d.v_up,
            profile: PotentialProfile { r_perp, ..*medium.profile() },
        }
    }

    /// Dressed medium of length 4R_c whose velocity ratio gives |R|² = `r2` at φ = π/2.
    pub fn exchange_target(rc: f64, v_down: f64, r2: f64) -> Result<Self> {
        if !(r2 > 0.0 && r2 <= 1.0) {
            return Err(Error::param("r2", format!("must lie in (0, 1], got {r2}")));
        }
        let b = 2.0 / r2 - 1.0;
        let ratio = b + (b * b - 1.0).max(0.0).sqrt();
        let profile = PotentialProfile::new(ProfileKind::Dressed, 1.0, rc, 0.0)?;
        Ok(Self { length: 4.0 * rc, rc, v_down, v_up: v_down / ratio, profile })
    }

    pub fn lattice(&self, grid: &TwoPhotonGrid) -> Result<Lattice> {
        grid.validate()?;
        if self.v_up > self.v_down {
            return Err(Error::param("v_up", "spin-up polaritons must not outrun spin-down ones"));
        }
        Lattice::new(&LatticeSpec {
            cells: grid.cells,
            length: self.length,
            v_down: self.v_down,
            v_up: self.v_up,
            courant: 1.0,
            snap_denominator: Some(grid.snap_denominator),
        })
    }

    /// U at the cell centres.
    pub fn potential_cells(&self, lattice: &Lattice) -> Vec<f64> {
        lattice.centres().map(|s| self.profile.u_at(s - 0.5 * self.length)).collect()
    }

    /// Accumulated phase on the lattice, with the snapped velocities.
    pub fn lattice_phase(&self, grid: &TwoPhotonGrid) -> Result<f64> {
        let l = self.lattice(grid)?;
        let (vd, vu) = (l.velocity(Channel::Down), l.velocity(Channel::Up));
        let integral: f64 = self.potential_cells(&l).iter().sum::<f64>() * l.dz;
        Ok(integral * (vu + vd) / (2.0 * vu * vd))
    }

    /// Rescales U₀ so that the lattice phase equals `phi`.
    pub fn tuned_to_phase(&self, phi: f64, grid: &TwoPhotonGrid) -> Result<Self> {
        let current = self.lattice_phase(grid)?;
        if current <= 0.0 {
            return Err(Error::Domain("cannot rescale a vanishing potential".into()));
        }
        let profile = PotentialProfile { u0: self.profile.u0 * phi / current, ..self.profile };
        Ok(Self { profile, ..*self })
    }

    /// T(0), R(0) of the lattice model.
    pub fn steady_state(&self, grid: &TwoPhotonGrid) -> Result<ScatterCoeffs> {
        let l = self.lattice(grid)?;
        let phi = Complex64::new(self.lattice_phase(grid)?, 0.0);
        Ok(steady_state_coeffs(l.velocity(Channel::Up).sqrt(), l.velocity(Channel::Down).sqrt(), phi))
    }

    /// Pulse at effective photon density n_eff = 2R_c/(v↓Δt).
    pub fn pulse_for_density(&self, n_eff: f64) -> Result<PulseShape> {
        if !(n_eff.is_finite() && n_eff > 0.0) {
            return Err(Error::param("n_eff", format!("must be finite and > 0, got {n_eff}")));
        }
        PulseShape::gaussian(2.0 * self.rc / (self.v_down * n_eff), 0.0)
    }

    pub fn photon_density(&self, pulse: &PulseShape) -> f64 {
        2.0 * self.rc / (self.v_down * pulse.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoPhotonGrid {
    pub cells: usize,
    /// Denominator bound for the snapped velocity ratio.
    pub snap_denominator: u32,
    /// Exit-time bins per pulse duration Δt.
    pub bins_per_pulse: usize,
    /// First-exit bins per Δt for the partner lines; rounded to divide the output bins.
    pub line_bins_per_pulse: usize,
    pub memory_cap: usize,
}

impl Default for TwoPhotonGrid {
    fn default() -> Self {
        Self { cells: MIN_CELLS, snap_denominator: 4, bins_per_pulse: 64, line_bins_per_pulse: 64, memory_cap: DEFAULT_MEMORY_CAP }
    }
}

impl TwoPhotonGrid {
    pub fn validate(&self) -> Result<()> {
        if self.cells < MIN_CELLS {
            return Err(Error::param("cells", format!("need at least {MIN_CELLS}, got {}", self.cells)));
        }
        if self.snap_denominator == 0 {
            return Err(Error::param("snap_denominator", "must be >= 1"));
        }
        if self.bins_per_pulse == 0 || self.line_bins_per_pulse == 0 {
            return Err(Error::param("bins_per_pulse", "must be >= 1"));
        }
        Ok(())
    }
}

/// Single-excitation line advanced in merged form: advection, then a full mixing step.
#[derive(Debug, Clone)]
struct Line {
    cells: [Vec<Complex64>; 2],
}

impl Line {
    fn new(n: usize) -> Self {
        Self { cells: [vec![ZERO; n], vec![ZERO; n]] }
    }

    fn advect(&mut self, lat: &Lattice, n: usize, inflow: Complex64) -> [Option<Complex64>; 2] {
        let mut out = [None, None];
        for ch in Channel::BOTH {
            if lat.advects(ch, n) {
                let feed = if ch == Channel::Down { inflow } else { ZERO };
                out[ch.index()] = Some(advect(&mut self.cells[ch.index()], 1.0, feed));
            }
        }
        out
    }

    /// Applies 1 + c[[1,1],[1,1]] per cell; returns Σ|ψ|².
    fn mix(&mut self, c: &[Complex64]) -> f64 {
        let [d, u] = &mut self.cells;
        let mut acc = 0.0;
        for ((a, b), c) in d.iter_mut().zip(u.iter_mut()).zip(c) {
            let s = (*a + *b) * c;
            *a += s;
            *b += s;
            acc += a.norm_sqr() + b.norm_sqr();
        }
        acc
    }

    fn norm_sqr(&self) -> f64 {
        self.cells.iter().flatten().map(|x| x.norm_sqr()).sum()
    }
}

/// N×N ring-buffered grid: logical (i, j) lives at ((i+o₀) mod N, (j+o₁) mod N).
#[derive(Debug, Clone)]
struct Field2 {
    n: usize,
    data: Vec<Complex64>,
    off: [usize; 2],
}

impl Field2 {
    fn new(n: usize) -> Self {
        Self { n, data: vec![ZERO; n * n], off: [0, 0] }
    }

    fn index(&self, i: usize, j: usize) -> usize {
        ((i + self.off[0]) % self.n) * self.n + (j + self.off[1]) % self.n
    }

    fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[self.index(i, j)]
    }

    /// Shift by one cell along z₁; `exits[j]` receives the leaving plane.
    fn shift_z1(&mut self, ghost: impl Fn(usize) -> Complex64, exits: &mut [Complex64]) {
        let n = self.n;
        let row = ((n - 1 + self.off[0]) % n) * n;
        for (j, e) in exits.iter_mut().enumerate() {
            let k = row + (j + self.off[1]) % n;
            *e = self.data[k];
            self.data[k] = ghost(j);
        }
        self.off[0] = (self.off[0] + n - 1) % n;
    }

    /// Shift by one cell along z₂; `exits[i]` receives the leaving plane.
    fn shift_z2(&mut self, ghost: impl Fn(usize) -> Complex64, exits: &mut [Complex64]) {
        let n = self.n;
        let col = (n - 1 + self.off[1]) % n;
        for (i, e) in exits.iter_mut().enumerate() {
            let k = ((i + self.off[0]) % n) * n + col;
            *e = self.data[k];
            self.data[k] = ghost(i);
        }
        self.off[1] = (self.off[1] + n - 1) % n;
    }

    fn to_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Upper triangle (00, 01, 02, 11, 12, 22) of the complex-symmetric exp(−iHτ).
type Exp3 = [Complex64; 6];

fn interaction_exponential(u1: f64, u2: f64, tau: f64) -> Exp3 {
    if u1 == 0.0 && u2 == 0.0 {
        let one = Complex64::new(1.0, 0.0);
        return [one, ZERO, ZERO, one, ZERO, one];
    }
    let h = Matrix3::new(u1 + u2, u1, u2, u1, u1, 0.0, u2, 0.0, u2);
    let eig = SymmetricEigen::new(h);
    let mut m = [ZERO; 6];
    for k in 0..3 {
        let ph = (-I * eig.eigenvalues[k] * tau).exp();
        let v = eig.eigenvectors.column(k);
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for (slot, (a, b)) in m.iter_mut().zip(pairs) {
            *slot += ph * (v[a] * v[b]);
        }
    }
    m
}

/// Integer exit-time bins in retarded step units.
#[derive(Debug, Clone, Copy)]
struct Bins {
    width: usize,
    /// Partner-line bins per output bin.
    sub: usize,
    origin: i64,
}

impl Bins {
    fn output(&self, r: i64) -> usize {
        ((r - self.origin) / self.width as i64) as usize
    }

    fn line(&self, r: i64) -> usize {
        ((r - self.origin) / (self.width / self.sub) as i64) as usize
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonLedger {
    /// Largest |1 − (unentered + inside + emitted)| over the run.
    pub max_norm_defect: f64,
    /// Spin-up probability accumulated at the exit faces.
    pub spin_up_flux: f64,
    pub spin_down_flux: f64,
    /// Largest |A(z₁,z₂) − B(z₂,z₁)| and |S(z₁,z₂) − S(z₂,z₁)| seen.
    pub exchange_defect: f64,
    pub steps: usize,
    pub partner_lines: usize,
}

/// Interior grids at the end of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorGrids {
    pub both_down: DMatrix<Complex64>,
    pub first_up: DMatrix<Complex64>,
    pub second_up: DMatrix<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    pub model: TwoPhotonModel,
    pub pulse: PulseShape,
    pub lattice: Lattice,
    pub n_eff: f64,
    /// Centres of the retarded exit-time bins, shared by both axes.
    pub times: Vec<f64>,
    pub bin_width: f64,
    /// E↑↓(x, y): spin-up photon leaving at x, spin-down photon at y (bin averages).
    pub flipped: DMatrix<Complex64>,
    /// Symmetric labelled amplitude with both photons leaving spin-down.
    pub both_down: DMatrix<Complex64>,
    /// Bin averages of the incoming envelope h.
    pub pulse_bins: Vec<f64>,
    pub interior: InteriorGrids,
    pub ledger: TwoPhotonLedger,
}

impl TwoPhotonState {
    /// ∫∫|E↑↓|².
    pub fn flip_probability(&self) -> f64 {
        self.flipped.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.bin_width * self.bin_width
    }

    pub fn both_down_probability(&self) -> f64 {
        0.5 * self.both_down.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.bin_width * self.bin_width
    }

    /// |⟨√2 h⊗h, E↓↓⟩|² / (‖√2 h⊗h‖²‖E↓↓‖²) on the bin grid.
    pub fn product_fidelity(&self) -> f64 {
        let h = &self.pulse_bins;
        let n = h.len();
        let (mut ov, mut ne, mut no) = (ZERO, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let e = 2f64.sqrt() * h[i] * h[j];
                let o = self.both_down[(i, j)];
                ov += o * e;
                ne += e * e;
                no += o.norm_sqr();
            }
        }
        if ne == 0.0 || no == 0.0 {
            return 0.0;
        }
        ov.norm_sqr() / (ne * no)
    }
}

/// Divisor of `n` closest to `target`.
fn nearest_divisor(n: usize, target: usize) -> usize {
    (1..=n).filter(|d| n % d == 0).min_by_key(|&d| d.abs_diff(target)).unwrap_or(1)
}

struct Schedule {
    /// (step, h) for every spin-down injection.
    entries: Vec<(usize, f64)>,
    /// tail[k] = Σ_{k' ≥ k} |ε_{k'}|².
    tail: Vec<f64>,
    stride_down: usize,
}

impl Schedule {
    fn new(lat: &Lattice, pulse: &PulseShape, t_start: f64) -> Self {
        let sd = lat.stride[Channel::Down.index()];
        let t_last = pulse.t0 + PULSE_SIGMAS * pulse.dt;
        let w = sd as f64 * lat.dt;
        let entries: Vec<(usize, f64)> = (0..)
            .map(|k| (k + 1) * sd - 1)
            .map(|m| (m, t_start + lat.crossing_time(Channel::Down, m)))
            .take_while(|&(_, t)| t <= t_last)
            .map(|(m, t)| (m, pulse.amplitude(t)))
            .collect();
        let mut tail = vec![0.0; entries.len() + 1];
        for k in (0..entries.len()).rev() {
            tail[k] = tail[k + 1] + entries[k].1 * entries[k].1 * w;
        }
        Self { entries, tail, stride_down: sd }
    }

    fn at(&self, step: usize) -> Option<usize> {
        let k = (step + 1) / self.stride_down;
        ((step + 1) % self.stride_down == 0 && k >= 1 && k <= self.entries.len()).then(|| k - 1)
    }

    /// Index of the first entry at or after `step`.
    fn first_from(&self, step: usize) -> usize {
        (step / self.stride_down).min(self.entries.len())
    }

    /// Probability that a labelled photon enters after `step`.
    fn remaining_after(&self, step: usize) -> f64 {
        self.tail[self.first_from(step + 1)]
    }
}

/// First step at or after `from` in which `ch` advects.
fn next_advect(lat: &Lattice, ch: Channel, from: usize) -> usize {
    let s = lat.stride[ch.index()];
    (from + 1).div_ceil(s) * s - 1
}

/// Output accumulators on the bin grid.
struct Records {
    count: usize,
    /// Σ f·√(w↑w↓) per (x, y) bin.
    flipped: Vec<Complex64>,
    /// Σ f·w↓ per (later exit, first exit) bin.
    down: Vec<Complex64>,
    w_flip: f64,
    w_down: f64,
    flux_up: f64,
    flux_down: f64,
}

impl Records {
    fn add_flip(&mut self, bx: usize, by: usize, f: Complex64) {
        self.flipped[bx * self.count + by] += f * self.w_flip;
    }

    fn add_down(&mut self, bx: usize, by: usize, f: Complex64) {
        self.down[bx * self.count + by] += f * self.w_down;
    }
}

/// Partners of one closed first-exit bin: the amplitude held when the bin
/// closed, and the entries that follow.
struct PartnerLine {
    by: usize,
    held: Line,
    later: Line,
    /// Coefficient of the injected envelope fed to `later` at every entry.
    beta: Complex64,
    /// Weights of |held|², |later|² and held·later* in the sum of slot probabilities.
    w_held: f64,
    w_later: f64,
    w_cross: Complex64,
}

impl PartnerLine {
    fn weight(&self, h: Complex64, l: Complex64) -> f64 {
        self.w_held * h.norm_sqr() + self.w_later * l.norm_sqr() + 2.0 * (self.w_cross * h * l.conj()).re
    }

    /// Mixes both lines; returns the weighted Σ|ψ|².
    fn mix(&mut self, c: &[Complex64]) -> f64 {
        let nh = self.held.mix(c);
        let nl = self.later.mix(c);
        let cross: Complex64 = self.held.cells.iter().flatten().zip(self.later.cells.iter().flatten()).map(|(h, l)| h * l.conj()).sum();
        self.w_held * nh + self.w_later * nl + 2.0 * (self.w_cross * cross).re
    }

    fn is_empty(&self) -> bool {
        self.held.norm_sqr() == 0.0 && self.later.norm_sqr() == 0.0
    }
}

/// Partners of the first exits in the open line bin, one line per spin-down exit.
struct Slots {
    bin: Option<usize>,
    lines: Vec<Line>,
    /// Single-photon amplitude that left spin-down in each slot.
    phi: Vec<Complex64>,
}

impl Slots {
    /// Merges the open bin into one shared partner line.
    fn flush(&mut self, sub: usize, n: usize, out: &mut Vec<PartnerLine>) -> bool {
        let Some(lb) = self.bin.take() else { return false };
        let mut held = Line::new(n);
        for l in &self.lines {
            for (m, c) in held.cells.iter_mut().zip(&l.cells) {
                m.iter_mut().zip(c).for_each(|(m, c)| *m += c);
            }
        }
        let coh = held.norm_sqr();
        let beta: Complex64 = self.phi.iter().sum();
        let gamma: f64 = self.phi.iter().map(|z| z.norm_sqr()).sum();
        let (mut inc, mut w_cross) = (0.0, ZERO);
        for (l, e) in self.lines.iter_mut().zip(&self.phi) {
            inc += l.norm_sqr();
            if coh > 0.0 && gamma > 0.0 {
                let proj: Complex64 = held.cells.iter().flatten().zip(l.cells.iter().flatten()).map(|(h, x)| h.conj() * x).sum();
                w_cross += proj / coh * (e / beta).conj();
            }
            l.cells.iter_mut().for_each(|c| c.fill(ZERO));
        }
        self.phi.fill(ZERO);
        if coh == 0.0 && gamma == 0.0 {
            return false;
        }
        out.push(PartnerLine {
            by: lb / sub,
            held,
            later: Line::new(n),
            beta,
            w_held: if coh > 0.0 { inc / coh } else { 0.0 },
            w_later: if gamma > 0.0 { gamma / beta.norm_sqr() } else { 0.0 },
            w_cross,
        });
        true
    }
}

/// Applies the local interaction to all three grids; returns Σ(|S|²+|A|²+|B|²).
fn mix_interior(s: &mut Field2, a: &mut Field2, b: &mut Field2, exps: &[Exp3]) -> f64 {
    let n = s.n;
    let mut acc = 0.0;
    for i in 0..n {
        let rs = ((i + s.off[0]) % n) * n;
        let ra = ((i + a.off[0]) % n) * n;
        let rb = ((i + b.off[0]) % n) * n;
        let (mut cs, mut ca, mut cb) = (s.off[1] % n, a.off[1] % n, b.off[1] % n);
        for m in &exps[i * n..(i + 1) * n] {
            let (ks, ka, kb) = (rs + cs, ra + ca, rb + cb);
            let (x, y, z) = (s.data[ks], a.data[ka], b.data[kb]);
            if x != ZERO || y != ZERO || z != ZERO {
                let nx = m[0] * x + m[1] * y + m[2] * z;
                let ny = m[1] * x + m[3] * y + m[4] * z;
                let nz = m[2] * x + m[4] * y + m[5] * z;
                s.data[ks] = nx;
                a.data[ka] = ny;
                b.data[kb] = nz;
                acc += nx.norm_sqr() + ny.norm_sqr() + nz.norm_sqr();
            }
            cs = if cs + 1 == n { 0 } else { cs + 1 };
            ca = if ca + 1 == n { 0 } else { ca + 1 };
            cb = if cb + 1 == n { 0 } else { cb + 1 };
        }
    }
    acc
}

fn exchange_defect(s: &Field2, a: &Field2, b: &Field2) -> f64 {
    let n = s.n;
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            d = d.max((a.get(i, j) - b.get(j, i)).norm()).max((s.get(i, j) - s.get(j, i)).norm());
        }
    }
    d
}

/// Two photons in the product pulse h⊗h scattering off the atom prepared spin-up.
pub fn evolve_two_photon(model: &TwoPhotonModel, pulse: &PulseShape, grid: &TwoPhotonGrid) -> Result<TwoPhotonState> {
    let lat = model.lattice(grid)?;
    let n = lat.cells;
    let (sd, su) = (lat.stride[Channel::Down.index()], lat.stride[Channel::Up.index()]);
    let (dz, dt, vd) = (lat.dz, lat.dt, lat.velocity(Channel::Down));
    let u = model.potential_cells(&lat);
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("potential is not finite on the lattice".into()));
    }

    let t_start = pulse.t0 - PULSE_SIGMAS * pulse.dt;
    let sched = Schedule::new(&lat, pulse, t_start);
    let last_entry = sched.entries.last().map_or(0, |e| e.0);
    let steps = last_entry + (n + 2) * (sd + su) + 1;

    let pulse_steps = pulse.dt / dt;
    let base = lcm(sd, su);
    let width = base * ((pulse_steps / (grid.bins_per_pulse * base) as f64).round() as usize).max(1);
    let per_bin = width / sd;
    let target = (width as f64 * grid.line_bins_per_pulse as f64 / pulse_steps).round().max(1.0) as usize;
    let sub = nearest_divisor(per_bin, target);
    let origin = -(((n * su / width + 2) * width) as i64);
    let count = ((steps + n * sd) as i64 - origin) as usize / width + 2;
    let bins = Bins { width, sub, origin };
    let slot_count = per_bin / sub;
    let slot_width = width / sub;

    let c16 = std::mem::size_of::<Complex64>();
    let needed = 3 * n * n * c16
        + n * n * std::mem::size_of::<Exp3>()
        + 2 * count * count * c16
        + (2 * count * sub + slot_count) * 2 * n * c16;
    if needed > grid.memory_cap {
        return Err(Error::MemoryCap { needed, cap: grid.memory_cap });
    }
    log::debug!("two-photon lattice {n}², strides {sd}/{su}, {steps} steps, {count} bins of {width} steps, {slot_count} slots per line bin");

    let exps: Vec<Exp3> = (0..n * n).map(|k| interaction_exponential(u[k / n], u[k % n], dt)).collect();
    let line_mix = mixing_coefficients(&u, dt);
    let (mut s, mut a, mut b) = (Field2::new(n), Field2::new(n), Field2::new(n));
    let mut phi = Line::new(n);
    let mut slots = Slots { bin: None, lines: (0..slot_count).map(|_| Line::new(n)).collect(), phi: vec![ZERO; slot_count] };
    let mut partners: Vec<PartnerLine> = Vec::new();
    let mut created = 0;
    let mut rec = Records {
        count,
        flipped: vec![ZERO; count * count],
        down: vec![ZERO; count * count],
        w_flip: ((sd * su) as f64).sqrt() * dt,
        w_down: sd as f64 * dt,
        flux_up: 0.0,
        flux_down: 0.0,
    };

    let sq2 = std::f64::consts::SQRT_2;
    let sqdz = dz.sqrt();
    let eps_scale = (sd as f64 * dt).sqrt();
    let injected = sched.tail[0];
    let (ret_d, ret_u) = ((n * sd) as i64, (n * su) as i64);
    let mut phi_down_out = 0.0;
    let mut exch: f64 = 0.0;
    let mut max_defect: f64 = 0.0;
    let mut ex1 = vec![ZERO; n];
    let mut ex2 = vec![ZERO; n];
    let mut cur = 0;

    for step in 0..steps {
        let (adv_d, adv_u) = (lat.advects(Channel::Down, step), lat.advects(Channel::Up, step));
        let h = sched.at(step).map_or(0.0, |k| sched.entries[k].1);
        let g = Complex64::new(sq2 * h / vd.sqrt(), 0.0);
        let r = step as i64;

        if adv_d {
            let lb = bins.line(r - ret_d);
            if slots.bin != Some(lb) {
                created += usize::from(slots.flush(sub, n, &mut partners));
                slots.bin = Some(lb);
            }
            cur = ((r - ret_d - origin) as usize % slot_width) / sd;
        }

        // shifts along z₁ with ghosts from the single-photon line before its own advection
        if adv_d {
            s.shift_z1(|j| g * phi.cells[0][j], &mut ex1);
            b.shift_z1(|j| g * phi.cells[1][j], &mut ex2);
            // both photons leave this step; the corner has no mirror partner
            let by = bins.output(r - ret_d);
            let corner = std::mem::take(&mut ex1[n - 1]);
            if corner != ZERO {
                rec.add_down(by, by, corner * (0.5 * dz));
                rec.flux_down += 0.5 * corner.norm_sqr() * dz * dz;
            }
            if adv_u {
                let corner = std::mem::take(&mut ex2[n - 1]);
                if corner != ZERO {
                    rec.add_flip(bins.output(r - ret_u), by, corner * (0.5 * dz));
                    rec.flux_up += 0.5 * corner.norm_sqr() * dz * dz;
                }
            }
            let line = &mut slots.lines[cur];
            for j in 0..n {
                line.cells[0][j] += ex1[j] * (0.5 * sqdz);
                line.cells[1][j] += ex2[j] * (0.5 * sqdz);
            }
        }
        if adv_u {
            a.shift_z1(|_| ZERO, &mut ex1);
            let bx = bins.output(r - ret_u);
            let first = next_advect(&lat, Channel::Down, step);
            for (j, x) in ex1.iter().enumerate().filter(|(_, x)| **x != ZERO) {
                let by = bins.output((first + (n - 1 - j) * sd) as i64 - ret_d);
                rec.add_flip(bx, by, x * (0.5 * dz));
                rec.flux_up += 0.5 * x.norm_sqr() * dz * dz;
            }
        }

        // single-photon line and its exits
        let [down, up] = phi.advect(&lat, step, Complex64::new(h / vd.sqrt(), 0.0));
        if let Some(c) = down.filter(|c| *c != ZERO) {
            slots.phi[cur] = c * sqdz;
            phi_down_out += c.norm_sqr() * dz;
        }
        if let Some(c) = up.filter(|c| *c != ZERO) {
            let e = c * sqdz;
            let bx = bins.output(r - ret_u);
            let k0 = sched.first_from(step);
            for &(m, hm) in &sched.entries[k0..] {
                let half = if m == step { 0.5 } else { 1.0 };
                rec.add_flip(bx, bins.output(m as i64), e * (half * sq2 * hm * eps_scale));
            }
            let own = sched.entries.get(k0).filter(|e| e.0 == step).map_or(0.0, |e| e.1 * e.1 * (sd as f64 * dt));
            rec.flux_up += 2.0 * e.norm_sqr() * (sched.tail[k0] - 0.5 * own);
        }

        // partners of first exits, resolved per slot in the open bin
        if let Some(lb) = slots.bin {
            let by = lb / sub;
            for (k, line) in slots.lines.iter_mut().enumerate() {
                let half = if adv_d && k == cur { 0.5 } else { 1.0 };
                let [dn, upx] = line.advect(&lat, step, g * slots.phi[k] * half);
                if let Some(c) = upx.filter(|c| *c != ZERO) {
                    let f = c * sqdz;
                    rec.add_flip(bins.output(r - ret_u), by, f);
                    rec.flux_up += f.norm_sqr();
                }
                if let Some(c) = dn.filter(|c| *c != ZERO) {
                    let f = c * sqdz;
                    rec.add_down(bins.output(r - ret_d), by, f);
                    rec.flux_down += f.norm_sqr();
                }
            }
        }
        for p in &mut partners {
            let held = p.held.advect(&lat, step, ZERO);
            let later = p.later.advect(&lat, step, g * p.beta);
            for ((h, l), ch) in held.into_iter().zip(later).zip(Channel::BOTH) {
                let (Some(h), Some(l)) = (h, l) else { continue };
                if h == ZERO && l == ZERO {
                    continue;
                }
                let f = (h + l) * sqdz;
                let q = p.weight(h, l) * dz;
                match ch {
                    Channel::Up => {
                        rec.add_flip(bins.output(r - ret_u), p.by, f);
                        rec.flux_up += q;
                    }
                    Channel::Down => {
                        rec.add_down(bins.output(r - ret_d), p.by, f);
                        rec.flux_down += q;
                    }
                }
            }
        }

        // shifts along z₂ with ghosts from the advanced single-photon line
        if adv_d {
            s.shift_z2(|i| g * phi.cells[0][i], &mut ex1);
            a.shift_z2(|i| g * phi.cells[1][i], &mut ex2);
            let line = &mut slots.lines[cur];
            for i in 0..n {
                line.cells[0][i] += ex1[i] * (0.5 * sqdz);
                line.cells[1][i] += ex2[i] * (0.5 * sqdz);
            }
        }
        if adv_u {
            b.shift_z2(|_| ZERO, &mut ex1);
            let bx = bins.output(r - ret_u);
            let first = next_advect(&lat, Channel::Down, step + 1);
            for (i, x) in ex1.iter().enumerate().filter(|(_, x)| **x != ZERO) {
                let by = bins.output((first + (n - 1 - i) * sd) as i64 - ret_d);
                rec.add_flip(bx, by, x * (0.5 * dz));
                rec.flux_up += 0.5 * x.norm_sqr() * dz * dz;
            }
        }

        // interaction
        let interior = mix_interior(&mut s, &mut a, &mut b, &exps);
        let phi_norm = phi.mix(&line_mix);
        let slot_norm: f64 = slots.lines.iter_mut().map(|l| l.mix(&line_mix)).sum();
        let partner_norm: f64 = partners.iter_mut().map(|p| p.mix(&line_mix)).sum();

        let rest = sched.remaining_after(step);
        let total = rest * rest
            + 2.0 * rest * (phi_norm * dz + phi_down_out)
            + 0.5 * interior * dz * dz
            + (slot_norm + partner_norm) * dz
            + rec.flux_up
            + rec.flux_down;
        max_defect = max_defect.max((total - injected * injected).abs());
        if step % n == 0 {
            exch = exch.max(exchange_defect(&s, &a, &b));
        }
        if step % 64 == 0 {
            partners.retain(|p| !p.is_empty() || (p.beta != ZERO && step < last_entry));
        }
    }
    exch = exch.max(exchange_defect(&s, &a, &b));
    if max_defect > NORM_TOL {
        return Err(Error::Invariant(format!("two-photon norm defect {max_defect:e} exceeds {NORM_TOL:e}")));
    }

    let bw = width as f64 * dt;
    let inv = 1.0 / (bw * bw);
    let flipped = DMatrix::from_fn(count, count, |i, j| rec.flipped[i * count + j] * inv);
    let both_down = DMatrix::from_fn(count, count, |i, j| (rec.down[i * count + j] + rec.down[j * count + i]) * inv);
    let times: Vec<f64> = (0..count).map(|k| t_start + ((origin + (k * width) as i64) as f64 + 0.5 * width as f64 - 0.5) * dt).collect();
    let pulse_bins: Vec<f64> = (0..count)
        .map(|k| {
            let lo = origin + (k * width) as i64;
            (0..per_bin)
                .map(|e| {
                    let m = lo + (sd - 1 + e * sd) as i64;
                    pulse.amplitude(t_start + (m as f64 + 0.5 - 0.5 * sd as f64) * dt)
                })
                .sum::<f64>()
                / per_bin as f64
        })
        .collect();

    Ok(TwoPhotonState {
        model: *model,
        pulse: *pulse,
        lattice: lat,
        n_eff: model.photon_density(pulse),
        times,
        bin_width: bw,
        flipped,
        both_down,
        pulse_bins,
        interior: InteriorGrids { both_down: s.to_matrix(), first_up: a.to_matrix(), second_up: b.to_matrix() },
        ledger: TwoPhotonLedger {
            max_norm_defect: max_defect,
            spin_up_flux: rec.flux_up,
            spin_down_flux: rec.flux_down,
            exchange_defect: exch,
            steps,
            partner_lines: created,
        },
    })
}

/// ρ(x, x′) = ∫dy E↑↓(x, y)E*↑↓(x′, y) over the span of non-empty spin-up bins.
pub fn reduce_density_matrix(state: &TwoPhotonState) -> PhotonDensityMatrix {
    let f = &state.flipped;
    let filled: Vec<usize> = (0..f.nrows()).filter(|&i| f.row(i).iter().any(|z| *z != ZERO)).collect();
    let (lo, hi) = match (filled.first(), filled.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (0, 0),
    };
    let rows = f.rows(lo, hi - lo + 1);
    let w = state.bin_width;
    let rho = &rows * rows.adjoint() * Complex64::new(w, 0.0);
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let grid = QuadGrid { points: state.times[lo..=hi].to_vec(), weights: vec![w; hi - lo + 1] };
    PhotonDensityMatrix { grid, rho }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn reflecting(r2: f64, u_scale: f64) -> (TwoPhotonModel, PulseShape) {
        let g = TwoPhotonGrid::default();
        let mut m = TwoPhotonModel::exchange_target(1.0, 1.0, r2).unwrap().tuned_to_phase(FRAC_PI_2, &g).unwrap();
        m.profile.u0 *= u_scale;
        let p = m.pulse_for_density(0.1).unwrap();
        (m, p)
    }

    #[test]
    fn free_pair_leaves_unchanged() {
        let (m, p) = reflecting(1.0, 0.0);
        let st = evolve_two_photon(&m, &p, &TwoPhotonGrid::default()).unwrap();
        assert_eq!(st.ledger.spin_up_flux, 0.0);
        assert_eq!(st.flip_probability(), 0.0);
        assert!(st.flipped.iter().all(|z| *z == ZERO));
        assert!(st.product_fidelity() > 0.999, "{}", st.product_fidelity());
        assert!(st.ledger.max_norm_defect < 1e-10);
        assert!((st.ledger.spin_down_flux - 1.0).abs() < 1e-9);
        assert_eq!(reduce_density_matrix(&st).trace(), 0.0);
    }

    #[test]
    fn full_reflection_leaves_two_thirds_purity() {
        let (m, p) = reflecting(1.0, 1.0);
        let g = TwoPhotonGrid::default();
        assert!((m.steady_state(&g).unwrap().r_coeff.norm_sqr() - 1.0).abs() < 1e-12);
        let st = evolve_two_photon(&m, &p, &g).unwrap();
        let rho = reduce_density_matrix(&st);
        let purity = rho.purity().unwrap();
        assert!((purity - 2.0 / 3.0).abs() < 0.05, "{purity}");
        assert!((rho.trace() - st.ledger.spin_up_flux).abs() < 1e-3, "{} {}", rho.trace(), st.ledger.spin_up_flux);
        assert!(st.ledger.max_norm_defect < NORM_TOL);
        assert!(st.ledger.exchange_defect < 1e-12);
        assert!(rho.hermiticity_defect() < 1e-12);
        assert!(rho.min_eigenvalue() > -1e-10);
        let total = st.ledger.spin_up_flux + st.ledger.spin_down_flux;
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn exchange_target_hits_requested_reflection() {
        let g = TwoPhotonGrid::default();
        for r2 in [0.1, 0.5, 0.9] {
            let m = TwoPhotonModel::exchange_target(1.0, 1.0, r2).unwrap().tuned_to_phase(FRAC_PI_2, &g).unwrap();
            let l = m.lattice(&g).unwrap();
            let k = l.velocity(Channel::Down) / l.velocity(Channel::Up);
            let c = m.steady_state(&g).unwrap();
            assert!((c.r_coeff.norm_sqr() - 4.0 * k / (1.0 + k).powi(2)).abs() < 1e-12);
            assert!((c.r_coeff.norm_sqr() - r2).abs() < 0.015, "{r2}");
            assert!((m.lattice_phase(&g).unwrap() - FRAC_PI_2).abs() < 1e-12);
        }
        assert!(TwoPhotonModel::exchange_target(1.0, 1.0, 0.0).is_err());
        assert!(TwoPhotonModel::exchange_target(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn density_round_trips_through_the_pulse() {
        let m = TwoPhotonModel::exchange_target(2.0, 3.0, 0.5).unwrap();
        let p = m.pulse_for_density(0.1).unwrap();
        assert!((m.photon_density(&p) - 0.1).abs() < 1e-12);
        assert!((p.dt - 20.0 * m.rc / m.v_down).abs() < 1e-12);
        assert!(m.pulse_for_density(0.0).is_err());
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let (m, p) = reflecting(0.5, 1.0);
        let g = TwoPhotonGrid { cells: MIN_CELLS - 1, ..Default::default() };
        assert!(matches!(evolve_two_photon(&m, &p, &g), Err(Error::Param { .. })));
        let g = TwoPhotonGrid { memory_cap: 1 << 20, ..Default::default() };
        assert!(matches!(evolve_two_photon(&m, &p, &g), Err(Error::MemoryCap { .. })));
        let fast_up = TwoPhotonModel { v_up: 2.0 * m.v_down, ..m };
        assert!(fast_up.lattice(&TwoPhotonGrid::default()).is_err());
    }

    #[test]
    fn single_channel_exponential_matches_line_mixing() {
        let (u, tau) = (0.7, 0.3);
        let m = interaction_exponential(u, 0.0, tau);
        let c = mixing_coefficients(&[u], tau)[0];
        let one = Complex64::new(1.0, 0.0);
        for (got, want) in m.iter().zip([one + c, c, ZERO, one + c, ZERO, one]) {
            assert!((got - want).norm() < 1e-12, "{got} {want}");
        }
    }

    proptest! {
        #[test]
        fn interaction_exponential_is_unitary(u1 in 0.0..3.0f64, u2 in 0.0..3.0f64, tau in 0.01..2.0f64) {
            let e = interaction_exponential(u1, u2, tau);
            let m = Matrix3::new(e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5]);
            let d = m * m.adjoint() - Matrix3::identity();
            prop_assert!(d.iter().all(|z| z.norm() < 1e-12));
            let swapped = interaction_exponential(u2, u1, tau);
            for (a, b) in [(0, 0), (1, 2), (3, 5), (4, 4)] {
                prop_assert!((e[a] - swapped[b]).norm() < 1e-12);
            }
        }

        #[test]
        fn field_shifts_move_one_cell(pick in 0usize..16, ghost in -1.0..1.0f64) {
            let n = 4;
            let mut f = Field2::new(n);
            for k in 0..n * n {
                let i = f.index(k / n, k % n);
                f.data[i] = Complex64::new(k as f64, 0.0);
            }
            let (i0, j0) = (pick / n, pick % n);
            let before = f.get(i0, j0);
            let mut exits = vec![ZERO; n];
            f.shift_z1(|_| Complex64::new(ghost, 0.0), &mut exits);
            prop_assert_eq!(exits[j0], Complex64::new(((n - 1) * n + j0) as f64, 0.0));
            prop_assert_eq!(f.get(0, j0), Complex64::new(ghost, 0.0));
            if i0 + 1 < n {
                prop_assert_eq!(f.get(i0 + 1, j0), before);
            }
            let mid = f.get(i0, j0);
            f.shift_z2(|_| ZERO, &mut exits);
            if j0 + 1 < n {
                prop_assert_eq!(f.get(i0, j0 + 1), mid);
            }
            prop_assert_eq!(f.get(i0, 0), ZERO);
        }
    }

    #[test]
    fn integer_helpers() {
        assert_eq!(lcm(4, 6), 12);
        assert_eq!(lcm(1, 38), 38);
        assert_eq!(nearest_divisor(38, 10), 2);
        assert_eq!(nearest_divisor(12, 5), 4);
        let l = Lattice::new(&LatticeSpec { cells: 10, length: 1.0, v_down: 4.0, v_up: 1.0, courant: 1.0, snap_denominator: Some(4) }).unwrap();
        assert_eq!(next_advect(&l, Channel::Up, 0), 3);
        assert_eq!(next_advect(&l, Channel::Up, 3), 3);
        assert_eq!(next_advect(&l, Channel::Up, 4), 7);
    }
}
