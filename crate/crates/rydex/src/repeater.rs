//! Exact few-mode model of heralded entanglement distribution between
//! control atoms: collisions, a balanced beam splitter, polarisation-resolved
//! on/off detection and entanglement swapping.
//!
//! Detectors D1..D4 register the modes b↓, b↑, a↓, a↑.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scatter1d::ScatterCoeffs;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }
}

/// Optical mode, ordered as the detectors D1..D4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    BDown,
    BUp,
    ADown,
    AUp,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::BDown, Mode::BUp, Mode::ADown, Mode::AUp];

    pub fn new(arm: Arm, spin: Spin) -> Self {
        match (arm, spin) {
            (Arm::B, Spin::Down) => Mode::BDown,
            (Arm::B, Spin::Up) => Mode::BUp,
            (Arm::A, Spin::Down) => Mode::ADown,
            (Arm::A, Spin::Up) => Mode::AUp,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn detector(self) -> usize {
        self.index() + 1
    }

    fn arm(self) -> Arm {
        match self {
            Mode::BDown | Mode::BUp => Arm::B,
            Mode::ADown | Mode::AUp => Arm::A,
        }
    }

    fn spin(self) -> Spin {
        match self {
            Mode::BDown | Mode::ADown => Spin::Down,
            Mode::BUp | Mode::AUp => Spin::Up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

/// Photon and atom after one collision, amplitudes indexed [photon spin][atom spin].
/// The missing norm is the photon-loss probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomPhoton {
    pub amp: [[Complex64; 2]; 2],
}

impl AtomPhoton {
    pub fn norm_sqr(&self) -> f64 {
        self.amp.iter().flatten().map(|a| a.norm_sqr()).sum()
    }

    pub fn loss(&self) -> f64 {
        (1.0 - self.norm_sqr()).max(0.0)
    }

    pub fn amplitude(&self, photon: Spin, atom: Spin) -> Complex64 {
        self.amp[photon.index()][atom.index()]
    }

    /// Conditioned on photon survival.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::Domain("photon never survives".into()));
        }
        let mut amp = self.amp;
        amp.iter_mut().flatten().for_each(|a| *a /= n);
        Ok(Self { amp })
    }
}

/// Single collision of a photon with the atom.
pub fn collide(atom: Spin, photon: Spin, coeffs: &ScatterCoeffs) -> Result<AtomPhoton> {
    let p = coeffs.t_coeff.norm_sqr() + coeffs.r_coeff.norm_sqr();
    if p > 1.0 + NORM_TOL {
        return Err(Error::Invariant(format!("survival probability {p} exceeds 1")));
    }
    let mut amp = [[ZERO; 2]; 2];
    match (photon, atom) {
        (Spin::Down, Spin::Up) => {
            amp[Spin::Down.index()][Spin::Up.index()] = coeffs.t_coeff;
            amp[Spin::Up.index()][Spin::Down.index()] = coeffs.r_coeff;
        }
        (Spin::Down, Spin::Down) | (Spin::Up, Spin::Up) => amp[photon.index()][atom.index()] = ONE,
        (Spin::Up, Spin::Down) => {
            return Err(Error::Domain("coefficients describe a spin-down photon on a spin-up atom".into()))
        }
    }
    Ok(AtomPhoton { amp })
}

/// Branch label: photon occupations (D1..D4 order), atomic spins (a, b), lost-photon mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Branch {
    pub occ: [u8; 4],
    pub atoms: [Spin; 2],
    pub lost: u8,
}

impl Branch {
    pub fn photons(&self) -> u8 {
        self.occ.iter().sum()
    }
}

/// Two-node state as a superposition of occupation-number branches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RepeaterState {
    pub branches: BTreeMap<Branch, Complex64>,
}

fn factorial(n: u8) -> f64 {
    (1..=n as u32).product::<u32>() as f64
}

impl RepeaterState {
    /// Photons from node a and node b enter arms A and B; lost photons leave
    /// their atom in the pre-collision spin.
    pub fn from_nodes(a: &AtomPhoton, b: &AtomPhoton) -> Self {
        let arms = |n: &AtomPhoton, arm: Arm| {
            let mut out: Vec<(Option<Mode>, Spin, Complex64)> = Vec::new();
            for ps in [Spin::Up, Spin::Down] {
                for at in [Spin::Up, Spin::Down] {
                    let amp = n.amplitude(ps, at);
                    if amp != ZERO {
                        out.push((Some(Mode::new(arm, ps)), at, amp));
                    }
                }
            }
            if n.loss() > 0.0 {
                out.push((None, Spin::Up, Complex64::new(n.loss().sqrt(), 0.0)));
            }
            out
        };
        let mut s = Self::default();
        for (ma, sa, xa) in arms(a, Arm::A) {
            for (mb, sb, xb) in arms(b, Arm::B) {
                let mut occ = [0u8; 4];
                let mut lost = 0u8;
                match ma {
                    Some(m) => occ[m.index()] += 1,
                    None => lost |= 1,
                }
                match mb {
                    Some(m) => occ[m.index()] += 1,
                    None => lost |= 2,
                }
                let k = Branch { occ, atoms: [sa, sb], lost };
                *s.branches.entry(k).or_insert(ZERO) += xa * xb;
            }
        }
        s
    }

    pub fn norm_sqr(&self) -> f64 {
        self.branches.values().map(|a| a.norm_sqr()).sum()
    }

    /// Applies a†→(a†+e^{iφ}b†)/√2, b†→(b†−e^{−iφ}a†)/√2 per spin.
    pub fn beam_splitter(&self, phi: f64) -> Self {
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        let image = |m: Mode| -> [(Mode, Complex64); 2] {
            let (a, b) = (Mode::new(Arm::A, m.spin()), Mode::new(Arm::B, m.spin()));
            match m.arm() {
                Arm::A => [(a, Complex64::new(s2, 0.0)), (b, Complex64::from_polar(s2, phi))],
                Arm::B => [(b, Complex64::new(s2, 0.0)), (a, -Complex64::from_polar(s2, -phi))],
            }
        };
        let mut out = Self::default();
        for (k, &amp) in &self.branches {
            let ops: Vec<Mode> = Mode::ALL
                .iter()
                .flat_map(|&m| std::iter::repeat(m).take(k.occ[m.index()] as usize))
                .collect();
            let norm_in: f64 = k.occ.iter().map(|&n| factorial(n)).product::<f64>().sqrt();
            let mut terms: Vec<([u8; 4], Complex64)> = vec![([0; 4], amp / norm_in)];
            for op in ops {
                terms = terms
                    .into_iter()
                    .flat_map(|(occ, c)| {
                        image(op).into_iter().map(move |(m, u)| {
                            let mut o = occ;
                            o[m.index()] += 1;
                            (o, c * u)
                        })
                    })
                    .collect();
            }
            for (occ, c) in terms {
                let norm_out: f64 = occ.iter().map(|&n| factorial(n)).product::<f64>().sqrt();
                let key = Branch { occ, ..*k };
                *out.branches.entry(key).or_insert(ZERO) += c * norm_out;
            }
        }
        out.branches.retain(|_, a| a.norm_sqr() > 1e-30);
        out
    }
}

/// Set of clicking detectors as a bitmask over D1..D4 (bit 0 = D1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClickPattern(pub u8);

impl ClickPattern {
    pub fn from_detectors(ds: &[usize]) -> Self {
        Self(ds.iter().fold(0u8, |m, &d| m | 1 << (d - 1)))
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0u8..16).map(Self)
    }

    pub fn detectors(self) -> Vec<usize> {
        (0..4).filter(|i| self.0 >> i & 1 == 1).map(|i| i + 1).collect()
    }

    pub fn class(self) -> HeraldClass {
        match self.detectors().as_slice() {
            [1, 2] | [3, 4] => HeraldClass::PhiPlus,
            [1, 4] | [2, 3] => HeraldClass::PhiMinus,
            _ => HeraldClass::Discard,
        }
    }

    /// Probability of this pattern for given occupations and detector efficiency.
    fn likelihood(self, occ: &[u8; 4], efficiency: f64) -> f64 {
        (0..4)
            .map(|i| {
                let miss = (1.0 - efficiency).powi(occ[i] as i32);
                if self.0 >> i & 1 == 1 {
                    1.0 - miss
                } else {
                    miss
                }
            })
            .product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeraldClass {
    PhiPlus,
    PhiMinus,
    Discard,
}

/// Two-atom basis index for spins (a, b): ↑↑, ↑↓, ↓↑, ↓↓.
fn atom_index(s: [Spin; 2]) -> usize {
    2 * s[0].index() + s[1].index()
}

pub fn bell_state(class: HeraldClass) -> Option<Vector4<Complex64>> {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let sign = match class {
        HeraldClass::PhiPlus => h,
        HeraldClass::PhiMinus => -h,
        HeraldClass::Discard => return None,
    };
    let mut v = Vector4::zeros();
    v[atom_index([Spin::Up, Spin::Down])] = h;
    v[atom_index([Spin::Down, Spin::Up])] = sign;
    Some(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Herald {
    pub probability: f64,
    /// Conditional two-atom state; `None` when the pattern cannot occur.
    pub atoms: Option<Matrix4<Complex64>>,
}

impl Herald {
    pub fn fidelity(&self, target: &Vector4<Complex64>) -> Option<f64> {
        self.atoms.as_ref().map(|rho| (target.adjoint() * rho * target)[(0, 0)].re)
    }
}

/// Projects onto a click pattern; returns its probability and the normalised atomic state.
pub fn herald(state: &RepeaterState, pattern: ClickPattern, efficiency: f64) -> Herald {
    let mut groups: BTreeMap<([u8; 4], u8), Vector4<Complex64>> = BTreeMap::new();
    for (k, &a) in &state.branches {
        groups.entry((k.occ, k.lost)).or_insert_with(Vector4::zeros)[atom_index(k.atoms)] += a;
    }
    let mut rho = Matrix4::<Complex64>::zeros();
    let mut prob = 0.0;
    for ((occ, _), v) in &groups {
        let l = pattern.likelihood(occ, efficiency);
        if l > 0.0 {
            prob += l * v.norm_squared();
            rho += (v * v.adjoint()) * Complex64::new(l, 0.0);
        }
    }
    let atoms = (prob > 1e-300).then(|| rho / Complex64::new(prob, 0.0));
    Herald { probability: prob, atoms }
}

/// Injects a spin-down photon on atom b of an (a, b) pair, keeps outcome b = ↓.
/// Returns the (photon, atom a) state and its probability.
pub fn swap(pair: &Vector4<Complex64>, coeffs: &ScatterCoeffs) -> Result<(AtomPhoton, f64)> {
    let mut amp = [[ZERO; 2]; 2];
    for sa in [Spin::Up, Spin::Down] {
        for sb in [Spin::Up, Spin::Down] {
            let c = pair[atom_index([sa, sb])];
            let out = collide(sb, Spin::Down, coeffs)?;
            for ps in [Spin::Up, Spin::Down] {
                amp[ps.index()][sa.index()] += c * out.amplitude(ps, Spin::Down);
            }
        }
    }
    let state = AtomPhoton { amp };
    let p = state.norm_sqr();
    if p == 0.0 {
        return Err(Error::Domain("swap outcome has zero probability".into()));
    }
    Ok((state.normalized()?, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub detectors: Vec<usize>,
    pub class: HeraldClass,
    pub probability: f64,
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub patterns: Vec<PatternReport>,
    pub phi_plus: f64,
    pub phi_minus: f64,
    pub discard: f64,
    /// Probability that at least one photon was lost (contained in `discard`).
    pub loss: f64,
}

impl StageReport {
    pub fn success(&self) -> f64 {
        self.phi_plus + self.phi_minus
    }

    pub fn total(&self) -> f64 {
        self.patterns.iter().map(|p| p.probability).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub phi: f64,
    pub detector_efficiency: f64,
    pub survival: f64,
    pub elementary: StageReport,
    /// Probability of keeping b = ↓ when swapping one Φ+ link.
    pub swap_success: f64,
    pub connection: StageReport,
    /// Two elementary links, two swaps and one connection herald.
    pub end_to_end: f64,
}

/// Interferes two node outputs and tabulates all 16 click patterns.
pub fn heralding_stage(a: &AtomPhoton, b: &AtomPhoton, phi: f64, efficiency: f64) -> StageReport {
    let state = RepeaterState::from_nodes(a, b).beam_splitter(phi);
    let loss: f64 = state.branches.iter().filter(|(k, _)| k.lost != 0).map(|(_, a)| a.norm_sqr()).sum();
    let patterns: Vec<PatternReport> = ClickPattern::all()
        .map(|p| {
            let h = herald(&state, p, efficiency);
            let class = p.class();
            let fidelity = bell_state(class).and_then(|t| h.fidelity(&t));
            PatternReport { detectors: p.detectors(), class, probability: h.probability, fidelity }
        })
        .collect();
    let sum = |c: HeraldClass| patterns.iter().filter(|p| p.class == c).map(|p| p.probability).sum();
    StageReport { phi_plus: sum(HeraldClass::PhiPlus), phi_minus: sum(HeraldClass::PhiMinus), discard: sum(HeraldClass::Discard), loss, patterns }
}

pub fn run_protocol(coeffs: &ScatterCoeffs, detector_efficiency: f64, phi: f64) -> Result<ProtocolReport> {
    if !(0.0..=1.0).contains(&detector_efficiency) {
        return Err(Error::param("detector_efficiency", format!("must lie in [0, 1], got {detector_efficiency}")));
    }
    let node = collide(Spin::Up, Spin::Down, coeffs)?;
    let elementary = heralding_stage(&node, &node, phi, detector_efficiency);
    let phi_plus = bell_state(HeraldClass::PhiPlus).expect("Bell state");
    let (swapped, swap_success) = swap(&phi_plus, coeffs)?;
    let connection = heralding_stage(&swapped, &swapped, phi, detector_efficiency);
    let end_to_end = elementary.success().powi(2) * swap_success.powi(2) * connection.success();
    Ok(ProtocolReport {
        phi,
        detector_efficiency,
        survival: node.norm_sqr(),
        elementary,
        swap_success,
        connection,
        end_to_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coeffs(t: Complex64, r: Complex64) -> ScatterCoeffs {
        ScatterCoeffs::new(t, r)
    }

    fn balanced() -> ScatterCoeffs {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        coeffs(Complex64::new(h, 0.0), Complex64::new(h, 0.0))
    }

    fn single(mode: Mode) -> RepeaterState {
        let mut occ = [0; 4];
        occ[mode.index()] = 1;
        let mut s = RepeaterState::default();
        s.branches.insert(Branch { occ, atoms: [Spin::Up, Spin::Up], lost: 0 }, ONE);
        s
    }

    #[test]
    fn collision_bookkeeping() {
        let id = collide(Spin::Up, Spin::Down, &coeffs(ONE, ZERO)).unwrap();
        assert_eq!(id.amplitude(Spin::Down, Spin::Up), ONE);
        assert_eq!(id.loss(), 0.0);
        let b = collide(Spin::Up, Spin::Down, &balanced()).unwrap();
        assert!((b.norm_sqr() - 1.0).abs() < 1e-15);
        let lossy = collide(Spin::Up, Spin::Down, &coeffs(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.6))).unwrap();
        assert!((lossy.loss() - 0.28).abs() < 1e-15);
        assert!(collide(Spin::Up, Spin::Down, &coeffs(ONE, ONE)).is_err());
        let free = collide(Spin::Down, Spin::Down, &balanced()).unwrap();
        assert_eq!(free.amplitude(Spin::Down, Spin::Down), ONE);
    }

    #[test]
    fn beam_splitter_basics() {
        assert!(RepeaterState::default().beam_splitter(0.3).branches.is_empty());
        let out = single(Mode::ADown).beam_splitter(0.7);
        assert_eq!(out.branches.len(), 2);
        assert!(out.branches.values().all(|a| (a.norm_sqr() - 0.5).abs() < 1e-15));
    }

    #[test]
    fn hong_ou_mandel_cancels_coincidences() {
        let mut s = RepeaterState::default();
        s.branches.insert(Branch { occ: [1, 0, 1, 0], atoms: [Spin::Up, Spin::Up], lost: 0 }, ONE);
        let out = s.beam_splitter(1.1);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        assert!(out.branches.keys().all(|k| k.occ.iter().any(|&n| n == 2)));
        let h = herald(&out, ClickPattern::from_detectors(&[1, 3]), 1.0);
        assert!(h.probability < 1e-30);
    }

    #[test]
    fn symmetric_collisions_herald_bell_states() {
        let r = run_protocol(&balanced(), 1.0, 0.0).unwrap();
        let e = &r.elementary;
        let p12 = e.patterns.iter().find(|p| p.detectors == [1, 2]).unwrap();
        assert!((p12.probability - 0.125).abs() < 1e-12);
        assert!((p12.fidelity.unwrap() - 1.0).abs() < 1e-12);
        assert!((e.phi_plus - 0.25).abs() < 1e-12 && (e.phi_minus - 0.25).abs() < 1e-12);
        assert!((e.total() - 1.0).abs() < 1e-12);
        let p13 = e.patterns.iter().find(|p| p.detectors == [1, 3]).unwrap();
        assert_eq!(p13.class, HeraldClass::Discard);
        assert!(p13.probability < 1e-30);
    }

    #[test]
    fn heralded_state_does_not_depend_on_the_phase() {
        let c = coeffs(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8));
        let base = run_protocol(&c, 1.0, 0.0).unwrap();
        for phi in [std::f64::consts::FRAC_PI_3, 1.7] {
            let r = run_protocol(&c, 1.0, phi).unwrap();
            for (p, q) in r.elementary.patterns.iter().zip(&base.elementary.patterns) {
                assert!((p.probability - q.probability).abs() < 1e-12);
                if let (Some(f), Some(g)) = (p.fidelity, q.fidelity) {
                    assert!((f - g).abs() < 1e-10 && (f - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn swap_probability() {
        let phi_plus = bell_state(HeraldClass::PhiPlus).unwrap();
        let (s, p) = swap(&phi_plus, &coeffs(ZERO, ONE)).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        assert!((s.amplitude(Spin::Down, Spin::Up).norm_sqr() - 0.5).abs() < 1e-15);
        let (s, p) = swap(&phi_plus, &coeffs(ONE, ZERO)).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert_eq!(s.amplitude(Spin::Up, Spin::Down), ZERO);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (s, p) = swap(&phi_plus, &coeffs(Complex64::new(h, 0.0), Complex64::new(0.0, h))).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn detector_efficiency_thins_two_click_patterns() {
        let full = run_protocol(&balanced(), 1.0, 0.4).unwrap();
        let half = run_protocol(&balanced(), 0.5, 0.4).unwrap();
        let none = run_protocol(&balanced(), 0.0, 0.4).unwrap();
        for ((f, h), z) in full.elementary.patterns.iter().zip(&half.elementary.patterns).zip(&none.elementary.patterns) {
            if f.class != HeraldClass::Discard {
                assert!((h.probability - 0.25 * f.probability).abs() < 1e-12);
                assert_eq!(z.probability, 0.0);
            }
        }
        assert!((half.elementary.total() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn probabilities_are_complete(
            tm in 0.0f64..1.0, ta in 0.0f64..6.3, rm in 0.0f64..1.0, ra in 0.0f64..6.3,
            phi in 0.0f64..6.3, eff in 0.0f64..1.0,
        ) {
            let rm = rm * (1.0 - tm * tm).sqrt();
            let c = coeffs(Complex64::from_polar(tm, ta), Complex64::from_polar(rm, ra));
            let node = collide(Spin::Up, Spin::Down, &c).unwrap();
            let before = RepeaterState::from_nodes(&node, &node);
            let after = before.beam_splitter(phi);
            prop_assert!((before.norm_sqr() - after.norm_sqr()).abs() < 1e-12);
            let r = run_protocol(&c, eff, phi).unwrap();
            prop_assert!((r.elementary.total() - 1.0).abs() < 1e-10);
            prop_assert!(r.elementary.loss <= r.elementary.discard + 1e-12);
            for p in &r.elementary.patterns {
                if let Some(f) = p.fidelity {
                    prop_assert!((f - 1.0).abs() < 1e-10);
                }
            }
            prop_assert!(after.branches.keys().all(|k| k.photons() + k.lost.count_ones() as u8 == 2));
        }
    }
}
