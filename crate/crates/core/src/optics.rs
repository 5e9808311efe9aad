//! Linear-optical gates on truncated Fock states.
//!
//! Conventions. The beamsplitter is
//! `U_BS(θ, φ) = exp[θ (e^{iφ} a†b − e^{−iφ} b†a)]` and the phase shift is
//! `exp(iφ a†a)`. A two-mode gate is described by its 2×2 mode matrix `S`
//! with `U a_j† U† = Σ_i S_ij a_i†`; for the beamsplitter
//!
//! ```text
//! S = [[ cos θ,           e^{iφ} sin θ ],
//!      [ −e^{−iφ} sin θ,  cos θ        ]]
//! ```
//!
//! which is also its single-photon block in the basis `(|1,0>, |0,1>)`. The
//! map `U -> S` is a homomorphism, so composite gates are fused on mode
//! matrices before being lifted to Fock space.
//!
//! Lifting is exact: the block for total photon number `n` is built from
//! `(S00 a† + S10 b†)^k (S01 a† + S11 b†)^(n−k) |0>` and then restricted to
//! occupations below the cutoff. Sectors with `n < cutoff` are complete and
//! unitary; higher sectors are truncated.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::fock::{FockSpace, PureState};

pub type Mat2 = Matrix2<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A single circuit element. Angles are in radians.
///
/// JSON form: `{"kind": "beam_splitter", "mode_a": 0, "mode_b": 1, "theta": 0.785, "phi": 0.0}`;
/// the other kinds are `phase_shift {mode, phi}`, `mach_zehnder {mode_a, mode_b, phi1, phi2}`
/// and `thermal_loss {mode, eta, nbar}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GateOp {
    PhaseShift {
        mode: usize,
        phi: f64,
    },
    BeamSplitter {
        mode_a: usize,
        mode_b: usize,
        theta: f64,
        phi: f64,
    },
    /// `U_BS(π/4, π/2) e^{iφ1 n_a} U_BS(π/4, π/2) e^{iφ2 n_a}`.
    MachZehnder {
        mode_a: usize,
        mode_b: usize,
        phi1: f64,
        phi2: f64,
    },
    ThermalLoss {
        mode: usize,
        eta: f64,
        nbar: f64,
    },
}

impl GateOp {
    pub fn modes(&self) -> Vec<usize> {
        match *self {
            GateOp::PhaseShift { mode, .. } | GateOp::ThermalLoss { mode, .. } => vec![mode],
            GateOp::BeamSplitter { mode_a, mode_b, .. } | GateOp::MachZehnder { mode_a, mode_b, .. } => {
                vec![mode_a, mode_b]
            }
        }
    }

    pub fn is_unitary(&self) -> bool {
        !matches!(self, GateOp::ThermalLoss { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GateOp::PhaseShift { .. } => "phase_shift",
            GateOp::BeamSplitter { .. } => "beam_splitter",
            GateOp::MachZehnder { .. } => "mach_zehnder",
            GateOp::ThermalLoss { .. } => "thermal_loss",
        }
    }

    /// Checks modes against `num_modes` and parameters for range/finiteness.
    pub fn check(&self, num_modes: usize) -> Result<()> {
        let modes = self.modes();
        for &m in &modes {
            if m >= num_modes {
                return Err(Error::ModeOutOfRange { mode: m, num_modes });
            }
        }
        if modes.len() == 2 && modes[0] == modes[1] {
            return Err(Error::DuplicateMode(modes[0]));
        }
        let finite = |name: &'static str, value: f64| {
            if value.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter { name, value })
            }
        };
        match *self {
            GateOp::PhaseShift { phi, .. } => finite("phi", phi),
            GateOp::BeamSplitter { theta, phi, .. } => finite("theta", theta).and(finite("phi", phi)),
            GateOp::MachZehnder { phi1, phi2, .. } => finite("phi1", phi1).and(finite("phi2", phi2)),
            GateOp::ThermalLoss { eta, nbar, .. } => crate::noise::check_loss_parameters(eta, nbar),
        }
    }

    /// The same gate acting `offset` modes higher.
    pub fn shifted(&self, offset: usize) -> GateOp {
        let mut g = self.clone();
        match &mut g {
            GateOp::PhaseShift { mode, .. } | GateOp::ThermalLoss { mode, .. } => *mode += offset,
            GateOp::BeamSplitter { mode_a, mode_b, .. } | GateOp::MachZehnder { mode_a, mode_b, .. } => {
                *mode_a += offset;
                *mode_b += offset;
            }
        }
        g
    }

    /// Gates realising the entrywise complex conjugate of this gate's Fock
    /// matrix, in application order. Mach-Zehnder gates are expanded because
    /// their internal `π/2` phases flip sign too.
    pub fn conjugate(&self) -> Vec<GateOp> {
        match *self {
            GateOp::PhaseShift { mode, phi } => vec![GateOp::PhaseShift { mode, phi: -phi }],
            GateOp::BeamSplitter { mode_a, mode_b, theta, phi } => {
                vec![GateOp::BeamSplitter { mode_a, mode_b, theta, phi: -phi }]
            }
            GateOp::MachZehnder { .. } => self.expand().iter().flat_map(GateOp::conjugate).collect(),
            GateOp::ThermalLoss { .. } => vec![self.clone()],
        }
    }

    /// Mach-Zehnder as phase shifts and beamsplitters in application order;
    /// other gates are returned unchanged.
    pub fn expand(&self) -> Vec<GateOp> {
        match *self {
            GateOp::MachZehnder { mode_a, mode_b, phi1, phi2 } => {
                let bs = GateOp::BeamSplitter { mode_a, mode_b, theta: FRAC_PI_4, phi: FRAC_PI_2 };
                vec![
                    GateOp::PhaseShift { mode: mode_a, phi: phi2 },
                    bs.clone(),
                    GateOp::PhaseShift { mode: mode_a, phi: phi1 },
                    bs,
                ]
            }
            _ => vec![self.clone()],
        }
    }

    /// 2×2 mode matrix on `(mode_a, mode_b)` for two-mode gates.
    pub fn pair_matrix(&self) -> Option<Mat2> {
        match *self {
            GateOp::BeamSplitter { theta, phi, .. } => Some(bs_mode_matrix(theta, phi)),
            GateOp::MachZehnder { phi1, phi2, .. } => Some(mz_mode_matrix(phi1, phi2)),
            _ => None,
        }
    }
}

pub fn bs_mode_matrix(theta: f64, phi: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    let e = Complex64::from_polar(1.0, phi);
    Mat2::new(c.into(), e * s, -e.conj() * s, c.into())
}

/// `diag(e^{iφ}, 1)`: a phase shift on the first mode of a pair.
pub fn phase_mode_matrix(phi: f64) -> Mat2 {
    Mat2::new(Complex64::from_polar(1.0, phi), ZERO, ZERO, ONE)
}

pub fn mz_mode_matrix(phi1: f64, phi2: f64) -> Mat2 {
    let b = bs_mode_matrix(FRAC_PI_4, FRAC_PI_2);
    b * phase_mode_matrix(phi1) * b * phase_mode_matrix(phi2)
}

/// Full `(n+1)×(n+1)` Fock blocks of the two-mode unitary with mode matrix
/// `s`, for `n = 0..=max_photons`. Row/column `j` is the basis state with `j`
/// photons in the first mode.
pub fn sector_matrices(s: &Mat2, max_photons: usize) -> Vec<DMatrix<Complex64>> {
    let mut out: Vec<DMatrix<Complex64>> = Vec::with_capacity(max_photons + 1);
    out.push(DMatrix::from_element(1, 1, ONE));
    // Creation-operator action on a sector-(n-1) coefficient vector.
    let raise = |c0: Complex64, c1: Complex64, prev: &[Complex64], n: usize| {
        let mut v = vec![ZERO; n + 1];
        for (j, &x) in prev.iter().enumerate() {
            v[j + 1] += c0 * ((j + 1) as f64).sqrt() * x;
            v[j] += c1 * ((n - j) as f64).sqrt() * x;
        }
        v
    };
    for n in 1..=max_photons {
        let prev = &out[n - 1];
        let mut m = DMatrix::from_element(n + 1, n + 1, ZERO);
        for k in 0..=n {
            let v = if k == 0 {
                let col: Vec<Complex64> = prev.column(0).iter().copied().collect();
                let mut v = raise(s[(0, 1)], s[(1, 1)], &col, n);
                v.iter_mut().for_each(|x| *x /= (n as f64).sqrt());
                v
            } else {
                let col: Vec<Complex64> = prev.column(k - 1).iter().copied().collect();
                let mut v = raise(s[(0, 0)], s[(1, 0)], &col, n);
                v.iter_mut().for_each(|x| *x /= (k as f64).sqrt());
                v
            };
            m.column_mut(k).copy_from_slice(&v);
        }
        out.push(m);
    }
    out
}

/// One photon-number block of a two-mode operator, restricted to the
/// occupations that fit below the cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorBlock {
    /// Total photon number `n` of the block.
    pub photons: usize,
    /// Smallest first-mode occupation kept; row `i` is occupation `first + i`.
    pub first: usize,
    pub matrix: DMatrix<Complex64>,
}

/// Block-diagonal two-mode operator on a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorBlocks {
    cutoff: usize,
    blocks: Vec<SectorBlock>,
}

impl SectorBlocks {
    pub fn from_mode_matrix(s: &Mat2, cutoff: usize) -> Result<Self> {
        if cutoff < 1 {
            return Err(Error::Cutoff { min: 1, got: cutoff });
        }
        let top = 2 * (cutoff - 1);
        let blocks = sector_matrices(s, top)
            .into_iter()
            .enumerate()
            .map(|(n, full)| {
                let first = n.saturating_sub(cutoff - 1);
                let last = n.min(cutoff - 1);
                let len = last + 1 - first;
                SectorBlock { photons: n, first, matrix: full.view((first, first), (len, len)).into_owned() }
            })
            .collect();
        Ok(Self { cutoff, blocks })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn blocks(&self) -> &[SectorBlock] {
        &self.blocks
    }

    /// Whether the block for `photons` contains every occupation split.
    pub fn is_complete(&self, photons: usize) -> bool {
        photons < self.cutoff
    }

    /// Dense `d²×d²` matrix, indexed `n_a * d + n_b`.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let d = self.cutoff;
        let mut m = DMatrix::from_element(d * d, d * d, ZERO);
        for b in &self.blocks {
            let idx = |i: usize| {
                let ja = b.first + i;
                ja * d + (b.photons - ja)
            };
            for c in 0..b.matrix.ncols() {
                for r in 0..b.matrix.nrows() {
                    m[(idx(r), idx(c))] = b.matrix[(r, c)];
                }
            }
        }
        m
    }

    fn apply(&self, space: &FockSpace, mode_a: usize, mode_b: usize, amps: &mut [Complex64]) {
        let (sa, sb) = (space.stride(mode_a), space.stride(mode_b));
        let d = self.cutoff;
        let mut input = Vec::with_capacity(d);
        let mut output = Vec::with_capacity(d);
        for base in 0..space.dim() {
            if space.occupation(base, mode_a) != 0 || space.occupation(base, mode_b) != 0 {
                continue;
            }
            for b in &self.blocks {
                let len = b.matrix.nrows();
                let at = |i: usize| {
                    let ja = b.first + i;
                    base + ja * sa + (b.photons - ja) * sb
                };
                input.clear();
                input.extend((0..len).map(|i| amps[at(i)]));
                if input.iter().all(|x| *x == ZERO) {
                    continue;
                }
                output.clear();
                output.resize(len, ZERO);
                for (c, &x) in input.iter().enumerate() {
                    if x == ZERO {
                        continue;
                    }
                    let col = b.matrix.column(c);
                    for (o, &m) in output.iter_mut().zip(col.iter()) {
                        *o += m * x;
                    }
                }
                for (i, &y) in output.iter().enumerate() {
                    amps[at(i)] = y;
                }
            }
        }
    }
}

/// Exact Fock blocks of `U_BS(θ, φ)` on a two-mode space with the given cutoff.
pub fn bs_two_mode_matrix(theta: f64, phi: f64, cutoff: usize) -> Result<SectorBlocks> {
    SectorBlocks::from_mode_matrix(&bs_mode_matrix(theta, phi), cutoff)
}

/// A gate prepared for repeated application at a fixed cutoff.
#[derive(Clone, Debug)]
pub(crate) enum Kernel {
    Phase { mode: usize, factors: Vec<Complex64> },
    TwoMode { mode_a: usize, mode_b: usize, blocks: SectorBlocks },
}

impl Kernel {
    pub(crate) fn new(gate: &GateOp, cutoff: usize) -> Result<Self> {
        match *gate {
            GateOp::ThermalLoss { .. } => Err(Error::NonUnitary),
            GateOp::PhaseShift { mode, phi } => Ok(Kernel::Phase {
                mode,
                factors: (0..cutoff).map(|n| Complex64::from_polar(1.0, phi * n as f64)).collect(),
            }),
            GateOp::BeamSplitter { mode_a, mode_b, .. } | GateOp::MachZehnder { mode_a, mode_b, .. } => {
                let s = gate.pair_matrix().expect("two-mode gate");
                Ok(Kernel::TwoMode { mode_a, mode_b, blocks: SectorBlocks::from_mode_matrix(&s, cutoff)? })
            }
        }
    }

    /// Fuses a run of unitary gates acting on one mode pair.
    pub(crate) fn fused_pair(mode_a: usize, mode_b: usize, s: &Mat2, cutoff: usize) -> Result<Self> {
        Ok(Kernel::TwoMode { mode_a, mode_b, blocks: SectorBlocks::from_mode_matrix(s, cutoff)? })
    }

    pub(crate) fn apply(&self, space: &FockSpace, amps: &mut [Complex64]) {
        match self {
            Kernel::Phase { mode, factors } => {
                for (i, a) in amps.iter_mut().enumerate() {
                    *a *= factors[space.occupation(i, *mode)];
                }
            }
            Kernel::TwoMode { mode_a, mode_b, blocks } => blocks.apply(space, *mode_a, *mode_b, amps),
        }
    }
}

/// Compiles the unitary gates of a circuit, fusing consecutive gates that
/// act on the same mode pair.
pub(crate) fn compile_kernels(gates: &[GateOp], cutoff: usize) -> Result<Vec<Kernel>> {
    let mut kernels = Vec::new();
    let mut pending: Option<(usize, usize, Mat2)> = None;
    let flush = |pending: &mut Option<(usize, usize, Mat2)>, kernels: &mut Vec<Kernel>| -> Result<()> {
        if let Some((a, b, s)) = pending.take() {
            kernels.push(Kernel::fused_pair(a, b, &s, cutoff)?);
        }
        Ok(())
    };
    for g in gates {
        if let Some(s) = g.pair_matrix() {
            let m = g.modes();
            match &mut pending {
                Some((a, b, acc)) if (*a, *b) == (m[0], m[1]) => *acc = s * *acc,
                Some((a, b, acc)) if (*a, *b) == (m[1], m[0]) => *acc = swap_modes(&s) * *acc,
                _ => {
                    flush(&mut pending, &mut kernels)?;
                    pending = Some((m[0], m[1], s));
                }
            }
            continue;
        }
        if let GateOp::PhaseShift { mode, phi } = *g {
            if let Some((a, b, acc)) = &mut pending {
                if mode == *a || mode == *b {
                    let p = if mode == *a { phase_mode_matrix(phi) } else { swap_modes(&phase_mode_matrix(phi)) };
                    *acc = p * *acc;
                    continue;
                }
            }
        }
        flush(&mut pending, &mut kernels)?;
        kernels.push(Kernel::new(g, cutoff)?);
    }
    flush(&mut pending, &mut kernels)?;
    Ok(kernels)
}

fn swap_modes(s: &Mat2) -> Mat2 {
    Mat2::new(s[(1, 1)], s[(1, 0)], s[(0, 1)], s[(0, 0)])
}

/// Ordered gate list on a fixed number of modes. Gates are applied first to last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitRepr", into = "CircuitRepr")]
pub struct Circuit {
    num_modes: usize,
    gates: Vec<GateOp>,
}

#[derive(Serialize, Deserialize)]
struct CircuitRepr {
    num_modes: usize,
    gates: Vec<GateOp>,
}

impl TryFrom<CircuitRepr> for Circuit {
    type Error = Error;
    fn try_from(r: CircuitRepr) -> Result<Self> {
        Circuit::new(r.num_modes, r.gates)
    }
}

impl From<Circuit> for CircuitRepr {
    fn from(c: Circuit) -> Self {
        CircuitRepr { num_modes: c.num_modes, gates: c.gates }
    }
}

impl Circuit {
    pub fn new(num_modes: usize, gates: Vec<GateOp>) -> Result<Self> {
        for g in &gates {
            g.check(num_modes)?;
        }
        Ok(Self { num_modes, gates })
    }

    pub fn empty(num_modes: usize) -> Self {
        Self { num_modes, gates: Vec::new() }
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn gates(&self) -> &[GateOp] {
        &self.gates
    }

    pub fn push(&mut self, gate: GateOp) -> Result<()> {
        gate.check(self.num_modes)?;
        self.gates.push(gate);
        Ok(())
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &Circuit) -> Result<Circuit> {
        let n = self.num_modes.max(other.num_modes);
        Circuit::new(n, self.gates.iter().chain(&other.gates).cloned().collect())
    }

    /// Circuit whose Fock matrix is the entrywise conjugate of this one.
    pub fn conjugate(&self) -> Circuit {
        Circuit { num_modes: self.num_modes, gates: self.gates.iter().flat_map(GateOp::conjugate).collect() }
    }

    /// Moves every gate up by `offset` modes inside a `num_modes`-mode circuit.
    pub fn shifted(&self, offset: usize, num_modes: usize) -> Result<Circuit> {
        Circuit::new(num_modes, self.gates.iter().map(|g| g.shifted(offset)).collect())
    }

    pub fn is_unitary(&self) -> bool {
        self.gates.iter().all(GateOp::is_unitary)
    }

    /// `num_modes × num_modes` single-photon (interferometer) matrix.
    pub fn interferometer(&self) -> Result<DMatrix<Complex64>> {
        let n = self.num_modes;
        let mut u = DMatrix::<Complex64>::identity(n, n);
        for g in &self.gates {
            let mut e = DMatrix::<Complex64>::identity(n, n);
            match *g {
                GateOp::ThermalLoss { .. } => return Err(Error::NonUnitary),
                GateOp::PhaseShift { mode, phi } => e[(mode, mode)] = Complex64::from_polar(1.0, phi),
                _ => {
                    let s = g.pair_matrix().expect("two-mode gate");
                    let m = g.modes();
                    for (i, &r) in m.iter().enumerate() {
                        for (j, &c) in m.iter().enumerate() {
                            e[(r, c)] = s[(i, j)];
                        }
                    }
                }
            }
            u = e * u;
        }
        Ok(u)
    }

    /// Dense Fock matrix on `cutoff^num_modes` states (small spaces only).
    pub fn fock_operator(&self, cutoff: usize) -> Result<DMatrix<Complex64>> {
        let space = FockSpace::new(self.num_modes, cutoff)?;
        if space.dim() > 4096 {
            return Err(Error::TooLarge(format!("dense operator of dimension {}", space.dim())));
        }
        let kernels = compile_kernels(&self.gates, cutoff)?;
        let mut m = DMatrix::identity(space.dim(), space.dim());
        for mut col in m.column_iter_mut() {
            let mut v: Vec<Complex64> = col.iter().copied().collect();
            for k in &kernels {
                k.apply(&space, &mut v);
            }
            col.copy_from_slice(&v);
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Circuit> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Applies one unitary gate.
pub fn apply_gate(state: &PureState, gate: &GateOp) -> Result<PureState> {
    gate.check(state.num_modes())?;
    let kernel = Kernel::new(gate, state.cutoff())?;
    let mut amps = state.amplitudes().to_vec();
    kernel.apply(&state.space(), &mut amps);
    Ok(PureState::from_parts(state.space(), amps))
}

/// Applies every gate of a unitary circuit in order.
pub fn apply_circuit(state: &PureState, circuit: &Circuit) -> Result<PureState> {
    if circuit.num_modes() > state.num_modes() {
        return Err(Error::Shape(format!(
            "{}-mode circuit on a {}-mode state",
            circuit.num_modes(),
            state.num_modes()
        )));
    }
    let kernels = compile_kernels(circuit.gates(), state.cutoff())?;
    let mut amps = state.amplitudes().to_vec();
    for k in &kernels {
        k.apply(&state.space(), &mut amps);
    }
    Ok(PureState::from_parts(state.space(), amps))
}

/// Native form of `U_BS(θ, φ)` on modes `(0, 1)`:
/// `MachZehnder(π − 2θ, 2π − φ)` followed by `PhaseShift(φ + π)` on mode 0.
///
/// On the interferometer matrix the result equals `e^{−iθ} U_BS(θ, φ)`, so on
/// Fock space it agrees with the beamsplitter up to the unit factor
/// `e^{−iθn}` in each photon-number sector.
pub fn mz_decompose(theta: f64, phi: f64) -> Circuit {
    Circuit {
        num_modes: 2,
        gates: vec![
            GateOp::MachZehnder { mode_a: 0, mode_b: 1, phi1: PI - 2.0 * theta, phi2: 2.0 * PI - phi },
            GateOp::PhaseShift { mode: 0, phi: phi + PI },
        ],
    }
}

/// `min_c ‖U − cV‖_F` over unit-modulus `c`.
pub fn distance_up_to_phase(u: &DMatrix<Complex64>, v: &DMatrix<Complex64>) -> Result<f64> {
    if u.shape() != v.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", u.shape(), v.shape())));
    }
    let overlap: Complex64 = u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
    // the optimal phase makes <U, cV> real and positive
    let c = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { ONE };
    Ok(u.iter().zip(v.iter()).map(|(a, b)| (a - c * b).norm_sqr()).sum::<f64>().sqrt())
}

/// Per-sector distance up to phase between two dense two-mode operators
/// (as produced by [`Circuit::fock_operator`]), for the complete sectors
/// `n < cutoff`.
pub fn sector_distances(u: &DMatrix<Complex64>, v: &DMatrix<Complex64>, cutoff: usize) -> Result<Vec<f64>> {
    let d = cutoff;
    if u.shape() != (d * d, d * d) || v.shape() != (d * d, d * d) {
        return Err(Error::Shape(format!("expected {0}x{0} two-mode operators", d * d)));
    }
    (0..d)
        .map(|n| {
            let idx: Vec<usize> = (0..=n).map(|ja| ja * d + (n - ja)).collect();
            let pick = |m: &DMatrix<Complex64>| DMatrix::from_fn(n + 1, n + 1, |r, c| m[(idx[r], idx[c])]);
            distance_up_to_phase(&pick(u), &pick(v))
        })
        .collect()
}

/// Two-mode layered ansatz `Π_{j=1..L} e^{−iφ_j n_a} U_BS(ξ_j, 0)` as a
/// circuit on modes `(0, 1)`; the `j = L` factor acts first.
pub fn layered_ansatz(xi: &[f64], phi: &[f64]) -> Result<Circuit> {
    if xi.len() != phi.len() {
        return Err(Error::LengthMismatch(xi.len(), phi.len()));
    }
    if xi.is_empty() {
        return Err(Error::Shape("layered ansatz needs at least one layer".into()));
    }
    let mut gates = Vec::with_capacity(2 * xi.len());
    for (&x, &p) in xi.iter().zip(phi).rev() {
        gates.push(GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: x, phi: 0.0 });
        gates.push(GateOp::PhaseShift { mode: 0, phi: -p });
    }
    Circuit::new(2, gates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fock_probability, make_tmss, OutcomePattern};
    use proptest::prelude::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    /// Oracle: exponential of the tridiagonal sector generator.
    fn sector_exp(theta: f64, phi: f64, n: usize) -> DMatrix<Complex64> {
        let e = Complex64::from_polar(1.0, phi);
        let mut g = DMatrix::from_element(n + 1, n + 1, ZERO);
        for j in 0..n {
            let amp = (((j + 1) * (n - j)) as f64).sqrt() * theta;
            g[(j + 1, j)] = e * amp;
            g[(j, j + 1)] = -e.conj() * amp;
        }
        g.exp()
    }

    fn random_state(seed: u64, modes: usize, cutoff: usize) -> PureState {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let dim = cutoff.pow(modes as u32);
        let mut v: Vec<Complex64> =
            (0..dim).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let n: f64 = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        PureState::from_amplitudes(modes, cutoff, v).unwrap()
    }

    #[test]
    fn single_photon_block_convention() {
        let (t, p) = (0.37, 1.1);
        let b = bs_two_mode_matrix(t, p, 3).unwrap();
        let m = &b.blocks()[1].matrix;
        // rows/cols ordered by first-mode occupation: (|0,1>, |1,0>)
        let e = Complex64::from_polar(1.0, p);
        assert!(close(m[(1, 1)], t.cos().into(), 1e-15));
        assert!(close(m[(1, 0)], e * t.sin(), 1e-15));
        assert!(close(m[(0, 1)], -e.conj() * t.sin(), 1e-15));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = bs_two_mode_matrix(FRAC_PI_4, 0.0, 2).unwrap().blocks()[1].matrix.clone();
        assert!(close(q[(1, 1)], h.into(), 1e-15) && close(q[(1, 0)], h.into(), 1e-15));
        assert!(close(q[(0, 1)], (-h).into(), 1e-15));
    }

    #[test]
    fn sectors_match_generator_exponential() {
        for &(t, p) in &[(0.3, 0.0), (FRAC_PI_4, 0.0), (1.2, -2.1), (2.9, 0.4)] {
            let full = sector_matrices(&bs_mode_matrix(t, p), 9);
            for (n, m) in full.iter().enumerate() {
                let want = sector_exp(t, p, n);
                assert!((m - &want).norm() < 1e-11, "theta {t} phi {p} sector {n}");
            }
        }
    }

    #[test]
    fn zero_angle_is_identity() {
        let d = bs_two_mode_matrix(0.0, 0.7, 5).unwrap().to_dense();
        assert!((d - DMatrix::identity(25, 25)).norm() < 1e-15);
    }

    #[test]
    fn dense_operator_matches_blocks() {
        let c = Circuit::new(2, vec![GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: 0.4, phi: 0.9 }]).unwrap();
        let a = c.fock_operator(5).unwrap();
        let b = bs_two_mode_matrix(0.4, 0.9, 5).unwrap().to_dense();
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn reversed_mode_order() {
        // BS on (1,0) is BS on (0,1) with the mode matrix conjugated by a swap.
        let s = random_state(3, 2, 4);
        let g = GateOp::BeamSplitter { mode_a: 1, mode_b: 0, theta: 0.6, phi: 0.3 };
        let out = apply_gate(&s, &g).unwrap();
        let sw = swap_modes(&bs_mode_matrix(0.6, 0.3));
        let blocks = SectorBlocks::from_mode_matrix(&sw, 4).unwrap();
        let mut v = s.amplitudes().to_vec();
        blocks.apply(&s.space(), 0, 1, &mut v);
        for (x, y) in out.amplitudes().iter().zip(&v) {
            assert!(close(*x, *y, 1e-14));
        }
    }

    #[test]
    fn thermal_loss_rejected() {
        let s = PureState::vacuum(1, 3).unwrap();
        let g = GateOp::ThermalLoss { mode: 0, eta: 0.9, nbar: 0.0 };
        assert!(matches!(apply_gate(&s, &g), Err(Error::NonUnitary)));
        let g = GateOp::PhaseShift { mode: 1, phi: 0.0 };
        assert!(matches!(apply_gate(&s, &g), Err(Error::ModeOutOfRange { .. })));
    }

    #[test]
    fn mz_matrix_matches_expansion() {
        let g = GateOp::MachZehnder { mode_a: 0, mode_b: 1, phi1: 0.7, phi2: -1.3 };
        let a = Circuit::new(2, vec![g.clone()]).unwrap().interferometer().unwrap();
        let b = Circuit::new(2, g.expand()).unwrap().interferometer().unwrap();
        assert!((a - b).norm() < 1e-14);
        let fa = Circuit::new(2, vec![g.clone()]).unwrap().fock_operator(6).unwrap();
        let fb = Circuit::new(2, g.expand()).unwrap().fock_operator(6).unwrap();
        for (n, d) in sector_distances(&fa, &fb, 6).unwrap().into_iter().enumerate() {
            assert!(d < 1e-12, "sector {n}: {d}");
        }
    }

    #[test]
    fn decomposition_on_mode_matrix() {
        for i in 0..5 {
            for j in 0..5 {
                let theta = -1.3 + 0.71 * i as f64;
                let phi = -2.9 + 1.37 * j as f64;
                let u = mz_decompose(theta, phi).interferometer().unwrap();
                let want = bs_mode_matrix(theta, phi);
                let f = Complex64::from_polar(1.0, -theta);
                for r in 0..2 {
                    for c in 0..2 {
                        assert!(close(u[(r, c)], f * want[(r, c)], 1e-13));
                    }
                }
            }
        }
    }

    #[test]
    fn decomposition_carries_number_dependent_phase() {
        // U_circ = e^{-iθN} U_BS exactly in every complete sector.
        let (theta, phi, d) = (0.6, 1.9, 6);
        let u = mz_decompose(theta, phi).fock_operator(d).unwrap();
        let bs = bs_two_mode_matrix(theta, phi, d).unwrap().to_dense();
        for i in 0..d * d {
            let n = i / d + i % d;
            if n >= d {
                continue;
            }
            let f = Complex64::from_polar(1.0, -theta * n as f64);
            for j in 0..d * d {
                if j / d + j % d == n {
                    assert!(close(u[(i, j)], f * bs[(i, j)], 1e-12));
                }
            }
        }
        assert!(distance_up_to_phase(&u, &bs).unwrap() > 1e-3);
        let id = mz_decompose(0.0, 0.0).fock_operator(d).unwrap();
        assert!(distance_up_to_phase(&id, &DMatrix::identity(d * d, d * d)).unwrap() < 1e-10);
    }

    #[test]
    fn distance_examples() {
        let i2 = DMatrix::<Complex64>::identity(2, 2);
        let z = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ONE, -ONE]));
        assert!((distance_up_to_phase(&i2, &z).unwrap() - 2.0).abs() < 1e-15);
        let ph = i2.map(|x| x * Complex64::from_polar(1.0, 0.8));
        assert!(distance_up_to_phase(&i2, &ph).unwrap() < 1e-7);
        assert!(distance_up_to_phase(&i2, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn ansatz_single_layer_and_order() {
        let a = layered_ansatz(&[FRAC_PI_4], &[0.0]).unwrap().interferometer().unwrap();
        let b = bs_mode_matrix(FRAC_PI_4, 0.0);
        for r in 0..2 {
            for c in 0..2 {
                assert!(close(a[(r, c)], b[(r, c)], 1e-15));
            }
        }
        // X1 X2 with X_j = P(-φ_j) BS(ξ_j)
        let (xi, ph) = ([0.3, 0.5], [0.2, -0.7]);
        let u = layered_ansatz(&xi, &ph).unwrap().interferometer().unwrap();
        let x = |j: usize| phase_mode_matrix(-ph[j]) * bs_mode_matrix(xi[j], 0.0);
        let want = x(0) * x(1);
        for r in 0..2 {
            for c in 0..2 {
                assert!(close(u[(r, c)], want[(r, c)], 1e-14));
            }
        }
        assert!(layered_ansatz(&[0.1], &[]).is_err());
        let off = layered_ansatz(&[0.2, FRAC_PI_4 - 0.2], &[0.1, 0.2]).unwrap();
        let target =
            Circuit::new(2, vec![GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi: 0.0 }]).unwrap();
        let dist = distance_up_to_phase(&off.interferometer().unwrap(), &target.interferometer().unwrap()).unwrap();
        assert!(dist > 1e-3);
    }

    #[test]
    fn conjugate_circuit_is_entrywise_conjugate() {
        let c = Circuit::new(
            2,
            vec![
                GateOp::MachZehnder { mode_a: 0, mode_b: 1, phi1: 0.4, phi2: 1.1 },
                GateOp::BeamSplitter { mode_a: 1, mode_b: 0, theta: 0.3, phi: -0.8 },
                GateOp::PhaseShift { mode: 1, phi: 2.0 },
            ],
        )
        .unwrap();
        let a = c.fock_operator(4).unwrap();
        let b = c.conjugate().fock_operator(4).unwrap();
        assert!((a.map(|x| x.conj()) - b).norm() < 1e-13);
    }

    #[test]
    fn fusion_matches_unfused() {
        let gates = vec![
            GateOp::PhaseShift { mode: 1, phi: 0.5 },
            GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: 0.3, phi: 0.2 },
            GateOp::PhaseShift { mode: 1, phi: 0.9 },
            GateOp::BeamSplitter { mode_a: 1, mode_b: 0, theta: 1.3, phi: -0.4 },
            GateOp::BeamSplitter { mode_a: 1, mode_b: 2, theta: 0.8, phi: 0.1 },
            GateOp::PhaseShift { mode: 0, phi: -1.5 },
        ];
        // keep every pair sector complete so truncation does not enter
        let s = random_state(9, 3, 5).project_photon_number(&[0, 1, 2], 4).unwrap();
        let fused = apply_circuit(&s, &Circuit::new(3, gates.clone()).unwrap()).unwrap();
        let mut step = s.clone();
        for g in &gates {
            step = apply_gate(&step, g).unwrap();
        }
        for (x, y) in fused.amplitudes().iter().zip(step.amplitudes()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn phase_on_tmss_halves() {
        let s = make_tmss(1.0, 1, 8).unwrap();
        for (phi, invariant) in [(0.0, true), (PI, true), (0.5, false), (FRAC_PI_2, false)] {
            let c = Circuit::new(2, vec![GateOp::PhaseShift { mode: 0, phi }, GateOp::PhaseShift { mode: 1, phi }])
                .unwrap();
            let out = apply_circuit(&s, &c).unwrap();
            let f = s.inner(&out).unwrap().norm() / s.norm_sqr();
            assert_eq!((f - 1.0).abs() < 1e-12, invariant, "phi {phi}");
        }
    }

    #[test]
    fn example_two_probability() {
        // pairs (0,2),(1,3) with registers A = (0,1), B = (2,3)
        let s = make_tmss(1.0, 2, 8).unwrap();
        let pat = OutcomePattern::new(vec![0, 1, 2, 3], vec![0, 1, 0, 1]).unwrap();
        let k = 1f64.tanh().powi(2) / (2.0 * 1f64.cosh().powi(4));
        for phi in [0.0, 0.3, FRAC_PI_4, 1.2, FRAC_PI_2] {
            let c = Circuit::new(
                4,
                vec![
                    GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi },
                    GateOp::BeamSplitter { mode_a: 2, mode_b: 3, theta: FRAC_PI_4, phi },
                ],
            )
            .unwrap();
            let p = fock_probability(&apply_circuit(&s, &c).unwrap(), &pat).unwrap();
            assert!((p - k * (1.0 + (2.0 * phi).cos())).abs() < 1e-12, "phi {phi}");
        }
    }

    #[test]
    fn real_beamsplitter_fixes_tmss_pairs() {
        // layout (A1, A2, B1, B2) with complete register sectors
        let s = crate::fock::make_tmss_register_complete(1.0, 2, 6).unwrap();
        let c = Circuit::new(
            4,
            vec![
                GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi: 0.0 },
                GateOp::BeamSplitter { mode_a: 2, mode_b: 3, theta: FRAC_PI_4, phi: 0.0 },
            ],
        )
        .unwrap();
        let out = apply_circuit(&s, &c).unwrap();
        let fid = s.inner(&out).unwrap().norm();
        assert!((fid - s.norm_sqr()).abs() < 1e-12);
        // a complex phase moves the state
        let c = Circuit::new(
            4,
            vec![
                GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi: 0.6 },
                GateOp::BeamSplitter { mode_a: 2, mode_b: 3, theta: FRAC_PI_4, phi: 0.6 },
            ],
        )
        .unwrap();
        let out = apply_circuit(&s, &c).unwrap();
        assert!(s.inner(&out).unwrap().norm() < s.norm_sqr() - 1e-3);
    }

    #[test]
    fn circuit_json_round_trip() {
        let c = mz_decompose(0.3, 1.2);
        let text = c.to_json().unwrap();
        assert!(text.contains("\"kind\": \"mach_zehnder\""));
        assert_eq!(Circuit::from_json(&text).unwrap(), c);
        let bad = r#"{"num_modes": 2, "gates": [{"kind": "phase_shift", "mode": 2, "phi": 0.0}]}"#;
        assert!(Circuit::from_json(bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn sector_blocks_unitary(theta in -4.0f64..4.0, phi in -4.0f64..4.0) {
            let b = bs_two_mode_matrix(theta, phi, 7).unwrap();
            for blk in b.blocks().iter().filter(|x| b.is_complete(x.photons)) {
                let m = &blk.matrix;
                let e = (m.adjoint() * m - DMatrix::identity(m.nrows(), m.ncols())).norm();
                prop_assert!(e < 1e-12);
            }
        }

        #[test]
        fn sectors_compose(t1 in -3.0f64..3.0, p1 in -3.0f64..3.0, t2 in -3.0f64..3.0, p2 in -3.0f64..3.0) {
            let (a, b) = (bs_mode_matrix(t1, p1), mz_mode_matrix(t2, p2));
            let ab = sector_matrices(&(a * b), 6);
            let (sa, sb) = (sector_matrices(&a, 6), sector_matrices(&b, 6));
            for n in 0..=6 {
                prop_assert!((&ab[n] - &sa[n] * &sb[n]).norm() < 1e-11);
            }
        }

        #[test]
        fn gates_preserve_norm_and_photon_number(
            seed in 0u64..1000,
            theta in -3.0f64..3.0,
            phi in -3.0f64..3.0,
            kind in 0usize..3,
        ) {
            let d = 5;
            let s = random_state(seed, 3, d).project_photon_number(&[0, 1, 2], d - 1).unwrap();
            let g = match kind {
                0 => GateOp::PhaseShift { mode: 2, phi },
                1 => GateOp::BeamSplitter { mode_a: 2, mode_b: 0, theta, phi },
                _ => GateOp::MachZehnder { mode_a: 1, mode_b: 2, phi1: theta, phi2: phi },
            };
            let out = apply_gate(&s, &g).unwrap();
            prop_assert!((out.norm_sqr() - s.norm_sqr()).abs() < 1e-12);
            let sectors = |x: &PureState| {
                let mut w = vec![0.0; 3 * d];
                for (i, a) in x.amplitudes().iter().enumerate() {
                    let n: usize = x.space().occupations(i).iter().sum();
                    w[n] += a.norm_sqr();
                }
                w
            };
            for (x, y) in sectors(&s).iter().zip(sectors(&out)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
