//! Density matrices and the single-mode thermal loss channel.
//!
//! The thermal attenuator with transmissivity `η` and environment occupation
//! `n̄` is built as a quantum-limited amplifier after a pure-loss channel:
//! `G = 1 + (1−η) n̄`, `τ = η / G`. Its Kraus operators map `|n>` into
//! arbitrarily high occupations, so [`thermal_loss_kraus`] returns operators
//! into an output space larger than the input, sized until the completeness
//! defect is below `1e-13`. Callers truncate the output to their own cutoff
//! and account for the trace that falls off.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{FockSpace, PureState};
use crate::optics::{compile_kernels, Circuit, GateOp, Kernel};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const COMPLETENESS_TARGET: f64 = 1e-13;
const MAX_EXTRA_LEVELS: usize = 512;

pub(crate) fn check_loss_parameters(eta: f64, nbar: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter { name: "eta", value: eta });
    }
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::Parameter { name: "nbar", value: nbar });
    }
    Ok(())
}

/// Density operator over a truncated multimode Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedState {
    space: FockSpace,
    rho: DMatrix<Complex64>,
}

/// `|ψ><ψ|`.
pub fn promote(state: &PureState) -> MixedState {
    let v = nalgebra::DVector::from_column_slice(state.amplitudes());
    MixedState { space: state.space(), rho: &v * v.adjoint() }
}

impl MixedState {
    pub fn from_matrix(num_modes: usize, cutoff: usize, rho: DMatrix<Complex64>) -> Result<Self> {
        let space = FockSpace::new(num_modes, cutoff)?;
        if rho.shape() != (space.dim(), space.dim()) {
            return Err(Error::Shape(format!("density matrix {:?} for dimension {}", rho.shape(), space.dim())));
        }
        let herm = (&rho - rho.adjoint()).norm();
        if herm > 1e-12 * rho.norm().max(1.0) {
            return Err(Error::Shape(format!("density matrix is not Hermitian (defect {herm:.2e})")));
        }
        Ok(Self { space, rho })
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn num_modes(&self) -> usize {
        self.space.num_modes()
    }

    pub fn cutoff(&self) -> usize {
        self.space.cutoff()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.diagonal().iter().map(|x| x.re).sum()
    }

    pub fn purity(&self) -> f64 {
        // tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.rho.norm_squared()
    }

    /// Basis-state probabilities (the real diagonal) in flat-index order.
    pub fn probabilities(&self) -> Vec<f64> {
        self.rho.diagonal().iter().map(|x| x.re.max(0.0)).collect()
    }

    pub fn mean_photons(&self, mode: usize) -> Result<f64> {
        self.space.check_mode(mode)?;
        Ok(self.probabilities().iter().enumerate().map(|(i, p)| p * self.space.occupation(i, mode) as f64).sum())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.rho.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Spectral decomposition `ρ = Σ w_k |ψ_k><ψ_k|`, keeping weights above `threshold`.
    pub fn eigen_mixture(&self, threshold: f64) -> Vec<(f64, PureState)> {
        let eig = SymmetricEigen::new(self.rho.clone());
        let mut out: Vec<(f64, PureState)> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > threshold)
            .map(|(k, &w)| {
                let v: Vec<Complex64> = eig.eigenvectors.column(k).iter().copied().collect();
                (w, PureState::from_parts(self.space, v))
            })
            .collect();
        out.sort_by(|a, b| b.0.total_cmp(&a.0));
        out
    }

    /// `ρ_self ⊗ ρ_other`, modes of `self` first.
    pub fn tensor(&self, other: &MixedState) -> Result<MixedState> {
        if self.cutoff() != other.cutoff() {
            return Err(Error::CutoffMismatch(self.cutoff(), other.cutoff()));
        }
        let space = FockSpace::new(self.num_modes() + other.num_modes(), self.cutoff())?;
        Ok(MixedState { space, rho: self.rho.kronecker(&other.rho) })
    }

    fn apply_kernels(&self, kernels: &[Kernel]) -> MixedState {
        let mut m = self.rho.clone();
        for _ in 0..2 {
            for mut col in m.column_iter_mut() {
                let slice = col.as_mut_slice();
                for k in kernels {
                    k.apply(&self.space, slice);
                }
            }
            m = m.adjoint();
        }
        MixedState { space: self.space, rho: m }
    }

    /// `U ρ U†` for a unitary gate, or the channel for a thermal loss gate.
    pub fn apply_gate(&self, gate: &GateOp) -> Result<MixedState> {
        gate.check(self.num_modes())?;
        match *gate {
            GateOp::ThermalLoss { mode, eta, nbar } => apply_channel(self, mode, eta, nbar),
            _ => Ok(self.apply_kernels(&[Kernel::new(gate, self.cutoff())?])),
        }
    }

    /// Applies a circuit that may interleave thermal loss with unitary gates.
    pub fn apply_circuit(&self, circuit: &Circuit) -> Result<MixedState> {
        if circuit.num_modes() > self.num_modes() {
            return Err(Error::Shape(format!(
                "{}-mode circuit on a {}-mode state",
                circuit.num_modes(),
                self.num_modes()
            )));
        }
        let mut state = self.clone();
        let mut run: Vec<GateOp> = Vec::new();
        for g in circuit.gates() {
            if g.is_unitary() {
                run.push(g.clone());
                continue;
            }
            if !run.is_empty() {
                state = state.apply_kernels(&compile_kernels(&run, self.cutoff())?);
                run.clear();
            }
            state = state.apply_gate(g)?;
        }
        if !run.is_empty() {
            state = state.apply_kernels(&compile_kernels(&run, self.cutoff())?);
        }
        Ok(state)
    }
}

/// Kraus operators `K_i` (each `output_dim × input_dim`) of a single-mode channel.
#[derive(Clone, Debug)]
pub struct KrausSet {
    ops: Vec<DMatrix<Complex64>>,
    input_dim: usize,
    output_dim: usize,
}

impl KrausSet {
    pub fn new(ops: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let (output_dim, input_dim) =
            ops.first().map(|m| m.shape()).ok_or_else(|| Error::Shape("empty Kraus set".into()))?;
        if ops.iter().any(|m| m.shape() != (output_dim, input_dim)) {
            return Err(Error::Shape("Kraus operators of different shapes".into()));
        }
        Ok(Self { ops, input_dim, output_dim })
    }

    pub fn ops(&self) -> &[DMatrix<Complex64>] {
        &self.ops
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `Σ K†K`.
    pub fn gram(&self) -> DMatrix<Complex64> {
        let mut g = DMatrix::from_element(self.input_dim, self.input_dim, ZERO);
        for k in &self.ops {
            g += k.adjoint() * k;
        }
        g
    }

    /// Largest entry of `|Σ K†K − I|` on occupations `0..=max_occupation`.
    pub fn completeness_error(&self, max_occupation: usize) -> f64 {
        let g = self.gram();
        let n = (max_occupation + 1).min(self.input_dim);
        let mut err: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let id = if r == c { 1.0 } else { 0.0 };
                err = err.max((g[(r, c)] - id).norm());
            }
        }
        err
    }

    /// `T[m, n] = Σ |K_mn|²`: the Fock-diagonal transfer probabilities.
    pub fn transfer_matrix(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.output_dim, self.input_dim);
        for k in &self.ops {
            t += k.map(|x| x.norm_sqr());
        }
        t
    }

    /// Drops output occupations at or above `dim`.
    pub fn truncated(&self, dim: usize) -> KrausSet {
        let rows = dim.min(self.output_dim);
        KrausSet {
            ops: self.ops.iter().map(|k| k.rows(0, rows).into_owned()).collect(),
            input_dim: self.input_dim,
            output_dim: rows,
        }
    }

    /// Channel composition: `other` after `self`.
    pub fn then(&self, other: &KrausSet) -> Result<KrausSet> {
        if other.input_dim < self.output_dim {
            return Err(Error::Shape(format!(
                "composing a channel with output {} into one with input {}",
                self.output_dim, other.input_dim
            )));
        }
        let ops = other
            .ops
            .iter()
            .flat_map(|b| {
                let b = b.columns(0, self.output_dim).into_owned();
                self.ops.iter().map(move |a| &b * a)
            })
            .collect();
        KrausSet::new(ops)
    }
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let lf = |m: usize| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lf(n) - lf(k) - lf(n - k)
}

/// Pure loss with transmissivity `tau` on occupations `0..dim`.
pub fn pure_loss_kraus(tau: f64, dim: usize) -> Result<KrausSet> {
    check_loss_parameters(tau, 0.0)?;
    if dim < 1 {
        return Err(Error::Cutoff { min: 1, got: dim });
    }
    let ops = (0..dim)
        .map(|k| {
            DMatrix::from_fn(dim, dim, |m, n| {
                if n >= k && m == n - k {
                    let lw = ln_binomial(n, k);
                    let amp = (0.5 * lw).exp() * tau.powf((n - k) as f64 / 2.0) * (1.0 - tau).powf(k as f64 / 2.0);
                    Complex64::new(amp, 0.0)
                } else {
                    ZERO
                }
            })
        })
        .collect();
    KrausSet::new(ops)
}

/// Quantum-limited amplifier with gain `gain >= 1`, keeping `extra + 1`
/// Kraus operators and an output space of `dim + extra` levels.
pub fn amplifier_kraus(gain: f64, dim: usize, extra: usize) -> Result<KrausSet> {
    if !(gain >= 1.0) || !gain.is_finite() {
        return Err(Error::Parameter { name: "gain", value: gain });
    }
    let inv = 1.0 / gain;
    let out = dim + extra;
    let ops = (0..=extra)
        .map(|k| {
            DMatrix::from_fn(out, dim, |m, n| {
                if m == n + k {
                    let amp = (0.5 * ln_binomial(n + k, k)).exp()
                        * inv.sqrt()
                        * (1.0 - inv).powf(k as f64 / 2.0)
                        * inv.powf(n as f64 / 2.0);
                    Complex64::new(amp, 0.0)
                } else {
                    ZERO
                }
            })
        })
        .collect();
    KrausSet::new(ops)
}

/// Kraus set of the thermal attenuator `(η, n̄)` on input occupations
/// `0..cutoff`, with an output space extended until `Σ K†K = I` holds to
/// `1e-13` on the whole input space (or 512 extra levels are reached).
pub fn thermal_loss_kraus(eta: f64, nbar: f64, cutoff: usize) -> Result<KrausSet> {
    check_loss_parameters(eta, nbar)?;
    if cutoff < 1 {
        return Err(Error::Cutoff { min: 1, got: cutoff });
    }
    let gain = 1.0 + (1.0 - eta) * nbar;
    let loss = pure_loss_kraus(eta / gain, cutoff)?;
    if gain == 1.0 {
        return Ok(loss);
    }
    // The amplifier's completeness defect on |n> is the negative-binomial
    // tail beyond `extra`; it is largest for the top input level.
    let x = 1.0 - 1.0 / gain;
    let top = cutoff - 1;
    let mut extra = 0;
    let mut cdf = 0.0;
    loop {
        cdf += (ln_binomial(top + extra, extra) + (top as f64 + 1.0) * (1.0 / gain).ln() + extra as f64 * x.ln()).exp();
        if 1.0 - cdf < COMPLETENESS_TARGET || extra >= MAX_EXTRA_LEVELS {
            break;
        }
        extra += 1;
    }
    loss.then(&amplifier_kraus(gain, cutoff, extra)?)
}

/// Stochastic matrix `T[m, n]` of output photon probabilities for input `|n>`,
/// `n < input_dim`, truncated to `m < output_dim`.
pub fn thermal_loss_transfer(eta: f64, nbar: f64, input_dim: usize, output_dim: usize) -> Result<DMatrix<f64>> {
    let k = thermal_loss_kraus(eta, nbar, input_dim)?;
    let t = k.transfer_matrix();
    let rows = output_dim.min(t.nrows());
    let mut out = DMatrix::zeros(output_dim, input_dim);
    out.rows_mut(0, rows).copy_from(&t.rows(0, rows));
    Ok(out)
}

/// Sparse single-mode superoperator restricted to occupations `0..d`.
struct SuperOp {
    entries: Vec<(usize, usize, usize, usize, Complex64)>,
}

impl SuperOp {
    fn from_kraus(k: &KrausSet, d: usize) -> Self {
        let k = k.truncated(d);
        let mut entries = Vec::new();
        for m in 0..d {
            for mp in 0..d {
                for n in 0..d {
                    for np in 0..d {
                        let v: Complex64 = k.ops.iter().map(|op| op[(m, n)] * op[(mp, np)].conj()).sum();
                        if v.norm() > 1e-300 {
                            entries.push((m, mp, n, np, v));
                        }
                    }
                }
            }
        }
        Self { entries }
    }
}

fn apply_superop(rho: &MixedState, mode: usize, op: &SuperOp) -> MixedState {
    let space = rho.space;
    let s = space.stride(mode);
    let dim = space.dim();
    let mut out = DMatrix::from_element(dim, dim, ZERO);
    let bases: Vec<usize> = (0..dim).filter(|&i| space.occupation(i, mode) == 0).collect();
    for &bc in &bases {
        for &br in &bases {
            for &(m, mp, n, np, v) in &op.entries {
                out[(br + m * s, bc + mp * s)] += v * rho.rho[(br + n * s, bc + np * s)];
            }
        }
    }
    MixedState { space, rho: out }
}

/// Applies a single-mode channel given by Kraus operators, truncating the
/// output to the state's cutoff.
pub fn apply_kraus(rho: &MixedState, mode: usize, kraus: &KrausSet) -> Result<MixedState> {
    rho.space.check_mode(mode)?;
    if kraus.input_dim() != rho.cutoff() {
        return Err(Error::CutoffMismatch(kraus.input_dim(), rho.cutoff()));
    }
    Ok(apply_superop(rho, mode, &SuperOp::from_kraus(kraus, rho.cutoff())))
}

/// `ρ ↦ Σ K ρ K†` for the thermal attenuator on `mode`. Population pushed at
/// or above the cutoff is dropped; the lost trace is `trace(ρ) − trace(out)`.
pub fn apply_channel(rho: &MixedState, mode: usize, eta: f64, nbar: f64) -> Result<MixedState> {
    rho.space.check_mode(mode)?;
    let k = thermal_loss_kraus(eta, nbar, rho.cutoff())?;
    apply_kraus(rho, mode, &k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{make_tmss, tensor_product};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn binom(n: usize, k: usize) -> f64 {
        ln_binomial(n, k).exp()
    }

    /// Oracle: loss then amplifier transfer matrices from their closed forms.
    fn transfer_oracle(eta: f64, nbar: f64, d_in: usize, d_out: usize) -> DMatrix<f64> {
        let g = 1.0 + (1.0 - eta) * nbar;
        let tau = eta / g;
        let loss = DMatrix::from_fn(d_in, d_in, |m, n| {
            if m <= n {
                binom(n, m) * tau.powi(m as i32) * (1.0 - tau).powi((n - m) as i32)
            } else {
                0.0
            }
        });
        let amp = DMatrix::from_fn(d_out, d_in, |m, n| {
            if m >= n {
                binom(m, n) * (1.0 / g).powi(n as i32 + 1) * (1.0 - 1.0 / g).powi((m - n) as i32)
            } else {
                0.0
            }
        });
        amp * loss
    }

    #[test]
    fn promote_basics() {
        let v = promote(&PureState::vacuum(2, 3).unwrap());
        assert_eq!(v.matrix()[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(v.matrix().iter().filter(|x| x.norm() > 0.0).count(), 1);
        let s = make_tmss(1.0, 1, 4).unwrap();
        let m = promote(&s);
        assert!((m.trace() - s.norm_sqr()).abs() < 1e-15);
        assert!((m.purity() - s.norm_sqr().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn identity_channel() {
        let k = thermal_loss_kraus(1.0, 0.0, 6).unwrap();
        assert_eq!(k.ops().len(), 6);
        assert!((&k.ops()[0] - DMatrix::identity(6, 6)).norm() < 1e-15);
        assert!(k.ops()[1..].iter().all(|x| x.norm() < 1e-15));
        let s = promote(&make_tmss(0.7, 1, 6).unwrap());
        let out = apply_channel(&s, 1, 1.0, 0.0).unwrap();
        assert!((out.matrix() - s.matrix()).norm() < 1e-12);
    }

    #[test]
    fn pure_loss_fixes_vacuum() {
        let v = promote(&PureState::vacuum(1, 5).unwrap());
        let out = apply_channel(&v, 0, 0.3, 0.0).unwrap();
        assert!((out.matrix() - v.matrix()).norm() < 1e-15);
    }

    #[test]
    fn vacuum_mean_photons_after_thermal_loss() {
        let v = promote(&PureState::vacuum(1, 14).unwrap());
        let out = apply_channel(&v, 0, 0.9, 2.0).unwrap();
        assert!((out.mean_photons(0).unwrap() - 0.2).abs() < 1e-3);
        let n_in = 3.0;
        let fock3 = PureState::from_amplitudes(
            1,
            30,
            (0..30).map(|i| Complex64::new(if i == 3 { 1.0 } else { 0.0 }, 0.0)).collect(),
        )
        .unwrap();
        let out = apply_channel(&promote(&fock3), 0, 0.7, 1.5).unwrap();
        assert!((out.mean_photons(0).unwrap() - (0.7 * n_in + 0.3 * 1.5)).abs() < 1e-9);
    }

    #[test]
    fn completeness_on_extended_output() {
        for &(eta, nbar) in &[(0.9, 2.0), (0.9, 1.5), (0.5, 0.0), (0.2, 4.0), (0.0, 1.0)] {
            let k = thermal_loss_kraus(eta, nbar, 10).unwrap();
            assert!(k.completeness_error(9) < 1e-12, "({eta},{nbar}) {}", k.completeness_error(9));
            // square truncation cannot be complete once the channel adds photons
            let sq = k.truncated(10);
            if nbar > 0.0 && eta < 1.0 {
                assert!(sq.completeness_error(10 - 4) > 1e-10);
            } else {
                assert!(sq.completeness_error(10 - 4) < 1e-12);
            }
        }
    }

    #[test]
    fn transfer_matches_closed_form() {
        let (eta, nbar, d) = (0.9, 2.0, 9);
        let k = thermal_loss_kraus(eta, nbar, d).unwrap();
        let t = k.transfer_matrix();
        let want = transfer_oracle(eta, nbar, d, t.nrows());
        assert!((t - want).camax() < 1e-13);
    }

    #[test]
    fn loss_composition() {
        let d = 10;
        let a = pure_loss_kraus(0.8, d).unwrap();
        let b = pure_loss_kraus(0.6, d).unwrap();
        let ab = a.then(&b).unwrap();
        let c = pure_loss_kraus(0.48, d).unwrap();
        let psi = make_tmss(0.9, 1, d).unwrap();
        let rho = promote(&psi);
        let lhs = apply_kraus(&rho, 0, &ab).unwrap();
        let rhs = apply_kraus(&rho, 0, &c).unwrap();
        assert!((lhs.matrix() - rhs.matrix()).camax() < 1e-12);
        let two = apply_kraus(&apply_kraus(&rho, 0, &a).unwrap(), 0, &b).unwrap();
        assert!((two.matrix() - rhs.matrix()).camax() < 1e-12);
    }

    #[test]
    fn channel_commutes_with_real_beamsplitter() {
        // identical thermal loss on both modes commutes with a passive two-mode unitary
        let d = 7;
        let psi = tensor_product(
            &PureState::from_amplitudes(1, d, {
                let mut v = vec![Complex64::new(0.0, 0.0); d];
                v[1] = Complex64::new(1.0, 0.0);
                v
            })
            .unwrap(),
            &PureState::vacuum(1, d).unwrap(),
        )
        .unwrap();
        let rho = promote(&psi);
        let bs = GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi: 0.3 };
        let noisy = |r: &MixedState| {
            let r = apply_channel(r, 0, 0.9, 0.1).unwrap();
            apply_channel(&r, 1, 0.9, 0.1).unwrap()
        };
        let before = noisy(&rho).apply_gate(&bs).unwrap();
        let after = noisy(&rho.apply_gate(&bs).unwrap());
        // agreement up to truncation at the cutoff
        assert!((before.matrix() - after.matrix()).camax() < 1e-6);
    }

    #[test]
    fn mixed_circuit_applies_loss_gates() {
        let rho = promote(&make_tmss(0.5, 1, 8).unwrap());
        let c = Circuit::new(
            2,
            vec![GateOp::ThermalLoss { mode: 0, eta: 0.8, nbar: 0.5 }, GateOp::PhaseShift { mode: 1, phi: 0.4 }],
        )
        .unwrap();
        let out = rho.apply_circuit(&c).unwrap();
        let manual = apply_channel(&rho, 0, 0.8, 0.5).unwrap().apply_gate(&c.gates()[1]).unwrap();
        assert!((out.matrix() - manual.matrix()).camax() < 1e-15);
    }

    #[test]
    fn eigen_mixture_reconstructs() {
        let rho = apply_channel(&promote(&make_tmss(0.8, 1, 6).unwrap()), 0, 0.7, 0.5).unwrap();
        let mix = rho.eigen_mixture(0.0);
        let mut back = DMatrix::from_element(36, 36, ZERO);
        for (w, s) in &mix {
            back += promote(s).matrix() * Complex64::new(*w, 0.0);
        }
        assert!((back - rho.matrix()).camax() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        assert!(thermal_loss_kraus(1.2, 0.0, 4).is_err());
        assert!(thermal_loss_kraus(0.5, -1.0, 4).is_err());
        let rho = promote(&PureState::vacuum(1, 3).unwrap());
        assert!(matches!(apply_channel(&rho, 1, 0.9, 1.0), Err(Error::ModeOutOfRange { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn channel_keeps_state_physical(eta in 0.0f64..=1.0, nbar in 0.0f64..3.0, r in 0.0f64..1.2) {
            let rho = promote(&make_tmss(r, 1, 7).unwrap());
            let out = apply_channel(&rho, 0, eta, nbar).unwrap();
            prop_assert!((out.matrix() - out.matrix().adjoint()).camax() < 1e-12);
            prop_assert!(out.min_eigenvalue() > -1e-10);
            prop_assert!(out.trace() <= rho.trace() + 1e-10);
        }

        #[test]
        fn kraus_complete(eta in 0.0f64..=1.0, nbar in 0.0f64..4.0, d in 4usize..14) {
            let k = thermal_loss_kraus(eta, nbar, d).unwrap();
            prop_assert!(k.completeness_error(d - 4) < 1e-10);
        }
    }
}
