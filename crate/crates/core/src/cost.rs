//! Cost functions for compiling two-mode linear-optical unitaries, as
//! closed forms and as simulator- or count-backed computations.
//!
//! Local mode layouts. Costs on a two-register X8 block use four local
//! modes `(A1, A2, B1, B2) = (0, 1, 2, 3)` with squeezed pairs `(0, 2)` and
//! `(1, 3)`, which is the device block `0145` with pairs `04` and `15`.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{fock_probability, make_tmss, make_tmss_register_complete, FockSpace, OutcomePattern, PureState};
use crate::measure::CountTable;
use crate::optics::{apply_circuit, apply_gate, Circuit, GateOp};

/// Probability of `(0,1,0,1)` on a TMSS⊗TMSS block with no gates.
pub fn tmss_0101(r: f64) -> f64 {
    r.tanh().powi(2) / r.cosh().powi(4)
}

/// Pattern `(0,1,0,1)` on the local block `(A1, A2, B1, B2)`.
pub fn pattern_0101() -> OutcomePattern {
    OutcomePattern::new(vec![0, 1, 2, 3], vec![0, 1, 0, 1]).expect("valid pattern")
}

fn register_check(u: &Circuit, v: &Circuit) -> Result<usize> {
    if u.num_modes() != v.num_modes() {
        return Err(Error::Shape(format!("register mismatch: {}-mode U vs {}-mode V", u.num_modes(), v.num_modes())));
    }
    if u.num_modes() == 0 {
        return Err(Error::PairCount);
    }
    Ok(u.num_modes())
}

/// `|<T| X_A ⊗ Y_B |T>|² / <T|T>²` on the register-complete TMSS.
fn tmss_fidelity(x: &Circuit, y: &Circuit, r: f64, cutoff: usize) -> Result<f64> {
    let m = register_check(x, y)?;
    let tmss = make_tmss_register_complete(r, m, cutoff)?;
    let both = x.then(&y.shifted(m, 2 * m)?)?;
    let out = apply_circuit(&tmss, &Circuit::new(2 * m, both.gates().to_vec())?)?;
    let n = tmss.norm_sqr();
    Ok(tmss.inner(&out)?.norm_sqr() / (n * n))
}

/// `1 − |<TMSS| U_A V̄_B |TMSS>|²`, with `V̄` the entrywise conjugate of `V`.
///
/// `U` and `V` act on `M` register modes and the TMSS has `M` pairs. The TMSS
/// is truncated on the total register photon number, so every photon-number
/// sector is complete and `V = U` reads exactly zero.
pub fn overlap_cost(u: &Circuit, v: &Circuit, r: f64, cutoff: usize) -> Result<f64> {
    Ok((1.0 - tmss_fidelity(u, &v.conjugate(), r, cutoff)?).max(0.0))
}

/// `1 − |<TMSS| V_A V_B |TMSS>|²`: zero iff `V` is real in the Fock basis.
pub fn real_compile_cost(v: &Circuit, r: f64, cutoff: usize) -> Result<f64> {
    Ok((1.0 - tmss_fidelity(v, v, r, cutoff)?).max(0.0))
}

/// `D1(φ) = tanh²r / (2 cosh⁴r) · (1 − cos 2φ)`.
pub fn d1_analytic(phi: f64, r: f64) -> f64 {
    0.5 * tmss_0101(r) * (1.0 - (2.0 * phi).cos())
}

/// `D2(φ) = (1 − cos 2φ) / 2`.
pub fn d2_analytic(phi: f64) -> f64 {
    0.5 * (1.0 - (2.0 * phi).cos())
}

/// Count-based estimate `|1 − N_Q / N_P|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    pub numerator_count: u64,
    pub denominator_count: u64,
    pub shots: u64,
    /// Set when the denominator is a supplied precomputed count.
    pub regularized: bool,
    pub angle: f64,
}

/// Source of the `P` count in [`d2_estimate`].
#[derive(Clone, Copy, Debug)]
pub enum Denominator<'a> {
    /// Counts of a pattern in a sampled table with the same shot count.
    Counts(&'a CountTable, &'a OutcomePattern),
    /// A precomputed count for the same number of shots.
    Regularized(u64),
}

/// `D̂2 = |1 − Q/P|` from the numerator table and a denominator.
pub fn d2_estimate(
    q_table: &CountTable,
    q_pattern: &OutcomePattern,
    denominator: Denominator<'_>,
    angle: f64,
) -> Result<CostEstimate> {
    let nq = q_table.matching(q_pattern)?;
    let (np, regularized) = match denominator {
        Denominator::Counts(t, p) => {
            if t.shots() != q_table.shots() {
                return Err(Error::ShotMismatch(q_table.shots(), t.shots()));
            }
            (t.matching(p)?, false)
        }
        Denominator::Regularized(c) => (c, true),
    };
    if np == 0 {
        return Err(Error::InsufficientShots);
    }
    Ok(CostEstimate {
        value: (1.0 - nq as f64 / np as f64).abs(),
        numerator_count: nq,
        denominator_count: np,
        shots: q_table.shots(),
        regularized,
        angle,
    })
}

const EXAMPLE_CUTOFF: usize = 4;

/// `tanh²r / cosh⁴r`: the `(0,1,0,1)` probability with no gates, by simulation.
pub fn reflection_denominator(r: f64) -> Result<f64> {
    let s = make_tmss(r, 2, EXAMPLE_CUTOFF)?;
    fock_probability(&s, &pattern_0101())
}

/// Phase-space reflection cost on `[π/2, 3π/2]`.
///
/// The analytic path returns `cos²(φ/2)`. The simulated path applies
/// `e^{i(φ/2) n}` to `A1` and to `B1` (a total phase `φ` on the pair), then
/// `U_BS(π/4, 0)` on `(A1, A2)` and on `(B1, B2)`, and divides the `(0,1,0,1)`
/// probability by [`reflection_denominator`].
pub fn reflection_cost(phi: f64, r: f64, simulate: bool) -> Result<f64> {
    if !simulate {
        return Ok((0.5 * phi).cos().powi(2));
    }
    let q = reflection_numerator(phi / 2.0, r)?;
    let p = reflection_denominator(r)?;
    if p == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(q / p)
}

/// `(0,1,0,1)` probability after `e^{iα n}` on both `A1` and `B1` and a zero-phase
/// 50:50 beamsplitter on each register.
pub fn reflection_numerator(alpha: f64, r: f64) -> Result<f64> {
    let s = make_tmss(r, 2, EXAMPLE_CUTOFF)?;
    let c = Circuit::new(
        4,
        vec![
            GateOp::PhaseShift { mode: 0, phi: alpha },
            GateOp::PhaseShift { mode: 2, phi: alpha },
            GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi: 0.0 },
            GateOp::BeamSplitter { mode_a: 2, mode_b: 3, theta: FRAC_PI_4, phi: 0.0 },
        ],
    )?;
    fock_probability(&apply_circuit(&s, &c)?, &pattern_0101())
}

/// `<a†a>` on `mode`.
pub fn number_expectation(state: &PureState, mode: usize) -> Result<f64> {
    let space = state.space();
    space.check_mode(mode)?;
    Ok(state.amplitudes().iter().enumerate().map(|(i, a)| a.norm_sqr() * space.occupation(i, mode) as f64).sum())
}

/// `<−i a†b + i b†a>` evaluated directly on the amplitudes.
pub fn hopping_expectation(state: &PureState, mode_a: usize, mode_b: usize) -> Result<f64> {
    let space: FockSpace = state.space();
    space.check_mode(mode_a)?;
    space.check_mode(mode_b)?;
    if mode_a == mode_b {
        return Err(Error::DuplicateMode(mode_a));
    }
    let (sa, sb) = (space.stride(mode_a), space.stride(mode_b));
    let amps = state.amplitudes();
    // <a†b> = Σ conj(ψ[i + sa − sb]) ψ[i] √(n_b (n_a + 1))
    let mut x = num_complex::Complex64::new(0.0, 0.0);
    for (i, &psi) in amps.iter().enumerate() {
        let (na, nb) = (space.occupation(i, mode_a), space.occupation(i, mode_b));
        if nb == 0 || na + 1 >= space.cutoff() {
            continue;
        }
        let j = i - sb + sa;
        x += amps[j].conj() * psi * ((nb * (na + 1)) as f64).sqrt();
    }
    // −i<X> + i<X>* = 2 Im<X>
    Ok(2.0 * x.im)
}

/// `<n_a − n_b>` after `U_BS(π/4, −π/2)` on `(a, b)`, which equals
/// `<−i a†b + i b†a>` on the input state.
pub fn quadrature_via_rotation(state: &PureState, mode_a: usize, mode_b: usize) -> Result<f64> {
    let rotated = apply_gate(
        state,
        &GateOp::BeamSplitter { mode_a, mode_b, theta: FRAC_PI_4, phi: -std::f64::consts::FRAC_PI_2 },
    )?;
    Ok(number_expectation(&rotated, mode_a)? - number_expectation(&rotated, mode_b)?)
}

const OCCUPATION_CUTOFF: usize = 12;

/// TMSS on `(A1, B1) = (0, 2)` and vacuum on `(A2, B2) = (1, 3)`.
fn squeezed_vacuum_block(r: f64, cutoff: usize) -> Result<PureState> {
    let t = make_tmss(r, 1, cutoff)?;
    let space = FockSpace::new(4, cutoff)?;
    let mut amps = vec![num_complex::Complex64::new(0.0, 0.0); space.dim()];
    for n in 0..cutoff {
        amps[space.index(&[n, 0, n, 0])] = t.amplitude(&[n, n])?;
    }
    PureState::from_amplitudes(4, cutoff, amps)
}

fn block_with_beamsplitters(theta: f64, phi: f64, r: f64, cutoff: usize) -> Result<PureState> {
    let s = squeezed_vacuum_block(r, cutoff)?;
    let c = Circuit::new(
        4,
        vec![
            GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta, phi },
            GateOp::BeamSplitter { mode_a: 2, mode_b: 3, theta, phi },
        ],
    )?;
    apply_circuit(&s, &c)
}

/// `<n>` on one mode of a TMSS with the same truncation as the numerators.
fn occupation_denominator(r: f64, cutoff: usize) -> Result<f64> {
    let d = number_expectation(&make_tmss(r, 1, cutoff)?, 0)?;
    if d == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(d)
}

/// `|<−i a0†a1 + i a1†a0>| / <n2>` for `U_BS(π/4, φ)` on both registers of
/// `TMSS_04 ⊗ VAC_15`, with the numerator read out through the extra
/// beamsplitter layer. Equals `|sin φ|`.
pub fn occupation_phase_cost(phi: f64, r: f64) -> Result<f64> {
    let den = occupation_denominator(r, OCCUPATION_CUTOFF)?;
    let s = block_with_beamsplitters(FRAC_PI_4, phi, r, OCCUPATION_CUTOFF)?;
    Ok((quadrature_via_rotation(&s, 0, 1)? / den).abs())
}

/// `|<n0 − n1>| / <n2>` for `U_BS(θ, 0)` on both registers of
/// `TMSS_04 ⊗ VAC_15`. Equals `|cos 2θ|`.
pub fn occupation_theta_cost(theta: f64, r: f64) -> Result<f64> {
    let den = occupation_denominator(r, OCCUPATION_CUTOFF)?;
    let s = block_with_beamsplitters(theta, 0.0, r, OCCUPATION_CUTOFF)?;
    Ok(((number_expectation(&s, 0)? - number_expectation(&s, 1)?) / den).abs())
}

/// Numerator state of the occupation costs at a custom cutoff (for convergence checks).
pub fn occupation_block(theta: f64, phi: f64, r: f64, cutoff: usize) -> Result<PureState> {
    block_with_beamsplitters(theta, phi, r, cutoff)
}
