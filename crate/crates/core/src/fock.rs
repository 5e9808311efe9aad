//! Truncated Fock-basis pure states.
//!
//! A state on `num_modes` modes with cutoff `d` stores `d^num_modes`
//! amplitudes. Occupations run over `0..d` and the flat index is
//! lexicographic with mode 0 most significant, so `(n0, n1, ..)` maps to
//! `n0 * d^(m-1) + n1 * d^(m-2) + ..`. Every module that talks about outcome
//! patterns relies on this ordering.
//!
//! Truncated states are never renormalised: the amplitudes that fit below
//! the cutoff are exact and the missing probability mass is reported by
//! [`truncation_weight`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const NORM_TOL: f64 = 1e-12;

/// Index arithmetic for a truncated multimode Fock space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FockSpace {
    num_modes: usize,
    cutoff: usize,
    dim: usize,
}

impl FockSpace {
    pub fn new(num_modes: usize, cutoff: usize) -> Result<Self> {
        if cutoff < 1 {
            return Err(Error::Cutoff { min: 1, got: cutoff });
        }
        let dim = u32::try_from(num_modes)
            .ok()
            .and_then(|m| cutoff.checked_pow(m))
            .ok_or_else(|| Error::TooLarge(format!("{cutoff}^{num_modes} basis states")))?;
        Ok(Self { num_modes, cutoff, dim })
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Distance in the flat vector between neighbouring occupations of `mode`.
    pub fn stride(&self, mode: usize) -> usize {
        self.cutoff.pow((self.num_modes - 1 - mode) as u32)
    }

    pub fn index(&self, occupations: &[usize]) -> usize {
        occupations.iter().fold(0, |acc, &n| acc * self.cutoff + n)
    }

    pub fn occupation(&self, index: usize, mode: usize) -> usize {
        (index / self.stride(mode)) % self.cutoff
    }

    pub fn occupations(&self, mut index: usize) -> Vec<usize> {
        let mut occ = vec![0; self.num_modes];
        for slot in occ.iter_mut().rev() {
            *slot = index % self.cutoff;
            index /= self.cutoff;
        }
        occ
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.num_modes {
            return Err(Error::ModeOutOfRange { mode, num_modes: self.num_modes });
        }
        Ok(())
    }
}

/// Dense amplitude vector over a truncated Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    space: FockSpace,
    amplitudes: Vec<Complex64>,
}

impl PureState {
    pub fn vacuum(num_modes: usize, cutoff: usize) -> Result<Self> {
        let space = FockSpace::new(num_modes, cutoff)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); space.dim()];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self { space, amplitudes })
    }

    /// Wraps an amplitude vector, checking its length and that the squared
    /// norm does not exceed one.
    pub fn from_amplitudes(num_modes: usize, cutoff: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        let space = FockSpace::new(num_modes, cutoff)?;
        if amplitudes.len() != space.dim() {
            return Err(Error::LengthMismatch(amplitudes.len(), space.dim()));
        }
        let state = Self { space, amplitudes };
        let n = state.norm_sqr();
        if n > 1.0 + NORM_TOL || !n.is_finite() {
            return Err(Error::Norm(n));
        }
        Ok(state)
    }

    pub(crate) fn from_parts(space: FockSpace, amplitudes: Vec<Complex64>) -> Self {
        debug_assert_eq!(space.dim(), amplitudes.len());
        Self { space, amplitudes }
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn num_modes(&self) -> usize {
        self.space.num_modes
    }

    pub fn cutoff(&self) -> usize {
        self.space.cutoff
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    /// Amplitude of the basis state with the given per-mode occupations.
    pub fn amplitude(&self, occupations: &[usize]) -> Result<Complex64> {
        if occupations.len() != self.num_modes() {
            return Err(Error::LengthMismatch(occupations.len(), self.num_modes()));
        }
        for (mode, &n) in occupations.iter().enumerate() {
            if n >= self.cutoff() {
                return Err(Error::Occupation { mode, occupation: n, cutoff: self.cutoff() });
            }
        }
        Ok(self.amplitudes[self.space.index(occupations)])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        if self.space != other.space {
            return Err(Error::Shape(format!(
                "{}-mode cutoff {} vs {}-mode cutoff {}",
                self.num_modes(),
                self.cutoff(),
                other.num_modes(),
                other.cutoff()
            )));
        }
        Ok(self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum())
    }

    /// Basis-state probabilities `|amplitude|^2` in flat-index order.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Keeps only basis states whose total occupation over `modes` is at most
    /// `max_photons`.
    pub fn project_photon_number(&self, modes: &[usize], max_photons: usize) -> Result<PureState> {
        for &m in modes {
            self.space.check_mode(m)?;
        }
        let amplitudes = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let n: usize = modes.iter().map(|&m| self.space.occupation(i, m)).sum();
                if n <= max_photons {
                    a
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Ok(Self { space: self.space, amplitudes })
    }
}

/// Photon-number pattern on an ordered list of modes, e.g. `(0,1,0,1)` on
/// modes `0,1,4,5`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutcomePattern {
    modes: Vec<usize>,
    occupations: Vec<usize>,
}

impl OutcomePattern {
    pub fn new(modes: Vec<usize>, occupations: Vec<usize>) -> Result<Self> {
        if modes.len() != occupations.len() {
            return Err(Error::LengthMismatch(modes.len(), occupations.len()));
        }
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].contains(m) {
                return Err(Error::DuplicateMode(*m));
            }
        }
        Ok(Self { modes, occupations })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn occupations(&self) -> &[usize] {
        &self.occupations
    }

    /// Checks the pattern against a state's mode count and cutoff.
    pub fn check(&self, space: &FockSpace) -> Result<()> {
        for (&mode, &n) in self.modes.iter().zip(&self.occupations) {
            space.check_mode(mode)?;
            if n >= space.cutoff() {
                return Err(Error::Occupation { mode, occupation: n, cutoff: space.cutoff() });
            }
        }
        Ok(())
    }

    pub(crate) fn matches(&self, space: &FockSpace, index: usize) -> bool {
        self.modes.iter().zip(&self.occupations).all(|(&m, &n)| space.occupation(index, m) == n)
    }
}

fn tmss_pair_amplitudes(r: f64, cutoff: usize) -> Result<Vec<f64>> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Parameter { name: "r", value: r });
    }
    let (t, c) = (r.tanh(), r.cosh());
    Ok((0..cutoff).map(|n| t.powi(n as i32) / c).collect())
}

fn tmss_with(r: f64, pair_count: usize, cutoff: usize, max_register: Option<usize>) -> Result<PureState> {
    if cutoff < 2 {
        return Err(Error::Cutoff { min: 2, got: cutoff });
    }
    if pair_count < 1 {
        return Err(Error::PairCount);
    }
    let amp = tmss_pair_amplitudes(r, cutoff)?;
    let space = FockSpace::new(2 * pair_count, cutoff)?;
    let pair_space = FockSpace::new(pair_count, cutoff)?;
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); space.dim()];
    for k in 0..pair_space.dim() {
        let occ = pair_space.occupations(k);
        if let Some(max) = max_register {
            if occ.iter().sum::<usize>() > max {
                continue;
            }
        }
        let mut index = 0;
        let mut value = 1.0;
        for (j, &n) in occ.iter().enumerate() {
            index += n * (space.stride(j) + space.stride(j + pair_count));
            value *= amp[n];
        }
        amplitudes[index] = Complex64::new(value, 0.0);
    }
    Ok(PureState { space, amplitudes })
}

/// Product of `pair_count` two-mode squeezed vacua with squeezing `r`.
///
/// Pair `j` couples mode `j` with mode `j + pair_count`, so two pairs laid out
/// as `(A1, A2, B1, B2)` reproduce the X8 connectivity 04/15 on modes 0145.
/// The amplitude of `|n>|n>` is `tanh(r)^n / cosh(r)`; occupations at or above
/// the cutoff are dropped without renormalising.
pub fn make_tmss(r: f64, pair_count: usize, cutoff: usize) -> Result<PureState> {
    tmss_with(r, pair_count, cutoff, None)
}

/// Like [`make_tmss`] but truncated on the register photon number: only
/// terms with `n_1 + .. + n_M <= cutoff - 1` are kept. Every photon-number
/// sector of the A register is then complete, which makes linear-optical
/// unitaries act exactly on the truncated state.
pub fn make_tmss_register_complete(r: f64, pair_count: usize, cutoff: usize) -> Result<PureState> {
    tmss_with(r, pair_count, cutoff, Some(cutoff - 1))
}

/// `a ⊗ b`, with the modes of `a` first.
pub fn tensor_product(a: &PureState, b: &PureState) -> Result<PureState> {
    if a.cutoff() != b.cutoff() {
        return Err(Error::CutoffMismatch(a.cutoff(), b.cutoff()));
    }
    let space = FockSpace::new(a.num_modes() + b.num_modes(), a.cutoff())?;
    let mut amplitudes = Vec::with_capacity(space.dim());
    for x in &a.amplitudes {
        amplitudes.extend(b.amplitudes.iter().map(|y| x * y));
    }
    Ok(PureState { space, amplitudes })
}

/// Probability of `pattern`, marginalising the unlisted modes.
pub fn fock_probability(state: &PureState, pattern: &OutcomePattern) -> Result<f64> {
    pattern.check(&state.space)?;
    Ok(state
        .amplitudes
        .iter()
        .enumerate()
        .filter(|(i, _)| pattern.matches(&state.space, *i))
        .map(|(_, a)| a.norm_sqr())
        .sum())
}

/// Probability mass lost to truncation, `1 - ||psi||^2` clamped at zero.
pub fn truncation_weight(state: &PureState) -> f64 {
    (1.0 - state.norm_sqr()).max(0.0)
}
