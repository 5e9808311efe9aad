//! Parameter-shift and finite-difference derivatives with respect to a phase
//! shared by several gates.
//!
//! For an observable that is a first-order trigonometric polynomial in each
//! marked gate's phase, `[f(φ+s) − f(φ−s)] / (2 sin s)` with the shift applied
//! to one gate at a time, summed over gates, is the exact derivative. With
//! `s = π/2` the coefficient is `1/2`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use crate::cost::{hopping_expectation, number_expectation, pattern_0101, tmss_0101};
use crate::error::{Error, Result};
use crate::fock::{fock_probability, make_tmss_register_complete, OutcomePattern, PureState};
use crate::measure::{derive_seed, empirical_probability, outcome_distribution, sample_counts};
use crate::optics::{apply_circuit, apply_gate, Circuit, GateOp};

/// How an objective is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Exact probabilities/expectations from the simulated state.
    Exact,
    /// Estimates from `shots` samples; each evaluation gets a derived seed.
    Sampled { shots: u64, seed: u64 },
}

/// The scalar that is differentiated.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// Probability of a pattern.
    Probability(OutcomePattern),
    /// `1 − q / reference`, where `q` is the pattern probability and
    /// `reference` the precomputed `P`; this is `D2` wherever `q <= P`.
    LikelihoodGap { pattern: OutcomePattern, reference: f64 },
    /// `<−i a†b + i b†a>`; sampled through `U_BS(π/4, −π/2)` and `<n_a − n_b>`.
    Hopping { mode_a: usize, mode_b: usize },
}

/// A circuit template whose marked gates share one phase parameter.
#[derive(Clone, Debug)]
pub struct GradientRequest {
    pub input: PureState,
    pub template: Circuit,
    /// Gate positions whose phase (beamsplitter `phi` or phase-shift `phi`)
    /// is the parameter.
    pub marked: Vec<usize>,
    pub observable: Observable,
    pub backend: Backend,
    pub shift: f64,
}

const EXAMPLE_CUTOFF: usize = 4;

impl GradientRequest {
    pub fn new(
        input: PureState,
        template: Circuit,
        marked: Vec<usize>,
        observable: Observable,
        backend: Backend,
    ) -> Result<Self> {
        let req = Self { input, template, marked, observable, backend, shift: FRAC_PI_2 };
        req.check()?;
        Ok(req)
    }

    pub fn with_shift(mut self, shift: f64) -> Result<Self> {
        self.shift = shift;
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        if self.marked.is_empty() {
            return Err(Error::NoMarkedPositions);
        }
        if !(self.shift.is_finite() && self.shift.sin().abs() > 1e-12) {
            return Err(Error::Parameter { name: "shift", value: self.shift });
        }
        for &g in &self.marked {
            match self.template.gates().get(g) {
                Some(GateOp::BeamSplitter { .. } | GateOp::PhaseShift { .. }) => {}
                _ => return Err(Error::NotPhaseGate(g)),
            }
        }
        if let Backend::Sampled { shots: 0, .. } = self.backend {
            return Err(Error::Parameter { name: "shots", value: 0.0 });
        }
        Ok(())
    }

    /// `U_BS(π/4, φ)` on both registers of `TMSS ⊗ TMSS` at `r = 1`, local
    /// layout `(A1, A2, B1, B2)`, observable `1 − q/P` on `(0,1,0,1)` with
    /// the exact `P = tanh²1 / cosh⁴1`.
    pub fn example_two(backend: Backend) -> Result<Self> {
        let input = make_tmss_register_complete(1.0, 2, EXAMPLE_CUTOFF)?;
        let template = Circuit::new(
            4,
            vec![
                GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi: 0.0 },
                GateOp::BeamSplitter { mode_a: 2, mode_b: 3, theta: FRAC_PI_4, phi: 0.0 },
            ],
        )?;
        let observable = Observable::LikelihoodGap { pattern: pattern_0101(), reference: tmss_0101(1.0) };
        Self::new(input, template, vec![0, 1], observable, backend)
    }

    /// The template with marked gate `g` at phase `phases[k]` for `marked[k] = g`.
    fn bind(&self, phases: &[f64]) -> Result<Circuit> {
        let mut gates = self.template.gates().to_vec();
        for (&g, &p) in self.marked.iter().zip(phases) {
            match &mut gates[g] {
                GateOp::BeamSplitter { phi, .. } | GateOp::PhaseShift { phi, .. } => *phi = p,
                _ => return Err(Error::NotPhaseGate(g)),
            }
        }
        Circuit::new(self.template.num_modes(), gates)
    }

    fn evaluate_phases(&self, phases: &[f64], stream: u64) -> Result<f64> {
        let state = apply_circuit(&self.input, &self.bind(phases)?)?;
        match (&self.observable, self.backend) {
            (Observable::Probability(p), Backend::Exact) => fock_probability(&state, p),
            (Observable::LikelihoodGap { pattern, reference }, Backend::Exact) => {
                Ok(1.0 - fock_probability(&state, pattern)? / reference)
            }
            (Observable::Hopping { mode_a, mode_b }, Backend::Exact) => hopping_expectation(&state, *mode_a, *mode_b),
            (Observable::Probability(p), Backend::Sampled { shots, seed }) => {
                sampled_probability(&state, p, shots, derive_seed(seed, stream))
            }
            (Observable::LikelihoodGap { pattern, reference }, Backend::Sampled { shots, seed }) => {
                Ok(1.0 - sampled_probability(&state, pattern, shots, derive_seed(seed, stream))? / reference)
            }
            (Observable::Hopping { mode_a, mode_b }, Backend::Sampled { shots, seed }) => {
                let rot = apply_gate(
                    &state,
                    &GateOp::BeamSplitter { mode_a: *mode_a, mode_b: *mode_b, theta: FRAC_PI_4, phi: -FRAC_PI_2 },
                )?;
                let dist = outcome_distribution(&rot, &[*mode_a, *mode_b])?;
                let t = sample_counts(&dist, shots, derive_seed(seed, stream))?;
                let mean: f64 = t.iter().map(|(k, c)| (k[0] as f64 - k[1] as f64) * c as f64).sum();
                Ok(mean / shots as f64)
            }
        }
    }

    /// Objective with every marked gate at phase `phi`.
    pub fn evaluate(&self, phi: f64) -> Result<f64> {
        self.evaluate_phases(&vec![phi; self.marked.len()], 0)
    }

    /// Same as [`GradientRequest::evaluate`] with an explicit sampling stream.
    pub fn evaluate_stream(&self, phi: f64, stream: u64) -> Result<f64> {
        self.evaluate_phases(&vec![phi; self.marked.len()], stream)
    }

    /// Another request with a different sampling seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut r = self.clone();
        if let Backend::Sampled { shots, .. } = r.backend {
            r.backend = Backend::Sampled { shots, seed };
        }
        r
    }
}

fn sampled_probability(state: &PureState, pattern: &OutcomePattern, shots: u64, seed: u64) -> Result<f64> {
    let dist = outcome_distribution(state, pattern.modes())?;
    let table = sample_counts(&dist, shots, seed)?;
    empirical_probability(&table, pattern)
}

/// `Σ_g [f(φ + s at g) − f(φ − s at g)] / (2 sin s)`.
pub fn parameter_shift_gradient(req: &GradientRequest, phi: f64) -> Result<f64> {
    req.check()?;
    let k = req.marked.len();
    let mut total = 0.0;
    for g in 0..k {
        let mut plus = vec![phi; k];
        let mut minus = vec![phi; k];
        plus[g] += req.shift;
        minus[g] -= req.shift;
        // streams 0 is reserved for plain evaluations
        let fp = req.evaluate_phases(&plus, 2 * g as u64 + 1)?;
        let fm = req.evaluate_phases(&minus, 2 * g as u64 + 2)?;
        total += (fp - fm) / (2.0 * req.shift.sin());
    }
    Ok(total)
}

/// `(f(φ + h) − f(φ − h)) / 2h`.
pub fn finite_difference<F: FnMut(f64) -> Result<f64>>(mut f: F, phi: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Parameter { name: "h", value: h });
    }
    Ok((f(phi + h)? - f(phi - h)?) / (2.0 * h))
}

/// `<n_mode>` of the request's output state, exposed for diagnostics.
pub fn output_occupation(req: &GradientRequest, phi: f64, mode: usize) -> Result<f64> {
    let state = apply_circuit(&req.input, &req.bind(&vec![phi; req.marked.len()])?)?;
    number_expectation(&state, mode)
}
