//! Truncated Fock-basis simulation of X8-class photonic processors and a
//! small variational compiling toolkit built on top of it.
//!
//! Modules, bottom-up:
//!
//! * [`fock`]: pure states, two-mode squeezed vacuum, outcome patterns.
//! * [`optics`]: phase shifts, beamsplitters, Mach-Zehnder gates.
//! * [`noise`]: density matrices and the thermal loss channel.
//! * [`measure`]: outcome distributions, seeded shot sampling, count tables.
//! * [`cost`]: analytic and simulated cost functions.
//! * [`gradient`]: parameter-shift and finite-difference gradients.
//! * [`device`]: the constrained virtual X8 (validation, precompilation, jobs).
//! * [`driver`]: sweeps, resolution analysis and the compiling loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN

pub mod cost;
pub mod device;
pub mod driver;
pub mod error;
pub mod fock;
pub mod gradient;
pub mod measure;
pub mod noise;
pub mod optics;

pub use cost::{
    d1_analytic, d2_analytic, d2_estimate, hopping_expectation, number_expectation, occupation_phase_cost,
    occupation_theta_cost, overlap_cost, quadrature_via_rotation, real_compile_cost, reflection_cost,
    reflection_denominator, CostEstimate, Denominator,
};
pub use device::{
    precompile_exact, precompile_two_mode, prepare_job, prepare_job_modes, run_job, validate_job, DeviceJob,
    JobDistribution, JobGate, NativeCircuit, NoiseConfig, Placement, Violation,
};
pub use driver::{
    compile_phase, linspace, read_sweep_csv, resolution_analysis, run_sweep, run_sweep_seeds, write_sweep_csv,
    CompileConfig, CompileStep, CompileTrace, DenominatorMode, ResolutionRow, SweepConfig, SweepResult, SweepRow,
    Termination,
};
pub use error::{Error, Result};
pub use fock::{
    fock_probability, make_tmss, make_tmss_register_complete, tensor_product, truncation_weight, FockSpace,
    OutcomePattern, PureState,
};
pub use gradient::{finite_difference, parameter_shift_gradient, Backend, GradientRequest, Observable};
pub use measure::{derive_seed, empirical_probability, outcome_distribution, sample_counts, CountTable, Distribution};
pub use noise::{apply_channel, promote, thermal_loss_kraus, KrausSet, MixedState};
pub use optics::{
    apply_circuit, apply_gate, bs_two_mode_matrix, distance_up_to_phase, layered_ansatz, mz_decompose, Circuit, GateOp,
    SectorBlocks,
};

pub use num_complex::Complex64;
