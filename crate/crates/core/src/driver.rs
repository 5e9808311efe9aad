//! Experiment drivers: φ-grid sweeps of the sampled cost, the shot/resolution
//! law, and the gradient-descent compiling loop.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{d2_analytic, d2_estimate, tmss_0101, Denominator};
use crate::device::{prepare_job_modes, DeviceJob, NoiseConfig, Placement};
use crate::error::{Error, Result};
use crate::fock::OutcomePattern;
use crate::gradient::{parameter_shift_gradient, Backend, GradientRequest};
use crate::measure::derive_seed;
use crate::optics::Circuit;

/// Modes carrying the numerator pattern.
pub const Q_MODES: [usize; 4] = [0, 1, 4, 5];
/// Modes carrying the same pattern with no gates, for parallel `P` estimates.
pub const P_MODES: [usize; 4] = [2, 3, 6, 7];
const PATTERN: [usize; 4] = [0, 1, 0, 1];
const P_STREAM: u64 = 1 << 62;

/// How the `P` count in `|1 − Q/P|` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// One gate-free job per sweep, shared by every row.
    #[default]
    Precomputed,
    /// A fresh gate-free job for every `(φ, run)`.
    Paired,
    /// The same pattern on modes 2367 of the numerator job itself.
    Parallel,
    /// A fixed count; `None` uses the expected count of the gate-free job
    /// under the configured noise model, rounded.
    Regularized(Option<u64>),
}

impl DenominatorMode {
    fn name(&self) -> &'static str {
        match self {
            DenominatorMode::Precomputed => "precomputed",
            DenominatorMode::Paired => "paired",
            DenominatorMode::Parallel => "parallel",
            DenominatorMode::Regularized(_) => "regularized",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub shots: u64,
    pub runs: usize,
    pub noise: Option<NoiseConfig>,
    pub denominator: DenominatorMode,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: linspace(-FRAC_PI_2, FRAC_PI_2, 21).expect("valid grid"),
            shots: 50_000,
            runs: 1,
            noise: None,
            denominator: DenominatorMode::Precomputed,
            seed: 0,
        }
    }
}

/// `points` evenly spaced values from `min` to `max` inclusive.
pub fn linspace(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if points == 0 || !(min.is_finite() && max.is_finite()) || (points > 1 && !(max > min)) {
        return Err(Error::Parse(format!("bad grid [{min}, {max}] with {points} points")));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    let step = (max - min) / (points - 1) as f64;
    Ok((0..points).map(|i| if i + 1 == points { max } else { min + step * i as f64 }).collect())
}

/// One `(φ, run)` row of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub phi: f64,
    pub run: usize,
    pub q_count: u64,
    pub p_count_or_regularizer: u64,
    pub d2_estimate: Option<f64>,
    pub d2_analytic: f64,
    pub seed: u64,
    pub p_seed: Option<u64>,
    pub shots: u64,
    pub denominator: String,
    pub regularized: bool,
    pub eta: Option<f64>,
    pub nbar: Option<f64>,
    pub placement: Option<Placement>,
    /// `ok`, or `zero_denominator` when `P` had no counts.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub grid: Vec<f64>,
    pub shots: u64,
    pub runs: usize,
}

impl SweepResult {
    /// `|1 − ΣQ/ΣP|` per grid point, pooled over runs.
    pub fn pooled_estimates(&self) -> Vec<(f64, Option<f64>)> {
        self.grid
            .iter()
            .map(|&phi| {
                let rows = self.rows.iter().filter(|r| r.phi == phi);
                let (q, p) = rows.fold((0u64, 0u64), |(q, p), r| (q + r.q_count, p + r.p_count_or_regularizer));
                (phi, (p > 0).then(|| (1.0 - q as f64 / p as f64).abs()))
            })
            .collect()
    }

    /// Grid point with the smallest pooled estimate (first one on ties).
    pub fn argmin(&self) -> Option<f64> {
        self.pooled_estimates()
            .into_iter()
            .filter_map(|(phi, e)| e.map(|e| (phi, e)))
            .fold(None, |best: Option<(f64, f64)>, (phi, e)| match best {
                Some((_, b)) if b <= e => best,
                _ => Some((phi, e)),
            })
            .map(|(phi, _)| phi)
    }
}

fn pattern(modes: [usize; 4]) -> OutcomePattern {
    OutcomePattern::new(modes.to_vec(), PATTERN.to_vec()).expect("fixed pattern")
}

/// The gate-free reference job.
fn p_job(shots: u64, seed: u64, noise: &Option<NoiseConfig>) -> DeviceJob {
    let job = DeviceJob::new(&Circuit::empty(4), [true; 4], shots, seed);
    match noise {
        Some(n) => job.with_noise(n.clone()),
        None => job,
    }
}

/// Runs the noisy or noiseless `U_BS(π/4, φ)` job over the grid.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    Ok(run_sweep_seeds(config, &[config.seed])?.remove(0))
}

/// One sweep per seed (each as [`run_sweep`] with `config.seed` replaced),
/// simulating every grid point once.
pub fn run_sweep_seeds(config: &SweepConfig, seeds: &[u64]) -> Result<Vec<SweepResult>> {
    let grid = &config.grid;
    if grid.is_empty() {
        return Err(Error::Parse("empty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parse("grid must be strictly increasing".into()));
    }
    if config.shots == 0 || config.runs == 0 {
        return Err(Error::Parameter { name: "shots/runs", value: 0.0 });
    }
    let noise = &config.noise;
    let shots = config.shots;
    let p_pattern = pattern(P_MODES);
    let q_pattern = pattern(Q_MODES);
    let model_p = match config.denominator {
        DenominatorMode::Regularized(None) => {
            let p = prepare_job_modes(&p_job(shots, 0, noise), Some(&Q_MODES))?.probability(&q_pattern)?;
            Some((shots as f64 * p).round() as u64)
        }
        _ => None,
    };
    let p_sampler = match config.denominator {
        DenominatorMode::Precomputed | DenominatorMode::Paired => {
            Some(prepare_job_modes(&p_job(shots, 0, noise), Some(&Q_MODES))?.sampler(&Q_MODES)?)
        }
        _ => None,
    };
    let p_count = |seed: u64| -> Result<u64> {
        p_sampler.as_ref().expect("gate-free sampler").sample(shots, seed)?.matching(&q_pattern)
    };
    let shared_p = seeds
        .iter()
        .map(|&seed| {
            Ok(match config.denominator {
                DenominatorMode::Precomputed => {
                    let s = derive_seed(seed, P_STREAM);
                    Some((p_count(s)?, Some(s)))
                }
                DenominatorMode::Regularized(Some(c)) => Some((c, None)),
                DenominatorMode::Regularized(None) => Some((model_p.expect("model count"), None)),
                _ => None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sample_modes: &[usize] = match config.denominator {
        DenominatorMode::Parallel => &[0, 1, 2, 3, 4, 5, 6, 7],
        _ => &Q_MODES,
    };
    // per grid point, per seed, per run
    let per_point = grid
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| {
            let mut job = DeviceJob::example_two(phi, shots, 0);
            job.noise = noise.clone();
            let sampler = prepare_job_modes(&job, Some(sample_modes))?.sampler(sample_modes)?;
            seeds
                .iter()
                .zip(&shared_p)
                .map(|(&base, shared)| {
                    (0..config.runs)
                        .map(|run| {
                            let seed = derive_seed(base, (i * config.runs + run) as u64);
                            let table = sampler.sample(shots, seed)?;
                            let (p, p_seed) = match config.denominator {
                                DenominatorMode::Parallel => (table.matching(&p_pattern)?, None),
                                DenominatorMode::Paired => {
                                    let s = derive_seed(seed, P_STREAM);
                                    (p_count(s)?, Some(s))
                                }
                                _ => shared.expect("shared denominator"),
                            };
                            let (d2, status) = match d2_estimate(&table, &q_pattern, Denominator::Regularized(p), phi) {
                                Ok(e) => (Some(e.value), "ok"),
                                Err(Error::InsufficientShots) => (None, "zero_denominator"),
                                Err(e) => return Err(e),
                            };
                            Ok(SweepRow {
                                phi,
                                run,
                                q_count: table.matching(&q_pattern)?,
                                p_count_or_regularizer: p,
                                d2_estimate: d2,
                                d2_analytic: d2_analytic(phi),
                                seed,
                                p_seed,
                                shots,
                                denominator: config.denominator.name().into(),
                                regularized: matches!(config.denominator, DenominatorMode::Regularized(_)),
                                eta: noise.as_ref().map(|n| n.eta),
                                nbar: noise.as_ref().map(|n| n.nbar),
                                placement: noise.as_ref().map(|n| n.placement),
                                status: status.into(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..seeds.len())
        .map(|k| SweepResult {
            rows: per_point.iter().flat_map(|p| p[k].iter().cloned()).collect(),
            grid: grid.clone(),
            shots,
            runs: config.runs,
        })
        .collect())
}

/// Writes one CSV row per `(φ, run)` with a header naming the row fields.
pub fn write_sweep_csv<W: Write>(result: &SweepResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &result.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<SweepResult> {
    let rows: Vec<SweepRow> = csv::Reader::from_reader(reader).deserialize().collect::<std::result::Result<_, _>>()?;
    let first = rows.first().ok_or_else(|| Error::Parse("sweep CSV has no rows".into()))?;
    let shots = first.shots;
    let mut grid: Vec<f64> = Vec::new();
    for r in &rows {
        if !grid.contains(&r.phi) {
            grid.push(r.phi);
        }
    }
    let runs = rows.iter().map(|r| r.run + 1).max().unwrap_or(0);
    Ok(SweepResult { rows, grid, shots, runs })
}

/// Offset `δ` from `φ = π/2` at which `M` shots expect one `(0,1,0,1)` count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub shots: u64,
    pub delta: f64,
    /// `√(10 / M)`.
    pub reference: f64,
    pub ratio: f64,
}

/// Solves `M · p(1 + cos 2φ)/2 = 1` at `φ = π/2 − δ`, with `p` the
/// `(0,1,0,1)` probability at `r = 1`.
pub fn resolution_analysis(shots_list: &[u64]) -> Result<Vec<ResolutionRow>> {
    let half = 0.5 * tmss_0101(1.0);
    shots_list
        .iter()
        .map(|&m| {
            if m < 10 {
                return Err(Error::Parameter { name: "shots", value: m as f64 });
            }
            let expected = |delta: f64| m as f64 * half * (1.0 + (2.0 * (FRAC_PI_2 - delta)).cos());
            // expected count rises monotonically on [0, π/2]
            let (mut lo, mut hi) = (0.0, FRAC_PI_2);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if expected(mid) >= 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let reference = (10.0 / m as f64).sqrt();
            Ok(ResolutionRow { shots: m, delta: hi, reference, ratio: hi / reference })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompileConfig {
    pub phi0: f64,
    pub lr: f64,
    pub max_iters: usize,
    pub backend: Backend,
    /// Stop once `|gradient|` falls below this.
    pub tol: f64,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self { phi0: 1.0, lr: 0.3, max_iters: 100, backend: Backend::Exact, tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileStep {
    pub step: usize,
    pub phi: f64,
    pub cost: f64,
    pub gradient: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileTrace {
    pub steps: Vec<CompileStep>,
    pub final_phi: f64,
    pub termination: Termination,
}

/// Gradient descent `φ ← φ − lr·ĝ(φ)` on the cost of `U_BS(π/4, φ)`
/// against the zero-phase target.
pub fn compile_phase(config: &CompileConfig) -> Result<CompileTrace> {
    if !(config.phi0.abs() <= FRAC_PI_2) {
        return Err(Error::Parameter { name: "phi0", value: config.phi0 });
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::Parameter { name: "lr", value: config.lr });
    }
    let base = GradientRequest::example_two(config.backend)?;
    let base_seed = match config.backend {
        Backend::Sampled { seed, .. } => seed,
        Backend::Exact => 0,
    };
    let mut phi = config.phi0;
    let mut steps = Vec::new();
    for t in 0..config.max_iters {
        let req = base.reseeded(derive_seed(base_seed, t as u64));
        let cost = req.evaluate(phi)?;
        let gradient = parameter_shift_gradient(&req, phi)?;
        steps.push(CompileStep { step: t, phi, cost, gradient, lr: config.lr });
        if gradient.abs() < config.tol {
            return Ok(CompileTrace { steps, final_phi: phi, termination: Termination::GradientTolerance });
        }
        phi -= config.lr * gradient;
        if !(phi.abs() <= PI) {
            let trace = CompileTrace { steps, final_phi: phi, termination: Termination::Diverged };
            return Err(Error::Diverged(Box::new(trace)));
        }
    }
    Ok(CompileTrace { steps, final_phi: phi, termination: Termination::MaxIterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_helpers() {
        let g = linspace(-FRAC_PI_2, FRAC_PI_2, 21).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[10], 0.0);
        assert_eq!(g[20], FRAC_PI_2);
        assert!(linspace(1.0, 0.0, 3).is_err());
        assert!(linspace(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn resolution_closed_form() {
        let rows = resolution_analysis(&[100, 10_000]).unwrap();
        for r in &rows {
            let closed = (1.0 / (tmss_0101(1.0) * r.shots as f64).sqrt()).asin();
            assert!((r.delta - closed).abs() < 1e-12);
        }
        assert!((0.016..0.063).contains(&rows[1].delta));
        assert!(rows[0].delta > rows[1].delta);
        assert!(resolution_analysis(&[9]).is_err());
    }

    #[test]
    fn exact_descent_matches_iteration_oracle() {
        let trace = compile_phase(&CompileConfig::default()).unwrap();
        // oracle: direct iteration of φ ← φ − lr sin 2φ
        let mut phi: f64 = 1.0;
        for s in &trace.steps {
            assert!((s.phi - phi).abs() < 1e-10);
            assert!((s.gradient - (2.0 * phi).sin()).abs() < 1e-10);
            phi -= 0.3 * (2.0 * phi).sin();
        }
        assert!(trace.final_phi.abs() < 0.01);
        assert!(trace.steps.len() <= 100);
        assert_eq!(trace.termination, Termination::GradientTolerance);
        for (i, s) in trace.steps.iter().enumerate() {
            assert_eq!(s.step, i);
        }
    }

    #[test]
    fn stationary_start() {
        let t = compile_phase(&CompileConfig { phi0: 0.0, ..Default::default() }).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.final_phi, 0.0);
    }

    #[test]
    fn divergence_guard_keeps_trace() {
        let err = compile_phase(&CompileConfig { phi0: 1.0, lr: 50.0, ..Default::default() }).unwrap_err();
        match err {
            Error::Diverged(t) => {
                assert!(!t.steps.is_empty());
                assert!(t.final_phi.abs() > PI);
            }
            e => panic!("{e}"),
        }
        assert!(compile_phase(&CompileConfig { phi0: 2.0, ..Default::default() }).is_err());
        assert!(compile_phase(&CompileConfig { lr: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn sweep_csv_round_trip() {
        let cfg = SweepConfig {
            grid: linspace(-0.5, 0.5, 3).unwrap(),
            shots: 2_000,
            runs: 2,
            noise: Some(NoiseConfig::new(0.9, 2.0, Placement::After)),
            denominator: DenominatorMode::Paired,
            seed: 4,
        };
        let r = run_sweep(&cfg).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r, run_sweep(&cfg).unwrap());
        let mut buf = Vec::new();
        write_sweep_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("phi,run,q_count,p_count_or_regularizer,d2_estimate,d2_analytic,seed"));
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn zero_denominator_rows_are_flagged() {
        let cfg = SweepConfig {
            grid: vec![0.0],
            shots: 10,
            runs: 1,
            noise: None,
            denominator: DenominatorMode::Regularized(Some(0)),
            seed: 0,
        };
        let r = run_sweep(&cfg).unwrap();
        assert_eq!(r.rows[0].status, "zero_denominator");
        assert_eq!(r.rows[0].d2_estimate, None);
    }
}
