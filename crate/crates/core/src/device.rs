//! A constrained virtual X8: job validation, precompilation to the native
//! Mach-Zehnder/phase alphabet, and shot-sampled execution.
//!
//! Modes `0..4` form register A and `4..8` register B; squeezed pair `j`
//! couples `j` with `j + 4`. A job's circuit acts on `0..4` and is applied
//! identically to `4..8`.
//!
//! Execution splits the eight modes into connected components (pairs and
//! gate couplings) and simulates each one as a dense pure state. Each pair is
//! truncated at [`PAIR_PHOTON_LIMIT`] photons and the per-mode cutoff is large
//! enough that every gate acts exactly. Thermal loss after the circuit is
//! applied to the PNR distribution through its transfer matrix, which is
//! exact because the channel is phase covariant.

use std::fmt;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::fock::{FockSpace, OutcomePattern, PureState};
use crate::measure::{outcome_distribution, CountTable, Distribution, ProductSampler};
use crate::noise::{apply_channel, check_loss_parameters, promote, thermal_loss_kraus};
use crate::optics::{apply_circuit, mz_decompose, sector_distances, Circuit, GateOp};

pub const REGISTER_MODES: usize = 4;
pub const DEVICE_MODES: usize = 8;
/// Squeezing used for every flagged pair.
pub const DEVICE_SQUEEZING: f64 = 1.0;
/// Largest photon number kept per squeezed pair (tail mass ≈ 4.9e-4 at `r = 1`).
pub const PAIR_PHOTON_LIMIT: usize = 13;
/// Truncation leak above which a job fails.
pub const LEAK_LIMIT: f64 = 0.05;

const LEAK_WARN: f64 = 1e-2;
const AMPLITUDE_BUDGET: usize = 1 << 22;
const DENSITY_BUDGET: usize = 1 << 23;
const THERMAL_TAIL: f64 = 1e-6;
const MAX_OCCUPATION: usize = 254;
const VERIFY_CUTOFF: usize = 8;

/// Where the thermal loss layer sits relative to the circuit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Before,
    #[default]
    After,
}

impl std::str::FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "before" => Ok(Placement::Before),
            "after" => Ok(Placement::After),
            other => Err(Error::Parse(format!("unknown placement '{other}'"))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Before => "before",
            Placement::After => "after",
        })
    }
}

/// Identical thermal loss `(η, n̄)` on a set of modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub eta: f64,
    pub nbar: f64,
    #[serde(default)]
    pub placement: Placement,
    /// Noisy modes; `None` means both modes of every squeezed pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<usize>>,
}

impl NoiseConfig {
    pub fn new(eta: f64, nbar: f64, placement: Placement) -> Self {
        Self { eta, nbar, placement, modes: None }
    }

    fn noisy_modes(&self, squeezing: &[f64]) -> Vec<usize> {
        match &self.modes {
            Some(m) => m.clone(),
            None => {
                let mut m: Vec<usize> = squeezing
                    .iter()
                    .enumerate()
                    .filter(|(_, &r)| r != 0.0)
                    .flat_map(|(j, _)| [j, j + REGISTER_MODES])
                    .collect();
                m.sort_unstable();
                m
            }
        }
    }
}

/// One circuit entry of a job file.
#[derive(Clone, Debug, PartialEq)]
pub enum JobGate {
    Linear(GateOp),
    /// Any squeezing element placed inside the circuit.
    Squeezer(Value),
    /// A gate kind outside the linear-optical set.
    NonLinear(Value),
    /// A known kind with missing or malformed fields.
    Malformed {
        raw: Value,
        reason: String,
    },
}

impl JobGate {
    fn from_value(v: Value) -> Result<JobGate> {
        let kind = v
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse("circuit entry without a string 'kind'".into()))?
            .to_ascii_lowercase();
        if kind.contains("squeez") || kind == "sgate" || kind == "s2gate" {
            return Ok(JobGate::Squeezer(v));
        }
        if !matches!(kind.as_str(), "phase_shift" | "beam_splitter" | "mach_zehnder" | "thermal_loss") {
            return Ok(JobGate::NonLinear(v));
        }
        Ok(match serde_json::from_value::<GateOp>(v.clone()) {
            Ok(g) => JobGate::Linear(g),
            Err(e) => JobGate::Malformed { raw: v, reason: e.to_string() },
        })
    }

    fn to_value(&self) -> Value {
        match self {
            JobGate::Linear(g) => serde_json::to_value(g).expect("gate serialises"),
            JobGate::Squeezer(v) | JobGate::NonLinear(v) | JobGate::Malformed { raw: v, .. } => v.clone(),
        }
    }

    fn kind(&self) -> String {
        match self {
            JobGate::Linear(g) => g.kind_name().to_string(),
            JobGate::Squeezer(v) | JobGate::NonLinear(v) | JobGate::Malformed { raw: v, .. } => {
                v.get("kind").and_then(Value::as_str).unwrap_or("?").to_string()
            }
        }
    }
}

/// A job for the virtual device, mirroring the JSON job file one-to-one.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceJob {
    /// Gates on modes `0..4`; the device repeats them on `4..8`.
    pub circuit: Vec<JobGate>,
    /// Squeezing per pair; the device accepts only 0 and 1.
    pub squeezing: Vec<f64>,
    pub shots: u64,
    pub seed: u64,
    pub noise: Option<NoiseConfig>,
    /// Accept only phase shifts and Mach-Zehnder gates.
    pub native_only: bool,
}

impl DeviceJob {
    pub fn new(circuit: &Circuit, squeezing: [bool; 4], shots: u64, seed: u64) -> Self {
        Self {
            circuit: circuit.gates().iter().cloned().map(JobGate::Linear).collect(),
            squeezing: squeezing.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect(),
            shots,
            seed,
            noise: None,
            native_only: false,
        }
    }

    /// `U_BS(π/4, φ)` on modes `(0, 1)` (and `(4, 5)`), all pairs squeezed.
    pub fn example_two(phi: f64, shots: u64, seed: u64) -> Self {
        let c = Circuit::new(
            REGISTER_MODES,
            vec![GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: std::f64::consts::FRAC_PI_4, phi }],
        )
        .expect("valid gate");
        Self::new(&c, [true; 4], shots, seed)
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = Some(noise);
        self
    }

    /// Every beamsplitter replaced by its exact native form.
    pub fn precompiled(&self) -> DeviceJob {
        let circuit = self
            .circuit
            .iter()
            .flat_map(|g| match g {
                JobGate::Linear(GateOp::BeamSplitter { mode_a, mode_b, theta, phi }) => {
                    precompile_exact(*mode_a, *mode_b, *theta, *phi).into_iter().map(JobGate::Linear).collect()
                }
                other => vec![other.clone()],
            })
            .collect();
        DeviceJob { circuit, native_only: true, ..self.clone() }
    }

    /// The unitary gates of the circuit (ignoring everything else).
    pub fn linear_gates(&self) -> Vec<GateOp> {
        self.circuit
            .iter()
            .filter_map(|g| match g {
                JobGate::Linear(op) => Some(op.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<DeviceJob> {
        let v: Value = serde_json::from_str(text)?;
        let obj = v.as_object().ok_or_else(|| Error::Parse("job must be a JSON object".into()))?;
        const FIELDS: [&str; 6] = ["circuit", "squeezing", "shots", "seed", "noise", "native_only"];
        if let Some(k) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(Error::Parse(format!("unknown job field '{k}'")));
        }
        let field = |name: &str| obj.get(name).ok_or_else(|| Error::Parse(format!("missing job field '{name}'")));
        let circuit = field("circuit")?
            .as_array()
            .ok_or_else(|| Error::Parse("'circuit' must be an array".into()))?
            .iter()
            .cloned()
            .map(JobGate::from_value)
            .collect::<Result<_>>()?;
        let squeezing = field("squeezing")?
            .as_array()
            .ok_or_else(|| Error::Parse("'squeezing' must be an array".into()))?
            .iter()
            .map(|x| match x {
                Value::Bool(b) => Ok(if *b { 1.0 } else { 0.0 }),
                Value::Number(n) => n.as_f64().ok_or_else(|| Error::Parse(format!("bad squeezing value {n}"))),
                other => Err(Error::Parse(format!("bad squeezing value {other}"))),
            })
            .collect::<Result<_>>()?;
        let shots =
            field("shots")?.as_u64().ok_or_else(|| Error::Parse("'shots' must be a non-negative integer".into()))?;
        let seed = match obj.get("seed") {
            None => 0,
            Some(s) => s.as_u64().ok_or_else(|| Error::Parse("'seed' must be a non-negative integer".into()))?,
        };
        let noise = match obj.get("noise") {
            None | Some(Value::Null) => None,
            Some(n) => Some(serde_json::from_value(n.clone())?),
        };
        let native_only = match obj.get("native_only") {
            None => false,
            Some(b) => b.as_bool().ok_or_else(|| Error::Parse("'native_only' must be a boolean".into()))?,
        };
        Ok(DeviceJob { circuit, squeezing, shots, seed, noise, native_only })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut m = Map::new();
        m.insert("circuit".into(), Value::Array(self.circuit.iter().map(JobGate::to_value).collect()));
        m.insert(
            "squeezing".into(),
            Value::Array(
                self.squeezing
                    .iter()
                    .map(|&r| match r {
                        0.0 => json!(false),
                        1.0 => json!(true),
                        x => json!(x),
                    })
                    .collect(),
            ),
        );
        m.insert("shots".into(), json!(self.shots));
        m.insert("seed".into(), json!(self.seed));
        if let Some(n) = &self.noise {
            m.insert("noise".into(), serde_json::to_value(n)?);
        }
        m.insert("native_only".into(), json!(self.native_only));
        Ok(serde_json::to_string_pretty(&Value::Object(m))?)
    }
}

/// A reason a job cannot run on the device.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    InLineSqueezing { gate: usize, kind: String },
    NonLinearOptical { gate: usize, kind: String },
    SqueezingValue { pair: usize, value: f64 },
    SqueezingFlags { len: usize },
    ModeOutsideRegister { gate: usize, mode: usize },
    NotNative { gate: usize, kind: String },
    NonUnitary { gate: usize },
    InvalidGate { gate: usize, reason: String },
    Shots,
    Noise { reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InLineSqueezing { gate, kind } => {
                write!(f, "gate {gate} ({kind}): squeezing is only available on the input pairs")
            }
            Violation::NonLinearOptical { gate, kind } => {
                write!(f, "gate {gate} ({kind}): only linear-optical gates are supported")
            }
            Violation::SqueezingValue { pair, value } => {
                write!(f, "pair {pair}: squeezing {value} is not 0 or 1")
            }
            Violation::SqueezingFlags { len } => write!(f, "expected 4 squeezing flags, got {len}"),
            Violation::ModeOutsideRegister { gate, mode } => {
                write!(f, "gate {gate} touches mode {mode}; circuits act on modes 0-3 and are repeated on 4-7")
            }
            Violation::NotNative { gate, kind } => {
                write!(f, "gate {gate} ({kind}) is not native; use precompile_two_mode to rewrite it as MZ + phase")
            }
            Violation::NonUnitary { gate } => {
                write!(f, "gate {gate}: thermal loss is configured through 'noise', not as a gate")
            }
            Violation::InvalidGate { gate, reason } => write!(f, "gate {gate}: {reason}"),
            Violation::Shots => f.write_str("shots must be at least 1"),
            Violation::Noise { reason } => write!(f, "noise: {reason}"),
        }
    }
}

/// Checks a job against the device constraints, collecting every violation.
pub fn validate_job(job: &DeviceJob) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    for (i, g) in job.circuit.iter().enumerate() {
        match g {
            JobGate::Squeezer(_) => v.push(Violation::InLineSqueezing { gate: i, kind: g.kind() }),
            JobGate::NonLinear(_) => v.push(Violation::NonLinearOptical { gate: i, kind: g.kind() }),
            JobGate::Malformed { reason, .. } => v.push(Violation::InvalidGate { gate: i, reason: reason.clone() }),
            JobGate::Linear(op) => {
                if !op.is_unitary() {
                    v.push(Violation::NonUnitary { gate: i });
                    continue;
                }
                if let Some(&mode) = op.modes().iter().find(|&&m| m >= REGISTER_MODES) {
                    v.push(Violation::ModeOutsideRegister { gate: i, mode });
                    continue;
                }
                if let Err(e) = op.check(REGISTER_MODES) {
                    v.push(Violation::InvalidGate { gate: i, reason: e.to_string() });
                    continue;
                }
                if job.native_only && matches!(op, GateOp::BeamSplitter { .. }) {
                    v.push(Violation::NotNative { gate: i, kind: g.kind() });
                }
            }
        }
    }
    if job.squeezing.len() != REGISTER_MODES {
        v.push(Violation::SqueezingFlags { len: job.squeezing.len() });
    } else {
        for (pair, &value) in job.squeezing.iter().enumerate() {
            if value != 0.0 && value != 1.0 {
                v.push(Violation::SqueezingValue { pair, value });
            }
        }
    }
    if job.shots == 0 {
        v.push(Violation::Shots);
    }
    if let Some(n) = &job.noise {
        if let Err(e) = check_loss_parameters(n.eta, n.nbar) {
            v.push(Violation::Noise { reason: e.to_string() });
        }
        if let Some(modes) = &n.modes {
            if let Some(m) = modes.iter().find(|&&m| m >= DEVICE_MODES) {
                v.push(Violation::Noise { reason: format!("mode {m} does not exist") });
            }
            let mut s = modes.clone();
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                v.push(Violation::Noise { reason: "modes listed twice".into() });
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Native rewrite of a two-mode beamsplitter with its verification distance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NativeCircuit {
    pub circuit: Circuit,
    /// Largest per-photon-number-sector distance (up to phase) between the
    /// native circuit and `U_BS(θ, φ)` on a cutoff-8 two-mode space.
    pub verification: f64,
}

/// `U_BS(θ, φ)` on modes `(0, 1)` as `MachZehnder` + `PhaseShift`.
pub fn precompile_two_mode(theta: f64, phi: f64) -> Result<NativeCircuit> {
    let circuit = mz_decompose(theta, phi);
    let target = Circuit::new(2, vec![GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta, phi }])?;
    let u = circuit.fock_operator(VERIFY_CUTOFF)?;
    let v = target.fock_operator(VERIFY_CUTOFF)?;
    let verification = sector_distances(&u, &v, VERIFY_CUTOFF)?.into_iter().fold(0.0, f64::max);
    Ok(NativeCircuit { circuit, verification })
}

/// Native gates equal to `U_BS(θ, φ)` on `(mode_a, mode_b)` exactly: the
/// decomposition followed by `PhaseShift(θ)` on both modes, which removes the
/// sector factor `e^{−iθn}`.
pub fn precompile_exact(mode_a: usize, mode_b: usize, theta: f64, phi: f64) -> Vec<GateOp> {
    let map = [mode_a, mode_b];
    let mut gates: Vec<GateOp> = mz_decompose(theta, phi).gates().iter().map(|g| relabel(g, &map)).collect();
    gates.push(GateOp::PhaseShift { mode: mode_a, phi: theta });
    gates.push(GateOp::PhaseShift { mode: mode_b, phi: theta });
    gates
}

/// `g` with each mode `m` replaced by `map[m]`.
fn relabel(g: &GateOp, map: &[usize]) -> GateOp {
    let mut g = g.clone();
    match &mut g {
        GateOp::PhaseShift { mode, .. } | GateOp::ThermalLoss { mode, .. } => *mode = map[*mode],
        GateOp::BeamSplitter { mode_a, mode_b, .. } | GateOp::MachZehnder { mode_a, mode_b, .. } => {
            *mode_a = map[*mode_a];
            *mode_b = map[*mode_b];
        }
    }
    g
}

/// Exact PNR distribution of a job, factored over independent components.
#[derive(Clone, Debug)]
pub struct JobDistribution {
    components: Vec<Distribution>,
}

impl JobDistribution {
    pub fn components(&self) -> &[Distribution] {
        &self.components
    }

    /// Total probability lost to truncation.
    pub fn leak(&self) -> f64 {
        1.0 - self.components.iter().map(|c| 1.0 - c.leak()).product::<f64>()
    }

    /// Probability of a pattern on any subset of the simulated modes.
    pub fn probability(&self, pattern: &OutcomePattern) -> Result<f64> {
        let mut covered = 0;
        let mut p = 1.0;
        for c in &self.components {
            let (modes, occ): (Vec<usize>, Vec<usize>) = pattern
                .modes()
                .iter()
                .zip(pattern.occupations())
                .filter(|(m, _)| c.modes().contains(m))
                .map(|(&m, &n)| (m, n))
                .unzip();
            if modes.is_empty() {
                continue;
            }
            covered += modes.len();
            p *= c.probability(&OutcomePattern::new(modes, occ)?)?;
        }
        if covered != pattern.modes().len() {
            return Err(Error::Shape("pattern touches modes that were not simulated".into()));
        }
        Ok(p)
    }

    /// Samples every simulated mode.
    pub fn sample(&self, shots: u64, seed: u64) -> Result<CountTable> {
        ProductSampler::new(&self.components.iter().collect::<Vec<_>>())?.sample(shots, seed)
    }

    /// Samples only the components that contain one of `modes`; the table
    /// covers all modes of those components.
    pub fn sample_modes(&self, modes: &[usize], shots: u64, seed: u64) -> Result<CountTable> {
        self.sampler(modes)?.sample(shots, seed)
    }

    /// Sampler over the components containing `modes`, for repeated draws.
    pub(crate) fn sampler(&self, modes: &[usize]) -> Result<ProductSampler> {
        let parts: Vec<&Distribution> =
            self.components.iter().filter(|c| c.modes().iter().any(|m| modes.contains(m))).collect();
        if parts.iter().map(|c| modes.iter().filter(|m| c.modes().contains(m)).count()).sum::<usize>() != modes.len() {
            return Err(Error::Shape("requested modes were not simulated".into()));
        }
        ProductSampler::new(&parts)
    }
}

/// Connected components of the device modes under pair and gate couplings.
fn components(squeezing: &[f64], gates: &[GateOp]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..DEVICE_MODES).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut join = |a: usize, b: usize| {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    };
    for (j, &r) in squeezing.iter().enumerate() {
        if r != 0.0 {
            join(j, j + REGISTER_MODES);
        }
    }
    for g in gates {
        let m = g.modes();
        if m.len() == 2 {
            join(m[0], m[1]);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for m in 0..DEVICE_MODES {
        let root = find(&mut parent, m);
        match groups.iter_mut().find(|g| find(&mut parent, g[0]) == root) {
            Some(g) => g.push(m),
            None => groups.push(vec![m]),
        }
    }
    groups
}

/// Product of TMSS pairs at `r = 1` on a component's local layout, keeping
/// terms with at most [`PAIR_PHOTON_LIMIT`] photons per pair and at most
/// `cutoff − 1` photons in each register.
fn component_input(space: FockSpace, pairs: &[(usize, usize)]) -> PureState {
    let d = space.cutoff();
    let nmax = PAIR_PHOTON_LIMIT.min(d - 1);
    let (t, c) = (DEVICE_SQUEEZING.tanh(), DEVICE_SQUEEZING.cosh());
    let mut amps = vec![crate::Complex64::new(0.0, 0.0); space.dim()];
    let k = pairs.len();
    let mut occ = vec![0usize; k];
    loop {
        if occ.iter().sum::<usize>() < d {
            let mut index = 0;
            let mut value = 1.0;
            for (&(a, b), &n) in pairs.iter().zip(&occ) {
                index += n * (space.stride(a) + space.stride(b));
                value *= t.powi(n as i32) / c;
            }
            amps[index] = crate::Complex64::new(value, 0.0);
        }
        // odometer over 0..=nmax per pair
        let mut j = 0;
        while j < k {
            occ[j] += 1;
            if occ[j] <= nmax {
                break;
            }
            occ[j] = 0;
            j += 1;
        }
        if j == k {
            break;
        }
    }
    PureState::from_parts(space, amps)
}

/// Smallest output cutoff at which thermal loss on inputs `0..d_in` leaves
/// less than `THERMAL_TAIL` behind, with the transfer matrix.
fn thermal_output(eta: f64, nbar: f64, d_in: usize) -> Result<(usize, DMatrix<f64>)> {
    let t = thermal_loss_kraus(eta, nbar, d_in)?.transfer_matrix();
    let mut d_out = d_in;
    while d_out < t.nrows() {
        let tail = (0..d_in).map(|n| t.column(n).rows_range(d_out..).sum()).fold(0.0, f64::max);
        if tail < THERMAL_TAIL {
            break;
        }
        d_out += 1;
    }
    Ok((d_out.min(MAX_OCCUPATION + 1), t))
}

struct Component {
    modes: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    gates: Vec<GateOp>,
    noisy: Vec<usize>,
}

impl Component {
    fn local(&self, mode: usize) -> usize {
        self.modes.iter().position(|&m| m == mode).expect("mode in component")
    }

    fn circuit(&self) -> Result<Circuit> {
        let mut map = vec![usize::MAX; DEVICE_MODES];
        for (i, &m) in self.modes.iter().enumerate() {
            map[m] = i;
        }
        Circuit::new(self.modes.len(), self.gates.iter().map(|g| relabel(g, &map)).collect())
    }

    /// Per-mode cutoff at which every gate acts exactly on the input.
    fn exact_cutoff(&self) -> usize {
        self.pairs.len() * PAIR_PHOTON_LIMIT + 1
    }

    fn pure_output(&self, budget: usize) -> Result<(PureState, Vec<usize>)> {
        let m = self.modes.len();
        let cap = (budget as f64).powf(1.0 / m as f64).floor() as usize;
        let d = self.exact_cutoff().min(cap).min(MAX_OCCUPATION + 1);
        if d < self.exact_cutoff() {
            warn!("component {:?}: cutoff lowered to {d} by the simulation budget", self.modes);
        }
        let space = FockSpace::new(m, d)?;
        let pairs: Vec<(usize, usize)> = self.pairs.iter().map(|&(a, b)| (self.local(a), self.local(b))).collect();
        let state = apply_circuit(&component_input(space, &pairs), &self.circuit()?)?;
        Ok((state, (0..m).collect()))
    }

    fn distribution(&self, noise: Option<&NoiseConfig>) -> Result<Distribution> {
        if self.pairs.is_empty() && self.noisy.is_empty() {
            return Distribution::point_mass(self.modes.clone(), 1, &vec![0; self.modes.len()]);
        }
        let noise = noise.filter(|_| !self.noisy.is_empty());
        match noise {
            Some(n) if n.placement == Placement::Before && !self.noise_commutes() => self.density_distribution(n),
            _ => {
                let (state, local) = self.pure_output(AMPLITUDE_BUDGET)?;
                let dist = outcome_distribution(&state, &local)?;
                let dist = Distribution::new(self.modes.clone(), dist.cutoff(), dist.probs().to_vec())?;
                match noise {
                    None => Ok(dist),
                    Some(n) => self.transfer_noise(dist, n),
                }
            }
        }
    }

    /// Identical loss on both modes of every two-mode gate (or on neither)
    /// commutes with the circuit.
    fn noise_commutes(&self) -> bool {
        self.gates.iter().all(|g| {
            let m = g.modes();
            m.len() < 2 || self.noisy.contains(&m[0]) == self.noisy.contains(&m[1])
        })
    }

    fn transfer_noise(&self, dist: Distribution, n: &NoiseConfig) -> Result<Distribution> {
        let (d_out, t) = thermal_output(n.eta, n.nbar, dist.cutoff())?;
        let mut dist = dist.padded(d_out)?;
        for &mode in &self.noisy {
            dist = dist.transfer(self.local(mode), &t);
        }
        Ok(dist)
    }

    /// Loss on the input, then the circuit, on a density matrix whose cutoff
    /// fits `DENSITY_BUDGET`.
    fn density_distribution(&self, n: &NoiseConfig) -> Result<Distribution> {
        let m = self.modes.len();
        let cap = (DENSITY_BUDGET as f64).powf(1.0 / (2 * m) as f64).floor() as usize;
        let (want, _) = thermal_output(n.eta, n.nbar, self.exact_cutoff())?;
        let d = want.min(cap);
        if d < 2 {
            return Err(Error::TooLarge(format!("density matrix for a {m}-mode component")));
        }
        warn!(
            "component {:?}: loss before gates that mix noisy and noiseless modes; density-matrix path at cutoff {d}",
            self.modes
        );
        let space = FockSpace::new(m, d)?;
        let pairs: Vec<(usize, usize)> = self.pairs.iter().map(|&(a, b)| (self.local(a), self.local(b))).collect();
        let mut rho = promote(&component_input(space, &pairs));
        for &mode in &self.noisy {
            rho = apply_channel(&rho, self.local(mode), n.eta, n.nbar)?;
        }
        let rho = rho.apply_circuit(&self.circuit()?)?;
        let dist = outcome_distribution(&rho, &(0..m).collect::<Vec<_>>())?;
        Distribution::new(self.modes.clone(), d, dist.probs().to_vec())
    }
}

/// Exact outcome distribution of a valid job on the components that contain
/// one of `modes` (all components when `None`).
pub fn prepare_job_modes(job: &DeviceJob, modes: Option<&[usize]>) -> Result<JobDistribution> {
    validate_job(job).map_err(Error::InvalidJob)?;
    let register = job.linear_gates();
    let gates: Vec<GateOp> =
        register.iter().cloned().chain(register.iter().map(|g| g.shifted(REGISTER_MODES))).collect();
    let noisy = job.noise.as_ref().map(|n| n.noisy_modes(&job.squeezing)).unwrap_or_default();
    let parts: Vec<Component> = components(&job.squeezing, &gates)
        .into_iter()
        .filter(|c| modes.is_none_or(|want| c.iter().any(|m| want.contains(m))))
        .map(|c| Component {
            pairs: (0..REGISTER_MODES)
                .filter(|&j| job.squeezing[j] != 0.0 && c.contains(&j))
                .map(|j| (j, j + REGISTER_MODES))
                .collect(),
            gates: gates.iter().filter(|g| c.contains(&g.modes()[0])).cloned().collect(),
            noisy: noisy.iter().copied().filter(|m| c.contains(m)).collect(),
            modes: c,
        })
        .collect();
    let components = parts.par_iter().map(|c| c.distribution(job.noise.as_ref())).collect::<Result<Vec<_>>>()?;
    let out = JobDistribution { components };
    let leak = out.leak();
    if leak > LEAK_LIMIT {
        return Err(Error::TruncationLeak { leak, limit: LEAK_LIMIT });
    }
    if leak > LEAK_WARN {
        warn!("truncation leak {leak:.3e}");
    }
    Ok(out)
}

/// Exact outcome distribution of a valid job over all eight modes.
pub fn prepare_job(job: &DeviceJob) -> Result<JobDistribution> {
    prepare_job_modes(job, None)
}

/// Validates, simulates and samples `job.shots` shots with `job.seed`.
pub fn run_job(job: &DeviceJob) -> Result<CountTable> {
    prepare_job(job)?.sample(job.shots, job.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::tmss_0101;
    use crate::fock::make_tmss;
    use crate::measure::sample_counts;
    use std::f64::consts::FRAC_PI_4;

    fn pattern() -> OutcomePattern {
        OutcomePattern::new(vec![0, 1, 4, 5], vec![0, 1, 0, 1]).unwrap()
    }

    #[test]
    fn vacuum_job() {
        let job = DeviceJob::new(&Circuit::empty(4), [false; 4], 100, 1);
        let t = run_job(&job).unwrap();
        assert_eq!(t.modes(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(t.count(&[0; 8]), 100);
    }

    #[test]
    fn example_two_probability() {
        let d = prepare_job(&DeviceJob::example_two(0.0, 1, 0)).unwrap();
        assert_eq!(d.components().len(), 3);
        let p = d.probability(&pattern()).unwrap();
        // the φ = 0 beamsplitter leaves (0,1,0,1) at the TMSS value
        assert!((p - tmss_0101(1.0)).abs() < 1e-12);
        assert!(d.leak() < 2.5e-3);
    }

    #[test]
    fn noisy_job_matches_density_path() {
        // loss before a gate that couples a noisy and a noiseless mode
        let noise = NoiseConfig { eta: 0.8, nbar: 0.5, placement: Placement::Before, modes: Some(vec![0]) };
        let c = Circuit::new(4, vec![GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: 0.3, phi: 0.2 }]).unwrap();
        let job = DeviceJob::new(&c, [true, false, false, false], 1, 0).with_noise(noise);
        let d = prepare_job(&job).unwrap();
        let comp = d.components().iter().find(|c| c.modes().contains(&0)).unwrap();
        assert_eq!(comp.modes(), &[0, 1, 4, 5]);
        let cutoff = comp.cutoff();
        // oracle in the layout (0, 4, 1, 5)
        let vac = PureState::vacuum(1, cutoff).unwrap();
        let s = crate::fock::tensor_product(&make_tmss(1.0, 1, cutoff).unwrap(), &vac).unwrap();
        let s = crate::fock::tensor_product(&s, &vac).unwrap();
        let rho = apply_channel(&promote(&s), 0, 0.8, 0.5).unwrap();
        let gates = Circuit::new(
            4,
            vec![
                GateOp::BeamSplitter { mode_a: 0, mode_b: 2, theta: 0.3, phi: 0.2 },
                GateOp::BeamSplitter { mode_a: 1, mode_b: 3, theta: 0.3, phi: 0.2 },
            ],
        )
        .unwrap();
        let rho = rho.apply_circuit(&gates).unwrap();
        for occ in [[0, 0, 0, 0], [1, 0, 1, 0], [0, 1, 1, 0], [2, 1, 2, 1], [1, 0, 0, 0]] {
            let direct = crate::measure::outcome_distribution(&rho, &[0, 2, 1, 3])
                .unwrap()
                .probability(&OutcomePattern::new(vec![0, 2, 1, 3], occ.to_vec()).unwrap())
                .unwrap();
            let got = d.probability(&OutcomePattern::new(vec![0, 1, 4, 5], occ.to_vec()).unwrap()).unwrap();
            assert!((got - direct).abs() < 1e-12, "{occ:?}: {got} vs {direct}");
        }
    }

    #[test]
    fn before_equals_after_when_commuting() {
        let after = DeviceJob::example_two(0.3, 1, 0).with_noise(NoiseConfig::new(0.9, 1.5, Placement::After));
        let before = DeviceJob::example_two(0.3, 1, 0).with_noise(NoiseConfig::new(0.9, 1.5, Placement::Before));
        let a = prepare_job_modes(&after, Some(&[0])).unwrap().probability(&pattern()).unwrap();
        let b = prepare_job_modes(&before, Some(&[0])).unwrap().probability(&pattern()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_marginal_matches_direct_state() {
        let job = DeviceJob::example_two(0.7, 50_000, 11);
        let d = prepare_job(&job).unwrap();
        let s = crate::fock::make_tmss_register_complete(1.0, 2, 20).unwrap();
        let s = crate::optics::apply_circuit(
            &s,
            &Circuit::new(
                4,
                vec![
                    GateOp::BeamSplitter { mode_a: 0, mode_b: 1, theta: FRAC_PI_4, phi: 0.7 },
                    GateOp::BeamSplitter { mode_a: 2, mode_b: 3, theta: FRAC_PI_4, phi: 0.7 },
                ],
            )
            .unwrap(),
        )
        .unwrap();
        let direct = crate::fock::fock_probability(&s, &crate::cost::pattern_0101()).unwrap();
        assert!((d.probability(&pattern()).unwrap() - direct).abs() < 1e-10);
        let t = run_job(&job).unwrap();
        let c = t.matching(&pattern()).unwrap() as f64;
        let sd = (50_000.0 * direct * (1.0 - direct)).sqrt();
        assert!((c - 50_000.0 * direct).abs() < 4.0 * sd);
        assert_eq!(t, run_job(&job).unwrap());
        let _ = sample_counts;
    }

    #[test]
    fn validation() {
        assert!(validate_job(&DeviceJob::example_two(0.2, 10, 0)).is_ok());
        let mut job = DeviceJob::example_two(0.2, 0, 0);
        job.circuit.push(JobGate::Linear(GateOp::PhaseShift { mode: 5, phi: 0.1 }));
        job.squeezing[2] = 0.5;
        job.native_only = true;
        let v = validate_job(&job).unwrap_err();
        assert!(v.contains(&Violation::ModeOutsideRegister { gate: 1, mode: 5 }));
        assert!(v.contains(&Violation::SqueezingValue { pair: 2, value: 0.5 }));
        assert!(v.contains(&Violation::Shots));
        assert!(v.iter().any(|x| matches!(x, Violation::NotNative { gate: 0, .. })));
        assert!(v.iter().any(|x| x.to_string().contains("precompile_two_mode")));
        assert!(matches!(run_job(&job), Err(Error::InvalidJob(_))));
    }

    #[test]
    fn json_job_kinds() {
        let text = r#"{"circuit": [
            {"kind": "beam_splitter", "mode_a": 0, "mode_b": 1, "theta": 0.785, "phi": 0.0},
            {"kind": "squeezing", "mode": 0, "r": 0.5},
            {"kind": "kerr", "mode": 1, "kappa": 0.1},
            {"kind": "phase_shift", "mode": 0}
        ], "squeezing": [true, true, false, 1], "shots": 10, "seed": 3}"#;
        let job = DeviceJob::from_json(text).unwrap();
        let v = validate_job(&job).unwrap_err();
        assert!(matches!(v[0], Violation::InLineSqueezing { gate: 1, .. }));
        assert!(matches!(v[1], Violation::NonLinearOptical { gate: 2, .. }));
        assert!(matches!(v[2], Violation::InvalidGate { gate: 3, .. }));
        let again = DeviceJob::from_json(&job.to_json().unwrap()).unwrap();
        assert_eq!(again, job);
        assert!(DeviceJob::from_json(r#"{"circuit": [], "squeezing": [], "shots": 1, "bogus": 1}"#).is_err());
    }

    #[test]
    fn precompiled_job_is_exact() {
        let job = DeviceJob::example_two(0.9, 1, 0);
        let native = job.precompiled();
        assert!(validate_job(&native).is_ok());
        let a = prepare_job(&job).unwrap();
        let b = prepare_job(&native).unwrap();
        for (x, y) in a.components().iter().zip(b.components()) {
            assert_eq!(x.modes(), y.modes());
            let diff = x.probs().iter().zip(y.probs()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
        let n = precompile_two_mode(0.4, 1.1).unwrap();
        assert!(n.verification < 1e-10);
        assert!(n.circuit.gates().iter().all(|g| matches!(g, GateOp::MachZehnder { .. } | GateOp::PhaseShift { .. })));
    }
}
