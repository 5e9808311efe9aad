//! Photon-number-resolving readout: outcome distributions, seeded shot
//! sampling and empirical estimators.
//!
//! Shots that land in the probability mass lost to truncation are counted in
//! an overflow bucket rather than redistributed, so the low-order pattern
//! probabilities of the sampler are exactly those of the state.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockSpace, OutcomePattern, PureState};
use crate::noise::MixedState;

/// Name recorded in every [`CountTable`] produced by [`sample_counts`].
pub const RNG_NAME: &str = "ChaCha20";

const MAX_TABLE_MODES: usize = 8;
const MAX_TABLE_OCCUPATION: usize = 254;

/// SplitMix64 mixing of a base seed and a stream index, for per-task seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Probabilities of every occupation pattern on an ordered mode list.
///
/// Pattern `(n_0, .., n_{k-1})` on `modes` sits at index
/// `n_0 d^(k-1) + .. + n_{k-1}`, the same ordering as [`FockSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    modes: Vec<usize>,
    cutoff: usize,
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(modes: Vec<usize>, cutoff: usize, probs: Vec<f64>) -> Result<Self> {
        OutcomePattern::new(modes.clone(), vec![0; modes.len()])?;
        let space = FockSpace::new(modes.len(), cutoff)?;
        if probs.len() != space.dim() {
            return Err(Error::LengthMismatch(probs.len(), space.dim()));
        }
        if let Some(&p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::Parameter { name: "probability", value: p });
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 + 1e-10 {
            return Err(Error::Norm(total));
        }
        Ok(Self { modes, cutoff, probs })
    }

    pub fn point_mass(modes: Vec<usize>, cutoff: usize, occupations: &[usize]) -> Result<Self> {
        let space = FockSpace::new(modes.len(), cutoff)?;
        let mut probs = vec![0.0; space.dim()];
        probs[space.index(occupations)] = 1.0;
        Self::new(modes, cutoff, probs)
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn space(&self) -> FockSpace {
        FockSpace::new(self.modes.len(), self.cutoff).expect("validated on construction")
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Mass outside the truncated pattern set.
    pub fn leak(&self) -> f64 {
        (1.0 - self.total()).max(0.0)
    }

    /// Probability of `pattern`, whose modes must be a subset of this
    /// distribution's modes; the others are marginalised.
    pub fn probability(&self, pattern: &OutcomePattern) -> Result<f64> {
        let pos = self.positions(pattern.modes())?;
        let space = self.space();
        if pattern.occupations().iter().any(|&n| n >= self.cutoff) {
            return Ok(0.0);
        }
        Ok(self
            .probs
            .iter()
            .enumerate()
            .filter(|(i, _)| pos.iter().zip(pattern.occupations()).all(|(&p, &n)| space.occupation(*i, p) == n))
            .map(|(_, p)| p)
            .sum())
    }

    fn positions(&self, modes: &[usize]) -> Result<Vec<usize>> {
        modes
            .iter()
            .map(|m| {
                self.modes
                    .iter()
                    .position(|x| x == m)
                    .ok_or(Error::ModeOutOfRange { mode: *m, num_modes: self.modes.len() })
            })
            .collect()
    }

    /// Marginal on a subset of this distribution's modes.
    pub fn marginal(&self, modes: &[usize]) -> Result<Distribution> {
        let pos = self.positions(modes)?;
        let space = self.space();
        let sub = FockSpace::new(modes.len(), self.cutoff)?;
        let mut probs = vec![0.0; sub.dim()];
        for (i, &p) in self.probs.iter().enumerate() {
            let key = pos.iter().fold(0, |acc, &q| acc * self.cutoff + space.occupation(i, q));
            probs[key] += p;
        }
        Distribution::new(modes.to_vec(), self.cutoff, probs)
    }

    /// Applies a per-position column-stochastic transfer matrix
    /// `T[m, n] = P(out m | in n)` to the listed positions, truncating
    /// outputs at this distribution's cutoff.
    pub fn transfer(&self, position: usize, t: &nalgebra::DMatrix<f64>) -> Distribution {
        let space = self.space();
        let s = space.stride(position);
        let d = self.cutoff;
        let mut out = vec![0.0; self.probs.len()];
        for (i, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let n = space.occupation(i, position);
            let base = i - n * s;
            for m in 0..d.min(t.nrows()) {
                out[base + m * s] += t[(m, n)] * p;
            }
        }
        Distribution { modes: self.modes.clone(), cutoff: d, probs: out }
    }

    /// The same distribution on a larger per-mode cutoff (new entries zero).
    pub fn padded(&self, cutoff: usize) -> Result<Distribution> {
        if cutoff < self.cutoff {
            return Err(Error::Cutoff { min: self.cutoff, got: cutoff });
        }
        let old = self.space();
        let new = FockSpace::new(self.modes.len(), cutoff)?;
        let mut probs = vec![0.0; new.dim()];
        for (i, &p) in self.probs.iter().enumerate() {
            if p != 0.0 {
                probs[new.index(&old.occupations(i))] = p;
            }
        }
        Ok(Distribution { modes: self.modes.clone(), cutoff, probs })
    }

    /// Mixture `Σ w_k D_k` of distributions on the same modes.
    pub fn mixture(parts: &[(f64, Distribution)]) -> Result<Distribution> {
        let first = &parts.first().ok_or_else(|| Error::Shape("empty mixture".into()))?.1;
        let mut probs = vec![0.0; first.probs.len()];
        for (w, d) in parts {
            if d.modes != first.modes || d.cutoff != first.cutoff {
                return Err(Error::Shape("mixture components on different modes".into()));
            }
            for (o, p) in probs.iter_mut().zip(&d.probs) {
                *o += w * p;
            }
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Distribution::new(first.modes.clone(), first.cutoff, probs)
    }
}

/// States that have a PNR outcome distribution.
pub trait HasOutcomes {
    fn fock_space(&self) -> FockSpace;
    fn basis_probabilities(&self) -> Vec<f64>;
}

impl HasOutcomes for PureState {
    fn fock_space(&self) -> FockSpace {
        self.space()
    }
    fn basis_probabilities(&self) -> Vec<f64> {
        self.probabilities()
    }
}

impl HasOutcomes for MixedState {
    fn fock_space(&self) -> FockSpace {
        self.space()
    }
    fn basis_probabilities(&self) -> Vec<f64> {
        self.probabilities()
    }
}

/// Probabilities of all patterns on `modes`, marginalising the others.
pub fn outcome_distribution<S: HasOutcomes + ?Sized>(state: &S, modes: &[usize]) -> Result<Distribution> {
    let space = state.fock_space();
    OutcomePattern::new(modes.to_vec(), vec![0; modes.len()])?.check(&space)?;
    let d = space.cutoff();
    let sub = FockSpace::new(modes.len(), d)?;
    let mut probs = vec![0.0; sub.dim()];
    for (i, p) in state.basis_probabilities().into_iter().enumerate() {
        let key = modes.iter().fold(0, |acc, &m| acc * d + space.occupation(i, m));
        probs[key] += p;
    }
    // Round-off can push a normalised total a hair above one.
    let total: f64 = probs.iter().sum();
    if total > 1.0 {
        probs.iter_mut().for_each(|p| *p /= total);
    }
    Distribution::new(modes.to_vec(), d, probs)
}

/// Shot counts keyed by occupation pattern on a fixed mode list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTable {
    shots: u64,
    modes: Vec<usize>,
    counts: BTreeMap<Vec<usize>, u64>,
    overflow: u64,
    seed: Option<u64>,
    rng: String,
}

/// JSON header accompanying the CSV rows of a [`CountTable`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountHeader {
    pub shots: u64,
    pub seed: Option<u64>,
    pub modes: Vec<usize>,
    pub rng: String,
    pub overflow: u64,
}

impl CountTable {
    /// Builds a table from explicit counts (e.g. device data).
    pub fn from_counts(
        modes: Vec<usize>,
        shots: u64,
        counts: impl IntoIterator<Item = (Vec<usize>, u64)>,
        overflow: u64,
    ) -> Result<Self> {
        OutcomePattern::new(modes.clone(), vec![0; modes.len()])?;
        if shots == 0 {
            return Err(Error::Parameter { name: "shots", value: 0.0 });
        }
        let mut map = BTreeMap::new();
        for (pattern, c) in counts {
            if pattern.len() != modes.len() {
                return Err(Error::LengthMismatch(pattern.len(), modes.len()));
            }
            if c > 0 {
                *map.entry(pattern).or_insert(0) += c;
            }
        }
        let total: u64 = map.values().sum::<u64>() + overflow;
        if total > shots {
            return Err(Error::Parse(format!("{total} counted shots exceed the {shots}-shot budget")));
        }
        Ok(Self { shots, modes, counts: map, overflow, seed: None, rng: "external".into() })
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn rng(&self) -> &str {
        &self.rng
    }

    /// Non-zero `(pattern, count)` rows in pattern order.
    pub fn iter(&self) -> impl Iterator<Item = (&[usize], u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    pub fn count(&self, occupations: &[usize]) -> u64 {
        self.counts.get(occupations).copied().unwrap_or(0)
    }

    /// Shots whose pattern matches `pattern` on its modes (a subset of the
    /// table's modes); unlisted modes are summed over.
    pub fn matching(&self, pattern: &OutcomePattern) -> Result<u64> {
        let pos: Vec<usize> = pattern
            .modes()
            .iter()
            .map(|m| {
                self.modes
                    .iter()
                    .position(|x| x == m)
                    .ok_or(Error::ModeOutOfRange { mode: *m, num_modes: self.modes.len() })
            })
            .collect::<Result<_>>()?;
        Ok(self
            .counts
            .iter()
            .filter(|(k, _)| pos.iter().zip(pattern.occupations()).all(|(&p, &n)| k[p] == n))
            .map(|(_, &c)| c)
            .sum())
    }

    pub fn header(&self) -> CountHeader {
        CountHeader {
            shots: self.shots,
            seed: self.seed,
            modes: self.modes.clone(),
            rng: self.rng.clone(),
            overflow: self.overflow,
        }
    }

    /// CSV rows `pattern,count` with the pattern written as space-separated
    /// occupations, e.g. `0 1 0 1,5115`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["pattern", "count"])?;
        for (k, c) in &self.counts {
            let pat = k.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ");
            w.write_record([pat, c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(header: &CountHeader, reader: R) -> Result<CountTable> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(reader).records() {
            let rec = rec?;
            let pat = rec
                .get(0)
                .ok_or_else(|| Error::Parse("missing pattern".into()))?
                .split_whitespace()
                .map(|x| x.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let count = rec
                .get(1)
                .ok_or_else(|| Error::Parse("missing count".into()))?
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            rows.push((pat, count));
        }
        let mut t = CountTable::from_counts(header.modes.clone(), header.shots, rows, header.overflow)?;
        t.seed = header.seed;
        t.rng = header.rng.clone();
        Ok(t)
    }
}

/// A distribution prepared for repeated sampling.
pub(crate) struct Sampler {
    alias: Option<WeightedAliasIndex<f64>>,
    /// Packed table key of each category; `None` marks the overflow bucket.
    keys: Vec<Option<u64>>,
}

impl Sampler {
    /// `positions[j]` is the table position of the distribution's mode `j`.
    fn new(dist: &Distribution, positions: &[usize], table_modes: usize) -> Result<Self> {
        if dist.cutoff > MAX_TABLE_OCCUPATION + 1 {
            return Err(Error::TooLarge(format!("cutoff {} in a count table", dist.cutoff)));
        }
        let space = dist.space();
        let mut weights = Vec::with_capacity(dist.probs.len() + 1);
        let mut keys = Vec::with_capacity(dist.probs.len() + 1);
        for (i, &p) in dist.probs.iter().enumerate() {
            if p > 0.0 {
                let key = positions.iter().enumerate().fold(0u64, |acc, (j, &pos)| {
                    acc | ((space.occupation(i, j) as u64) << (8 * (table_modes - 1 - pos)))
                });
                weights.push(p);
                keys.push(Some(key));
            }
        }
        let leak = dist.leak();
        if leak > 0.0 {
            weights.push(leak);
            keys.push(None);
        }
        let alias = if keys.len() > 1 {
            Some(WeightedAliasIndex::new(weights).map_err(|e| Error::Shape(e.to_string()))?)
        } else {
            None
        };
        if keys.is_empty() {
            keys.push(None);
        }
        Ok(Self { alias, keys })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Option<u64> {
        match &self.alias {
            Some(a) => self.keys[a.sample(rng)],
            None => self.keys[0],
        }
    }
}

/// Independent distributions on disjoint mode sets, sampled jointly.
pub(crate) struct ProductSampler {
    modes: Vec<usize>,
    parts: Vec<Sampler>,
}

impl ProductSampler {
    pub(crate) fn new(dists: &[&Distribution]) -> Result<Self> {
        let mut modes: Vec<usize> = dists.iter().flat_map(|d| d.modes.iter().copied()).collect();
        modes.sort_unstable();
        if modes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Shape("product of distributions on overlapping modes".into()));
        }
        if modes.len() > MAX_TABLE_MODES {
            return Err(Error::TooLarge(format!("{} modes in a count table (max 8)", modes.len())));
        }
        let parts = dists
            .iter()
            .map(|d| {
                let pos: Vec<usize> = d.modes.iter().map(|m| modes.binary_search(m).expect("present")).collect();
                Sampler::new(d, &pos, modes.len())
            })
            .collect::<Result<_>>()?;
        Ok(Self { modes, parts })
    }

    pub(crate) fn sample(&self, shots: u64, seed: u64) -> Result<CountTable> {
        if shots == 0 {
            return Err(Error::Parameter { name: "shots", value: 0.0 });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut keys = Vec::with_capacity(shots as usize);
        let mut overflow = 0;
        for _ in 0..shots {
            let mut key = 0u64;
            let mut lost = false;
            for p in &self.parts {
                match p.draw(&mut rng) {
                    Some(k) => key |= k,
                    None => lost = true,
                }
            }
            if lost {
                overflow += 1;
            } else {
                keys.push(key);
            }
        }
        keys.sort_unstable();
        let k = self.modes.len();
        let mut counts = BTreeMap::new();
        for chunk in keys.chunk_by(|a, b| a == b) {
            let key = chunk[0];
            let pattern: Vec<usize> = (0..k).map(|j| ((key >> (8 * (k - 1 - j))) & 0xff) as usize).collect();
            counts.insert(pattern, chunk.len() as u64);
        }
        Ok(CountTable { shots, modes: self.modes.clone(), counts, overflow, seed: Some(seed), rng: RNG_NAME.into() })
    }
}

/// Multinomial draw of `shots` outcomes from `dist`, with an overflow
/// bucket of mass `1 − Σp`. Identical arguments give identical tables.
pub fn sample_counts(dist: &Distribution, shots: u64, seed: u64) -> Result<CountTable> {
    ProductSampler::new(&[dist])?.sample(shots, seed)
}

/// `count / shots` for `pattern`, marginalising table modes not in the pattern.
pub fn empirical_probability(table: &CountTable, pattern: &OutcomePattern) -> Result<f64> {
    Ok(table.matching(pattern)? as f64 / table.shots as f64)
}
