//! Kinetic Monte Carlo for the disordered TASEP on a ring and on an open segment.
//!
//! Dynamics use a uniformized mark construction: on a time segment of
//! length `Δ` the number of trials is `Poisson(bonds·Δ)`; each trial picks a
//! bond uniformly and a 32-bit mark, and the jump fires iff it is permitted
//! and `mark < α·2^32`. Since every rate is at most 1 this is an exact
//! realization of the generator, and two systems driven by the same seed
//! consume the random stream identically regardless of their state.

use std::fmt;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_environment, DisorderSpec, Environment};
use crate::error::{Error, Result};
use crate::flux::{FluxCurve, FluxSample, Provenance};
use crate::maxcurrent::OpenSystem;
use crate::seed::{derive_seed, stream};
use crate::stats::mean_stderr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring { len: usize },
    OpenSegment { sites: usize },
}

impl Topology {
    /// Number of bonds carrying a current.
    #[must_use]
    pub fn bonds(self) -> usize {
        match self {
            Topology::Ring { len } => len,
            Topology::OpenSegment { sites } => sites + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub occupancy: Vec<bool>,
    pub topology: Topology,
}

impl ParticleConfig {
    #[must_use]
    pub fn particles(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }
}

impl fmt::Display for ParticleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &o in &self.occupancy {
            f.write_str(if o { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Evenly spread `⌊ρL⌋` particles on a ring of length `L`, at `⌊kL/n⌋`.
pub fn initial_profile(density: f64, len: usize) -> Result<ParticleConfig> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::invalid("density", format!("{density} outside [0,1]")));
    }
    let n = ((density * len as f64) + 1e-9).floor() as usize;
    let n = n.min(len);
    let mut occupancy = vec![false; len];
    for k in 0..n {
        occupancy[k * len / n] = true;
    }
    Ok(ParticleConfig {
        occupancy,
        topology: Topology::Ring { len },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Fraction of `t_max` discarded before averaging.
    pub burn_in: f64,
    /// Batches used for the batch-means error estimate.
    pub batches: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            burn_in: 0.5,
            batches: 32,
        }
    }
}

impl RunOptions {
    fn validate(self) -> Result<Self> {
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::invalid("burn_in", "must lie in [0,1)"));
        }
        if self.batches < 2 {
            return Err(Error::invalid("batches", "need at least two"));
        }
        Ok(self)
    }
}

/// Per-bond jump counts of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentRecord {
    pub topology: Topology,
    pub elapsed_time: f64,
    /// Counts over the whole run, burn-in included.
    pub total_counts: Vec<u64>,
    /// Counts per averaging batch.
    pub batch_counts: Vec<Vec<u64>>,
    pub batch_time: f64,
    pub final_config: ParticleConfig,
}

impl CurrentRecord {
    fn window_time(&self) -> f64 {
        self.batch_time * self.batch_counts.len() as f64
    }

    fn window_counts(&self) -> Vec<u64> {
        let mut w = vec![0u64; self.topology.bonds()];
        for b in &self.batch_counts {
            for (acc, c) in w.iter_mut().zip(b) {
                *acc += c;
            }
        }
        w
    }

    /// Time-averaged current per bond after burn-in.
    #[must_use]
    pub fn bond_currents(&self) -> Vec<f64> {
        let t = self.window_time();
        self.window_counts().iter().map(|&c| c as f64 / t).collect()
    }

    /// Batch-means standard error per bond.
    #[must_use]
    pub fn bond_stderrs(&self) -> Vec<f64> {
        (0..self.topology.bonds())
            .map(|x| {
                let v: Vec<f64> = self
                    .batch_counts
                    .iter()
                    .map(|b| b[x] as f64 / self.batch_time)
                    .collect();
                mean_stderr(&v).1
            })
            .collect()
    }

    /// Space-averaged current of each batch.
    #[must_use]
    pub fn batch_space_means(&self) -> Vec<f64> {
        let bonds = self.topology.bonds() as f64;
        self.batch_counts
            .iter()
            .map(|b| b.iter().sum::<u64>() as f64 / (bonds * self.batch_time))
            .collect()
    }

    /// Space-averaged current with its batch-means standard error.
    #[must_use]
    pub fn space_averaged_current(&self) -> (f64, f64) {
        mean_stderr(&self.batch_space_means())
    }
}

/// Incremental simulator shared by both topologies.
pub struct Simulator {
    topology: Topology,
    occupancy: Vec<bool>,
    thresholds: Vec<u64>,
    counts: Vec<u64>,
    rng: ChaCha8Rng,
    time: f64,
}

fn threshold(rate: f64) -> u64 {
    (rate * 4_294_967_296.0) as u64
}

fn check_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().position(|a| !(a.is_finite() && (0.0..=1.0).contains(a))) {
        Some(i) => Err(Error::invalid("rates", format!("bond {i} rate outside [0,1]"))),
        None => Ok(()),
    }
}

impl Simulator {
    /// Ring with hop rates `rates[x]` from `x` to `x+1 mod L`.
    pub fn ring(rates: &[f64], config: &ParticleConfig, seed: u64) -> Result<Self> {
        let len = rates.len();
        if len < 2 {
            return Err(Error::invalid("ring length", "must be at least 2"));
        }
        if config.occupancy.len() != len {
            return Err(Error::invalid("config", "length differs from the ring"));
        }
        check_rates(rates)?;
        Ok(Self {
            topology: Topology::Ring { len },
            occupancy: config.occupancy.clone(),
            thresholds: rates.iter().map(|&a| threshold(a)).collect(),
            counts: vec![0; len],
            rng: stream(seed),
            time: 0.0,
        })
    }

    /// Open segment, initially empty.
    pub fn open(sys: &OpenSystem, seed: u64) -> Result<Self> {
        let rates = sys.all_rates();
        check_rates(&rates)?;
        let sites = sys.sites();
        Ok(Self {
            topology: Topology::OpenSegment { sites },
            occupancy: vec![false; sites],
            thresholds: rates.iter().map(|&a| threshold(a)).collect(),
            counts: vec![0; sites + 1],
            rng: stream(seed),
            time: 0.0,
        })
    }

    #[must_use]
    pub fn time(&self) -> f64 {
        self.time
    }

    #[must_use]
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[must_use]
    pub fn config(&self) -> ParticleConfig {
        ParticleConfig {
            occupancy: self.occupancy.clone(),
            topology: self.topology,
        }
    }

    /// Runs the dynamics for `dt` more time units.
    pub fn advance(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let bonds = self.topology.bonds();
        let mean = bonds as f64 * dt;
        let trials = Poisson::new(mean).map_or(0, |p| p.sample(&mut self.rng) as u64);
        self.time += dt;
        match self.topology {
            Topology::Ring { len } => {
                for _ in 0..trials {
                    let x = self.rng.gen_range(0..len);
                    let mark = u64::from(self.rng.next_u32());
                    let y = if x + 1 == len { 0 } else { x + 1 };
                    if mark < self.thresholds[x] && self.occupancy[x] && !self.occupancy[y] {
                        self.occupancy[x] = false;
                        self.occupancy[y] = true;
                        self.counts[x] += 1;
                    }
                }
            }
            Topology::OpenSegment { sites } => {
                for _ in 0..trials {
                    let b = self.rng.gen_range(0..=sites);
                    let mark = u64::from(self.rng.next_u32());
                    if mark >= self.thresholds[b] {
                        continue;
                    }
                    let fired = if b == 0 {
                        !self.occupancy[0] && {
                            self.occupancy[0] = true;
                            true
                        }
                    } else if b == sites {
                        self.occupancy[sites - 1] && {
                            self.occupancy[sites - 1] = false;
                            true
                        }
                    } else if self.occupancy[b - 1] && !self.occupancy[b] {
                        self.occupancy[b - 1] = false;
                        self.occupancy[b] = true;
                        true
                    } else {
                        false
                    };
                    if fired {
                        self.counts[b] += 1;
                    }
                }
            }
        }
    }

    /// Burn-in followed by equal batches, recording per-batch counts.
    pub fn run(mut self, t_max: f64, opts: RunOptions) -> Result<CurrentRecord> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::invalid("t_max", "must be positive"));
        }
        let opts = opts.validate()?;
        self.advance(t_max * opts.burn_in);
        let batch_time = t_max * (1.0 - opts.burn_in) / opts.batches as f64;
        let mut batch_counts = Vec::with_capacity(opts.batches);
        for _ in 0..opts.batches {
            let before = self.counts.clone();
            self.advance(batch_time);
            batch_counts.push(self.counts.iter().zip(&before).map(|(a, b)| a - b).collect());
        }
        Ok(CurrentRecord {
            topology: self.topology,
            elapsed_time: self.time,
            total_counts: self.counts.clone(),
            batch_counts,
            batch_time,
            final_config: self.config(),
        })
    }
}

/// Ring run on the periodized environment `env` (length `L = env.len()`).
pub fn simulate_ring(env: &Environment, density: f64, t_max: f64, seed: u64, opts: RunOptions) -> Result<CurrentRecord> {
    let config = initial_profile(density, env.len())?;
    Simulator::ring(env.rates(), &config, seed)?.run(t_max, opts)
}

/// Open segment run, started from the empty configuration.
pub fn simulate_open(sys: &OpenSystem, t_max: f64, seed: u64, opts: RunOptions) -> Result<CurrentRecord> {
    Simulator::open(sys, seed)?.run(t_max, opts)
}

/// Exact stationary flux of the homogeneous rate-1 ring with `n` particles.
#[must_use]
pub fn homogeneous_ring_flux(n: usize, len: usize) -> f64 {
    (n * (len - n)) as f64 / (len * (len - 1)) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxCurveEstimate {
    pub curve: FluxCurve,
    pub replicas: usize,
    pub len: usize,
    pub t_max: f64,
    pub seed: u64,
    /// `max |f̂(ρ) − f̂(1−ρ)|` over mirrored pairs present in the grid.
    pub symmetry_defect: f64,
    /// Root-mean-square of the pair-difference standard errors.
    pub pooled_stderr: f64,
}

impl FluxCurveEstimate {
    #[must_use]
    pub fn symmetric_within(&self, k: f64) -> bool {
        self.symmetry_defect <= k * self.pooled_stderr
    }
}

/// Quenched-averaged ring flux. Replica `k` uses environment seed
/// `derive_seed(spec.seed, "replica", k)` at every density.
pub fn flux_curve(
    spec: &DisorderSpec,
    densities: &[f64],
    len: usize,
    t_max: f64,
    replicas: usize,
    seed: u64,
    opts: RunOptions,
) -> Result<FluxCurveEstimate> {
    spec.validate()?;
    if replicas == 0 {
        return Err(Error::invalid("replicas", "must be positive"));
    }
    if let Some(rho) = densities.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid("densities", format!("{rho} outside [0,1]")));
    }
    if densities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("densities", "must be strictly increasing"));
    }
    let envs = (0..replicas)
        .map(|k| sample_environment(&spec.with_seed(derive_seed(spec.seed, "replica", k as u64)), 0, len as i64 - 1))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..densities.len()).flat_map(|i| (0..replicas).map(move |k| (i, k))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, k)| {
            let dyn_seed = derive_seed(derive_seed(seed, "ring", k as u64), "density", i as u64);
            simulate_ring(&envs[k], densities[i], t_max, dyn_seed, opts).map(|r| r.space_averaged_current())
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<FluxSample> = densities
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let vals: Vec<(f64, f64)> = runs[i * replicas..(i + 1) * replicas].to_vec();
            let (value, stderr) = if replicas == 1 {
                vals[0]
            } else {
                mean_stderr(&vals.iter().map(|v| v.0).collect::<Vec<_>>())
            };
            FluxSample { x: rho, value, stderr }
        })
        .collect();
    let (symmetry_defect, pooled_stderr) = symmetry_defect(&samples);
    Ok(FluxCurveEstimate {
        curve: FluxCurve {
            samples,
            provenance: Provenance::Simulated,
        },
        replicas,
        len,
        t_max,
        seed,
        symmetry_defect,
        pooled_stderr,
    })
}

fn symmetry_defect(samples: &[FluxSample]) -> (f64, f64) {
    let mut defect = 0.0f64;
    let mut var_sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in samples.iter().enumerate() {
        if a.x >= 0.5 - 1e-12 {
            continue;
        }
        if let Some(b) = samples[i + 1..].iter().find(|b| (a.x + b.x - 1.0).abs() < 1e-9) {
            defect = defect.max((a.value - b.value).abs());
            var_sum += a.stderr * a.stderr + b.stderr * b.stderr;
            pairs += 1;
        }
    }
    let pooled = if pairs == 0 { 0.0 } else { (var_sum / pairs as f64).sqrt() };
    (defect, pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::QKind;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn profiles() {
        assert_eq!(initial_profile(0.5, 4).unwrap().to_string(), "1010");
        assert_eq!(initial_profile(0.0, 7).unwrap().particles(), 0);
        let third = initial_profile(1.0 / 3.0, 9).unwrap();
        assert_eq!(third.to_string(), "100100100");
        assert!(initial_profile(1.5, 4).is_err());
    }

    #[test]
    fn empty_and_full_rings_are_frozen() {
        let env = Environment::ones(0, 64);
        for rho in [0.0, 1.0] {
            let rec = simulate_ring(&env, rho, 100.0, 1, RunOptions::default()).unwrap();
            assert!(rec.total_counts.iter().all(|&c| c == 0));
            assert_eq!(rec.space_averaged_current().0, 0.0);
        }
    }

    #[test]
    fn small_homogeneous_ring_matches_product_measure() {
        let env = Environment::ones(0, 16);
        let rec = simulate_ring(&env, 0.25, 4e4, 3, RunOptions::default()).unwrap();
        let (j, se) = rec.space_averaged_current();
        let exact = homogeneous_ring_flux(4, 16);
        assert!((j - exact).abs() < 4.0 * se + 1e-3, "{j} {se} {exact}");
    }

    #[test]
    fn ring_bond_counts_stay_within_particle_number() {
        let spec = DisorderSpec {
            r: 0.3,
            upper: 0.8,
            epsilon: 0.4,
            q_kind: QKind::UniformOnRR,
            seed: 5,
        };
        let env = sample_environment(&spec, 0, 29).unwrap();
        let config = initial_profile(0.4, 30).unwrap();
        let n = config.particles() as u64;
        let mut sim = Simulator::ring(env.rates(), &config, 9).unwrap();
        for _ in 0..400 {
            sim.advance(0.5);
            let c = sim.counts();
            let (lo, hi) = (c.iter().min().unwrap(), c.iter().max().unwrap());
            assert!(hi - lo <= n);
            assert_eq!(sim.config().particles() as u64, n);
        }
    }

    #[test]
    fn open_single_site_and_two_sites() {
        let one = OpenSystem::homogeneous(1, 1.0).unwrap();
        let rec = simulate_open(&one, 4e4, 2, RunOptions::default()).unwrap();
        let entry = rec.bond_currents()[0];
        assert!((entry - 0.5).abs() < 4.0 * rec.bond_stderrs()[0]);
        let two = OpenSystem::homogeneous(2, 1.0).unwrap();
        let rec = simulate_open(&two, 1e5, 4, RunOptions::default()).unwrap();
        let (j, se) = rec.space_averaged_current();
        assert!((j - 0.4).abs() < 4.0 * se);
    }

    #[test]
    fn open_bond_currents_agree_pairwise() {
        let sys = OpenSystem::new(0.7, vec![0.5, 1.0, 0.8], 0.9).unwrap();
        let rec = simulate_open(&sys, 5e4, 12, RunOptions::default()).unwrap();
        let j = rec.bond_currents();
        let se = rec.bond_stderrs();
        for a in 0..j.len() {
            for b in a + 1..j.len() {
                let pooled = (se[a] * se[a] + se[b] * se[b]).sqrt();
                assert!((j[a] - j[b]).abs() <= 3.0 * pooled + 1e-12);
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        let env = Environment::ones(0, 8);
        assert!(simulate_ring(&env, 0.5, 0.0, 1, RunOptions::default()).is_err());
        assert!(simulate_ring(&env, -0.1, 1.0, 1, RunOptions::default()).is_err());
        assert!(flux_curve(&DisorderSpec::homogeneous(1), &[0.5], 8, 10.0, 0, 1, RunOptions::default()).is_err());
    }

    #[test]
    fn pure_defect_curve_rescales() {
        let spec = DisorderSpec::bernoulli(0.5, 1.0, 3);
        let est = flux_curve(&spec, &[0.2, 0.5, 0.8], 256, 4e3, 2, 4, RunOptions::default()).unwrap();
        for s in &est.curve.samples {
            let n = (s.x * 256.0 + 1e-9).floor() as usize;
            let exact = 0.5 * homogeneous_ring_flux(n, 256);
            assert!((s.value - exact).abs() < 0.01, "{s:?}");
        }
    }

    fn coupled_pair(rates: &[f64], bumps: &[f64], density: f64, seed: u64, ring: bool) -> (Vec<Vec<u64>>, Vec<Vec<u64>>) {
        let raised: Vec<f64> = rates.iter().zip(bumps).map(|(a, d)| (a + d).min(1.0)).collect();
        let (mut lo, mut hi) = if ring {
            let cfg = initial_profile(density, rates.len()).unwrap();
            (
                Simulator::ring(rates, &cfg, seed).unwrap(),
                Simulator::ring(&raised, &cfg, seed).unwrap(),
            )
        } else {
            let n = rates.len() - 1;
            let a = OpenSystem::new(rates[0], rates[1..n].to_vec(), rates[n]).unwrap();
            let b = OpenSystem::new(raised[0], raised[1..n].to_vec(), raised[n]).unwrap();
            (Simulator::open(&a, seed).unwrap(), Simulator::open(&b, seed).unwrap())
        };
        let mut l = Vec::new();
        let mut h = Vec::new();
        for _ in 0..60 {
            lo.advance(0.7);
            hi.advance(0.7);
            l.push(lo.counts().to_vec());
            h.push(hi.counts().to_vec());
        }
        (l, h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn raising_rates_never_lowers_ring_currents(
            rates in prop::collection::vec(0.1f64..1.0, 3..12),
            bump_seed in any::<u64>(),
            density in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let mut r = stream(bump_seed);
            let bumps: Vec<f64> = rates.iter().map(|_| r.gen_range(0.0..0.6)).collect();
            let (lo, hi) = coupled_pair(&rates, &bumps, density, seed, true);
            for (a, b) in lo.iter().zip(&hi) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!(y >= x);
                }
            }
        }

        #[test]
        fn raising_rates_never_lowers_open_currents(
            rates in prop::collection::vec(0.1f64..1.0, 2..10),
            bump_seed in any::<u64>(),
            seed in any::<u64>(),
        ) {
            let mut r = stream(bump_seed);
            let bumps: Vec<f64> = rates.iter().map(|_| r.gen_range(0.0..0.6)).collect();
            let (lo, hi) = coupled_pair(&rates, &bumps, 0.0, seed, false);
            for (a, b) in lo.iter().zip(&hi) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!(y >= x);
                }
            }
        }

        #[test]
        fn profile_density_defect_below_one_site(rho in 0.0f64..=1.0, len in 1usize..500) {
            let cfg = initial_profile(rho, len).unwrap();
            prop_assert!((cfg.particles() as f64 / len as f64 - rho).abs() < 1.0 / len as f64 + 1e-12);
        }
    }
}
