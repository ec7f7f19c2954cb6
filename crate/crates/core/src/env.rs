//! Quenched site disorder.
//!
//! A [`DisorderSpec`] describes the law `(1-ε)δ_1 + εQ` of a single site
//! rate. Rates are a pure function of `(seed, x)`, so any window of the
//! infinite environment can be regenerated bit-for-bit. Block
//! classification for the renormalization hierarchy lives here as well.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxcurrent::{self, OpenSystem};
use crate::renorm::{build_scales, RenormParams};
use crate::seed::{derive_seed, hash2, unit_open};

/// Distribution `Q` of a defect rate on `[r, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QKind {
    PointMassAtR,
    #[serde(rename = "uniform_on_r_R")]
    UniformOnRR,
    PowerTail { kappa: f64 },
}

/// Law of the quenched environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    pub r: f64,
    #[serde(rename = "R")]
    pub upper: f64,
    pub epsilon: f64,
    pub q_kind: QKind,
    pub seed: u64,
}

impl DisorderSpec {
    /// Defect-free environment (every rate is 1).
    #[must_use]
    pub fn homogeneous(seed: u64) -> Self {
        Self {
            r: 0.5,
            upper: 0.5,
            epsilon: 0.0,
            q_kind: QKind::PointMassAtR,
            seed,
        }
    }

    /// Bernoulli disorder: rate `r` with probability `epsilon`, else 1.
    #[must_use]
    pub fn bernoulli(r: f64, epsilon: f64, seed: u64) -> Self {
        Self {
            r,
            upper: r,
            epsilon,
            q_kind: QKind::PointMassAtR,
            seed,
        }
    }

    #[must_use]
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && self.r > 0.0 && self.r < 1.0) {
            return Err(Error::invalid("r", format!("must lie in (0,1), got {}", self.r)));
        }
        if !(self.upper.is_finite() && self.upper >= self.r && self.upper < 1.0) {
            return Err(Error::invalid(
                "R",
                format!("must satisfy r <= R < 1, got {}", self.upper),
            ));
        }
        if !(self.epsilon.is_finite() && (0.0..=1.0).contains(&self.epsilon)) {
            return Err(Error::invalid(
                "epsilon",
                format!("must lie in [0,1], got {}", self.epsilon),
            ));
        }
        if let QKind::PowerTail { kappa } = self.q_kind {
            if !(kappa.is_finite() && kappa > 1.0) {
                return Err(Error::invalid("q_kind.kappa", format!("must exceed 1, got {kappa}")));
            }
        }
        Ok(())
    }

    /// Parses and validates the JSON form.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| Error::invalid("disorder spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Status of the growth condition on `j_∞` for this choice of `Q`.
    #[must_use]
    pub fn assumption_h_note(&self) -> &'static str {
        if self.epsilon == 0.0 {
            return "not applicable (no defects)";
        }
        match self.q_kind {
            QKind::PowerTail { .. } => "implied by the power-tail condition",
            QKind::UniformOnRR => "assumption (H) unverified",
            QKind::PointMassAtR => "assumption (H) unverified (open for Bernoulli disorder)",
        }
    }

    /// `Q([r, r+u))`.
    #[must_use]
    pub fn q_mass_below(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let width = self.upper - self.r;
        match self.q_kind {
            QKind::PointMassAtR => 1.0,
            _ if width <= 0.0 => 1.0,
            QKind::UniformOnRR => (u / width).min(1.0),
            QKind::PowerTail { kappa } => (u / width).min(1.0).powf(kappa),
        }
    }

    /// Rate at site `x`; assumes the spec is valid.
    #[inline]
    #[must_use]
    pub fn rate_at(&self, x: i64) -> f64 {
        if unit_open(hash2(self.seed, x, 0)) >= self.epsilon {
            return 1.0;
        }
        let u = unit_open(hash2(self.seed, x, 1));
        let width = self.upper - self.r;
        match self.q_kind {
            QKind::PointMassAtR => self.r,
            QKind::UniformOnRR => self.r + width * u,
            QKind::PowerTail { kappa } => self.r + width * u.powf(1.0 / kappa),
        }
    }
}

/// Rates on a finite window `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    x_min: i64,
    rates: Vec<f64>,
}

impl Environment {
    /// Builds an environment from explicit rates in `[0, 1]`.
    pub fn from_rates(x_min: i64, rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::invalid("window", "empty"));
        }
        if let Some(bad) = rates.iter().find(|a| !(a.is_finite() && (0.0..=1.0).contains(*a))) {
            return Err(Error::invalid("rates", format!("rate {bad} outside [0,1]")));
        }
        Ok(Self { x_min, rates })
    }

    /// All-ones window.
    #[must_use]
    pub fn ones(x_min: i64, len: usize) -> Self {
        Self {
            x_min,
            rates: vec![1.0; len.max(1)],
        }
    }

    #[must_use]
    pub fn x_min(&self) -> i64 {
        self.x_min
    }

    #[must_use]
    pub fn x_max(&self) -> i64 {
        self.x_min + self.rates.len() as i64 - 1
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.rates.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    #[must_use]
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    #[must_use]
    pub fn contains(&self, x: i64) -> bool {
        x >= self.x_min && x <= self.x_max()
    }

    /// Rate at `x`. Panics outside the window.
    #[inline]
    #[must_use]
    pub fn rate(&self, x: i64) -> f64 {
        assert!(self.contains(x), "site {x} outside window [{}, {}]", self.x_min, self.x_max());
        self.rates[(x - self.x_min) as usize]
    }

    /// Sub-window `[lo, hi]`.
    pub fn slice(&self, lo: i64, hi: i64) -> Result<Self> {
        if lo > hi || !self.contains(lo) || !self.contains(hi) {
            return Err(Error::invalid(
                "window",
                format!("[{lo}, {hi}] not inside [{}, {}]", self.x_min, self.x_max()),
            ));
        }
        let a = (lo - self.x_min) as usize;
        let b = (hi - self.x_min) as usize;
        Ok(Self {
            x_min: lo,
            rates: self.rates[a..=b].to_vec(),
        })
    }

    #[must_use]
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[must_use]
    pub fn defect_count(&self) -> usize {
        self.rates.iter().filter(|&&a| a != 1.0).count()
    }
}

/// Samples the environment on `[lo, hi]`.
pub fn sample_environment(spec: &DisorderSpec, lo: i64, hi: i64) -> Result<Environment> {
    spec.validate()?;
    if lo > hi {
        return Err(Error::invalid("window", format!("[{lo}, {hi}] is empty")));
    }
    let rates = (lo..=hi).map(|x| spec.rate_at(x)).collect();
    Ok(Environment { x_min: lo, rates })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadReason {
    HasDefect,
    TooManyBadSubblocks,
    CurrentBelowThreshold,
}

/// Current estimate attached to a block verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentEstimate {
    pub value: f64,
    /// Zero for exact values, 99% half-width otherwise.
    pub half_width: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStatus {
    pub level: usize,
    pub verdict: Verdict,
    pub reason: Option<BadReason>,
    pub j_estimate: Option<CurrentEstimate>,
    /// False when a Monte Carlo interval never excluded the threshold.
    pub resolved: bool,
}

impl BlockStatus {
    fn good(level: usize, j_estimate: Option<CurrentEstimate>) -> Self {
        Self {
            level,
            verdict: Verdict::Good,
            reason: None,
            j_estimate,
            resolved: true,
        }
    }

    fn bad(level: usize, reason: BadReason, j_estimate: Option<CurrentEstimate>) -> Self {
        Self {
            level,
            verdict: Verdict::Bad,
            reason: Some(reason),
            j_estimate,
            resolved: true,
        }
    }

    #[must_use]
    pub fn is_good(&self) -> bool {
        self.verdict == Verdict::Good
    }
}

/// How block currents are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Exact { cutoff: usize },
    MonteCarlo { t_max: f64, seed: u64 },
}

impl Strategy {
    #[must_use]
    pub fn exact() -> Self {
        Strategy::Exact {
            cutoff: maxcurrent::EXACT_CUTOFF,
        }
    }
}

const MC_DOUBLINGS: usize = 3;

/// Classifies the block spanned by `env` at `level`.
pub fn classify_block(
    env: &Environment,
    level: usize,
    params: &RenormParams,
    strategy: Strategy,
) -> Result<BlockStatus> {
    if level == 0 {
        return Err(Error::invalid("level", "levels start at 1"));
    }
    let scales = build_scales(params, level)?;
    let sizes: Vec<u64> = (1..=level)
        .map(|n| {
            scales.level(n).k.exact.ok_or_else(|| {
                Error::Budget(format!("block size at level {n} is not representable"))
            })
        })
        .collect::<Result<_>>()?;
    if env.len() as u64 != sizes[level - 1] {
        return Err(Error::invalid(
            "block",
            format!("length {} does not match K_{level} = {}", env.len(), sizes[level - 1]),
        ));
    }
    let thresholds: Vec<f64> = (1..=level).map(|n| scales.level(n).j).collect();
    classify_rec(env, level, &sizes, &thresholds, strategy)
}

fn classify_rec(
    env: &Environment,
    level: usize,
    sizes: &[u64],
    thresholds: &[f64],
    strategy: Strategy,
) -> Result<BlockStatus> {
    if level == 1 {
        return Ok(if env.defect_count() == 0 {
            BlockStatus::good(1, None)
        } else {
            BlockStatus::bad(1, BadReason::HasDefect, None)
        });
    }
    let sub = sizes[level - 2] as i64;
    let mut bad = 0;
    let mut lo = env.x_min();
    while lo <= env.x_max() {
        let block = env.slice(lo, lo + sub - 1)?;
        if !classify_rec(&block, level - 1, sizes, thresholds, strategy)?.is_good() {
            bad += 1;
            if bad >= 2 {
                return Ok(BlockStatus::bad(level, BadReason::TooManyBadSubblocks, None));
            }
        }
        lo += sub;
    }
    let threshold = thresholds[level - 1];
    let sys = OpenSystem::from_env(env)?;
    match strategy {
        Strategy::Exact { cutoff } => {
            let exact = maxcurrent::stationary_current_exact_with_cutoff(&sys, cutoff)?;
            let est = CurrentEstimate {
                value: exact.current,
                half_width: 0.0,
                threshold,
            };
            Ok(if exact.current >= threshold {
                BlockStatus::good(level, Some(est))
            } else {
                BlockStatus::bad(level, BadReason::CurrentBelowThreshold, Some(est))
            })
        }
        Strategy::MonteCarlo { t_max, seed } => {
            let block_seed = derive_seed(seed, "block", (env.x_min() as u64) ^ ((level as u64) << 56));
            let mut t = t_max;
            let mut last = None;
            for attempt in 0..=MC_DOUBLINGS {
                let mc = maxcurrent::stationary_current_mc(&sys, t, derive_seed(block_seed, "attempt", attempt as u64))?;
                let est = CurrentEstimate {
                    value: mc.estimate,
                    half_width: mc.half_width,
                    threshold,
                };
                if mc.estimate - mc.half_width >= threshold {
                    return Ok(BlockStatus::good(level, Some(est)));
                }
                if mc.estimate + mc.half_width < threshold {
                    return Ok(BlockStatus::bad(level, BadReason::CurrentBelowThreshold, Some(est)));
                }
                last = Some(est);
                t *= 2.0;
            }
            let mut status = BlockStatus::bad(level, BadReason::CurrentBelowThreshold, last);
            status.resolved = false;
            Ok(status)
        }
    }
}

/// Monte Carlo estimate of the probability that a level-`n` block is bad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadBlockEstimate {
    pub level: usize,
    pub q_hat: f64,
    pub stderr: f64,
    pub bad: usize,
    pub unresolved: usize,
    pub replicas: usize,
    /// `2ζ_n`, reported only inside the parameter regime where it is proven.
    pub analytic_bound: Option<f64>,
}

pub fn bad_block_probability(
    spec: &DisorderSpec,
    params: &RenormParams,
    level: usize,
    replicas: usize,
    strategy: Strategy,
) -> Result<BadBlockEstimate> {
    spec.validate()?;
    if replicas < 100 {
        return Err(Error::invalid("replicas", format!("need at least 100, got {replicas}")));
    }
    let scales = build_scales(params, level)?;
    let k = scales.level(level).k.exact.ok_or_else(|| {
        Error::Budget(format!("block size at level {level} is not representable"))
    })?;
    if level >= 2 {
        if let Strategy::Exact { cutoff } = strategy {
            if (k - 1) as usize > cutoff {
                return Err(Error::Budget(format!(
                    "unresolvable at level {level}: {} particle sites exceed the exact cutoff {cutoff}",
                    k - 1
                )));
            }
        }
    }
    let statuses: Vec<BlockStatus> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let s = spec.with_seed(derive_seed(spec.seed, "block-env", i as u64));
            let env = sample_environment(&s, 0, k as i64 - 1)?;
            let strat = match strategy {
                Strategy::MonteCarlo { t_max, seed } => Strategy::MonteCarlo {
                    t_max,
                    seed: derive_seed(seed, "block-dyn", i as u64),
                },
                other => other,
            };
            classify_block(&env, level, params, strat)
        })
        .collect::<Result<_>>()?;
    let bad = statuses.iter().filter(|s| !s.is_good()).count();
    let unresolved = statuses.iter().filter(|s| !s.resolved).count();
    let n = replicas as f64;
    let q_hat = bad as f64 / n;
    let analytic_bound = params
        .lemma_regime_holds()
        .then(|| 2.0 * scales.level(level).zeta);
    Ok(BadBlockEstimate {
        level,
        q_hat,
        stderr: (q_hat * (1.0 - q_hat) / n).sqrt(),
        bad,
        unresolved,
        replicas,
        analytic_bound,
    })
}
