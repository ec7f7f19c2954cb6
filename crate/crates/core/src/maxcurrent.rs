//! Stationary current of the open disordered TASEP on a finite box.
//!
//! Small systems are solved exactly on the `2^N` configuration space; larger
//! ones are estimated by simulation. The module also carries the empirical
//! probe for the decay of `j_∞` towards `r/4`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::{sample_environment, DisorderSpec, Environment};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tasep::{self, RunOptions};

/// Largest number of particle sites handled by the exact solver.
pub const EXACT_CUTOFF: usize = 14;
/// Largest number of particle sites solved by dense LU.
pub const DENSE_MAX: usize = 10;

const ITER_TOL: f64 = 1e-13;
const ITER_MAX: usize = 2_000_000;

/// Open segment with `N` particle sites, fed from a reservoir on the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSystem {
    pub entry_rate: f64,
    /// Hop rates out of particle sites `1..N-1`.
    pub bulk_rates: Vec<f64>,
    pub exit_rate: f64,
}

impl OpenSystem {
    pub fn new(entry_rate: f64, bulk_rates: Vec<f64>, exit_rate: f64) -> Result<Self> {
        let sys = Self {
            entry_rate,
            bulk_rates,
            exit_rate,
        };
        for (i, &a) in sys.all_rates().iter().enumerate() {
            if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
                return Err(Error::invalid("rates", format!("bond {i} has rate {a} outside [0,1]")));
            }
        }
        Ok(sys)
    }

    /// Homogeneous system with `n` particle sites.
    pub fn homogeneous(n: usize, rate: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("particle sites", "need at least one"));
        }
        Self::new(rate, vec![rate; n - 1], rate)
    }

    /// System built on the window `[x1, x2]` of `env`: particles live on
    /// `[x1+1, x2]`, enter at rate `α(x1)` and leave at rate `α(x2)`.
    pub fn from_env(env: &Environment) -> Result<Self> {
        let rates = env.rates();
        if rates.len() < 2 {
            return Err(Error::invalid("window", "fewer than one particle site"));
        }
        let n = rates.len() - 1;
        Self::new(rates[0], rates[1..n].to_vec(), rates[n])
    }

    #[must_use]
    pub fn sites(&self) -> usize {
        self.bulk_rates.len() + 1
    }

    /// Rates of the `N+1` bonds, entry first and exit last.
    #[must_use]
    pub fn all_rates(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.bulk_rates.len() + 2);
        v.push(self.entry_rate);
        v.extend_from_slice(&self.bulk_rates);
        v.push(self.exit_rate);
        v
    }

    fn transitions(&self, s: usize, mut f: impl FnMut(usize, f64)) {
        let n = self.sites();
        if s & 1 == 0 && self.entry_rate > 0.0 {
            f(s | 1, self.entry_rate);
        }
        for (k, &a) in self.bulk_rates.iter().enumerate() {
            if a > 0.0 && (s >> k) & 1 == 1 && (s >> (k + 1)) & 1 == 0 {
                f(s ^ (0b11 << k), a);
            }
        }
        if (s >> (n - 1)) & 1 == 1 && self.exit_rate > 0.0 {
            f(s ^ (1 << (n - 1)), self.exit_rate);
        }
    }

    fn bond_currents(&self, pi: &[f64]) -> Vec<f64> {
        let n = self.sites();
        let mut j = vec![0.0; n + 1];
        for (s, &p) in pi.iter().enumerate() {
            if s & 1 == 0 {
                j[0] += p * self.entry_rate;
            }
            for (k, &a) in self.bulk_rates.iter().enumerate() {
                if (s >> k) & 1 == 1 && (s >> (k + 1)) & 1 == 0 {
                    j[k + 1] += p * a;
                }
            }
            if (s >> (n - 1)) & 1 == 1 {
                j[n] += p * self.exit_rate;
            }
        }
        j
    }

    /// `max_s |(πQ)(s)|`.
    fn residual(&self, pi: &[f64]) -> f64 {
        let mut flow = vec![0.0; pi.len()];
        for (s, &p) in pi.iter().enumerate() {
            self.transitions(s, |t, a| {
                flow[s] -= p * a;
                flow[t] += p * a;
            });
        }
        flow.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    DenseLu,
    PowerIteration { iterations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactCurrent {
    pub current: f64,
    /// Entry, bulk and exit currents.
    pub bond_currents: Vec<f64>,
    pub residual: f64,
    pub method: SolveMethod,
}

impl ExactCurrent {
    #[must_use]
    pub fn bond_spread(&self) -> f64 {
        let (lo, hi) = self
            .bond_currents
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        hi - lo
    }
}

/// Exact stationary current with the default cutoff.
pub fn stationary_current_exact(sys: &OpenSystem) -> Result<ExactCurrent> {
    stationary_current_exact_with_cutoff(sys, EXACT_CUTOFF)
}

pub fn stationary_current_exact_with_cutoff(sys: &OpenSystem, cutoff: usize) -> Result<ExactCurrent> {
    let n = sys.sites();
    if n > cutoff {
        return Err(Error::Budget(format!(
            "{n} particle sites exceed the exact cutoff {cutoff}"
        )));
    }
    if n > 20 {
        return Err(Error::Budget(format!("{n} particle sites are beyond any exact solve")));
    }
    let (pi, method) = if n <= DENSE_MAX {
        (dense_stationary(sys)?, SolveMethod::DenseLu)
    } else {
        let (pi, iterations) = power_stationary(sys)?;
        (pi, SolveMethod::PowerIteration { iterations })
    };
    let bond_currents = sys.bond_currents(&pi);
    let current = bond_currents.iter().sum::<f64>() / bond_currents.len() as f64;
    Ok(ExactCurrent {
        current,
        residual: sys.residual(&pi),
        bond_currents,
        method,
    })
}

fn dense_stationary(sys: &OpenSystem) -> Result<Vec<f64>> {
    let size = 1usize << sys.sites();
    // Rows of A are the balance equations (Q^T π = 0); the last one is
    // replaced by the normalization.
    let mut a = DMatrix::<f64>::zeros(size, size);
    for s in 0..size {
        sys.transitions(s, |t, rate| {
            a[(t, s)] += rate;
            a[(s, s)] -= rate;
        });
    }
    for s in 0..size {
        a[(size - 1, s)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(size);
    b[size - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Internal("singular stationary system".into()))?;
    let mut pi: Vec<f64> = x.iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

fn power_stationary(sys: &OpenSystem) -> Result<(Vec<f64>, usize)> {
    let size = 1usize << sys.sites();
    let mut edges: Vec<(u32, u32, f64)> = Vec::new();
    let mut out = vec![0.0; size];
    for (s, o) in out.iter_mut().enumerate() {
        sys.transitions(s, |t, rate| {
            edges.push((s as u32, t as u32, rate));
            *o += rate;
        });
    }
    let lambda = out.iter().fold(0.0f64, |m, &v| m.max(v)) * 1.0001;
    if lambda == 0.0 {
        return Err(Error::Internal("system without transitions".into()));
    }
    let stay: Vec<f64> = out.iter().map(|o| 1.0 - o / lambda).collect();
    for e in &mut edges {
        e.2 /= lambda;
    }
    let mut pi = vec![1.0 / size as f64; size];
    let mut next = vec![0.0; size];
    for it in 1..=ITER_MAX {
        for s in 0..size {
            next[s] = pi[s] * stay[s];
        }
        for &(s, t, p) in &edges {
            next[t as usize] += pi[s as usize] * p;
        }
        std::mem::swap(&mut pi, &mut next);
        if it % 64 == 0 {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
            if sys.residual(&pi) <= ITER_TOL {
                return Ok((pi, it));
            }
        }
    }
    Err(Error::Budget(format!(
        "power iteration did not reach residual {ITER_TOL} in {ITER_MAX} sweeps"
    )))
}

/// Simulated stationary current with a 99% batch-means half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCurrent {
    pub estimate: f64,
    pub half_width: f64,
    pub stderr: f64,
    pub bond_currents: Vec<f64>,
    pub bond_stderr: Vec<f64>,
}

pub fn stationary_current_mc(sys: &OpenSystem, t_max: f64, seed: u64) -> Result<McCurrent> {
    let opts = RunOptions::default();
    let rec = tasep::simulate_open(sys, t_max, seed, opts)?;
    let batches = rec.batch_space_means();
    let (mean, se) = crate::stats::mean_stderr(&batches);
    let q = StudentsT::new(0.0, 1.0, (batches.len() - 1) as f64)
        .map_err(|e| Error::Internal(e.to_string()))?
        .inverse_cdf(0.995);
    Ok(McCurrent {
        estimate: mean,
        half_width: q * se,
        stderr: se,
        bond_currents: rec.bond_currents(),
        bond_stderr: rec.bond_stderrs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVerdict {
    Satisfying,
    Violating,
    Indeterminate,
}

impl ProbeVerdict {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeVerdict::Satisfying => "satisfying",
            ProbeVerdict::Violating => "violating",
            ProbeVerdict::Indeterminate => "indeterminate",
        }
    }
}

/// One row of the probe table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub n: usize,
    pub threshold: f64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub bound: f64,
    pub verdict: ProbeVerdict,
    /// True when currents came from the exact solver.
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub cutoff: usize,
    pub mc_t_max: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            cutoff: DENSE_MAX,
            mc_t_max: 2e4,
            seed: 0,
        }
    }
}

/// Wilson score interval.
#[must_use]
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Empirical `P(j_∞,[0,N] ≤ r/4 + a/N^{b/2})` against `c/N^β`.
#[allow(clippy::too_many_arguments)]
pub fn assumption_h_probe(
    spec: &DisorderSpec,
    a: f64,
    b: f64,
    beta: f64,
    c: f64,
    sizes: &[usize],
    replicas: usize,
    opts: ProbeOptions,
) -> Result<Vec<ProbeRow>> {
    spec.validate()?;
    if replicas == 0 {
        return Err(Error::invalid("replicas", "must be positive"));
    }
    sizes
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::invalid("sizes", "N must be positive"));
            }
            let threshold = spec.r / 4.0 + a / (n as f64).powf(b / 2.0);
            let exact = n <= opts.cutoff;
            let hits = (0..replicas)
                .into_par_iter()
                .map(|i| {
                    let s = spec.with_seed(derive_seed(spec.seed, "probe-env", (n as u64) << 32 | i as u64));
                    let env = sample_environment(&s, 0, n as i64)?;
                    let sys = OpenSystem::from_env(&env)?;
                    let j = if exact {
                        stationary_current_exact_with_cutoff(&sys, opts.cutoff)?.current
                    } else {
                        let seed = derive_seed(opts.seed, "probe-dyn", (n as u64) << 32 | i as u64);
                        stationary_current_mc(&sys, opts.mc_t_max, seed)?.estimate
                    };
                    Ok(usize::from(j <= threshold))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum::<usize>();
            let (ci_lo, ci_hi) = wilson_interval(hits, replicas, 1.959_963_984_540_054);
            let bound = c / (n as f64).powf(beta);
            let verdict = if ci_hi < bound {
                ProbeVerdict::Satisfying
            } else if ci_lo > bound {
                ProbeVerdict::Violating
            } else {
                ProbeVerdict::Indeterminate
            };
            Ok(ProbeRow {
                n,
                threshold,
                p_hat: hits as f64 / replicas as f64,
                ci_lo,
                ci_hi,
                bound,
                verdict,
                exact,
            })
        })
        .collect()
}

/// Empirical `P(min rate on [0,N] < r + u)` against the union bound
/// `(N+1)·ε·Q([r, r+u))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinRateTail {
    pub n: usize,
    pub u: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub union_bound: f64,
}

pub fn min_rate_tail(spec: &DisorderSpec, n: usize, u: f64, replicas: usize) -> Result<MinRateTail> {
    spec.validate()?;
    let hits = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let s = spec.with_seed(derive_seed(spec.seed, "min-rate", i as u64));
            sample_environment(&s, 0, n as i64).map(|e| usize::from(e.min_rate() < spec.r + u))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    let p = hits as f64 / replicas as f64;
    Ok(MinRateTail {
        n,
        u,
        empirical: p,
        stderr: (p * (1.0 - p) / replicas as f64).sqrt(),
        union_bound: (n as f64 + 1.0) * spec.epsilon * spec.q_mass_below(u),
    })
}

/// Both sides of `j_∞(α) ≥ j_∞(α★,…,α★) ≥ α★/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinRateCertificate {
    pub alpha_star: f64,
    pub j_env: f64,
    pub j_min_homogeneous: f64,
    pub holds: bool,
}

pub fn min_rate_current_bound(env: &Environment) -> Result<MinRateCertificate> {
    let sys = OpenSystem::from_env(env)?;
    let alpha_star = env.min_rate();
    let j_env = stationary_current_exact(&sys)?.current;
    let hom = OpenSystem::homogeneous(sys.sites(), alpha_star)?;
    let j_min_homogeneous = stationary_current_exact(&hom)?.current;
    let tol = 1e-12;
    Ok(MinRateCertificate {
        alpha_star,
        j_env,
        j_min_homogeneous,
        holds: j_env + tol >= j_min_homogeneous && j_min_homogeneous + tol >= alpha_star / 4.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::QKind;
    use rand::Rng;

    fn catalan(n: u64) -> f64 {
        let mut c = 1u64;
        for k in 0..n {
            c = c * 2 * (2 * k + 1) / (k + 2);
        }
        c as f64
    }

    #[test]
    fn two_state_chain() {
        let j = stationary_current_exact(&OpenSystem::homogeneous(1, 1.0).unwrap()).unwrap();
        assert!((j.current - 0.5).abs() < 1e-14);
    }

    #[test]
    fn four_state_chain_by_hand() {
        // π = (1,1,2,1)/5 over states 00, 10, 01, 11 (site 1 is the left bit).
        let j = stationary_current_exact(&OpenSystem::homogeneous(2, 1.0).unwrap()).unwrap();
        assert!((j.current - 0.4).abs() < 1e-14);
    }

    #[test]
    fn catalan_ratios_and_rescaling() {
        for n in 1..=8u64 {
            let expect = catalan(n) / catalan(n + 1);
            let j = stationary_current_exact(&OpenSystem::homogeneous(n as usize, 1.0).unwrap()).unwrap();
            assert!((j.current - expect).abs() < 1e-12, "N={n}");
            assert!(j.residual <= 1e-12);
            assert!(j.bond_spread() <= 1e-10);
            let slow = stationary_current_exact(&OpenSystem::homogeneous(n as usize, 0.3).unwrap()).unwrap();
            assert!((slow.current - 0.3 * expect).abs() < 1e-12);
        }
    }

    #[test]
    fn power_iteration_matches_catalan() {
        let n = 11u64;
        let j = stationary_current_exact(&OpenSystem::homogeneous(n as usize, 1.0).unwrap()).unwrap();
        assert!(matches!(j.method, SolveMethod::PowerIteration { .. }));
        assert!((j.current - catalan(n) / catalan(n + 1)).abs() < 1e-10);
        assert!(j.residual <= 1e-12);
        assert!(j.bond_spread() <= 1e-10);
    }

    #[test]
    fn cutoff_enforced() {
        let sys = OpenSystem::homogeneous(5, 1.0).unwrap();
        assert!(matches!(stationary_current_exact_with_cutoff(&sys, 4), Err(Error::Budget(_))));
    }

    #[test]
    fn homogeneous_currents_decrease_above_quarter() {
        let js: Vec<f64> = (1..=10)
            .map(|n| stationary_current_exact(&OpenSystem::homogeneous(n, 1.0).unwrap()).unwrap().current)
            .collect();
        assert!(js.windows(2).all(|w| w[1] < w[0]));
        let fitted = js
            .iter()
            .enumerate()
            .map(|(i, j)| (j - 0.25) * (i + 1) as f64)
            .fold(f64::INFINITY, f64::min);
        assert!(fitted > 0.0);
    }

    #[test]
    fn single_rate_increase_never_lowers_current() {
        let mut rng = crate::seed::stream(17);
        for _ in 0..60 {
            let n = rng.gen_range(1..=6);
            let rates: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.2..=1.0)).collect();
            let env = Environment::from_rates(0, rates.clone()).unwrap();
            let base = stationary_current_exact(&OpenSystem::from_env(&env).unwrap()).unwrap().current;
            let k = rng.gen_range(0..=n);
            let mut up = rates;
            up[k] = (up[k] + rng.gen_range(0.0..0.5)).min(1.0);
            let env2 = Environment::from_rates(0, up).unwrap();
            let raised = stationary_current_exact(&OpenSystem::from_env(&env2).unwrap()).unwrap().current;
            assert!(raised >= base - 1e-12);
        }
    }

    #[test]
    fn min_rate_certificate_examples() {
        let hom = Environment::ones(0, 4);
        let c = min_rate_current_bound(&hom).unwrap();
        assert!((c.j_env - c.j_min_homogeneous).abs() < 1e-12);
        let env = Environment::from_rates(0, vec![1.0, 0.5, 1.0, 1.0]).unwrap();
        let c = min_rate_current_bound(&env).unwrap();
        assert!(c.j_env > c.j_min_homogeneous);
        assert!(c.j_min_homogeneous >= 0.125);
        assert!(c.holds);
        let spec = DisorderSpec {
            r: 0.3,
            upper: 0.9,
            epsilon: 0.5,
            q_kind: QKind::UniformOnRR,
            seed: 4,
        };
        for i in 0..100 {
            let n = 1 + (i % 6) as i64;
            let env = sample_environment(&spec.with_seed(i), 0, n).unwrap();
            assert!(min_rate_current_bound(&env).unwrap().holds);
        }
    }

    #[test]
    fn mc_agrees_with_exact() {
        let sys = OpenSystem::homogeneous(2, 1.0).unwrap();
        let mc = stationary_current_mc(&sys, 1e5, 5).unwrap();
        assert!((mc.estimate - 0.4).abs() <= mc.half_width, "{mc:?}");
        let spec = DisorderSpec {
            r: 0.4,
            upper: 0.9,
            epsilon: 0.5,
            q_kind: QKind::UniformOnRR,
            seed: 8,
        };
        let env = sample_environment(&spec, 0, 5).unwrap();
        let sys = OpenSystem::from_env(&env).unwrap();
        let ex = stationary_current_exact(&sys).unwrap().current;
        let mc = stationary_current_mc(&sys, 5e4, 6).unwrap();
        assert!((mc.estimate - ex).abs() <= 3.0 * mc.half_width, "{ex} vs {mc:?}");
    }

    #[test]
    fn blocked_exit_drains_current() {
        let sys = OpenSystem::new(1.0, vec![1.0, 1.0], 0.0).unwrap();
        let ex = stationary_current_exact(&sys).unwrap();
        assert!(ex.current.abs() < 1e-12);
        let mc = stationary_current_mc(&sys, 1e4, 2).unwrap();
        assert!(mc.estimate.abs() < 1e-3);
    }

    #[test]
    fn probe_extremes() {
        let rows = assumption_h_probe(&DisorderSpec::homogeneous(1), 0.05, 1.0, 1.0, 1.0, &[2, 4, 8], 50, ProbeOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.p_hat == 0.0));
        let pure = DisorderSpec::bernoulli(0.5, 1.0, 2);
        let rows = assumption_h_probe(&pure, 5.0, 1.0, 1.0, 1.0, &[2, 4], 50, ProbeOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.p_hat == 1.0 && r.verdict == ProbeVerdict::Violating));
    }

    #[test]
    fn min_rate_tail_respects_union_bound() {
        let spec = DisorderSpec {
            r: 0.5,
            upper: 0.9,
            epsilon: 0.5,
            q_kind: QKind::PowerTail { kappa: 2.0 },
            seed: 12,
        };
        for n in [4usize, 16, 64] {
            let u = 0.4 / (n as f64).sqrt();
            let t = min_rate_tail(&spec, n, u, 20_000).unwrap();
            assert!(t.empirical <= t.union_bound + 3.0 * t.stderr, "{t:?}");
        }
    }

    #[test]
    fn wilson_basics() {
        let (lo, hi) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5);
    }
}
