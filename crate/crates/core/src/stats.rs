//! Concentration toolkit: subgaussian normalization, the max-of-sums bound,
//! harmonic maxima of exponentials and empirical tail harnesses.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lpp::{self, BlockGeometry, Homogeneous, Services, TruncatedServices};
use crate::seed::{derive_seed, stream};

/// Sample mean and standard error of the mean (zero for fewer than two values).
#[must_use]
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Tail `P(Y ≥ t) ≤ C e^{−t²/V}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgaussianSpec {
    pub c_tail: f64,
    pub v: f64,
}

impl SubgaussianSpec {
    pub fn new(c_tail: f64, v: f64) -> Result<Self> {
        if !(c_tail >= 1.0) {
            return Err(Error::invalid("C_tail", format!("{c_tail} < 1")));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid("V", format!("{v} must be positive")));
        }
        Ok(Self { c_tail, v })
    }
}

/// `(√(V log C), √V)` so that `Y = shift + scale·X` with `P(X ≥ t) ≤ e^{−t²}`.
#[must_use]
pub fn subgaussian_shift(spec: SubgaussianSpec) -> (f64, f64) {
    ((spec.v * spec.c_tail.ln()).sqrt(), spec.v.sqrt())
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// `log(1 + √π θ e^{θ²/4}) − √π θ`, without cancellation near zero.
#[must_use]
pub fn lambda_bound(theta: f64) -> f64 {
    let a = SQRT_PI * theta;
    let q = theta * theta / 4.0;
    if q + a.ln() > 0.0 {
        let log_u = q + a.ln();
        return q - a + a.ln() + (-log_u).exp().ln_1p();
    }
    let u = a * q.exp();
    let log1p_minus = if u < 1e-2 {
        series_log1p_minus(u)
    } else {
        u.ln_1p() - u
    };
    log1p_minus + a * q.exp_m1()
}

fn series_log1p_minus(u: f64) -> f64 {
    let mut acc = 0.0;
    let mut pow = u;
    for k in 2..14 {
        pow *= u;
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        acc += sign * pow / k as f64;
    }
    acc
}

/// `4Λ(θ)/θ²`.
#[must_use]
pub fn lambda_ratio(theta: f64) -> f64 {
    4.0 * lambda_bound(theta) / (theta * theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantA {
    /// `sup_{θ>0} 4Λ(θ)/θ²`.
    pub a: f64,
    /// Largest ratio found on the grid and where.
    pub grid_max: f64,
    pub theta: f64,
    /// False when the supremum is only approached as `θ → ∞`.
    pub attained: bool,
}

/// Computes `A` on a log grid `[1e−4, theta_max]` with `points_per_decade`,
/// refining around interior maxima by golden-section search.
#[must_use]
pub fn constant_a_with(theta_max: f64, points_per_decade: usize) -> ConstantA {
    let lo = 1e-4f64.log10();
    let hi = theta_max.log10();
    let n = ((hi - lo) * points_per_decade as f64).ceil() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / n as f64)).collect();
    let (mut best_k, mut best) = (0, f64::NEG_INFINITY);
    for (k, &t) in grid.iter().enumerate() {
        let r = lambda_ratio(t);
        if r > best {
            best = r;
            best_k = k;
        }
    }
    let tail = lambda_ratio(grid[grid.len() - 1]);
    if best_k + 1 == grid.len() || best - tail <= 1e-9 {
        // The ratio tends to 1 from below as θ grows.
        return ConstantA {
            a: 1.0,
            grid_max: best,
            theta: grid[best_k],
            attained: false,
        };
    }
    let (mut a, mut b) = (grid[best_k.saturating_sub(1)], grid[best_k + 1]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if lambda_ratio(c) > lambda_ratio(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let theta = 0.5 * (a + b);
    let v = lambda_ratio(theta);
    ConstantA {
        a: v,
        grid_max: v,
        theta,
        attained: true,
    }
}

#[must_use]
pub fn constant_a() -> ConstantA {
    constant_a_with(1e12, 200)
}

/// Right side of the max-of-sums bound. Rows index `a`, columns index `i`.
pub fn max_sum_bound(means: &[Vec<f64>], variances: &[Vec<f64>], a_const: f64) -> Result<f64> {
    if means.is_empty() || means[0].is_empty() {
        return Err(Error::invalid("sets", "𝒜 and ℐ must be non-empty"));
    }
    let n_i = means[0].len();
    if variances.len() != means.len() || means.iter().chain(variances).any(|r| r.len() != n_i) {
        return Err(Error::invalid("tables", "means and variances must share one |𝒜|×|ℐ| shape"));
    }
    if variances.iter().flatten().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("V", "all variances must be positive"));
    }
    let mean_max = means.iter().map(|r| r.iter().sum::<f64>()).fold(f64::NEG_INFINITY, f64::max);
    let var_max = variances.iter().map(|r| r.iter().sum::<f64>()).fold(f64::NEG_INFINITY, f64::max);
    let gap = SQRT_PI * (n_i as f64).sqrt() + SQRT_PI * a_const.sqrt() + a_const.sqrt() * (means.len() as f64).ln().sqrt();
    Ok(mean_max + var_max.sqrt() * gap)
}

/// Normal with scale `s` conditioned on `[−2s, 2s]`; its tail is `≤ e^{−t²/(2s²)}`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, s: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return s * z;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxSumReport {
    pub bound: f64,
    pub empirical_mean: f64,
    pub stderr: f64,
    pub trials: usize,
    /// Trials whose realized maximum exceeded the bound on the mean.
    pub trials_above_bound: usize,
}

/// Monte Carlo of `E max_a Σ_i 𝒴_{a,i}` with truncated-normal summands of
/// mean `means[a][i]` and scale `scales[a][i]` (variance proxy `2s²`).
pub fn max_sum_monte_carlo(means: &[Vec<f64>], scales: &[Vec<f64>], a_const: f64, trials: usize, seed: u64) -> Result<MaxSumReport> {
    let variances: Vec<Vec<f64>> = scales.iter().map(|r| r.iter().map(|s| 2.0 * s * s).collect()).collect();
    let bound = max_sum_bound(means, &variances, a_const)?;
    let maxima: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(derive_seed(seed, "max-sum", t as u64));
            means
                .iter()
                .zip(scales)
                .map(|(m, s)| m.iter().zip(s).map(|(&mu, &sc)| mu + truncated_normal(&mut rng, sc)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let (empirical_mean, stderr) = mean_stderr(&maxima);
    Ok(MaxSumReport {
        bound,
        empirical_mean,
        stderr,
        trials,
        trials_above_bound: maxima.iter().filter(|&&m| m > bound).count(),
    })
}

/// `H_count = Σ_{k≤count} 1/k`, summed from the small terms up with compensation.
pub fn exp_max_mean(count: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for k in (1..=count).rev() {
        let y = 1.0 / k as f64 - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    Ok(sum)
}

/// Smallest `C` with `H_{1+⌊t⌋} ≤ C(1+log(1+t))` for `t ∈ [0, t_max]`.
#[must_use]
pub fn exp_max_constant(t_max: u64) -> f64 {
    let mut h = 0.0;
    let mut worst = 0.0f64;
    for k in 0..=t_max {
        h += 1.0 / (k + 1) as f64;
        worst = worst.max(h / (1.0 + (1.0 + k as f64).ln()));
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub empirical: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    pub mean_t: f64,
    pub path_length: i64,
    pub m: f64,
    pub replicas: usize,
}

impl TailReport {
    #[must_use]
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Tail table of `Z = (T − ĒT)/(8M√L)` against `e^{−t²}` with a 3σ band.
pub fn tail_report(samples: &[f64], m: f64, path_length: i64, t_grid: &[f64]) -> TailReport {
    let (mean_t, _) = mean_stderr(samples);
    let scale = 8.0 * m * (path_length as f64).sqrt();
    let z: Vec<f64> = samples.iter().map(|t| ((t - mean_t) / scale).abs()).collect();
    let n = z.len() as f64;
    let rows = t_grid
        .iter()
        .map(|&t| {
            let empirical = z.iter().filter(|&&v| v >= t).count() as f64 / n;
            let bound = (-t * t).exp();
            let band = 3.0 * (bound * (1.0 - bound) / n).sqrt();
            TailRow {
                t,
                empirical,
                bound,
                pass: empirical <= bound + band,
            }
        })
        .collect();
    TailReport {
        rows,
        mean_t,
        path_length,
        m,
        replicas: samples.len(),
    }
}

/// Homogeneous LPP from `(0,0)` to `to` with Exp(1) services truncated at `m`.
pub fn martin_concentration_check(to: (i64, i64), m: f64, replicas: usize, seed: u64, t_grid: &[f64]) -> Result<TailReport> {
    if !(m > 0.0) {
        return Err(Error::invalid("M", "must be positive"));
    }
    if replicas < 2 {
        return Err(Error::invalid("replicas", "need at least two"));
    }
    let samples = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let s = TruncatedServices {
                seed: derive_seed(seed, "martin", k as u64),
                m,
            };
            lpp::passage_time(&Homogeneous(1.0), &s, (0, 0), to)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tail_report(&samples, m, to.0 + 2 * to.1, t_grid))
}

/// Default `t` grid for tail tables.
#[must_use]
pub fn default_t_grid() -> Vec<f64> {
    (0..=12).map(|k| 0.25 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub sigma: i8,
    pub y_prime: u64,
    /// `y'/K_{n+1}`.
    pub y: f64,
    pub skeletons: usize,
    pub replicas: usize,
    pub mean_of_max: f64,
    pub max_of_mean: f64,
    /// `𝓕_n(y)`, normalized by `K_{n+1}`.
    pub f_n: f64,
    /// `(log K_{n+1})^{3/2}/√K_n · √(σ/2+y)(1+log(1+y))^{3/2}`.
    pub unit_envelope: f64,
    /// Largest `|T_B − max_skeleton(U+V)|` over replicas.
    pub decomposition_error: f64,
}

impl FluctuationReport {
    /// `𝓕_n` divided by the envelope shape.
    #[must_use]
    pub fn implied_constant(&self) -> f64 {
        self.f_n / self.unit_envelope
    }
}

/// Splits the expected restricted passage time across the block spanned by
/// `env` into the mean-optimization part and the fluctuation part.
pub fn fluctuation_split(env: &Environment, geom: &BlockGeometry, y_prime: u64, replicas: usize, seed: u64) -> Result<FluctuationReport> {
    geom.validate()?;
    if replicas == 0 {
        return Err(Error::invalid("replicas", "must be positive"));
    }
    let skels = lpp::enumerate_skeletons(geom.l_n, geom.k_n, y_prime, geom.sigma, lpp::SKELETON_CAP)?;
    if skels.is_empty() {
        return Err(Error::EmptyPathSet {
            from: (geom.origin, 0),
            to: geom.target(y_prime),
        });
    }
    let per_replica = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = lpp::ServiceField::new(derive_seed(seed, "fluct", r as u64));
            let vals = skels
                .iter()
                .map(|sk| lpp::skeleton_uv(env, &s, geom, sk).map(|(u, v)| u + v))
                .collect::<Result<Vec<f64>>>()?;
            let direct = lpp::restricted_passage_time(env, &s, geom.block(), (geom.origin, 0), geom.target(y_prime))?;
            Ok(vals).map(|v| (v, direct))
        })
        .collect::<Result<Vec<(Vec<f64>, f64)>>>()?;
    let k_next = geom.k_next() as f64;
    let mut max_sum = 0.0;
    let mut col_sums = vec![0.0; skels.len()];
    let mut decomposition_error = 0.0f64;
    for (vals, direct) in &per_replica {
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        decomposition_error = decomposition_error.max((m - direct).abs());
        max_sum += m;
        for (c, v) in col_sums.iter_mut().zip(vals) {
            *c += v;
        }
    }
    let r = replicas as f64;
    let mean_of_max = max_sum / r / k_next;
    let max_of_mean = col_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max) / r / k_next;
    let y = y_prime as f64 / k_next;
    let sig = f64::from(geom.sigma);
    let unit_envelope = k_next.ln().powf(1.5) / (geom.k_n as f64).sqrt() * (sig / 2.0 + y).sqrt() * (1.0 + (1.0 + y).ln()).powf(1.5);
    Ok(FluctuationReport {
        sigma: geom.sigma,
        y_prime,
        y,
        skeletons: skels.len(),
        replicas,
        mean_of_max,
        max_of_mean,
        f_n: mean_of_max - max_of_mean,
        unit_envelope,
        decomposition_error,
    })
}

/// Constant service values, for degenerate checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantServices(pub f64);

impl Services for ConstantServices {
    fn y(&self, _: i64, _: i64) -> f64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Exp1};

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(m, 2.5);
        assert_abs_diff_eq!(s, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn shift_values() {
        assert_eq!(subgaussian_shift(SubgaussianSpec::new(1.0, 3.0).unwrap()).0, 0.0);
        let (sh, sc) = subgaussian_shift(SubgaussianSpec::new(std::f64::consts::E, 4.0).unwrap());
        assert_abs_diff_eq!(sh, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sc, 2.0);
        assert!(SubgaussianSpec::new(0.5, 1.0).is_err());
    }

    #[test]
    fn normalized_tail_by_sampling() {
        let spec = SubgaussianSpec::new(3.0, 2.0).unwrap();
        let (sh, sc) = subgaussian_shift(spec);
        let mut rng = stream(17);
        let n = 200_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                ((spec.v * (spec.c_tail.ln() + e)).sqrt() - sh) / sc
            })
            .collect();
        for t in [0.0, 0.25, 0.5, 1.0, 1.5, 2.0] {
            let p = xs.iter().filter(|&&x| x >= t).count() as f64 / n as f64;
            let b: f64 = (-t * t).exp();
            assert!(p <= b + 3.0 * (b * (1.0 - b) / n as f64).sqrt(), "t={t}");
        }
    }

    #[test]
    fn lambda_ratio_behaviour() {
        assert_eq!(lambda_bound(0.0), 0.0);
        let r = lambda_ratio(1e-4);
        assert!(r.is_finite());
        assert_abs_diff_eq!(r, -2.0 * std::f64::consts::PI, epsilon = 1e-3);
        let a = constant_a();
        assert!(a.a >= lambda_ratio(1.0));
        assert!(!a.attained);
        assert!((a.a - a.grid_max).abs() < 1e-6);
        let fine = constant_a_with(1e12, 2000);
        assert!((fine.grid_max - a.grid_max).abs() < 1e-6);
        for t in [0.5, 3.0, 40.0, 1e4] {
            assert!(lambda_ratio(t) < 1.0);
        }
    }

    #[test]
    fn max_sum_formula() {
        let means = vec![vec![1.0, 2.0]];
        let vars = vec![vec![0.5, 1.5]];
        let a = 1.0;
        let b = max_sum_bound(&means, &vars, a).unwrap();
        let expect = 3.0 + 2f64.sqrt() * (SQRT_PI * 2f64.sqrt() + SQRT_PI);
        assert_abs_diff_eq!(b, expect, epsilon = 1e-12);
        let means = vec![vec![0.0; 3]; 4];
        let vars = vec![vec![1.0; 3]; 4];
        let doubled = vec![vec![2.0; 3]; 4];
        let g1 = max_sum_bound(&means, &vars, a).unwrap();
        let g2 = max_sum_bound(&means, &doubled, a).unwrap();
        assert_abs_diff_eq!(g2 / g1, 2f64.sqrt(), epsilon = 1e-14);
        assert!(max_sum_bound(&[], &[], a).is_err());
        assert!(max_sum_bound(&[vec![0.0]], &[vec![0.0]], a).is_err());
    }

    #[test]
    fn truncated_normal_tail_is_subgaussian() {
        let mut rng = stream(5);
        let n = 100_000;
        let s = 0.7;
        let xs: Vec<f64> = (0..n).map(|_| truncated_normal(&mut rng, s) / (2f64.sqrt() * s)).collect();
        assert!(xs.iter().all(|x| x.abs() <= 2f64.sqrt() + 1e-12));
        for t in [0.0, 0.5, 1.0, 1.4] {
            let p = xs.iter().filter(|&&x| x >= t).count() as f64 / n as f64;
            assert!(p <= (-t * t).exp());
        }
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(exp_max_mean(1).unwrap(), 1.0);
        assert_abs_diff_eq!(exp_max_mean(3).unwrap(), 11.0 / 6.0, epsilon = 1e-15);
        let n = 1_000_000u64;
        let asym = (n as f64).ln() + 0.577_215_664_901_532_9 + 0.5 / n as f64 - 1.0 / (12.0 * (n as f64).powi(2));
        assert!((exp_max_mean(n).unwrap() - asym).abs() < 1e-9);
        assert!(exp_max_mean(0).is_err());
        assert_abs_diff_eq!(exp_max_constant(10_000), 1.0);
        let m = |t: u64| exp_max_mean(t + 1).unwrap();
        let diffs: Vec<f64> = (1..200u64).map(|t| m(2 * t) - m(t)).collect();
        assert!(diffs.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        assert!(diffs.iter().all(|&d| d < std::f64::consts::LN_2));
    }

    #[test]
    fn degenerate_services_give_zero_fluctuation() {
        let c = ConstantServices(0.7);
        let samples: Vec<f64> = (0..20)
            .map(|_| lpp::passage_time(&Homogeneous(1.0), &c, (0, 0), (20, 20)).unwrap())
            .collect();
        let rep = tail_report(&samples, 1.0, 60, &default_t_grid());
        assert!(rep.all_pass());
        assert_eq!(rep.rows[1].empirical, 0.0);
    }

    #[test]
    fn fluctuation_part_is_non_negative() {
        let env = Environment::ones(0, 6);
        let geom = BlockGeometry {
            origin: 0,
            k_n: 3,
            l_n: 2,
            sigma: 1,
        };
        let rep = fluctuation_split(&env, &geom, 3, 64, 9).unwrap();
        assert!(rep.f_n >= 0.0);
        assert!(rep.decomposition_error <= 1e-9);
        assert_eq!(rep.skeletons, 20);
    }
}
