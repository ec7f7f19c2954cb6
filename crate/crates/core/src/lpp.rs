//! Wedge last-passage percolation with columnar disorder.
//!
//! Paths take steps `(1,0)` and `(−1,1)`; cell `(i,j)` carries weight
//! `Y_{i,j}/α(i)`. Passage times include both endpoints. All dynamic
//! programs sweep rows bottom-up and each row left to right, keeping two
//! rolling rows and compensated cell sums.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_environment, DisorderSpec, Environment};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, hash2, unit_closed};
use crate::stats::mean_stderr;

pub type Point = (i64, i64);

/// Service values `Y_{i,j}`.
pub trait Services: Sync {
    fn y(&self, i: i64, j: i64) -> f64;
}

/// Column rates `α(i)`.
pub trait RateField: Sync {
    fn rate(&self, i: i64) -> f64;
}

impl RateField for Environment {
    fn rate(&self, i: i64) -> f64 {
        Environment::rate(self, i)
    }
}

impl RateField for DisorderSpec {
    fn rate(&self, i: i64) -> f64 {
        self.rate_at(i)
    }
}

/// Constant rate everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homogeneous(pub f64);

impl RateField for Homogeneous {
    fn rate(&self, _: i64) -> f64 {
        self.0
    }
}

/// Exp(1) services, `Y = −ln u` with `u ∈ (0,1]` drawn from `(seed,i,j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceField {
    pub seed: u64,
}

impl ServiceField {
    #[must_use]
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Services for ServiceField {
    #[inline]
    fn y(&self, i: i64, j: i64) -> f64 {
        -unit_closed(hash2(self.seed, i, j)).ln()
    }
}

/// Exp(1) conditioned on `Y ≤ m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedServices {
    pub seed: u64,
    pub m: f64,
}

impl Services for TruncatedServices {
    #[inline]
    fn y(&self, i: i64, j: i64) -> f64 {
        let v = 1.0 - unit_closed(hash2(self.seed, i, j));
        -(-v * (-(-self.m).exp_m1())).ln_1p()
    }
}

/// Explicit table of services on a rectangle, for tests and perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct TableServices {
    pub x_min: i64,
    pub y_min: i64,
    pub width: usize,
    pub values: Vec<f64>,
}

impl TableServices {
    /// Copies `source` on `[x_min, x_max] × [y_min, y_max]`.
    pub fn capture<S: Services + ?Sized>(source: &S, x_min: i64, x_max: i64, y_min: i64, y_max: i64) -> Self {
        let width = (x_max - x_min + 1) as usize;
        let mut values = Vec::with_capacity(width * (y_max - y_min + 1) as usize);
        for j in y_min..=y_max {
            for i in x_min..=x_max {
                values.push(source.y(i, j));
            }
        }
        Self {
            x_min,
            y_min,
            width,
            values,
        }
    }

    fn index(&self, i: i64, j: i64) -> usize {
        (j - self.y_min) as usize * self.width + (i - self.x_min) as usize
    }

    pub fn set(&mut self, i: i64, j: i64, v: f64) {
        let k = self.index(i, j);
        self.values[k] = v;
    }
}

impl Services for TableServices {
    fn y(&self, i: i64, j: i64) -> f64 {
        self.values[self.index(i, j)]
    }
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Acc {
    hi: f64,
    lo: f64,
}

impl Acc {
    const NONE: Acc = Acc {
        hi: f64::NEG_INFINITY,
        lo: 0.0,
    };
    const ZERO: Acc = Acc { hi: 0.0, lo: 0.0 };

    #[inline]
    fn reachable(self) -> bool {
        self.hi != f64::NEG_INFINITY
    }

    #[inline]
    fn value(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    fn add(self, w: f64) -> Acc {
        let s = self.hi + w;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (w - bp);
        Acc { hi: s, lo: self.lo + err }
    }

    /// Larger of two predecessors; ties go to `horizontal`.
    #[inline]
    fn pick(horizontal: Acc, diagonal: Acc) -> Acc {
        if !diagonal.reachable() || (horizontal.reachable() && horizontal.value() >= diagonal.value()) {
            horizontal
        } else {
            diagonal
        }
    }
}

/// `true` iff `to − from` lies in the wedge.
#[must_use]
pub fn in_wedge(from: Point, to: Point) -> bool {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    dy >= 0 && dx + dy >= 0
}

fn row_bounds(from: Point, to: Point, clamp: (i64, i64), j: i64) -> (i64, i64) {
    (
        (from.0 - (j - from.1)).max(clamp.0),
        (to.0 + (to.1 - j)).min(clamp.1),
    )
}

/// Number of cells visited by the DP between two points.
#[must_use]
pub fn cell_count(from: Point, to: Point, clamp: Option<(i64, i64)>) -> u128 {
    if !in_wedge(from, to) {
        return 0;
    }
    let clamp = clamp.unwrap_or((i64::MIN / 4, i64::MAX / 4));
    (from.1..=to.1)
        .map(|j| {
            let (lo, hi) = row_bounds(from, to, clamp, j);
            if hi >= lo {
                (hi - lo + 1) as u128
            } else {
                0
            }
        })
        .sum()
}

/// Per-row column intervals read by the DP between two points.
#[must_use]
pub fn dp_domain(from: Point, to: Point, clamp: Option<(i64, i64)>) -> Vec<(i64, i64, i64)> {
    let clamp = clamp.unwrap_or((i64::MIN / 4, i64::MAX / 4));
    (from.1..=to.1)
        .filter_map(|j| {
            let (lo, hi) = row_bounds(from, to, clamp, j);
            (hi >= lo).then_some((j, lo, hi))
        })
        .collect()
}

fn inverse_rates<R: RateField + ?Sized>(rates: &R, lo: i64, hi: i64) -> Result<Vec<f64>> {
    (lo..=hi)
        .map(|i| {
            let a = rates.rate(i);
            if a > 0.0 && a.is_finite() {
                Ok(1.0 / a)
            } else {
                Err(Error::invalid("rates", format!("α({i}) = {a} is not positive")))
            }
        })
        .collect()
}

fn dp<R, S, F>(rates: &R, services: &S, from: Point, to: Point, clamp: Option<(i64, i64)>, mut on_row: F) -> Result<Acc>
where
    R: RateField + ?Sized,
    S: Services + ?Sized,
    F: FnMut(i64, i64, &[Acc]),
{
    let empty = || Error::EmptyPathSet { from, to };
    if !in_wedge(from, to) {
        return Err(empty());
    }
    let bounds = clamp.unwrap_or((i64::MIN / 4, i64::MAX / 4));
    let col_lo = (from.0 - (to.1 - from.1)).max(bounds.0);
    let col_hi = (to.0 + (to.1 - from.1)).min(bounds.1);
    if col_lo > col_hi {
        return Err(empty());
    }
    let inv = inverse_rates(rates, col_lo, col_hi)?;
    let mut prev: Vec<Acc> = Vec::new();
    let mut prev_lo = 0i64;
    let mut cur: Vec<Acc> = Vec::new();
    for j in from.1..=to.1 {
        let (lo, hi) = row_bounds(from, to, bounds, j);
        if lo > hi {
            return Err(empty());
        }
        cur.clear();
        cur.reserve((hi - lo + 1) as usize);
        let prev_hi = prev_lo + prev.len() as i64 - 1;
        for i in lo..=hi {
            let best = if j == from.1 && i == from.0 {
                Acc::ZERO
            } else {
                let left = if i > lo { cur[(i - 1 - lo) as usize] } else { Acc::NONE };
                let diag = if j > from.1 && (prev_lo..=prev_hi).contains(&(i + 1)) {
                    prev[(i + 1 - prev_lo) as usize]
                } else {
                    Acc::NONE
                };
                Acc::pick(left, diag)
            };
            cur.push(if best.reachable() {
                best.add(services.y(i, j) * inv[(i - col_lo) as usize])
            } else {
                Acc::NONE
            });
        }
        on_row(j, lo, &cur);
        std::mem::swap(&mut prev, &mut cur);
        prev_lo = lo;
    }
    let last = prev[(to.0 - prev_lo) as usize];
    if last.reachable() {
        Ok(last)
    } else {
        Err(empty())
    }
}

/// Unrestricted last-passage time from `from` to `to`.
pub fn passage_time<R, S>(rates: &R, services: &S, from: Point, to: Point) -> Result<f64>
where
    R: RateField + ?Sized,
    S: Services + ?Sized,
{
    dp(rates, services, from, to, None, |_, _, _| {}).map(Acc::value)
}

/// Passage time over paths whose columns stay in `b = [b.0, b.1]`.
pub fn restricted_passage_time<R, S>(rates: &R, services: &S, b: (i64, i64), from: Point, to: Point) -> Result<f64>
where
    R: RateField + ?Sized,
    S: Services + ?Sized,
{
    if b.0 > b.1 {
        return Err(Error::invalid("box", "empty interval"));
    }
    for (name, p) in [("from", from), ("to", to)] {
        if p.0 < b.0 || p.0 > b.1 {
            return Err(Error::invalid(name, format!("column {} outside [{}, {}]", p.0, b.0, b.1)));
        }
    }
    dp(rates, services, from, to, Some(b), |_, _, _| {}).map(Acc::value)
}

/// Full DP table, kept for small instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageGrid {
    pub from: Point,
    pub to: Point,
    pub clamp: Option<(i64, i64)>,
    /// `(j, first column, values)`; unreachable cells are `−∞`.
    pub rows: Vec<(i64, i64, Vec<f64>)>,
}

impl PassageGrid {
    pub fn build<R, S>(rates: &R, services: &S, from: Point, to: Point, clamp: Option<(i64, i64)>) -> Result<Self>
    where
        R: RateField + ?Sized,
        S: Services + ?Sized,
    {
        let mut rows = Vec::new();
        dp(rates, services, from, to, clamp, |j, lo, row| {
            rows.push((j, lo, row.iter().map(|a| a.value()).collect()));
        })?;
        Ok(Self { from, to, clamp, rows })
    }

    /// Value at `(i,j)`; `None` outside the table.
    #[must_use]
    pub fn value(&self, i: i64, j: i64) -> Option<f64> {
        let (_, lo, row) = self.rows.get(usize::try_from(j - self.from.1).ok()?)?;
        row.get(usize::try_from(i - lo).ok()?).copied()
    }

    #[must_use]
    pub fn target(&self) -> f64 {
        self.value(self.to.0, self.to.1).unwrap_or(f64::NEG_INFINITY)
    }

    /// Largest relative violation of the cell identity over `cells`.
    pub fn identity_defect<R, S>(&self, rates: &R, services: &S, cells: &[Point]) -> f64
    where
        R: RateField + ?Sized,
        S: Services + ?Sized,
    {
        let mut worst = 0.0f64;
        for &(i, j) in cells {
            let Some(t) = self.value(i, j) else { continue };
            if t == f64::NEG_INFINITY {
                continue;
            }
            let w = services.y(i, j) / rates.rate(i);
            let expected = if (i, j) == self.from {
                w
            } else {
                let left = self.value(i - 1, j).unwrap_or(f64::NEG_INFINITY);
                let diag = if j > self.from.1 {
                    self.value(i + 1, j - 1).unwrap_or(f64::NEG_INFINITY)
                } else {
                    f64::NEG_INFINITY
                };
                w + left.max(diag)
            };
            worst = worst.max((t - expected).abs() / expected.abs().max(1.0));
        }
        worst
    }
}

/// `T_B((x0,0),(x0,m))/m` on the box spanned by `env`.
pub fn t_infinity_estimate<S: Services + ?Sized>(env: &Environment, services: &S, x0: i64, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    let t = restricted_passage_time(env, services, (env.x_min(), env.x_max()), (x0, 0), (x0, m as i64))?;
    Ok(t / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub x: f64,
    pub y: f64,
    pub n: u64,
    pub replicas: usize,
    pub tau_hat: f64,
    pub stderr: f64,
}

/// Default cell budget for one shape replica.
pub const DEFAULT_CELL_BUDGET: u128 = 200_000_000;

/// Closed-form homogeneous shape `(√(x+y)+√y)²`.
#[must_use]
pub fn homogeneous_shape(x: f64, y: f64) -> f64 {
    let s = (x + y).sqrt() + y.sqrt();
    s * s
}

/// Mean of `T((0,0),(⌊Nx⌋,⌊Ny⌋))/N` over disorder and service replicas.
pub fn shape_estimate(spec: &DisorderSpec, x: f64, y: f64, n: u64, replicas: usize, seed: u64, cell_budget: u128) -> Result<ShapeEstimate> {
    spec.validate()?;
    if !(y >= 0.0 && x + y >= 0.0) {
        return Err(Error::invalid("(x,y)", "outside the wedge"));
    }
    if replicas == 0 || n == 0 {
        return Err(Error::invalid("replicas", "replicas and N must be positive"));
    }
    let to = (((n as f64) * x).floor() as i64, ((n as f64) * y).floor() as i64);
    let cells = cell_count((0, 0), to, None);
    if cells > cell_budget {
        return Err(Error::Budget(format!("{cells} cells exceed the budget of {cell_budget}")));
    }
    let values = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let env_spec = spec.with_seed(derive_seed(spec.seed, "shape-env", k as u64));
            let services = ServiceField::new(derive_seed(seed, "shape-services", k as u64));
            passage_time(&env_spec, &services, (0, 0), to).map(|t| t / n as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let (tau_hat, stderr) = mean_stderr(&values);
    Ok(ShapeEstimate {
        x,
        y,
        n,
        replicas,
        tau_hat,
        stderr,
    })
}

/// Labeled initial configuration: `σ0(j) = positions[j − first]` inside the
/// range, `x2+1` below it and `x1` above it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialLabels {
    pub first: i64,
    pub positions: Vec<i64>,
}

impl InitialLabels {
    /// Every particle with label `j ≥ 0` in the reservoir.
    #[must_use]
    pub fn reservoir() -> Self {
        Self {
            first: 0,
            positions: Vec::new(),
        }
    }

    fn at(&self, j: i64, x1: i64, x2: i64) -> i64 {
        if j < self.first {
            x2 + 1
        } else {
            self.positions.get((j - self.first) as usize).copied().unwrap_or(x1)
        }
    }

    fn validate(&self, x1: i64, x2: i64) -> Result<()> {
        let mut last = x2 + 1;
        for &p in &self.positions {
            if p < x1 || p > x2 + 1 {
                return Err(Error::invalid("initial labels", format!("position {p} outside [{x1}, {}]", x2 + 1)));
            }
            if p > last {
                return Err(Error::invalid("initial labels", "positions must be non-increasing in the label"));
            }
            if p == last && p > x1 && p <= x2 {
                return Err(Error::invalid("initial labels", format!("two particles on site {p}")));
            }
            last = p;
        }
        Ok(())
    }
}

/// Passage table of the open system on `B = [x1, x2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenPassage {
    pub x1: i64,
    pub x2: i64,
    pub first_row: i64,
    /// `rows[k][i − x1] = T(i, first_row + k)`.
    pub rows: Vec<Vec<f64>>,
}

impl OpenPassage {
    #[must_use]
    pub fn time(&self, i: i64, j: i64) -> Option<f64> {
        let row = self.rows.get(usize::try_from(j - self.first_row).ok()?)?;
        row.get(usize::try_from(i - self.x1).ok()?).copied()
    }

    /// Position of particle `j` at time `t`.
    #[must_use]
    pub fn position(&self, j: i64, t: f64) -> Option<i64> {
        let row = self.rows.get(usize::try_from(j - self.first_row).ok()?)?;
        if row[0] > t {
            return Some(self.x1);
        }
        if *row.last()? <= t {
            return Some(self.x2 + 1);
        }
        (1..row.len()).find(|&k| row[k - 1] <= t && t < row[k]).map(|k| self.x1 + k as i64)
    }
}

/// Three-case recursion on `B = env window` for labels `first..first+rows`.
pub fn open_lpp_passage<S: Services + ?Sized>(env: &Environment, labels: &InitialLabels, services: &S, rows: usize) -> Result<OpenPassage> {
    let (x1, x2) = (env.x_min(), env.x_max());
    if x2 <= x1 {
        return Err(Error::invalid("box", "needs at least one particle site"));
    }
    labels.validate(x1, x2)?;
    let width = (x2 - x1 + 1) as usize;
    let inv = inverse_rates(env, x1, x2)?;
    let mut out = Vec::with_capacity(rows);
    let mut prev = vec![Acc::ZERO; width];
    for k in 0..rows {
        let j = labels.first + k as i64;
        let s0 = labels.at(j, x1, x2);
        let mut cur = vec![Acc::ZERO; width];
        for idx in 0..width {
            let i = x1 + idx as i64;
            if i < s0 {
                continue;
            }
            let base = if i == x1 {
                prev[1]
            } else if i == x2 {
                cur[idx - 1]
            } else {
                Acc::pick(cur[idx - 1], prev[idx + 1])
            };
            cur[idx] = base.add(services.y(i, j) * inv[idx]);
        }
        out.push(cur.iter().map(|a| a.value()).collect());
        prev = cur;
    }
    Ok(OpenPassage {
        x1,
        x2,
        first_row: labels.first,
        rows: out,
    })
}

/// Skeleton of a level-`(n+1)` path: `(ỹ_l, z̃_l)` for each level-`n` subblock.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Skeleton {
    pub sigma: i8,
    pub pairs: Vec<(u64, u64)>,
}

impl Skeleton {
    #[must_use]
    pub fn total(&self) -> u64 {
        self.pairs.iter().map(|(a, b)| a + b).sum()
    }
}

/// Default enumeration cap.
pub const SKELETON_CAP: u128 = 1_000_000;

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Skeleton height total: `y'` for `σ=1` and `y'+1` for `σ=−1`.
#[must_use]
pub fn skeleton_total(y_prime: u64, sigma: i8) -> u64 {
    if sigma > 0 {
        y_prime
    } else {
        y_prime + 1
    }
}

/// Number of skeletons with `l_n` subblocks.
#[must_use]
pub fn skeleton_count(l_n: u64, k_n: u64, y_prime: u64, sigma: i8) -> u128 {
    let total = skeleton_total(y_prime, sigma);
    let floor = if sigma > 0 { 0 } else { l_n * k_n };
    if total < floor {
        return 0;
    }
    binomial(total - floor + 2 * l_n - 1, 2 * l_n - 1)
}

fn check_sigma(sigma: i8) -> Result<()> {
    if sigma == 1 || sigma == -1 {
        Ok(())
    } else {
        Err(Error::invalid("sigma", "must be +1 or -1"))
    }
}

/// All skeletons, in lexicographic order.
pub fn enumerate_skeletons(l_n: u64, k_n: u64, y_prime: u64, sigma: i8, cap: u128) -> Result<Vec<Skeleton>> {
    check_sigma(sigma)?;
    if l_n == 0 {
        return Err(Error::invalid("l_n", "must be positive"));
    }
    let count = skeleton_count(l_n, k_n, y_prime, sigma);
    if count > cap {
        return Err(Error::Budget(format!("{count} skeletons exceed the cap {cap}")));
    }
    let parts = (2 * l_n) as usize;
    let floor = if sigma > 0 { 0 } else { k_n };
    let total = skeleton_total(y_prime, sigma);
    let free = match total.checked_sub(l_n * floor) {
        Some(f) => f,
        None => return Ok(Vec::new()),
    };
    let mut out = Vec::with_capacity(count as usize);
    let mut comp = vec![0u64; parts];
    fn rec(k: usize, left: u64, comp: &mut Vec<u64>, floor: u64, sigma: i8, out: &mut Vec<Skeleton>) {
        if k + 1 == comp.len() {
            comp[k] = left;
            out.push(Skeleton {
                sigma,
                pairs: comp.chunks(2).map(|c| (c[0] + floor, c[1])).collect(),
            });
            return;
        }
        for v in 0..=left {
            comp[k] = v;
            rec(k + 1, left - v, comp, floor, sigma, out);
        }
    }
    rec(0, free, &mut comp, floor, sigma, &mut out);
    Ok(out)
}

/// Level-`(n+1)` block `[o, o+σ(K_{n+1}−1)]` split into `l_n` subblocks of length `K_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGeometry {
    pub origin: i64,
    pub k_n: u64,
    pub l_n: u64,
    pub sigma: i8,
}

/// One passage-time term of a skeleton: endpoints and clamp box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub from: Point,
    pub to: Point,
    pub clamp: (i64, i64),
}

impl BlockGeometry {
    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        if self.k_n < 2 || self.l_n < 1 {
            return Err(Error::invalid("block", "need K_n ≥ 2 and l_n ≥ 1"));
        }
        Ok(())
    }

    #[must_use]
    pub fn k_next(&self) -> u64 {
        self.k_n * self.l_n
    }

    fn col(&self, c: i64) -> i64 {
        self.origin + i64::from(self.sigma) * c
    }

    fn interval(&self, a: i64, b: i64) -> (i64, i64) {
        let (u, v) = (self.col(a), self.col(b));
        (u.min(v), u.max(v))
    }

    /// The whole block as a column interval.
    #[must_use]
    pub fn block(&self) -> (i64, i64) {
        self.interval(0, self.k_next() as i64 - 1)
    }

    /// End point of the direct crossing at height `y'`.
    #[must_use]
    pub fn target(&self, y_prime: u64) -> Point {
        (self.col(self.k_next() as i64 - 1), y_prime as i64)
    }

    /// The `U_l` and `V_l` terms of a skeleton, interleaved `U_1, V_1, U_2, …`.
    #[must_use]
    pub fn terms(&self, skel: &Skeleton) -> Vec<Term> {
        let k = self.k_n as i64;
        let whole = self.block();
        let mut h = 0i64;
        let mut out = Vec::with_capacity(skel.pairs.len() * 2);
        for (idx, &(yt, zt)) in skel.pairs.iter().enumerate() {
            let l = idx as i64 + 1;
            let (yt, zt) = (yt as i64, zt as i64);
            let sub = self.interval((l - 1) * k, l * k - 1);
            let edge = self.col(l * k - 1);
            let (u_top, v_start) = if self.sigma > 0 { (h + yt, h + yt) } else { (h + yt - 2, h + yt - 1) };
            out.push(Term {
                from: (self.col((l - 1) * k), h),
                to: (self.col(l * k - 2), u_top),
                clamp: sub,
            });
            out.push(Term {
                from: (edge, v_start),
                to: (edge, v_start + zt),
                clamp: whole,
            });
            h += yt + zt;
        }
        out
    }
}

/// `(U, V)` sums of a skeleton.
pub fn skeleton_uv<R, S>(rates: &R, services: &S, geom: &BlockGeometry, skel: &Skeleton) -> Result<(f64, f64)>
where
    R: RateField + ?Sized,
    S: Services + ?Sized,
{
    let mut u = 0.0;
    let mut v = 0.0;
    for (k, t) in geom.terms(skel).iter().enumerate() {
        let val = dp(rates, services, t.from, t.to, Some(t.clamp), |_, _, _| {})?.value();
        if k % 2 == 0 {
            u += val;
        } else {
            v += val;
        }
    }
    Ok((u, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonCheck {
    pub max_over_skeletons: f64,
    pub direct: f64,
    pub skeletons: usize,
    pub equal: bool,
}

/// Max over skeletons of `U+V` against the direct restricted DP.
pub fn skeleton_decomposition_check<R, S>(rates: &R, services: &S, geom: &BlockGeometry, y_prime: u64, cap: u128) -> Result<SkeletonCheck>
where
    R: RateField + ?Sized,
    S: Services + ?Sized,
{
    geom.validate()?;
    let skeletons = enumerate_skeletons(geom.l_n, geom.k_n, y_prime, geom.sigma, cap)?;
    let direct = restricted_passage_time(rates, services, geom.block(), (geom.origin, 0), geom.target(y_prime))?;
    let mut best = f64::NEG_INFINITY;
    for s in &skeletons {
        let (u, v) = skeleton_uv(rates, services, geom, s)?;
        best = best.max(u + v);
    }
    Ok(SkeletonCheck {
        max_over_skeletons: best,
        direct,
        skeletons: skeletons.len(),
        equal: (best - direct).abs() <= 1e-9 * direct.abs().max(1.0),
    })
}

/// Service cells read by more than one term of a skeleton.
#[must_use]
pub fn overlapping_cells(geom: &BlockGeometry, skel: &Skeleton) -> Vec<Point> {
    let mut owner: std::collections::HashMap<Point, usize> = std::collections::HashMap::new();
    let mut clash = Vec::new();
    for (k, t) in geom.terms(skel).iter().enumerate() {
        for (j, lo, hi) in dp_domain(t.from, t.to, Some(t.clamp)) {
            for i in lo..=hi {
                if let Some(&o) = owner.get(&(i, j)) {
                    if o != k {
                        clash.push((i, j));
                    }
                } else {
                    owner.insert((i, j), k);
                }
            }
        }
    }
    clash
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauBlockEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub replicas: usize,
}

/// Mean of `T_B/K` across the block spanned by `env`, at height `⌊K y⌋`.
pub fn tau_block(env: &Environment, sigma: i8, y: f64, replicas: usize, seed: u64) -> Result<TauBlockEstimate> {
    check_sigma(sigma)?;
    let floor = if sigma > 0 { 0.0 } else { 1.0 };
    if !(y >= floor) {
        return Err(Error::invalid("y", format!("must be at least {floor}")));
    }
    if replicas == 0 {
        return Err(Error::invalid("replicas", "must be positive"));
    }
    let k = env.len() as i64;
    let yp = (k as f64 * y).floor() as i64;
    let (from, to) = if sigma > 0 {
        ((env.x_min(), 0), (env.x_max(), yp))
    } else {
        ((env.x_max(), 0), (env.x_min(), yp))
    };
    let vals = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = ServiceField::new(derive_seed(seed, "tau-block", r as u64));
            restricted_passage_time(env, &s, (env.x_min(), env.x_max()), from, to).map(|t| t / k as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, stderr) = mean_stderr(&vals);
    Ok(TauBlockEstimate { mean, stderr, replicas })
}

/// Rigorous lattice bound for `τ_{n,B}(−1, 1)` on an all-ones block of length `K`.
#[must_use]
pub fn tau_block_minus_bound(k: u64) -> f64 {
    let kf = k as f64;
    (1.0 + kf.sqrt()).powi(2) / kf
}

/// Environment for a block of length `k` drawn from `spec`.
pub fn sample_block(spec: &DisorderSpec, start: i64, k: u64) -> Result<Environment> {
    sample_environment(spec, start, start + k as i64 - 1)
}
