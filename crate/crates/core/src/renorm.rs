//! Multiscale renormalization numerics.
//!
//! Block scales `K_{n+1} = l_n K_n`, the concave envelopes `g_n(σ,·)` and
//! their recursion, and the derived sequences `y_n`, `ρ_n`, `J_n`, `Δ_n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{critical_density_dilute, smaller_root};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenormParams {
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Constant in front of `δ_n`.
    pub c_fluct: f64,
    pub epsilon: f64,
    pub k1: u64,
}

impl Default for RenormParams {
    fn default() -> Self {
        Self {
            r: 0.5,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            beta: 1.0,
            gamma: 0.1,
            c_fluct: 1.0,
            epsilon: 0.0,
            k1: 10_000,
        }
    }
}

/// Constants of the bad-block lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    /// `K*(ε) = (2c/ε)^{1/(β+1)}`, infinite at `ε = 0`.
    pub k_star_eps: f64,
    /// `K' = (4c)^{1/(β−γ(β+2))}`.
    pub k_prime: f64,
    /// `K_* = 2 + K'`.
    pub k_lower: f64,
    pub gamma0: f64,
    /// `min{1, 2^{−β}c, 2c(3+K')^{−(β+1)}}`.
    pub epsilon0: f64,
}

impl RenormParams {
    /// Upper end of the admissible `γ` range.
    #[must_use]
    pub fn gamma_max(&self) -> f64 {
        (self.beta / (self.beta + 2.0)).min(2.0 / self.b - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [("a", self.a), ("c", self.c), ("beta", self.beta), ("c_fluct", self.c_fluct)];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::invalid("r", format!("{} outside (0,1]", self.r)));
        }
        if !(1.0..2.0).contains(&self.b) {
            return Err(Error::invalid("b", format!("{} outside [1,2)", self.b)));
        }
        if !(self.gamma > 0.0 && self.gamma < self.gamma_max()) {
            return Err(Error::invalid("gamma", format!("{} outside (0, {})", self.gamma, self.gamma_max())));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon", format!("{} outside [0,1]", self.epsilon)));
        }
        if self.k1 < 2 {
            return Err(Error::invalid("k1", "must be at least 2"));
        }
        Ok(())
    }

    #[must_use]
    pub fn constants(&self) -> LemmaConstants {
        let k_star_eps = if self.epsilon > 0.0 {
            (2.0 * self.c / self.epsilon).powf(1.0 / (self.beta + 1.0))
        } else {
            f64::INFINITY
        };
        let k_prime = (4.0 * self.c).powf(1.0 / (self.beta - self.gamma * (self.beta + 2.0)));
        let epsilon0 = 1f64
            .min(2f64.powf(-self.beta) * self.c)
            .min(2.0 * self.c * (3.0 + k_prime).powf(-(self.beta + 1.0)));
        LemmaConstants {
            k_star_eps,
            k_prime,
            k_lower: 2.0 + k_prime,
            gamma0: self.beta / (self.beta + 2.0),
            epsilon0,
        }
    }

    /// `ε ≤ ε_0` and `K_* ≤ K_1 ≤ K*(ε)`.
    #[must_use]
    pub fn lemma_regime_holds(&self) -> bool {
        let k = self.constants();
        let k1 = self.k1 as f64;
        self.epsilon > 0.0 && self.epsilon <= k.epsilon0 && k1 >= k.k_lower && k1 <= k.k_star_eps
    }
}

/// Block length, exact while below `2^53`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub ln: f64,
    pub exact: Option<u64>,
}

impl Scale {
    #[must_use]
    pub fn value(&self) -> f64 {
        self.exact.map_or_else(|| self.ln.exp(), |k| k as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub n: usize,
    pub k: Scale,
    pub l: u64,
    /// `r/4 + a K_n^{−b/2}`.
    pub j: f64,
    /// `C (log K_{n+1})^{3/2}/√K_n`.
    pub delta: f64,
    /// `c K_n^{−β}`.
    pub zeta: f64,
    /// `(1/j_{n+1} − 1/j_n)/δ_{n−1}` for `n ≥ 2`.
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    pub params: RenormParams,
    pub constants: LemmaConstants,
    pub levels: Vec<Level>,
    /// Some `K_n` exceeded `2^53` and is carried in log form.
    pub approximate: bool,
}

impl ScaleTable {
    /// Level `n` (1-indexed).
    #[must_use]
    pub fn level(&self, n: usize) -> &Level {
        &self.levels[n - 1]
    }

    #[must_use]
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

const EXACT_LIMIT: u64 = 1 << 53;

fn floor_pow(ln_k: f64, gamma: f64) -> Result<u64> {
    let target = gamma * ln_k;
    if target > 43.0 {
        return Err(Error::Budget(format!("l_n = K_n^γ ≈ e^{target:.1} does not fit in 64 bits")));
    }
    let mut l = target.exp().floor().max(1.0) as u64;
    while ((l + 1) as f64).ln() <= target + 1e-14 * target.abs().max(1.0) {
        l += 1;
    }
    while l > 1 && (l as f64).ln() > target + 1e-14 * target.abs().max(1.0) {
        l -= 1;
    }
    Ok(l)
}

/// Scales for levels `1..=n_max+2`.
pub fn build_scales(params: &RenormParams, n_max: usize) -> Result<ScaleTable> {
    params.validate()?;
    if n_max == 0 {
        return Err(Error::invalid("n_max", "must be at least 1"));
    }
    let depth = n_max + 2;
    let mut ks: Vec<Scale> = Vec::with_capacity(depth + 1);
    let mut ls = Vec::with_capacity(depth);
    ks.push(Scale {
        ln: (params.k1 as f64).ln(),
        exact: Some(params.k1),
    });
    for n in 0..depth {
        let k = ks[n];
        let l = match k.exact {
            Some(kx) => {
                let mut l = floor_pow(k.ln, params.gamma)?;
                while l > 1 && (l as f64) > (kx as f64).powf(params.gamma) * (1.0 + 1e-15) {
                    l -= 1;
                }
                l
            }
            None => floor_pow(k.ln, params.gamma)?,
        };
        if l < 2 {
            return Err(Error::invalid(
                "k1",
                format!("l_{} = ⌊K^γ⌋ = {l} < 2; the hierarchy does not grow", n + 1),
            ));
        }
        ls.push(l);
        let exact = k.exact.and_then(|kx| kx.checked_mul(l)).filter(|&p| p < EXACT_LIMIT);
        ks.push(Scale {
            ln: k.ln + (l as f64).ln(),
            exact,
        });
    }
    let p = params;
    let j_of = |s: &Scale| p.r / 4.0 + p.a * (-(p.b / 2.0) * s.ln).exp();
    let mut levels: Vec<Level> = (0..depth)
        .map(|i| Level {
            n: i + 1,
            k: ks[i],
            l: ls[i],
            j: j_of(&ks[i]),
            delta: p.c_fluct * ks[i + 1].ln.powf(1.5) * (-0.5 * ks[i].ln).exp(),
            zeta: p.c * (-p.beta * ks[i].ln).exp(),
            t: None,
        })
        .collect();
    for i in 1..depth {
        let j_next = j_of(&ks[i + 1]);
        levels[i].t = Some((1.0 / j_next - 1.0 / levels[i].j) / levels[i - 1].delta);
    }
    Ok(ScaleTable {
        params: *params,
        constants: params.constants(),
        approximate: ks.iter().any(|k| k.exact.is_none()),
        levels,
    })
}

fn sigma_minus(sigma: i8) -> f64 {
    if sigma < 0 {
        1.0
    } else {
        0.0
    }
}

fn check_sigma(sigma: i8) -> Result<()> {
    if sigma == 1 || sigma == -1 {
        Ok(())
    } else {
        Err(Error::invalid("sigma", "must be +1 or -1"))
    }
}

/// Piecewise-linear concave function on `[σ⁻, Y_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcaveCurve {
    pub sigma: i8,
    pub ys: Vec<f64>,
    pub gs: Vec<f64>,
}

impl ConcaveCurve {
    pub fn new(sigma: i8, ys: Vec<f64>, gs: Vec<f64>) -> Result<Self> {
        let c = Self { sigma, ys, gs };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        if self.ys.len() < 2 || self.ys.len() != self.gs.len() {
            return Err(Error::invalid("curve", "need at least two knots with matching values"));
        }
        if self.ys[0] != sigma_minus(self.sigma) {
            return Err(Error::invalid("curve", format!("domain must start at {}", sigma_minus(self.sigma))));
        }
        if self.ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("curve", "knots must be strictly increasing"));
        }
        for k in 0..self.ys.len() - 2 {
            let (y0, y1, y2) = (self.ys[k], self.ys[k + 1], self.ys[k + 2]);
            let w = (y1 - y0) / (y2 - y0);
            let chord = (1.0 - w) * self.gs[k] + w * self.gs[k + 2];
            let tol = 1e-12 * (1.0 + self.gs[k].abs().max(self.gs[k + 2].abs()));
            if self.gs[k + 1] < chord - tol {
                return Err(Error::invalid("curve", format!("not concave at y = {y1}")));
            }
        }
        Ok(())
    }

    #[must_use]
    pub fn y_max(&self) -> f64 {
        *self.ys.last().expect("validated")
    }

    fn segment(&self, y: f64) -> Result<usize> {
        if !(y >= self.ys[0]) || y > self.y_max() {
            return Err(Error::Regime(format!(
                "evaluation at y = {y} outside [{}, {}]",
                self.ys[0],
                self.y_max()
            )));
        }
        Ok(self.ys.partition_point(|&v| v <= y).saturating_sub(1).min(self.ys.len() - 2))
    }

    /// Linear interpolation; no extrapolation.
    pub fn eval(&self, y: f64) -> Result<f64> {
        let k = self.segment(y)?;
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let w = (y - y0) / (y1 - y0);
        Ok((1.0 - w) * self.gs[k] + w * self.gs[k + 1])
    }

    /// Slope of the segment starting at or containing `y`.
    pub fn right_derivative(&self, y: f64) -> Result<f64> {
        let k = self.segment(y)?;
        Ok((self.gs[k + 1] - self.gs[k]) / (self.ys[k + 1] - self.ys[k]))
    }

    /// First knot whose right slope is at most `threshold`.
    #[must_use]
    pub fn threshold_knot(&self, threshold: f64) -> Option<usize> {
        (0..self.ys.len() - 1).find(|&k| (self.gs[k + 1] - self.gs[k]) / (self.ys[k + 1] - self.ys[k]) <= threshold)
    }
}

const GRID_TOL: f64 = 1e-8;

/// Knots in `s = y − σ⁻`, refined near `s = 0` so that square-root
/// behaviour interpolates within `GRID_TOL`.
#[must_use]
pub fn knot_grid(s_max: f64) -> Vec<f64> {
    let mut s = vec![0.0, 4.0 * GRID_TOL * GRID_TOL];
    loop {
        let x = *s.last().expect("non-empty");
        if x >= s_max {
            break;
        }
        let h = (4.0 * GRID_TOL.sqrt() * (x * (1.0 + x)).powf(0.75)).min(1e-3 * x.max(1e-3));
        s.push((x + h).min(s_max));
    }
    s
}

/// `(√(σ+y)+√y)²`.
#[must_use]
pub fn g1_closed(sigma: i8, y: f64) -> f64 {
    let v = (f64::from(sigma) + y).max(0.0).sqrt() + y.sqrt();
    v * v
}

/// Dense samples of `g_1(σ,·)` on `[σ⁻, y_max]`.
pub fn g_initial(sigma: i8, y_max: f64) -> Result<ConcaveCurve> {
    check_sigma(sigma)?;
    let lo = sigma_minus(sigma);
    if !(y_max > lo) {
        return Err(Error::invalid("y_max", format!("must exceed {lo}")));
    }
    let ys: Vec<f64> = knot_grid(y_max - lo).into_iter().map(|s| s + lo).collect();
    let gs = ys
        .iter()
        .map(|&y| {
            let s = y - lo;
            1.0 + 2.0 * s + 2.0 * (s * (1.0 + s)).sqrt()
        })
        .collect();
    ConcaveCurve::new(sigma, ys, gs)
}

/// `√(σ/2+y)(2+log(1+y))^{3/2}`.
#[must_use]
pub fn phi(sigma: i8, y: f64) -> f64 {
    (f64::from(sigma) / 2.0 + y).sqrt() * (2.0 + y.ln_1p()).powf(1.5)
}

#[must_use]
pub fn phi_prime(sigma: i8, y: f64) -> f64 {
    let base = f64::from(sigma) / 2.0 + y;
    let l = 2.0 + y.ln_1p();
    l.powf(1.5) / (2.0 * base.sqrt()) + base.sqrt() * 1.5 * l.sqrt() / (1.0 + y)
}

/// Coefficients of one recursion step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCoefficients {
    /// `1/l_n`; zero gives the `l_n → ∞` limit.
    pub inv_l: f64,
    pub j_next: f64,
    pub delta: f64,
}

impl StepCoefficients {
    #[must_use]
    pub fn from_table(table: &ScaleTable, n: usize) -> Self {
        let lv = table.level(n);
        Self {
            inv_l: 1.0 / lv.l as f64,
            j_next: table.level(n + 1).j,
            delta: lv.delta,
        }
    }
}

struct SupTerm<'a> {
    g: &'a ConcaveCurve,
    c: StepCoefficients,
    prefix: Vec<f64>,
    argmax_interior: bool,
}

impl<'a> SupTerm<'a> {
    fn new(g: &'a ConcaveCurve, c: StepCoefficients) -> Self {
        let mut prefix = Vec::with_capacity(g.ys.len());
        let mut best = f64::NEG_INFINITY;
        for (&y, &v) in g.ys.iter().zip(&g.gs) {
            best = best.max(Self::h_raw(c, y, v));
            prefix.push(best);
        }
        let last = *prefix.last().expect("validated");
        let n = g.ys.len();
        let argmax_interior = Self::h_raw(c, g.ys[n - 1], g.gs[n - 1]) < last || (g.gs[n - 1] - g.gs[n - 2]) / (g.ys[n - 1] - g.ys[n - 2]) <= 1.0 / c.j_next;
        Self {
            g,
            c,
            prefix,
            argmax_interior,
        }
    }

    fn h_raw(c: StepCoefficients, y: f64, g: f64) -> f64 {
        (1.0 - c.inv_l) * (g - y / c.j_next)
    }

    /// `sup_{σ⁻ ≤ ȳ ≤ u} h(ȳ)`.
    fn sup_to(&self, u: f64) -> Result<f64> {
        if u > self.g.y_max() {
            if self.argmax_interior {
                return Ok(*self.prefix.last().expect("validated"));
            }
            return Err(Error::Regime(format!(
                "supremum needs g_n beyond Y_max = {} (at {u})",
                self.g.y_max()
            )));
        }
        let k = self.g.ys.partition_point(|&v| v <= u);
        let at_u = Self::h_raw(self.c, u, self.g.eval(u)?);
        Ok(self.prefix[k - 1].max(at_u))
    }
}

/// One step of the `g_n → g_{n+1}` recursion on the knots of `g`.
pub fn g_step_with(g: &ConcaveCurve, c: StepCoefficients) -> Result<ConcaveCurve> {
    g.validate()?;
    if !(c.inv_l >= 0.0 && c.inv_l < 1.0) || !(c.j_next > 0.0) || !(c.delta >= 0.0) {
        return Err(Error::invalid("coefficients", format!("{c:?}")));
    }
    let sup = SupTerm::new(g, c);
    let stretch = 1.0 / (1.0 - c.inv_l);
    let shift = (1.0 + f64::from(g.sigma)) / 2.0 * c.inv_l / c.j_next;
    let gs = g
        .ys
        .iter()
        .map(|&y| Ok(sup.sup_to(y * stretch)? + y / c.j_next + shift + c.delta * phi(g.sigma, y)))
        .collect::<Result<Vec<f64>>>()?;
    ConcaveCurve::new(g.sigma, g.ys.clone(), gs)
}

/// `g_{n+1}` from `g_n` with the level-`n` coefficients of `table`.
pub fn g_step(g: &ConcaveCurve, n: usize, table: &ScaleTable) -> Result<ConcaveCurve> {
    g_step_with(g, StepCoefficients::from_table(table, n))
}

/// The two closed branches of the recursion around `(1−1/l)y_n`, with
/// `y_n` the first knot where the right slope of `g` drops to `1/j_{n+1}`.
pub fn g_step_branches(g: &ConcaveCurve, c: StepCoefficients, y: f64) -> Result<f64> {
    let kn = g
        .threshold_knot(1.0 / c.j_next)
        .ok_or_else(|| Error::Regime("g_n never reaches slope 1/j_{n+1} on its domain".into()))?;
    let yn = g.ys[kn];
    let shift = (1.0 + f64::from(g.sigma)) / 2.0 * c.inv_l / c.j_next;
    let tail = y / c.j_next + shift + c.delta * phi(g.sigma, y);
    let a = 1.0 - c.inv_l;
    if y >= a * yn {
        Ok(a * (g.gs[kn] - yn / c.j_next) + tail)
    } else {
        let u = y / a;
        Ok(a * (g.eval(u)? - u / c.j_next) + tail)
    }
}

/// Solves `φ'(y_n) = t_n` by bisection.
pub fn solve_y_n_for(t: f64, sigma: i8) -> Result<f64> {
    check_sigma(sigma)?;
    let lo0 = sigma_minus(sigma);
    let top = phi_prime(sigma, lo0);
    if !(t > 0.0) || t >= top {
        return Err(Error::Regime(format!("t_n = {t} outside (0, {top}) = range of φ'")));
    }
    let mut hi = lo0 + 1.0;
    while phi_prime(sigma, hi) > t {
        hi = lo0 + 2.0 * (hi - lo0);
        if hi > 1e300 {
            return Err(Error::Regime(format!("no root of φ' = {t}")));
        }
    }
    let mut lo = lo0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if phi_prime(sigma, mid) > t {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `y_n` at level `n ≥ 2` from the scale table.
pub fn solve_y_n(n: usize, table: &ScaleTable, sigma: i8) -> Result<f64> {
    if n < 2 || n > table.depth() {
        return Err(Error::invalid("n", format!("needs 2 ≤ n ≤ {}", table.depth())));
    }
    let t = table.level(n).t.expect("defined for n ≥ 2");
    solve_y_n_for(t, sigma)
}

/// `(1−ρ)²/(1−2ρ)` at the dilute critical density.
#[must_use]
pub fn y1_minus_dilute(r: f64) -> f64 {
    let rho = critical_density_dilute(r);
    (1.0 - rho).powi(2) / (1.0 - 2.0 * rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub n: usize,
    pub l: u64,
    /// Maximizer of `j_{n+1} g_n(1,y) − y`.
    pub y_n: f64,
    pub y_n_minus: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub rho: f64,
    /// `J_n = j_{n+1}`.
    pub j: f64,
    pub delta: f64,
    /// Bound shape without its constant.
    pub delta_bound: f64,
    pub recursion_ok: bool,
    pub cumulative_bound: f64,
    pub cumulative_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub rows: Vec<SequenceRow>,
    /// Largest `Δ_n / delta_bound_n`.
    pub delta_constant: f64,
    pub y_max: f64,
    pub table: ScaleTable,
}

fn rho_of(g: &ConcaveCurve, j: f64) -> Result<(f64, f64)> {
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
    for (k, (&y, &v)) in g.ys.iter().zip(&g.gs).enumerate() {
        let val = j * v - y;
        if val > best {
            best = val;
            arg = k;
        }
    }
    if arg + 1 == g.ys.len() {
        return Err(Error::Regime(format!(
            "supremum of j g − y sits at Y_max = {}",
            g.y_max()
        )));
    }
    Ok((best + sigma_minus(g.sigma), g.ys[arg]))
}

/// Default `Y_max`: `max(10·y_1^{−1}(0), 4·max predicted y_n)`.
#[must_use]
pub fn default_y_max(table: &ScaleTable, n_max: usize) -> f64 {
    let mut y = 10.0 * y1_minus_dilute(table.params.r.min(0.999_999));
    for n in 2..=(n_max + 1).min(table.depth()) {
        for sigma in [1, -1] {
            if let Ok(v) = solve_y_n(n, table, sigma) {
                y = y.max(4.0 * v);
            }
        }
    }
    y
}

/// `g_1, …, g_{n_max+1}` for one direction.
pub fn g_sequence(table: &ScaleTable, sigma: i8, n_max: usize, y_max: f64) -> Result<Vec<ConcaveCurve>> {
    let mut out = vec![g_initial(sigma, y_max)?];
    for n in 1..=n_max {
        let next = g_step(&out[n - 1], n, table)?;
        out.push(next);
    }
    Ok(out)
}

/// `ρ_n^σ`, `J_n`, `Δ_n` for `n = 1..=n_max`, with the recursion checks.
pub fn rho_j_sequences(params: &RenormParams, n_max: usize) -> Result<SequenceReport> {
    let table = build_scales(params, n_max + 1)?;
    let y_max = default_y_max(&table, n_max);
    let plus = g_sequence(&table, 1, n_max + 1, y_max)?;
    let minus = g_sequence(&table, -1, n_max + 1, y_max)?;
    let mut rp = Vec::new();
    let mut rm = Vec::new();
    for n in 1..=n_max + 1 {
        let j = table.level(n + 1).j;
        rp.push(rho_of(&plus[n - 1], j)?);
        rm.push(rho_of(&minus[n - 1], j)?);
    }
    let mut rows = Vec::with_capacity(n_max);
    let mut prod = 1.0;
    let mut delta_sum = 0.0;
    let mut delta_constant = 0.0f64;
    for n in 1..=n_max {
        let lv = table.level(n);
        let (j1, j2) = (table.level(n + 1).j, table.level(n + 2).j);
        let d_plus = j1 * lv.delta * phi(1, rp[n].1);
        let d_minus = j1 * lv.delta * phi(-1, rm[n].1) + j1 / j2 - 1.0;
        let a = 1.0 - 1.0 / lv.l as f64;
        let rec = |rho_n: f64, rho_next: f64, d: f64| rho_next <= j2 / j1 * (a * rho_n + 1.0 / lv.l as f64 + d) + 1e-12;
        let recursion_ok = rec(rp[n - 1].0, rp[n].0, d_plus) && rec(rm[n - 1].0, rm[n].0, d_minus);
        let gap = 1.0 / j2 - 1.0 / j1;
        let delta_bound = j1 * lv.delta.powi(2) / (2.0 * gap) * (lv.delta / gap).ln().powi(3);
        let delta = d_plus.max(d_minus);
        delta_constant = delta_constant.max(delta / delta_bound);
        let rho = rp[n - 1].0.max(rm[n - 1].0);
        let rho1 = rp[0].0.max(rm[0].0);
        let cumulative_bound = rho1 * prod + (1.0 - prod) + delta_sum;
        rows.push(SequenceRow {
            n,
            l: lv.l,
            y_n: rp[n - 1].1,
            y_n_minus: rm[n - 1].1,
            rho_plus: rp[n - 1].0,
            rho_minus: rm[n - 1].0,
            rho,
            j: j1,
            delta,
            delta_bound,
            recursion_ok,
            cumulative_bound,
            cumulative_ok: rho <= cumulative_bound + 1e-12,
        });
        prod *= a;
        delta_sum += delta;
    }
    Ok(SequenceReport {
        rows,
        delta_constant,
        y_max,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiluteRow {
    pub epsilon: f64,
    pub k1: u64,
    pub rho_1: f64,
    /// Max of `ρ_n` over levels `3..=n_max`.
    pub rho_limit: f64,
    pub j_limit: f64,
    /// `Π l_n/(l_n−1) − 1`.
    pub product_defect: f64,
    pub y_probe: f64,
    pub g_n_at_y: f64,
    pub g1_at_y: f64,
    /// `ε > ε_0`.
    pub flagged: bool,
    pub error: Option<String>,
}

/// Rows of the `ε → 0` sweep with `K_1(ε) = ⌊K*(ε)⌋`.
pub fn dilute_scan(template: &RenormParams, epsilons: &[f64], n_max: usize, y_probe: Option<f64>) -> Result<Vec<DiluteRow>> {
    if n_max < 3 {
        return Err(Error::invalid("n_max", "needs at least 3 levels"));
    }
    if let Some(e) = epsilons.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::invalid("epsilon", format!("{e} outside (0,1]")));
    }
    let probe = y_probe.unwrap_or_else(|| {
        let rho = critical_density_dilute(template.r.min(0.999_999));
        0.5 * rho * rho / (1.0 - 2.0 * rho)
    });
    Ok(epsilons
        .par_iter()
        .map(|&eps| {
            let base = RenormParams {
                epsilon: eps,
                ..*template
            };
            let k_star = base.constants().k_star_eps.floor();
            let k1 = if k_star.is_finite() && (2.0..9e15).contains(&k_star) { k_star as u64 } else { 2 };
            let p = RenormParams { k1, ..base };
            let flagged = eps > p.constants().epsilon0;
            let mut row = DiluteRow {
                epsilon: eps,
                k1,
                rho_1: f64::NAN,
                rho_limit: f64::NAN,
                j_limit: f64::NAN,
                product_defect: f64::NAN,
                y_probe: probe,
                g_n_at_y: f64::NAN,
                g1_at_y: g1_closed(1, probe),
                flagged,
                error: None,
            };
            let mut run = || -> Result<()> {
                let table = build_scales(&p, n_max)?;
                row.rho_1 = smaller_root(table.level(2).j);
                row.j_limit = table.level(n_max + 1).j;
                row.product_defect = (1..=n_max).map(|n| {
                    let l = table.level(n).l as f64;
                    l / (l - 1.0)
                }).product::<f64>()
                    - 1.0;
                let rep = rho_j_sequences(&p, n_max)?;
                row.rho_limit = rep.rows.iter().filter(|r| r.n >= 3).map(|r| r.rho).fold(f64::NEG_INFINITY, f64::max);
                let gs = g_sequence(&rep.table, 1, n_max - 1, rep.y_max)?;
                row.g_n_at_y = gs[n_max - 1].eval(probe)?;
                Ok(())
            };
            if let Err(e) = run() {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect())
}
