//! Reference fluxes, Legendre dualities, dilute-limit targets and plateau
//! detection on sampled flux curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Simulated,
    Reference,
    Transformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxSample {
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Sampled flux `ρ ↦ f(ρ)` with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxCurve {
    pub samples: Vec<FluxSample>,
    pub provenance: Provenance,
}

impl FluxCurve {
    pub fn new(samples: Vec<FluxSample>, provenance: Provenance) -> Result<Self> {
        let c = Self { samples, provenance };
        c.validate()?;
        Ok(c)
    }

    /// Noise-free samples of `f` on `grid`.
    pub fn from_fn(grid: &[f64], provenance: Provenance, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            grid.iter().map(|&x| FluxSample { x, value: f(x), stderr: 0.0 }).collect(),
            provenance,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("curve", "no samples"));
        }
        for s in &self.samples {
            if !(0.0..=1.0).contains(&s.x) {
                return Err(Error::invalid("curve", format!("density {} outside [0,1]", s.x)));
            }
            if !(s.value >= 0.0) || !s.value.is_finite() {
                return Err(Error::invalid("curve", format!("value {} at ρ={} is not a finite non-negative number", s.value, s.x)));
            }
        }
        if self.samples.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(Error::invalid("curve", "densities must be strictly increasing"));
        }
        Ok(())
    }

    #[must_use]
    pub fn xs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.x).collect()
    }

    #[must_use]
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    /// `true` if every chord lies below the curve up to `tol`.
    #[must_use]
    pub fn is_concave(&self, tol: f64) -> bool {
        let neg: Vec<f64> = self.samples.iter().map(|s| -s.value).collect();
        is_convex(&self.xs(), &neg, tol)
    }

    #[must_use]
    pub fn max_sample(&self) -> FluxSample {
        *self
            .samples
            .iter()
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .expect("validated curves are non-empty")
    }
}

/// Plain sampled function with strictly increasing abscissae.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::invalid("curve", "abscissae and values must be non-empty and of equal length"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("curve", "abscissae must be strictly increasing"));
        }
        Ok(Self { x, y })
    }

    pub fn from_fn(grid: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.to_vec(), grid.iter().map(|&x| f(x)).collect())
    }

    /// Largest absolute difference with `g` at the sample points.
    #[must_use]
    pub fn sup_distance(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.x.iter().zip(&self.y).map(|(&x, &y)| (y - g(x)).abs()).fold(0.0, f64::max)
    }
}

/// Piecewise-linear convexity check: slopes non-decreasing up to `tol`.
#[must_use]
pub fn is_convex(x: &[f64], y: &[f64], tol: f64) -> bool {
    let slopes: Vec<f64> = x.windows(2).zip(y.windows(2)).map(|(a, b)| (b[1] - b[0]) / (a[1] - a[0])).collect();
    slopes.windows(2).all(|s| s[1] >= s[0] - tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    pub rho_c: f64,
    pub j: f64,
}

impl ReferenceParams {
    pub fn new(rho_c: f64, j: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&rho_c) {
            return Err(Error::invalid("rho_c", format!("{rho_c} outside [0, 1/2]")));
        }
        if !(j >= 0.0) || !j.is_finite() {
            return Err(Error::invalid("J", format!("{j} must be finite and non-negative")));
        }
        Ok(Self { rho_c, j })
    }

    /// Kink abscissae of `k`: `−J/ρ_c`, `0`, `J/ρ_c`.
    #[must_use]
    pub fn k_kinks(&self) -> Vec<f64> {
        if self.rho_c == 0.0 {
            vec![0.0]
        } else {
            let s = self.j / self.rho_c;
            vec![-s, 0.0, s]
        }
    }
}

/// `J·min(ρ/ρ_c, (1−ρ)/ρ_c, 1)`.
#[must_use]
pub fn reference_flux(p: ReferenceParams, rho: f64) -> f64 {
    let edge = rho.min(1.0 - rho);
    if p.rho_c == 0.0 {
        return if edge > 0.0 { p.j } else { 0.0 };
    }
    p.j * (edge / p.rho_c).min(1.0)
}

/// Convex conjugate of the reference flux.
#[must_use]
pub fn reference_k(p: ReferenceParams, x: f64) -> f64 {
    if p.rho_c == 0.0 {
        return p.j + (-x).max(0.0);
    }
    let s = p.j / p.rho_c;
    if x < -s {
        -x
    } else if x < 0.0 {
        p.j - (1.0 - p.rho_c) * x
    } else if x < s {
        p.j - p.rho_c * x
    } else {
        0.0
    }
}

/// `(ρ_c x⁺ − (1−ρ_c)x⁻ + y)/J` for `y ≥ x⁻`.
pub fn reference_tau(p: ReferenceParams, x: f64, y: f64) -> Result<f64> {
    let (xp, xm) = (x.max(0.0), (-x).max(0.0));
    if y < xm {
        return Err(Error::invalid("y", format!("{y} below x⁻ = {xm}")));
    }
    let num = p.rho_c * xp - (1.0 - p.rho_c) * xm + y;
    if p.j == 0.0 {
        return if num == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::invalid("J", "degenerate reference"))
        };
    }
    Ok(num / p.j)
}

/// `t·k(x/t)`, with the `t = 0` limit `x⁻`.
#[must_use]
pub fn reference_height(p: ReferenceParams, t: f64, x: f64) -> f64 {
    if t == 0.0 {
        return (-x).max(0.0);
    }
    t * reference_k(p, x / t)
}

/// Lower convex hull of points sorted by `x` (monotone chain).
fn lower_hull(x: &[f64], w: &[f64]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(x.len());
    for (&a, &b) in x.iter().zip(w) {
        while hull.len() >= 2 {
            let (x1, y1) = hull[hull.len() - 2];
            let (x2, y2) = hull[hull.len() - 1];
            if (x2 - x1) * (b - y1) - (y2 - y1) * (a - x1) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((a, b));
    }
    hull
}

/// `p ↦ min_i (w_i + p x_i)` evaluated through the lower hull.
struct Conjugate {
    hull: Vec<(f64, f64)>,
    slopes: Vec<f64>,
}

impl Conjugate {
    fn new(x: &[f64], w: &[f64]) -> Self {
        let hull = lower_hull(x, w);
        let slopes = hull.windows(2).map(|s| (s[1].1 - s[0].1) / (s[1].0 - s[0].0)).collect();
        Self { hull, slopes }
    }

    fn min(&self, p: f64) -> f64 {
        let k = self.slopes.partition_point(|&s| s < -p);
        let (x, w) = self.hull[k];
        w + p * x
    }
}

/// `f(ρ) = inf_v [k(v) + vρ]` on the grid of `k`.
pub fn legendre_flux_from_k(k: &Curve, rho_grid: &[f64]) -> Result<FluxCurve> {
    if !is_convex(&k.x, &k.y, 1e-9) {
        return Err(Error::invalid("k", "input is not convex"));
    }
    let conj = Conjugate::new(&k.x, &k.y);
    FluxCurve::from_fn(rho_grid, Provenance::Transformed, |rho| conj.min(rho).max(0.0))
}

/// `k(v) = sup_ρ [f(ρ) − vρ]` on the grid of `f`.
pub fn legendre_k_from_flux(f: &FluxCurve, v_grid: &[f64]) -> Result<Curve> {
    if !f.is_concave(1e-9) {
        return Err(Error::invalid("f", "input is not concave"));
    }
    let neg: Vec<f64> = f.samples.iter().map(|s| -s.value).collect();
    let conj = Conjugate::new(&f.xs(), &neg);
    Curve::from_fn(v_grid, |v| -conj.min(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TauToHeight,
    HeightToTau,
}

/// Strict generalized inverse `t ↦ inf{x ≥ x_0 : F(x) > t}` of a sampled
/// non-decreasing `F`, linear between samples.
///
/// `TauToHeight` takes `y ↦ τ(x,y)` and returns `t ↦ h(t,x)`; `HeightToTau`
/// takes `t ↦ h(t,x)` and returns `y ↦ τ(x,y)`. Grid points at or beyond the
/// last sampled value are rejected.
pub fn tau_height_convert(curve: &Curve, direction: Direction, grid: &[f64]) -> Result<Curve> {
    let _ = direction;
    if curve.y.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("curve", "values must be non-decreasing in the inverted variable"));
    }
    let last = *curve.y.last().expect("curve is non-empty");
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        if t >= last {
            return Err(Error::invalid("grid", format!("{t} is not below the last sampled value {last}")));
        }
        let i = curve.y.partition_point(|&v| v <= t);
        let v = if i == 0 {
            curve.x[0]
        } else {
            let (x0, x1, y0, y1) = (curve.x[i - 1], curve.x[i], curve.y[i - 1], curve.y[i]);
            x0 + (t - y0) * (x1 - x0) / (y1 - y0)
        };
        out.push(v);
    }
    Curve::new(grid.to_vec(), out)
}

/// Dilute-limit objects at slow-bond rate `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiluteTargets {
    pub r: f64,
    pub rho_c: f64,
    pub y1_plus: f64,
    pub y1_minus: f64,
    /// Largest branch mismatch of the corrected split on the unit circle.
    pub continuity_gap: f64,
}

/// `(1 − √(1−r))/2`.
#[must_use]
pub fn critical_density_dilute(r: f64) -> f64 {
    0.5 * (1.0 - (1.0 - r).sqrt())
}

/// Smaller root of `ρ(1−ρ) = j`, or `1/2` when `j ≥ 1/4`.
#[must_use]
pub fn smaller_root(j: f64) -> f64 {
    if j >= 0.25 {
        return 0.5;
    }
    let d = (1.0 - 4.0 * j).sqrt();
    2.0 * j / (1.0 + d)
}

pub fn dilute_targets(r: f64) -> Result<DiluteTargets> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid("r", format!("{r} outside (0,1)")));
    }
    let rho_c = smaller_root(r / 4.0);
    let gap = 1.0 - 2.0 * rho_c;
    let mut t = DiluteTargets {
        r,
        rho_c,
        y1_plus: rho_c * rho_c / gap,
        y1_minus: (1.0 - rho_c) * (1.0 - rho_c) / gap,
        continuity_gap: 0.0,
    };
    t.continuity_gap = [-1.0, 1.0].iter().map(|&x| t.branch_mismatch(x, t.split(x))).fold(0.0, f64::max);
    if t.continuity_gap > 1e-9 * (1.0 + t.y1_minus / r) {
        return Err(Error::Internal(format!("dilute passage time discontinuous: gap {}", t.continuity_gap)));
    }
    Ok(t)
}

fn parabola_tau(x: f64, y: f64) -> f64 {
    let s = (x + y).max(0.0).sqrt() + y.sqrt();
    s * s
}

impl DiluteTargets {
    #[must_use]
    pub fn reference(&self) -> ReferenceParams {
        ReferenceParams {
            rho_c: self.rho_c,
            j: self.r / 4.0,
        }
    }

    /// `min(ρ(1−ρ), r/4)`.
    #[must_use]
    pub fn f0(&self, rho: f64) -> f64 {
        let m = rho.min(1.0 - rho);
        (m * (1.0 - m)).min(self.r / 4.0)
    }

    #[must_use]
    pub fn flat_length(&self) -> f64 {
        1.0 - 2.0 * self.rho_c
    }

    /// Switching height `x⁺y₁¹ + x⁻y₁⁻¹`.
    #[must_use]
    pub fn split(&self, x: f64) -> f64 {
        x.max(0.0) * self.y1_plus + (-x).max(0.0) * self.y1_minus
    }

    /// Switching height as printed, `x⁺y₁¹ − x⁻y₁⁻¹`.
    #[must_use]
    pub fn split_printed(&self, x: f64) -> f64 {
        x.max(0.0) * self.y1_plus - (-x).max(0.0) * self.y1_minus
    }

    fn branch_mismatch(&self, x: f64, y: f64) -> f64 {
        let lin = reference_tau(self.reference(), x, y).unwrap_or(f64::NAN);
        (parabola_tau(x, y) - lin).abs()
    }

    /// Dilute passage time with the continuous split.
    pub fn tau0(&self, x: f64, y: f64) -> Result<f64> {
        if y < (-x).max(0.0) {
            return Err(Error::invalid("y", "below x⁻"));
        }
        if y <= self.split(x) {
            Ok(parabola_tau(x, y))
        } else {
            reference_tau(self.reference(), x, y)
        }
    }

    /// Dilute passage time with the split exactly as printed.
    pub fn tau0_printed(&self, x: f64, y: f64) -> Result<f64> {
        if y < (-x).max(0.0) {
            return Err(Error::invalid("y", "below x⁻"));
        }
        if y <= self.split_printed(x) {
            Ok(parabola_tau(x, y))
        } else {
            reference_tau(self.reference(), x, y)
        }
    }

    /// Largest jump of the printed evaluator across its switching locus for
    /// `x` in `xs`, together with the worst `x`.
    #[must_use]
    pub fn printed_gap(&self, xs: &[f64]) -> (f64, f64) {
        let mut worst = (0.0, f64::NAN);
        for &x in xs {
            let y = self.split_printed(x).max((-x).max(0.0));
            let g = self.branch_mismatch(x, y);
            if g > worst.0 {
                worst = (g, x);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatSegment {
    /// `None` when no plateau is detected.
    pub rho_c: Option<f64>,
    /// Grid spacing at the detected edge.
    pub uncertainty: f64,
    pub band: f64,
    pub median_stderr: f64,
}

impl FlatSegment {
    #[must_use]
    pub fn width(&self) -> Option<f64> {
        self.rho_c.map(|r| 1.0 - 2.0 * r)
    }
}

/// Default plateau band `max(0.01·r/4, 3·median stderr)`.
#[must_use]
pub fn default_band(curve: &FluxCurve, r: f64) -> f64 {
    (0.01 * r / 4.0).max(3.0 * median_stderr(curve))
}

fn median_stderr(curve: &FluxCurve) -> f64 {
    let mut s: Vec<f64> = curve.samples.iter().map(|s| s.stderr).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Smallest sampled `ρ ≤ 1/2` such that every sample in `[ρ, 1−ρ]` lies
/// within `band` of `r/4`.
pub fn detect_flat_segment(curve: &FluxCurve, r: f64, band: Option<f64>) -> Result<FlatSegment> {
    curve.validate()?;
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::invalid("r", format!("{r} outside (0,1]")));
    }
    let xs = curve.xs();
    if xs[0] > 0.5 || *xs.last().expect("non-empty") < 0.5 {
        return Err(Error::invalid("curve", "samples must straddle ρ = 1/2"));
    }
    let med = median_stderr(curve);
    let band = band.unwrap_or_else(|| default_band(curve, r));
    if band < med {
        return Err(Error::invalid("band", format!("{band} below the median stderr {med}; plateau unidentifiable")));
    }
    let target = r / 4.0;
    let inside = |lo: f64| {
        curve
            .samples
            .iter()
            .filter(|s| s.x >= lo - 1e-12 && s.x <= 1.0 - lo + 1e-12)
            .all(|s| (s.value - target).abs() <= band)
    };
    let mut found = None;
    for (k, s) in curve.samples.iter().enumerate().filter(|(_, s)| s.x <= 0.5 + 1e-12) {
        if inside(s.x) {
            let step = if k > 0 { s.x - xs[k - 1] } else { xs.get(1).map_or(0.0, |n| n - s.x) };
            found = Some((s.x, step));
            break;
        }
    }
    Ok(FlatSegment {
        rho_c: found.map(|f| f.0),
        uncertainty: found.map_or(f64::NAN, |f| f.1),
        band,
        median_stderr: med,
    })
}

/// Uniform grid on `[a, b]` with spacing close to `step`, with `extra` points merged in.
#[must_use]
pub fn grid_with_kinks(a: f64, b: f64, step: f64, extra: &[f64]) -> Vec<f64> {
    let n = ((b - a) / step).round().max(1.0) as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    g.extend(extra.iter().copied().filter(|&e| e >= a && e <= b));
    g.sort_by(f64::total_cmp);
    g.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    g
}
