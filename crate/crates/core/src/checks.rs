//! Fast invariant checks run by `plateau verify`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::env::{sample_environment, DisorderSpec};
use crate::flux::{dilute_targets, grid_with_kinks, legendre_flux_from_k, legendre_k_from_flux, reference_k, Curve, ReferenceParams};
use crate::lpp::{passage_time, restricted_passage_time, skeleton_decomposition_check, BlockGeometry, ServiceField, SKELETON_CAP};
use crate::maxcurrent::{min_rate_current_bound, stationary_current_exact, OpenSystem};
use crate::renorm::{build_scales, g_initial, g_step, g_step_branches, RenormParams, StepCoefficients};
use crate::seed::derive_seed;
use crate::stats::{constant_a, max_sum_monte_carlo};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((pass, detail)) => Check {
            name: name.into(),
            pass,
            detail,
        },
        Err(e) => Check {
            name: name.into(),
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every check; the result is a pure function of `seed`.
#[must_use]
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        check("catalan-currents", catalan_currents()),
        check("skeleton-identity", skeleton_identity(seed)),
        check("restriction-monotone", restriction_monotone(seed)),
        check("min-rate-bound", min_rate_bound(seed)),
        check("scales-monotone", scales_monotone()),
        check("g-step-concave", g_step_concave()),
        check("legendre-round-trip", legendre_round_trip()),
        check("dilute-identity", dilute_identity()),
        check("seed-quality", seed_quality(seed)),
        check("max-of-sums", max_of_sums(seed)),
    ]
}

fn catalan_currents() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut c = [1.0f64; 7];
    for n in 1..7 {
        c[n] = c[n - 1] * 2.0 * (2 * n - 1) as f64 / (n + 1) as f64;
    }
    for n in 1..=5 {
        let j = stationary_current_exact(&OpenSystem::homogeneous(n, 1.0)?)?.current;
        worst = worst.max((j - c[n] / c[n + 1]).abs());
    }
    Ok((worst <= 1e-10, format!("max error {worst:.2e}")))
}

fn skeleton_identity(seed: u64) -> Result<(bool, String)> {
    let spec = DisorderSpec::bernoulli(0.5, 0.3, derive_seed(seed, "verify-env", 0));
    let mut worst = 0.0f64;
    for k in 0..5 {
        let env = sample_environment(&spec.with_seed(derive_seed(spec.seed, "skeleton", k)), -8, 8)?;
        let services = ServiceField::new(derive_seed(seed, "verify-services", k));
        for (sigma, y) in [(1i8, 3u64), (-1, 6)] {
            let geom = BlockGeometry {
                origin: 0,
                k_n: 3,
                l_n: 2,
                sigma,
            };
            let c = skeleton_decomposition_check(&env, &services, &geom, y, SKELETON_CAP)?;
            worst = worst.max((c.max_over_skeletons - c.direct).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max gap {worst:.2e}")))
}

fn restriction_monotone(seed: u64) -> Result<(bool, String)> {
    let spec = DisorderSpec::bernoulli(0.3, 0.4, derive_seed(seed, "verify-env", 1));
    let env = sample_environment(&spec, -40, 40)?;
    let services = ServiceField::new(derive_seed(seed, "verify-services", 99));
    let mut ok = true;
    for (to, b) in [((5, 10), (-3, 6)), ((-4, 12), (-6, 2)), ((0, 15), (-2, 2))] {
        let r = restricted_passage_time(&env, &services, b, (0, 0), to)?;
        let u = passage_time(&env, &services, (0, 0), to)?;
        ok &= r <= u + 1e-12;
    }
    Ok((ok, "restricted ≤ unrestricted on 3 boxes".into()))
}

fn min_rate_bound(seed: u64) -> Result<(bool, String)> {
    let spec = DisorderSpec::bernoulli(0.4, 0.5, derive_seed(seed, "verify-env", 2));
    let mut ok = true;
    for k in 0..10 {
        let env = sample_environment(&spec.with_seed(derive_seed(spec.seed, "min-rate", k)), 0, 6)?;
        ok &= min_rate_current_bound(&env)?.holds;
    }
    Ok((ok, "j_env ≥ j_hom(α*) on 10 boxes".into()))
}

fn scales_monotone() -> Result<(bool, String)> {
    let p = RenormParams::default();
    let t = build_scales(&p, 10)?;
    let ok = t.levels.windows(2).all(|w| w[1].j < w[0].j && w[1].j > p.r / 4.0);
    Ok((ok, format!("{} levels", t.depth())))
}

fn g_step_concave() -> Result<(bool, String)> {
    let p = RenormParams::default();
    let t = build_scales(&p, 3)?;
    let mut worst = 0.0f64;
    for sigma in [1i8, -1] {
        let g1 = g_initial(sigma, 60.0)?;
        let g2 = g_step(&g1, 1, &t)?;
        let c = StepCoefficients::from_table(&t, 1);
        for k in (0..g2.ys.len()).step_by(211) {
            worst = worst.max((g_step_branches(&g1, c, g2.ys[k])? - g2.gs[k]).abs());
        }
    }
    Ok((worst <= 1e-7, format!("branch discrepancy {worst:.2e}")))
}

fn legendre_round_trip() -> Result<(bool, String)> {
    let q = ReferenceParams::new(0.2, 0.15)?;
    let v = grid_with_kinks(-2.0, 2.0, 1e-3, &q.k_kinks());
    let rho = grid_with_kinks(0.0, 1.0, 1e-3, &[q.rho_c, 1.0 - q.rho_c]);
    let k = Curve::from_fn(&v, |x| reference_k(q, x))?;
    let f = legendre_flux_from_k(&k, &rho)?;
    let k2 = legendre_k_from_flux(&f, &v)?;
    let err = k2.sup_distance(|x| reference_k(q, x));
    Ok((err <= 1e-6, format!("sup error {err:.2e}")))
}

fn dilute_identity() -> Result<(bool, String)> {
    let d = dilute_targets(0.5)?;
    let gap = (d.y1_minus - d.y1_plus - 1.0).abs();
    Ok((gap <= 1e-12, format!("|y1^- - y1^+ - 1| = {gap:.1e}")))
}

fn seed_quality(seed: u64) -> Result<(bool, String)> {
    let n = 200_000u64;
    let distinct: HashSet<u64> = (0..n).map(|i| derive_seed(seed, "verify", i)).collect();
    let flips: u32 = (0..10_000u64)
        .map(|i| (derive_seed(seed, "verify", i) ^ derive_seed(seed, "verify", i + 1)).count_ones())
        .sum();
    let mean = f64::from(flips) / 10_000.0;
    Ok((distinct.len() as u64 == n && mean >= 20.0, format!("{} distinct of {n}, mean flips {mean:.2}", distinct.len())))
}

fn max_of_sums(seed: u64) -> Result<(bool, String)> {
    let means: Vec<Vec<f64>> = (0..10).map(|a| (0..5).map(|i| ((a + 2 * i) % 3) as f64).collect()).collect();
    let scales = vec![vec![0.5; 5]; 10];
    let rep = max_sum_monte_carlo(&means, &scales, constant_a().a, 2_000, derive_seed(seed, "verify-maxsum", 0))?;
    Ok((rep.empirical_mean <= rep.bound, format!("mean {:.3} ≤ bound {:.3}", rep.empirical_mean, rep.bound)))
}
