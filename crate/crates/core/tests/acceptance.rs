//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then
//! asserts the criterion.

use std::time::Instant;

use plateau::env::{sample_environment, DisorderSpec};
use plateau::flux::{
    dilute_targets, detect_flat_segment, grid_with_kinks, legendre_flux_from_k, legendre_k_from_flux, reference_flux,
    reference_height, reference_k, reference_tau, tau_height_convert, Curve, Direction, ReferenceParams,
};
use plateau::lpp::{
    enumerate_skeletons, shape_estimate, skeleton_count, skeleton_decomposition_check, t_infinity_estimate, BlockGeometry,
    Homogeneous, ServiceField, DEFAULT_CELL_BUDGET, SKELETON_CAP,
};
use plateau::maxcurrent::{stationary_current_exact, OpenSystem};
use plateau::renorm::{dilute_scan, rho_j_sequences, RenormParams};
use plateau::seed::derive_seed;
use plateau::stats::{
    constant_a, default_t_grid, fluctuation_split, martin_concentration_check, max_sum_monte_carlo,
};
use plateau::tasep::{flux_curve, RunOptions};
use plateau::{Environment, Error};

fn verdict(n: u32, pass: bool, detail: &str) {
    println!("{} acceptance {n}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn catalan(n: u64) -> f64 {
    (0..n).fold(1.0, |c, k| c * 2.0 * (2 * k + 1) as f64 / (k + 2) as f64)
}

#[test]
fn criterion_01_exact_maximal_currents() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=5usize {
        let exact = stationary_current_exact(&OpenSystem::homogeneous(n, 1.0).unwrap()).unwrap();
        let expect = catalan(n as u64) / catalan(n as u64 + 1);
        worst = worst.max((exact.current - expect).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && secs < 1.0;
    verdict(1, pass, &format!("max |j - C_N/C_(N+1)| = {worst:.2e}, {secs:.3}s"));
    assert!(pass);
}

#[test]
fn criterion_02_maximal_current_passage_bridge() {
    let start = Instant::now();
    let spec = DisorderSpec::bernoulli(0.5, 0.3, 2024);
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let env = sample_environment(&spec.with_seed(derive_seed(spec.seed, "bridge", k)), 0, 5).unwrap();
        let j = stationary_current_exact(&OpenSystem::from_env(&env).unwrap()).unwrap().current;
        let services = ServiceField::new(derive_seed(77, "bridge-services", k));
        let t = t_infinity_estimate(&env, &services, env.x_max(), 200_000).unwrap();
        worst = worst.max((t * j - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 0.01 && secs < 120.0;
    verdict(2, pass, &format!("max |T_inf * j_inf - 1| = {worst:.4} over 20 environments, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_03_homogeneous_shape() {
    let start = Instant::now();
    let est = shape_estimate(&DisorderSpec::homogeneous(1), 1.0, 1.0, 2000, 16, 3, DEFAULT_CELL_BUDGET).unwrap();
    let target = (2f64.sqrt() + 1.0).powi(2);
    let rel = (est.tau_hat - target).abs() / target;
    let secs = start.elapsed().as_secs_f64();
    let pass = rel <= 0.02 && secs < 60.0;
    verdict(3, pass, &format!("tau(1,1) = {:.5} ± {:.5}, relative error {rel:.4}, {secs:.1}s", est.tau_hat, est.stderr));
    assert!(pass);
}

#[test]
fn criterion_04_homogeneous_ring_flux() {
    let densities: Vec<f64> = (1..=9).map(|k| f64::from(k) / 10.0).collect();
    let est = flux_curve(&DisorderSpec::homogeneous(5), &densities, 4096, 2e4, 4, 11, RunOptions::default()).unwrap();
    let worst = est
        .curve
        .samples
        .iter()
        .map(|s| (s.value - s.x * (1.0 - s.x)).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 0.005 && est.symmetric_within(2.0);
    verdict(
        4,
        pass,
        &format!(
            "max |f - rho(1-rho)| = {worst:.5}; symmetry defect {:.2e} vs 2 pooled stderr {:.2e}",
            est.symmetry_defect,
            2.0 * est.pooled_stderr
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_skeleton_identity() {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut counts_ok = true;
    let mut empty_ok = true;
    let spec = DisorderSpec::bernoulli(0.5, 0.3, 8);
    for seed in 0..50u64 {
        let env = sample_environment(&spec.with_seed(seed), -8, 8).unwrap();
        let services = ServiceField::new(derive_seed(seed, "skeleton", 0));
        for sigma in [1i8, -1] {
            let geom = BlockGeometry {
                origin: 0,
                k_n: 3,
                l_n: 2,
                sigma,
            };
            let heights: Vec<u64> = if sigma > 0 { (0..=4).collect() } else { (0..=8).collect() };
            for y in heights {
                let skels = enumerate_skeletons(2, 3, y, sigma, SKELETON_CAP).unwrap();
                if sigma > 0 {
                    let binom = binomial(2 * 2 + y - 1, 2 * 2 - 1);
                    counts_ok &= skels.len() as u128 == binom && skeleton_count(2, 3, y, sigma) == binom;
                }
                match skeleton_decomposition_check(&env, &services, &geom, y, SKELETON_CAP) {
                    Ok(c) => {
                        worst = worst.max((c.max_over_skeletons - c.direct).abs());
                        checked += 1;
                    }
                    Err(Error::EmptyPathSet { .. }) => empty_ok &= skels.is_empty(),
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }
    let pass = worst <= 1e-9 && counts_ok && empty_ok;
    verdict(
        5,
        pass,
        &format!("{checked} decompositions, max gap {worst:.1e}; counts match binomial: {counts_ok}; unreachable heights have no skeletons: {empty_ok}"),
    );
    assert!(pass);
}

fn binomial(n: u64, k: u64) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

#[test]
fn criterion_06_renormalization_sequences() {
    let start = Instant::now();
    let params = RenormParams {
        r: 0.5,
        a: 1.0,
        b: 1.0,
        beta: 1.0,
        c: 1.0,
        gamma: 0.1,
        c_fluct: 1.0,
        epsilon: 0.0,
        k1: 10_000,
    };
    let rep = rho_j_sequences(&params, 8).unwrap();
    let rows = &rep.rows;
    let j_decreasing = rows.windows(2).all(|w| w[1].j < w[0].j);
    let j_gap = rows[7].j - params.r / 4.0;
    let recursion = rows.iter().all(|r| r.recursion_ok);
    let delta_decreasing = rows[1..].windows(2).all(|w| w[1].delta < w[0].delta);
    let delta_ratio = rows[7].delta / rows[1].delta;
    let rho_max = rows.iter().map(|r| r.rho).fold(f64::NEG_INFINITY, f64::max);
    let secs = start.elapsed().as_secs_f64();
    for r in rows {
        println!(
            "  n={} l={} y_n={:.4e} rho={:.5} J={:.6} Delta={:.4e} recursion_ok={}",
            r.n, r.l, r.y_n, r.rho, r.j, r.delta, r.recursion_ok
        );
    }
    let pass = j_decreasing && j_gap <= 1e-3 && recursion && delta_decreasing && delta_ratio < 0.1 && rho_max < 0.5 && secs < 5.0;
    verdict(
        6,
        pass,
        &format!(
            "J decreasing {j_decreasing}, J_8 - r/4 = {j_gap:.2e}; recursion holds {recursion}; \
             Delta decreasing {delta_decreasing}, Delta_8/Delta_2 = {delta_ratio:.3}; max rho_n = {rho_max:.4}; {secs:.2}s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_dilute_targets() {
    let template = RenormParams::default();
    let rows = dilute_scan(&template, &[2e-12, 1e-13, 1e-14], 3, None).unwrap();
    let rho_c0 = (1.0 - (1.0 - template.r).sqrt()) / 2.0;
    let large: Vec<_> = rows.iter().filter(|r| r.k1 >= 1_000_000).collect();
    let worst = large.iter().map(|r| (r.rho_1 - rho_c0).abs()).fold(0.0, f64::max);
    let d = dilute_targets(template.r).unwrap();
    let identity = d.y1_minus - d.y1_plus;
    let pass = !large.is_empty() && worst <= 1e-3 && (identity - 1.0).abs() <= 1e-12;
    verdict(
        7,
        pass,
        &format!("{} rows with K_1 >= 1e6, max |rho_1 - rho_c(0)| = {worst:.2e}; y1^- - y1^+ = {identity}", large.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_08_duality_round_trips() {
    let mut flux_worst = 0.0f64;
    let mut tau_worst = 0.0f64;
    for a in 1..=9 {
        for b in 1..=9 {
            let q = ReferenceParams::new(0.05 * f64::from(a), 0.02 * f64::from(b)).unwrap();
            let v = grid_with_kinks(-4.0, 4.0, 1e-3, &q.k_kinks());
            let rho = grid_with_kinks(0.0, 1.0, 1e-3, &[q.rho_c, 1.0 - q.rho_c]);
            let k = Curve::from_fn(&v, |x| reference_k(q, x)).unwrap();
            let f = legendre_flux_from_k(&k, &rho).unwrap();
            for s in &f.samples {
                flux_worst = flux_worst.max((s.value - reference_flux(q, s.x)).abs());
            }
            let k2 = legendre_k_from_flux(&f, &v).unwrap();
            flux_worst = flux_worst.max(k2.sup_distance(|x| reference_k(q, x)));
            for x in [-0.5f64, 0.0, 0.5] {
                let lo = (-x).max(0.0);
                let y = grid_with_kinks(lo, lo + 4.0, 1e-3, &[]);
                let tau = Curve::from_fn(&y, |y| reference_tau(q, x, y).unwrap()).unwrap();
                let t = grid_with_kinks(0.0, tau.y[tau.y.len() - 1] * 0.999, 1e-3, &[tau.y[0]]);
                let h = tau_height_convert(&tau, Direction::TauToHeight, &t).unwrap();
                tau_worst = tau_worst.max(h.sup_distance(|t| reference_height(q, t, x)));
                let y_back = grid_with_kinks(lo, lo + 3.5, 1e-3, &[]);
                let back = tau_height_convert(&h, Direction::HeightToTau, &y_back).unwrap();
                tau_worst = tau_worst.max(back.sup_distance(|y| reference_tau(q, x, y).unwrap()));
            }
        }
    }
    let pass = flux_worst <= 1e-6 && tau_worst <= 1e-6;
    verdict(8, pass, &format!("flux<->k sup error {flux_worst:.2e}, tau<->h sup error {tau_worst:.2e} over 81 pairs"));
    assert!(pass);
}

#[test]
fn criterion_09_concentration_suite() {
    let a = constant_a().a;
    let means: Vec<Vec<f64>> = (0..100).map(|i| (0..50).map(|k| ((i * 7 + k * 3) % 11) as f64 / 10.0).collect()).collect();
    let scales: Vec<Vec<f64>> = (0..100).map(|i| (0..50).map(|k| 0.2 + ((i + k) % 5) as f64 / 10.0).collect()).collect();
    let ms = max_sum_monte_carlo(&means, &scales, a, 10_000, 91).unwrap();
    let max_sum_ok = ms.empirical_mean <= ms.bound;

    let tails = martin_concentration_check((30, 30), 8.0, 400, 5, &default_t_grid()).unwrap();
    let tails_ok = tails.all_pass();

    let mut fluct_ok = true;
    let mut c_fit = 0.0f64;
    let spec = DisorderSpec::bernoulli(0.5, 0.3, 12);
    for seed in 0..6u64 {
        let env: Environment = sample_environment(&spec.with_seed(seed), -8, 8).unwrap();
        for (sigma, y) in [(1i8, 2u64), (1, 4), (-1, 6), (-1, 8)] {
            let geom = BlockGeometry {
                origin: 0,
                k_n: 3,
                l_n: 2,
                sigma,
            };
            let rep = fluctuation_split(&env, &geom, y, 64, derive_seed(seed, "fluct", y)).unwrap();
            fluct_ok &= rep.f_n >= 0.0;
            c_fit = c_fit.max(rep.implied_constant());
        }
    }
    let pass = max_sum_ok && tails_ok && fluct_ok;
    verdict(
        9,
        pass,
        &format!(
            "max-of-sums mean {:.3} <= bound {:.3} ({} of 10^4 trials above); tail bands pass {tails_ok}; F_n >= 0 {fluct_ok}, fitted C_fluct = {c_fit:.3}",
            ms.empirical_mean, ms.bound, ms.trials_above_bound
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_plateau_property() {
    let (r, eps) = (0.2, 0.3);
    let spec = DisorderSpec::bernoulli(r, eps, 1010);
    let opts = RunOptions::default();
    let mid: Vec<f64> = (3..=7).map(|k| f64::from(k) / 10.0).collect();
    let mut maxima = Vec::new();
    for &len in &[1024usize, 4096, 8192] {
        let est = flux_curve(&spec, &mid, len, 2e4, 2, 21, opts).unwrap();
        let top = est.curve.max_sample();
        maxima.push((len, top.value, top.stderr));
    }
    let monotone = maxima
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 + 2.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt());
    let near = (maxima[2].1 - r / 4.0).abs() <= 0.03;

    let full: Vec<f64> = (1..=19).map(|k| f64::from(k) / 20.0).collect();
    let curve = flux_curve(&spec, &full, 8192, 2e4, 2, 22, opts).unwrap().curve;
    let width = detect_flat_segment(&curve, r, Some(0.01)).ok().and_then(|s| s.width());

    let d = dilute_targets(r).unwrap();
    let probes = [0.1, 0.5, 0.9];
    let dilute = flux_curve(&DisorderSpec::bernoulli(r, 1e-3, 1011), &probes, 8192, 2e4, 2, 23, opts).unwrap();
    let dilute_gap = dilute
        .curve
        .samples
        .iter()
        .map(|s| (s.value - d.f0(s.x)).abs())
        .fold(0.0, f64::max);
    let dilute_ok = dilute_gap <= 0.01;

    let pass = monotone && near && dilute_ok;
    let fmt_max: Vec<String> = maxima.iter().map(|(l, v, s)| format!("L={l}: {v:.4}±{s:.4}")).collect();
    verdict(
        10,
        pass,
        &format!(
            "max flux {}; non-increasing {monotone}; within 0.03 of r/4 {near}; plateau width at band 0.01: {}; \
             eps=1e-3 max |f - f_0| at rho in {{0.1,0.5,0.9}} = {dilute_gap:.4}",
            fmt_max.join(", "),
            width.map_or("none detected".to_string(), |w| format!("{w:.3}"))
        ),
    );
    assert!(pass);
}

#[test]
fn homogeneous_rates_have_unit_passage_scale() {
    let services = ServiceField::new(4);
    let t = plateau::lpp::passage_time(&Homogeneous(1.0), &services, (0, 0), (0, 0)).unwrap();
    assert!(t > 0.0);
}
