//! Runs one configured job and collects its tables.

use anyhow::{bail, Context, Result};
use plateau::checks;
use plateau::env::sample_environment;
use plateau::flux::{detect_flat_segment, FluxCurve, FluxSample, Provenance};
use plateau::lpp::{homogeneous_shape, shape_estimate};
use plateau::maxcurrent::{
    assumption_h_probe, stationary_current_exact, stationary_current_mc, OpenSystem, ProbeOptions, EXACT_CUTOFF,
};
use plateau::renorm::{build_scales, dilute_scan, rho_j_sequences};
use plateau::seed::derive_seed;
use plateau::tasep::{flux_curve, RunOptions};
use plateau::DisorderSpec;
use serde_json::{json, Value};

use crate::config::{
    AssumptionHParams, ConfigError, DiluteScanParams, ExperimentConfig, FlatSegmentParams, FluxCurveParams, Job,
    MaxCurrentParams, RenormJob, ShapeParams,
};
use crate::output::{num, opt, Table};

pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    /// False when a check-style job found a failure.
    pub ok: bool,
}

impl Outcome {
    fn data(tables: Vec<Table>, summary: Value) -> Self {
        Self {
            tables,
            summary,
            ok: true,
        }
    }
}

/// The disorder seed of a run mixes the configured seed with the master seed.
fn disorder(spec: &DisorderSpec, master: u64) -> DisorderSpec {
    spec.with_seed(derive_seed(master, "disorder", spec.seed))
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.master_seed;
    match &cfg.job {
        Job::FluxCurve(p) => run_flux_curve(p, seed),
        Job::Shape(p) => run_shape(p, seed),
        Job::MaxCurrent(p) => run_max_current(p, seed),
        Job::AssumptionH(p) => run_assumption_h(p, seed),
        Job::Renorm(p) => run_renorm(p),
        Job::DiluteScan(p) => run_dilute_scan(p),
        Job::FlatSegment(p) => run_flat_segment(p),
        Job::Verify(_) => Ok(run_verify(seed)),
    }
}

fn run_flux_curve(p: &FluxCurveParams, seed: u64) -> Result<Outcome> {
    let opts = RunOptions {
        burn_in: p.burn_in,
        batches: p.batches,
    };
    let est = flux_curve(
        &disorder(&p.disorder, seed),
        &p.densities,
        p.len,
        p.t_max,
        p.replicas,
        derive_seed(seed, "flux-curve", 0),
        opts,
    )?;
    let mut t = Table::new("flux_curve", vec!["rho", "flux", "stderr"]).with_plot(0, vec![1]);
    for s in &est.curve.samples {
        t.push(vec![num(s.x), num(s.value), num(s.stderr)]);
    }
    let top = est.curve.max_sample();
    Ok(Outcome::data(
        vec![t],
        json!({
            "symmetry_defect": est.symmetry_defect,
            "pooled_stderr": est.pooled_stderr,
            "max_flux": top.value,
            "argmax_rho": top.x,
            "concave_within_2_stderr": est.curve.is_concave(2.0 * top.stderr.max(1e-12)),
        }),
    ))
}

fn run_shape(p: &ShapeParams, seed: u64) -> Result<Outcome> {
    let est = shape_estimate(
        &disorder(&p.disorder, seed),
        p.x,
        p.y,
        p.n,
        p.replicas,
        derive_seed(seed, "shape", 0),
        u128::from(p.cell_budget),
    )?;
    let mut t = Table::new("shape", vec!["x", "y", "n", "replicas", "tau_hat", "stderr", "homogeneous_shape"]);
    t.push(vec![
        num(est.x),
        num(est.y),
        est.n.to_string(),
        est.replicas.to_string(),
        num(est.tau_hat),
        num(est.stderr),
        num(homogeneous_shape(p.x, p.y)),
    ]);
    Ok(Outcome::data(vec![t], json!({ "tau_hat": est.tau_hat, "stderr": est.stderr })))
}

fn run_max_current(p: &MaxCurrentParams, seed: u64) -> Result<Outcome> {
    if p.sites == 0 || p.environments == 0 {
        bail!(ConfigError("sites and environments must be positive".into()));
    }
    let spec = disorder(&p.disorder, seed);
    let mut t = Table::new(
        "max_current",
        vec!["environment", "sites", "min_rate", "defects", "current", "stderr", "method"],
    );
    for k in 0..p.environments as u64 {
        let env = sample_environment(&spec.with_seed(derive_seed(spec.seed, "max-current", k)), 0, p.sites as i64)?;
        let sys = OpenSystem::from_env(&env)?;
        let (current, stderr, method) = if p.sites <= EXACT_CUTOFF {
            (stationary_current_exact(&sys)?.current, 0.0, "exact")
        } else {
            let mc = stationary_current_mc(&sys, p.mc_t_max, derive_seed(seed, "max-current-mc", k))?;
            (mc.estimate, mc.stderr, "monte-carlo")
        };
        t.push(vec![
            k.to_string(),
            p.sites.to_string(),
            num(env.min_rate()),
            env.defect_count().to_string(),
            num(current),
            num(stderr),
            method.into(),
        ]);
    }
    Ok(Outcome::data(vec![t], json!({ "environments": p.environments })))
}

fn run_assumption_h(p: &AssumptionHParams, seed: u64) -> Result<Outcome> {
    let opts = ProbeOptions {
        cutoff: p.cutoff,
        mc_t_max: p.mc_t_max,
        seed: derive_seed(seed, "assumption-h", 0),
    };
    let rows = assumption_h_probe(&disorder(&p.disorder, seed), p.a, p.b, p.beta, p.c, &p.sizes, p.replicas, opts)?;
    let mut t = Table::new(
        "assumption_h",
        vec!["n", "threshold", "p_hat", "ci_lo", "ci_hi", "bound", "verdict", "exact"],
    )
    .with_plot(0, vec![2, 5]);
    for r in &rows {
        t.push(vec![
            r.n.to_string(),
            num(r.threshold),
            num(r.p_hat),
            num(r.ci_lo),
            num(r.ci_hi),
            num(r.bound),
            r.verdict.as_str().into(),
            r.exact.to_string(),
        ]);
    }
    Ok(Outcome::data(vec![t], json!({ "assumption_note": p.disorder.assumption_h_note() })))
}

fn run_renorm(p: &RenormJob) -> Result<Outcome> {
    let scales = build_scales(&p.params, p.n_max)?;
    let mut st = Table::new("scales", vec!["n", "ln_k", "k_exact", "l", "j", "delta", "zeta", "t"]);
    for lv in &scales.levels {
        st.push(vec![
            lv.n.to_string(),
            num(lv.k.ln),
            lv.k.exact.map_or_else(String::new, |k| k.to_string()),
            lv.l.to_string(),
            num(lv.j),
            num(lv.delta),
            num(lv.zeta),
            opt(lv.t),
        ]);
    }
    let rep = rho_j_sequences(&p.params, p.n_max)?;
    let mut t = Table::new(
        "renorm",
        vec![
            "n",
            "l",
            "y_n",
            "y_n_minus",
            "rho_plus",
            "rho_minus",
            "rho",
            "J",
            "delta_n",
            "delta_bound",
            "recursion_ok",
            "cumulative_bound",
            "cumulative_ok",
        ],
    )
    .with_plot(0, vec![6]);
    for r in &rep.rows {
        t.push(vec![
            r.n.to_string(),
            r.l.to_string(),
            num(r.y_n),
            num(r.y_n_minus),
            num(r.rho_plus),
            num(r.rho_minus),
            num(r.rho),
            num(r.j),
            num(r.delta),
            num(r.delta_bound),
            r.recursion_ok.to_string(),
            num(r.cumulative_bound),
            r.cumulative_ok.to_string(),
        ]);
    }
    Ok(Outcome::data(
        vec![t, st],
        json!({
            "constants": scales.constants,
            "lemma_regime": p.params.lemma_regime_holds(),
            "approximate_scales": scales.approximate,
            "delta_constant": rep.delta_constant,
            "y_max": rep.y_max,
        }),
    ))
}

fn run_dilute_scan(p: &DiluteScanParams) -> Result<Outcome> {
    let rows = dilute_scan(&p.template, &p.epsilons, p.n_max, p.y_probe)?;
    let mut t = Table::new(
        "dilute_scan",
        vec![
            "epsilon",
            "k1",
            "rho_1",
            "rho_limit",
            "j_limit",
            "product_defect",
            "y_probe",
            "g_n_at_y",
            "g1_at_y",
            "flagged",
            "error",
        ],
    );
    for r in &rows {
        t.push(vec![
            num(r.epsilon),
            r.k1.to_string(),
            num(r.rho_1),
            num(r.rho_limit),
            num(r.j_limit),
            num(r.product_defect),
            num(r.y_probe),
            num(r.g_n_at_y),
            num(r.g1_at_y),
            r.flagged.to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    let rho_c0 = plateau::flux::critical_density_dilute(p.template.r);
    Ok(Outcome::data(vec![t], json!({ "rho_c0": rho_c0 })))
}

fn read_flux_csv(path: &std::path::Path) -> Result<FluxCurve> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ConfigError(format!("input: column `{name}` missing")))
    };
    let (ci, cv, cs) = (col("rho")?, col("flux")?, col("stderr")?);
    let mut samples = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| ConfigError(format!("input: `{}` is not a number ({e})", &rec[i])))
        };
        samples.push(FluxSample {
            x: parse(ci)?,
            value: parse(cv)?,
            stderr: parse(cs)?,
        });
    }
    Ok(FluxCurve::new(samples, Provenance::Simulated)?)
}

fn run_flat_segment(p: &FlatSegmentParams) -> Result<Outcome> {
    if p.input.as_os_str().is_empty() {
        bail!(ConfigError("input: path to a flux CSV is required".into()));
    }
    let curve = read_flux_csv(&p.input)?;
    let seg = detect_flat_segment(&curve, p.r, p.band)?;
    let mut t = Table::new("flat_segment", vec!["rho_c", "width", "uncertainty", "band", "median_stderr"]);
    t.push(vec![
        opt(seg.rho_c),
        opt(seg.width()),
        num(seg.uncertainty),
        num(seg.band),
        num(seg.median_stderr),
    ]);
    Ok(Outcome::data(vec![t], json!({ "detected": seg.rho_c.is_some() })))
}

fn run_verify(seed: u64) -> Outcome {
    let results = checks::run_all(seed);
    let mut t = Table::new("verify", vec!["check", "pass", "detail"]);
    for c in &results {
        t.push(vec![c.name.clone(), c.pass.to_string(), c.detail.clone()]);
    }
    let failed: Vec<&str> = results.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    Outcome {
        tables: vec![t],
        summary: json!({ "checks": results.len(), "failed": failed }),
        ok: failed.is_empty(),
    }
}
