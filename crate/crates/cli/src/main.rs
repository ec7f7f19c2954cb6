//! `plateau`: batch driver for the disordered-TASEP laboratory.

mod config;
mod jobs;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{Command, ConfigError, ExperimentConfig, Job};
use output::{sha256_file, sha256_str, svg_from_csv, write_csv, Manifest, OutputEntry};

#[derive(Debug, Parser)]
#[command(name = "plateau", version, about = "Disordered TASEP experiments")]
struct Cli {
    /// JSON experiment config; defaults are used when absent.
    #[arg(long, global = true, env = "PLATEAU_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, env = "PLATEAU_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "PLATEAU_OUT", default_value = "plateau-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PLATEAU_WORKERS")]
    workers: Option<usize>,
    /// Also render SVG plots from the CSV outputs.
    #[arg(long, global = true, env = "PLATEAU_PLOT")]
    plot: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Quenched ring flux curve.
    FluxCurve,
    /// LPP shape function estimate.
    Shape,
    /// Stationary currents of sampled open boxes.
    MaxCurrent,
    /// Empirical probe of the maximal-current tail assumption.
    AssumptionH,
    /// Scale table and the y_n, rho_n, J_n, Delta_n sequences.
    Renorm,
    /// Sweep of the dilute limit over epsilon.
    DiluteScan,
    /// Flat segment of a flux curve read from CSV.
    FlatSegment,
    /// Fast invariant checks.
    Verify,
    /// Re-run the config stored in a manifest and compare CSV digests.
    Replay { manifest: PathBuf },
    /// Print the default config document of a command.
    DefaultConfig {
        #[arg(value_enum)]
        command: Command,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<plateau::Error>() {
        Some(plateau::Error::Validation { .. } | plateau::Error::EmptyPathSet { .. }) => 2,
        Some(plateau::Error::Regime(_)) => 3,
        Some(plateau::Error::Budget(_)) => 4,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(ConfigError("workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cmd = match &cli.command {
        Sub::FluxCurve => Command::FluxCurve,
        Sub::Shape => Command::Shape,
        Sub::MaxCurrent => Command::MaxCurrent,
        Sub::AssumptionH => Command::AssumptionH,
        Sub::Renorm => Command::Renorm,
        Sub::DiluteScan => Command::DiluteScan,
        Sub::FlatSegment => Command::FlatSegment,
        Sub::Verify => Command::Verify,
        Sub::Replay { manifest } => return replay(cli, manifest),
        Sub::DefaultConfig { command } => {
            let cfg = ExperimentConfig {
                job: Job::defaults(*command),
                master_seed: cli.seed.unwrap_or(0),
            };
            println!("{}", cfg.to_json());
            return Ok(true);
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = ExperimentConfig::from_json(&text)?;
            if cfg.job.command() != cmd {
                bail!(ConfigError(format!(
                    "command: config is for `{}` but `{}` was requested",
                    cfg.job.command().name(),
                    cmd.name()
                )));
            }
            cfg
        }
        None => ExperimentConfig {
            job: Job::defaults(cmd),
            master_seed: 0,
        },
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let (manifest, ok) = execute(&cfg, &cli.out, cli.plot)?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    for o in &manifest.outputs {
        println!("wrote {}", cli.out.join(&o.file).display());
    }
    Ok(ok)
}

/// Runs `cfg`, staging every file before moving it into `out`.
fn execute(cfg: &ExperimentConfig, out: &Path, plot: bool) -> Result<(Manifest, bool)> {
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let outcome = jobs::run(cfg)?;
    let name = cfg.job.command().name();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let staging = out.join(format!(".partial-{name}"));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let written = (|| -> Result<Manifest> {
        let mut outputs = Vec::new();
        for table in &outcome.tables {
            let path = write_csv(table, &staging)?;
            outputs.push(OutputEntry {
                file: table.file_name(),
                sha256: sha256_file(&path)?,
            });
            if let (true, Some((x, ys))) = (plot, &table.plot) {
                let svg_name = format!("{}.svg", table.name);
                let svg_path = staging.join(&svg_name);
                fs::write(&svg_path, svg_from_csv(&path, *x, ys)?)?;
                outputs.push(OutputEntry {
                    file: svg_name,
                    sha256: sha256_file(&svg_path)?,
                });
            }
        }
        let config = cfg.to_value();
        let manifest = Manifest {
            tool: "plateau".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: name.into(),
            config_sha256: sha256_str(&serde_json::to_string(&config)?),
            config,
            master_seed: cfg.master_seed,
            workers: rayon::current_num_threads(),
            started_unix,
            wall_clock_secs: clock.elapsed().as_secs_f64(),
            outputs,
            summary: outcome.summary.clone(),
        };
        fs::write(
            staging.join(format!("{name}.manifest.json")),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(manifest)
    })();
    let manifest = match written {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    for entry in fs::read_dir(&staging)? {
        let entry = entry?;
        fs::rename(entry.path(), out.join(entry.file_name()))?;
    }
    fs::remove_dir(&staging)?;
    Ok((manifest, outcome.ok))
}

fn replay(cli: &Cli, manifest_path: &Path) -> Result<bool> {
    let original = Manifest::read(manifest_path)?;
    let cfg = ExperimentConfig::from_json(&original.config.to_string())?;
    let out = if cli.out == Path::new("plateau-out") {
        manifest_path.parent().unwrap_or(Path::new(".")).join("replay")
    } else {
        cli.out.clone()
    };
    let (fresh, _) = execute(&cfg, &out, false)?;
    let mut identical = true;
    for o in original.outputs.iter().filter(|o| o.file.ends_with(".csv")) {
        let now = fresh.outputs.iter().find(|f| f.file == o.file).map(|f| f.sha256.as_str());
        let same = now == Some(o.sha256.as_str());
        identical &= same;
        println!("{} {}", if same { "identical" } else { "DIFFERS" }, o.file);
    }
    Ok(identical)
}
