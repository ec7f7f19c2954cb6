//! Experiment configuration documents.

use std::path::PathBuf;

use plateau::maxcurrent::DENSE_MAX;
use plateau::{DisorderSpec, RenormParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Raised for malformed or inconsistent configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::error::Error for ConfigError {}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    FluxCurve,
    Shape,
    MaxCurrent,
    AssumptionH,
    Renorm,
    DiluteScan,
    FlatSegment,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::FluxCurve => "flux-curve",
            Command::Shape => "shape",
            Command::MaxCurrent => "max-current",
            Command::AssumptionH => "assumption-h",
            Command::Renorm => "renorm",
            Command::DiluteScan => "dilute-scan",
            Command::FlatSegment => "flat-segment",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxCurveParams {
    pub disorder: DisorderSpec,
    pub densities: Vec<f64>,
    pub len: usize,
    pub t_max: f64,
    pub replicas: usize,
    pub burn_in: f64,
    pub batches: usize,
}

impl Default for FluxCurveParams {
    fn default() -> Self {
        Self {
            disorder: DisorderSpec::bernoulli(0.2, 0.3, 1),
            densities: (1..20).map(|k| f64::from(k) / 20.0).collect(),
            len: 1024,
            t_max: 2e3,
            replicas: 2,
            burn_in: 0.5,
            batches: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeParams {
    pub disorder: DisorderSpec,
    pub x: f64,
    pub y: f64,
    pub n: u64,
    pub replicas: usize,
    pub cell_budget: u64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            disorder: DisorderSpec::homogeneous(1),
            x: 1.0,
            y: 1.0,
            n: 200,
            replicas: 8,
            cell_budget: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaxCurrentParams {
    pub disorder: DisorderSpec,
    /// Particle sites `N`; the window has `N+1` sites.
    pub sites: usize,
    pub environments: usize,
    pub mc_t_max: f64,
}

impl Default for MaxCurrentParams {
    fn default() -> Self {
        Self {
            disorder: DisorderSpec::bernoulli(0.5, 0.3, 1),
            sites: 6,
            environments: 10,
            mc_t_max: 2e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionHParams {
    pub disorder: DisorderSpec,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub c: f64,
    pub sizes: Vec<usize>,
    pub replicas: usize,
    pub cutoff: usize,
    pub mc_t_max: f64,
}

impl Default for AssumptionHParams {
    fn default() -> Self {
        Self {
            disorder: DisorderSpec::bernoulli(0.5, 0.1, 1),
            a: 1.0,
            b: 1.0,
            beta: 1.0,
            c: 1.0,
            sizes: vec![2, 4, 6, 8],
            replicas: 200,
            cutoff: DENSE_MAX,
            mc_t_max: 2e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenormJob {
    pub params: RenormParams,
    pub n_max: usize,
}

impl Default for RenormJob {
    fn default() -> Self {
        Self {
            params: RenormParams::default(),
            n_max: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiluteScanParams {
    pub template: RenormParams,
    pub epsilons: Vec<f64>,
    pub n_max: usize,
    pub y_probe: Option<f64>,
}

impl Default for DiluteScanParams {
    fn default() -> Self {
        Self {
            template: RenormParams::default(),
            epsilons: vec![1e-6, 1e-8, 1e-10, 1e-12, 1e-14],
            n_max: 4,
            y_probe: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlatSegmentParams {
    /// CSV with columns `rho,flux,stderr`, as written by `flux-curve`.
    pub input: PathBuf,
    pub r: f64,
    pub band: Option<f64>,
}

impl Default for FlatSegmentParams {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            r: 0.2,
            band: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    FluxCurve(FluxCurveParams),
    Shape(ShapeParams),
    MaxCurrent(MaxCurrentParams),
    AssumptionH(AssumptionHParams),
    Renorm(RenormJob),
    DiluteScan(DiluteScanParams),
    FlatSegment(FlatSegmentParams),
    Verify(VerifyParams),
}

impl Job {
    pub fn command(&self) -> Command {
        match self {
            Job::FluxCurve(_) => Command::FluxCurve,
            Job::Shape(_) => Command::Shape,
            Job::MaxCurrent(_) => Command::MaxCurrent,
            Job::AssumptionH(_) => Command::AssumptionH,
            Job::Renorm(_) => Command::Renorm,
            Job::DiluteScan(_) => Command::DiluteScan,
            Job::FlatSegment(_) => Command::FlatSegment,
            Job::Verify(_) => Command::Verify,
        }
    }

    pub fn defaults(cmd: Command) -> Self {
        match cmd {
            Command::FluxCurve => Job::FluxCurve(FluxCurveParams::default()),
            Command::Shape => Job::Shape(ShapeParams::default()),
            Command::MaxCurrent => Job::MaxCurrent(MaxCurrentParams::default()),
            Command::AssumptionH => Job::AssumptionH(AssumptionHParams::default()),
            Command::Renorm => Job::Renorm(RenormJob::default()),
            Command::DiluteScan => Job::DiluteScan(DiluteScanParams::default()),
            Command::FlatSegment => Job::FlatSegment(FlatSegmentParams::default()),
            Command::Verify => Job::Verify(VerifyParams::default()),
        }
    }

    fn parse(cmd: Command, params: Value) -> Result<Self, ConfigError> {
        fn typed<T: serde::de::DeserializeOwned>(cmd: Command, v: Value) -> Result<T, ConfigError> {
            serde_json::from_value(v).map_err(|e| ConfigError(format!("params of {}: {e}", cmd.name())))
        }
        Ok(match cmd {
            Command::FluxCurve => Job::FluxCurve(typed(cmd, params)?),
            Command::Shape => Job::Shape(typed(cmd, params)?),
            Command::MaxCurrent => Job::MaxCurrent(typed(cmd, params)?),
            Command::AssumptionH => Job::AssumptionH(typed(cmd, params)?),
            Command::Renorm => Job::Renorm(typed(cmd, params)?),
            Command::DiluteScan => Job::DiluteScan(typed(cmd, params)?),
            Command::FlatSegment => Job::FlatSegment(typed(cmd, params)?),
            Command::Verify => Job::Verify(typed(cmd, params)?),
        })
    }

    fn params_value(&self) -> Value {
        let v = match self {
            Job::FluxCurve(p) => serde_json::to_value(p),
            Job::Shape(p) => serde_json::to_value(p),
            Job::MaxCurrent(p) => serde_json::to_value(p),
            Job::AssumptionH(p) => serde_json::to_value(p),
            Job::Renorm(p) => serde_json::to_value(p),
            Job::DiluteScan(p) => serde_json::to_value(p),
            Job::FlatSegment(p) => serde_json::to_value(p),
            Job::Verify(p) => serde_json::to_value(p),
        };
        v.expect("config types serialize")
    }
}

/// One run: the command, its full parameter set and the master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub job: Job,
    pub master_seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    command: Command,
    #[serde(default)]
    master_seed: u64,
    #[serde(default)]
    params: Option<Value>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: Document = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        let params = doc.params.unwrap_or_else(|| Value::Object(Default::default()));
        Ok(Self {
            job: Job::parse(doc.command, params)?,
            master_seed: doc.master_seed,
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(Document {
            command: self.job.command(),
            master_seed: self.master_seed,
            params: Some(self.job.params_value()),
        })
        .expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_command() {
        for cmd in [
            Command::FluxCurve,
            Command::Shape,
            Command::MaxCurrent,
            Command::AssumptionH,
            Command::Renorm,
            Command::DiluteScan,
            Command::FlatSegment,
            Command::Verify,
        ] {
            let cfg = ExperimentConfig {
                job: Job::defaults(cmd),
                master_seed: 42,
            };
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ExperimentConfig::from_json(r#"{"command":"renorm","params":{"n_maxx":3}}"#).unwrap_err();
        assert!(err.0.contains("n_maxx"), "{}", err.0);
        let err = ExperimentConfig::from_json(r#"{"command":"flux-curve","params":{"disorder":{"r":0.2}}}"#).unwrap_err();
        assert!(err.0.contains("missing field"), "{}", err.0);
        assert!(ExperimentConfig::from_json(r#"{"command":"nope"}"#).is_err());
    }

    #[test]
    fn missing_params_take_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"command":"renorm","params":{"n_max":3}}"#).unwrap();
        assert_eq!(
            cfg.job,
            Job::Renorm(RenormJob {
                n_max: 3,
                ..RenormJob::default()
            })
        );
    }
}
