//! Shared fixtures for the kernel benchmarks.

use plateau::env::sample_environment;
use plateau::renorm::{build_scales, default_y_max, g_initial};
use plateau::{ConcaveCurve, DisorderSpec, Environment, OpenSystem, RenormParams, ScaleTable};

/// Bernoulli disorder with slow-site rate 0.2 and density 0.3.
pub fn disorder() -> DisorderSpec {
    DisorderSpec::bernoulli(0.2, 0.3, 7)
}

/// `disorder()` restricted to `len` sites.
pub fn ring_env(len: usize) -> Environment {
    sample_environment(&disorder(), 0, len as i64 - 1).expect("valid window")
}

/// Open box with `sites` particle sites drawn from the same disorder.
pub fn open_box(sites: usize) -> OpenSystem {
    let env = sample_environment(&DisorderSpec::bernoulli(0.5, 0.3, 11), 0, sites as i64).expect("valid window");
    OpenSystem::from_env(&env).expect("valid box")
}

/// Default scale table with the first-level curve for `sigma = +1`.
pub fn renorm_start(n_max: usize) -> (ScaleTable, ConcaveCurve) {
    let table = build_scales(&RenormParams::default(), n_max).expect("default scales");
    let g = g_initial(1, default_y_max(&table, n_max)).expect("initial curve");
    (table, g)
}
