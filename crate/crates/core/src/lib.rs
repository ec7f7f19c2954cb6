//! Disordered TASEP and wedge last-passage percolation.
//!
//! The crate simulates exclusion processes in random environments, computes
//! passage times on bounded boxes, runs the multiscale renormalization
//! recursion and compares flux curves against the dilute-limit reference.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod env;
pub mod error;
pub mod flux;
pub mod lpp;
pub mod maxcurrent;
pub mod renorm;
pub mod seed;
pub mod stats;
pub mod tasep;

pub use env::{DisorderSpec, Environment, QKind};
pub use error::{Error, Result};
pub use flux::{FluxCurve, FluxSample, Provenance, ReferenceParams};
pub use lpp::{Point, RateField, Services};
pub use maxcurrent::OpenSystem;
pub use renorm::{ConcaveCurve, RenormParams, ScaleTable, SequenceReport};
pub use tasep::Topology;
