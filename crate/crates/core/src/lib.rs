//! Tools for designing network design spaces.
//!
//! * [`netspec`]: network structure specs, validation, group compatibility.
//! * [`space`]: design space definitions (AnyNetX A to E, RegNet and its
//!   constrained variant), constraint predicates and size estimates.
//! * [`quantlin`]: quantized linear width rule and its grid-search fit.
//! * [`complexity`]: analytic flops, parameters and activations.
//! * [`sampler`]: seeded population sampling inside a flop window.
//! * [`popstats`]: error EDFs, empirical bootstrap, random search efficiency
//!   and complexity trends.
//! * [`evalstore`]: population files, error ingestion, surrogate errors.
//! * [`report`]: CSV and SVG output.

// `!(x > y)` is used on purpose to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
mod error;
pub mod evalstore;
pub mod netspec;
pub mod popstats;
pub mod quantlin;
pub mod report;
pub mod sampler;
pub mod space;

pub use error::{Error, Result};

pub use complexity::{network_metrics, ComplexityReport};
pub use evalstore::{spec_hash, PopulationFile, PopulationSample};
pub use netspec::{AnyNetSpec, BlockType, RegNetParams, StageSpec, StemType};
pub use space::{design_space_size, DesignSpaceDef};

