//! Piecewise polynomial approximation on adaptively refined meshes.
//!
//! The crate builds partitions of an interval or a planar domain by greedy
//! refinement: the element with the largest local approximation error is
//! split, and the split direction is chosen by a per-strategy decision rule.
//! Isotropic strategies (dyadic intervals, quad-split, newest-vertex and
//! longest-edge bisection) keep elements uniformly shaped; anisotropic
//! strategies (rectangle axis splits, triangle vertex bisections) let the
//! decision rule stretch elements along the directions where the target
//! function varies slowly.
//!
//! The main entry point is [`refine::run_to_n`] together with a
//! [`targets::TargetFunction`] and a [`refine::RefineConfig`]. Supporting
//! modules expose the building blocks: local error estimation
//! ([`localerr`]), shape functions and adaptation measures ([`shape`]),
//! convergence studies ([`analysis`]) and file formats plus rendering
//! ([`io`]).

pub mod analysis;
pub mod geometry;
pub mod io;
pub mod localerr;
pub mod refine;
pub mod shape;
pub mod targets;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("invalid target parameters for `{name}`: {reason}")]
    TargetParams { name: String, reason: String },
    #[error("degenerate form: {0}")]
    DegenerateForm(String),
    #[error("no shape constant stored for p={p}, sign {sign}")]
    MissingKappa { p: String, sign: char },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("slope fit needs at least {need} records, got {got}")]
    TooFewRecords { need: usize, got: usize },
    #[error("slope fit requires positive errors and sizes (record {index})")]
    NonPositiveRecord { index: usize },
    #[error("derivatives unavailable for this target")]
    MissingDerivatives,
    #[error("bitstream decode failed at bit {bit}: {reason}")]
    Decode { bit: usize, reason: String },
    #[error("{path}: {reason}")]
    FileFormat { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }

    chapter!(elements, "elements.md");
    chapter!(local_errors, "local-errors.md");
    chapter!(one_dimension, "one-dimension.md");
    chapter!(shape_functions, "shape-functions.md");
    chapter!(refinement, "refinement.md");
    chapter!(experiments, "experiments.md");
    chapter!(files_and_cli, "files-and-cli.md");
}
