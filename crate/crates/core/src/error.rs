use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice {width}x{height}: {reason}")]
    InvalidLattice {
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("site ({x}, {y}) lies outside the {width}x{height} lattice")]
    SiteOutOfRange {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("mask file {path}: {reason}")]
    MaskFormat { path: PathBuf, reason: String },

    #[error("operation requires a nonempty mask")]
    EmptyMask,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("system of {sites} sites exceeds the dense limit of {limit} sites")]
    TooLarge { sites: usize, limit: usize },

    #[error("observable rejected: {0}")]
    InvalidObservable(String),

    #[error("node {0} is not part of the tree")]
    InvalidNode(usize),

    #[error(
        "Krylov exponential did not converge: residual {residual:.3e} > tol {tol:.3e} \
         with {dim} vectors at t = {time}"
    )]
    KrylovNonConvergence {
        residual: f64,
        tol: f64,
        dim: usize,
        time: f64,
    },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
