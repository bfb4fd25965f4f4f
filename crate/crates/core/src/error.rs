use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate link geometry between UAV {uav} and O-RU {oru}: zero 3-D distance")]
    DegenerateGeometry { uav: usize, oru: usize },

    #[error("UAV height {0} m is outside the supported aerial band (22.5, 300] m")]
    HeightOutOfBand(f64),

    #[error("non-positive link distance {0} m")]
    NonPositiveDistance(f64),

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("association infeasible: {uavs} UAVs exceed total capacity {capacity} (L x tau_p)")]
    AssociationInfeasible { uavs: usize, capacity: usize },

    #[error("empty SE vector")]
    EmptyVector,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
