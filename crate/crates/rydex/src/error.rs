use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Param { field: &'static str, reason: String },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("singular elimination matrix at z = {z} um, omega = {omega} rad/us")]
    Singular { z: f64, omega: f64 },

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("spectral grid does not cover the pulse band: {0}")]
    BandCoverage(String),

    #[error("Courant number {courant} exceeds the stability limit {limit}")]
    Cfl { courant: f64, limit: f64 },

    #[error("grid needs {needed} bytes, cap is {cap}")]
    MemoryCap { needed: usize, cap: usize },

    #[error("outside the domain of definition: {0}")]
    Domain(String),

    #[error("root not bracketed on ({lo}, {hi})")]
    RootNotBracketed { lo: f64, hi: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Param { field, reason: reason.into() }
    }

    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Param { .. } | Error::Cfl { .. } | Error::MemoryCap { .. } | Error::BandCoverage(_)
        )
    }
}
