use thiserror::Error;

/// Errors raised by the blow-up library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("generators are not bracket-closed at the given ansatz degree (residual {residual:.3e})")]
    NotBracketClosed { residual: f64 },

    #[error("no regular point was found along any approach ray")]
    NoRegularApproach,

    #[error("conjugated element is not in the algebra span (residual {residual:.3e})")]
    NotInAlgebra { residual: f64 },

    #[error("arrows are not composable (base gap {base_gap:.3e}, subspace gap {subspace_gap:.3e})")]
    NotComposable { base_gap: f64, subspace_gap: f64 },

    #[error("flow left the admissible region (|z| = {norm:.3e})")]
    FlowEscape { norm: f64 },

    #[error("leaf class could not be resolved by collocation (residual {residual:.3e})")]
    ClassUnresolved { residual: f64 },

    #[error("leaf distribution changed rank from {expected} to {got} at t = {location:?}")]
    RankDrop {
        expected: usize,
        got: usize,
        location: Vec<f64>,
    },

    #[error("algebra basis is invalid: {0}")]
    InvalidAlgebra(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
