use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported shape: A is {m}x{n}, L is {p}x{n}")]
    UnsupportedShape { m: usize, n: usize, p: usize },

    #[error("stacked matrix [A; L] is rank deficient (numerical rank {rank} < {n})")]
    RankDeficient { rank: usize, n: usize },

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("point is infeasible: ||y||_1 = {norm} exceeds tau = {tau}")]
    Infeasible { norm: f64, tau: f64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
