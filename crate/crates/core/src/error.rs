use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "exclusion sampling gave up after {attempts} attempts \
         (empirical rejection rate {rejection_rate:.6})"
    )]
    RetriesExhausted { attempts: usize, rejection_rate: f64 },

    #[error("time {t} outside [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("pair ({i}, {j}) collided {count} times within {window:e}: numerical Zeno cascade")]
    Zeno {
        i: u32,
        j: u32,
        count: usize,
        window: f64,
    },

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("singular Gram matrix for the collision invariants")]
    SingularGram,

    #[error("dt = {dt} exceeds the stability budget (max loss rate {max_rate:.4}); use dt <= {max_dt:.6}")]
    Stability { dt: f64, max_rate: f64, max_dt: f64 },

    #[error("Picard iteration diverging (last distance {distance:e}); estimated horizon t ~ {horizon:.4}")]
    Divergence { distance: f64, horizon: f64 },

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
