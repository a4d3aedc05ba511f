use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points for slope (got {0}, need at least 2)")]
    InsufficientPoints(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("latent floor is {floor}: {detail}")]
    LatentFloor { floor: usize, detail: String },

    #[error("would violate latent floor: cannot remove {requested} of {latent_dim} latent dims")]
    WouldViolateFloor { requested: usize, latent_dim: usize },

    #[error("latent index {index} out of range for latent dim {latent_dim}")]
    IndexOutOfRange { index: usize, latent_dim: usize },

    #[error("silhouette undefined for k=1")]
    SingleCluster,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("epoch {got} is not after the last recorded epoch {last}")]
    EpochOrder { got: usize, last: usize },

    #[error("not an IDX file: {0}")]
    NotIdx(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {path}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context,
            path: path.into(),
            source,
        }
    }
}
