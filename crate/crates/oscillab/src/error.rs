//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or parameter lies outside the mathematical domain of an
    /// operation (e.g. `t = 0` where the phase has a pole).
    #[error("domain error: {0}")]
    Domain(String),

    /// Scale parameters violate a required ordering such as `R <= lambda`.
    #[error("argument error: {0}")]
    Argument(String),

    /// A quadrature grid is too coarse for the oscillation it must resolve.
    #[error("quadrature resolution error: {0}")]
    Resolution(String),

    /// Array shapes do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A discrete point set fails its declared separation.
    #[error("separation violation: {0}")]
    Separation(String),

    /// Gradients of a variety are numerically rank deficient at a sample.
    #[error("ill-conditioned gradient: {0}")]
    IllConditioned(String),

    /// Weighted point data admits no balanced bisection.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// The cellular/algebraic dichotomy failed both branches.
    #[error("neither case holds: {0}")]
    NeitherCase(String),

    /// A rescaled evaluation point left the admissible grid.
    #[error("mapped point out of grid: {0}")]
    OutOfGrid(String),

    /// An experiment could not construct its required input.
    #[error("construction error: {0}")]
    Construction(String),

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
