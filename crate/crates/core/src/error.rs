use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("face {0} is a boundary face and has no element patch")]
    BoundaryFace(usize),

    #[error(
        "could not isolate a height direction on cell [{lo:?}, {hi:?}] after {depth} subdivisions; \
         the mesh is too coarse to resolve the interface"
    )]
    GeometryResolution { lo: [f64; 2], hi: [f64; 2], depth: usize },

    #[error("active mesh is empty")]
    EmptyActiveMesh,

    #[error("point ({0}, {1}) is not located in the active mesh")]
    PointNotInActiveMesh(f64, f64),

    #[error(
        "no large elements (threshold {delta}); refine the mesh, lower the threshold, \
         or use full stabilization"
    )]
    NoLargeElements { delta: f64 },

    #[error("element {element} is not face-connected to a large element within {max_path} faces")]
    MacroPathTooLong { element: usize, max_path: usize },

    #[error("system matrix is singular (slab {slab:?}): {reason}")]
    Singular { slab: Option<usize>, reason: String },

    #[error("linear solve failed: relative residual {residual:e} above tolerance")]
    SolveResidual { residual: f64 },

    #[error("non-finite value detected in {0}")]
    NonFinite(&'static str),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
