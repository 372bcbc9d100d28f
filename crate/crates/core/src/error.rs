use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimension must be 1 or 2, got {0}")]
    InvalidDimension(usize),
    #[error("each axis needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("domain interval [{0}, {1}] is empty or inverted")]
    InvalidDomain(f64, f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field contains a non-finite value at node {0}")]
    NonFiniteValue(usize),
    #[error("density has non-positive total mass {0}")]
    NonPositiveMass(f64),
    #[error("density has a negative value {value} at node {node}")]
    NegativeDensity { node: usize, value: f64 },
    #[error("all weights are zero")]
    ZeroWeights,
    #[error("Sinkhorn did not converge in {iterations} iterations (last marginal residual {residual:.3e})")]
    SinkhornMaxIter { iterations: usize, residual: f64 },
    #[error("numerical under/overflow in plain-domain Sinkhorn; retry with log_domain = true")]
    SinkhornOverflow,
    #[error("barycenter fixed point did not converge in {iterations} iterations (last change {change:.3e})")]
    BarycenterMaxIter { iterations: usize, change: f64 },
    #[error("correlation matrix is numerically zero")]
    ZeroMatrix,
    #[error("eigendecomposition did not converge")]
    EigenNonConvergence,
    #[error("matrix factorization failed: {0}")]
    Factorization(String),
    #[error("linear solver did not converge: {0}")]
    SolverNonConvergence(String),
    #[error("Newton iteration did not converge after {0} steps")]
    NewtonNonConvergence(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mapping Jacobian determinant {det:.3e} is non-positive at node {node}")]
    NonPositiveDeterminant { node: usize, det: f64 },
    #[error("offline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("artifact format error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
