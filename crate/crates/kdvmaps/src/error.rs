use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("spectral parameter {0} hits a pole of the Lax matrix")]
    Pole(String),
    #[error("branch collision: the two roots of the potential constraint coincide")]
    BranchCollision,
    #[error("quadrature failed at node {node}")]
    Quadrature { node: f64 },
    #[error("quadrature did not converge (last two estimates differ by {diff:e})")]
    QuadratureNoConvergence { diff: f64 },
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("state norm {norm:e} exceeds the growth guard")]
    Range { norm: f64 },
    #[error("step {index} failed: {source}")]
    Step { index: usize, source: Box<Error> },
    #[error("lattice step at (m, n) = ({m}, {n}) failed: {source}")]
    LatticeStep { m: usize, n: usize, source: Box<Error> },
    #[error("integration crossed a singularity at t = {t}")]
    Singularity { t: f64 },
    #[error("integrator step size underflow at t = {t}")]
    Tolerance { t: f64 },
    #[error("root tracking failed: {0}")]
    RootTracking(String),
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
    #[error("period matrix has no positive definite imaginary part")]
    NotPositiveDefinite,
    #[error("unsupported genus {0}")]
    Genus(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_step(self, index: usize) -> Error {
        Error::Step { index, source: Box::new(self) }
    }

    pub(crate) fn at_site(self, m: usize, n: usize) -> Error {
        Error::LatticeStep { m, n, source: Box::new(self) }
    }
}
