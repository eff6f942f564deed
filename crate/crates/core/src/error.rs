use thiserror::Error;

/// Errors raised while reading or validating a mesh.
#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("malformed mesh file at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("degenerate cell {cell}: {msg}")]
    DegenerateCell { cell: usize, msg: String },
    #[error("inconsistent face sharing: edge ({a}, {b}) is shared by {count} cells")]
    InconsistentFace { a: usize, b: usize, count: usize },
    #[error("cell {cell} is not a simple polygon")]
    NonSimple { cell: usize },
}

/// Errors from the numerical kernels (assembly, solves, time stepping).
#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("layout mismatch: expected {expected} coefficients, found {found}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("singular local matrix on element {element}")]
    SingularLocalMatrix { element: usize },
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("blow-up at step {step}: |u| = {value}")]
    BlowUp { step: usize, value: f64 },
    #[error("non-finite reversal potential ({which})")]
    NonFiniteReversal { which: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Errors from configuration parsing and validation. Every variant names the
/// offending key.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error("material label {0} used by the mesh is absent from the material table")]
    MissingMaterial(u32),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

/// Top-level error for the simulation driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
