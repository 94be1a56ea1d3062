use thiserror::Error;

/// Errors raised while building or transforming models.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("factor {factor}: member {var} listed twice")]
    DuplicateMember { factor: usize, var: usize },
    #[error("factor {factor}: table has {got} entries, expected {expected}")]
    TableSize { factor: usize, got: usize, expected: usize },
    #[error("factor {factor}: entry {index} is negative ({value})")]
    NegativeEntry { factor: usize, index: usize, value: f64 },
    #[error("factor {factor}: entry index {index} out of range (table size {size})")]
    IndexOutOfRange { factor: usize, index: usize, size: usize },
    #[error("variable {var}: cardinality {card} disagrees with earlier declaration {prev}")]
    CardinalityConflict { var: usize, card: usize, prev: usize },
    #[error("variable {var}: cardinality must be at least 2, got {card}")]
    Cardinality { var: usize, card: usize },
    #[error("variable {0} does not appear in any factor")]
    UnusedVariable(usize),
    #[error("factor {factor} references variable {var} outside 0..{num_vars}")]
    UnknownVariable { factor: usize, var: usize, num_vars: usize },
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("{0}")]
    Invalid(String),
}

/// Errors raised by exact enumeration.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error("state space of {states:e} configurations exceeds the enumeration cap {cap:e}")]
    StateSpace { states: f64, cap: f64 },
    #[error("perturbation target ({var}, {state}) invalid: {msg}")]
    Target { var: usize, state: usize, msg: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Numeric failures of the belief and response solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum InferenceError {
    #[error("non-finite value in outer region {region} after {iteration} sweeps")]
    NonFinite { region: usize, iteration: usize },
    #[error("inner region {region}: k + c = 0, belief update undefined")]
    DegenerateCounting { region: usize },
    #[error("invalid region graph: {0}")]
    RegionGraph(String),
    #[error("lambda vector has {got} entries, expected {expected}")]
    LambdaLength { got: usize, expected: usize },
    #[error("response solve failed: {0}")]
    Response(String),
    #[error("{0}")]
    Unsupported(String),
}

/// Errors raised while building constraint sets or updating multipliers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConstraintError {
    #[error("pair ({0}, {1}) is not covered by any outer region")]
    Uncovered(usize, usize),
    #[error("regime {regime} is not available for {approx}")]
    RegimeMismatch { regime: String, approx: String },
    #[error("variable {0} has degenerate single-variable support")]
    DegenerateSupport(usize),
    #[error("vanishing diagonal response for constraint {0}")]
    VanishingDiagonal(usize),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors from the closed-form fully connected solver.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum FcError {
    #[error("invalid fully connected model: {0}")]
    Model(String),
    #[error("singular inverse response (a-b)(a+(N-1)b) = {0}")]
    Singular(f64),
    #[error("no constrained solution found at T = {0}")]
    NoSolution(f64),
}

/// Errors from model generation, sweeps and aggregation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum HarnessError {
    #[error("invalid generator input: {0}")]
    Generator(String),
    #[error("could not sample a simple 3-regular graph in {0} attempts")]
    RejectionCap(usize),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("temperature grids differ between instances")]
    GridMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
