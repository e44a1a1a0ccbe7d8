//! Numerical laboratory for subset-state property testing.
//!
//! The crate gathers, behind one roof, the linear-algebraic and combinatorial
//! machinery needed to study how well flat (subset) quantum states and flat
//! classical distributions can be distinguished, certified, and attacked at
//! desk scale:
//!
//! - [`linalg`]: dense complex states, Hermitian operators, eigensolvers,
//!   trace distance, partial trace, entanglement entropy.
//! - [`ensembles`]: exact k-th moment operators of Haar and random-subset
//!   ensembles, their collision-free approximants, the dense-regime two-mode
//!   family, and the computational-basis measurement channel.
//! - [`johnson`]: Johnson-scheme basis matrices, closed-form spectra, and the
//!   trace-norm bookkeeping behind the moment-gap bounds.
//! - [`qprotocols`]: swap / symmetry / subset tests, tilted-collection
//!   analysis, the support-size certification pipeline, and the
//!   absolute-amplitude distinguisher.
//! - [`cprotocols`]: flat-distribution sampling, down-walks, KL machinery,
//!   certificate-fiber transcript pipelines, and the private-coin set tester.
//! - [`demerlin`]: proof-register averaging, the projector construction that
//!   removes a quantum witness, and the sequential-measurement union bound.
//! - [`prs`]: a toy keyed Feistel permutation, keyed subset states built from
//!   it, collision/overlap distinguishers, and cut-entropy profiles.

mod comb;
pub mod cprotocols;
pub mod ensembles;
pub mod linalg;
pub mod qprotocols;
pub mod rng;

pub use cprotocols::{DiscreteDistribution, FlatDistribution};
pub use ensembles::{DenseEnsembleParams, Exactness, MomentOperator, SubsetSpec, TupleIndexer};
pub use linalg::{Complex64, EigenDecomposition, HermitianOperator, StateVector};
pub use qprotocols::{ProtocolTranscript, StateCollection, Verdict};

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not Hermitian: deviation {deviation:.3e} exceeds tolerance {tolerance:.1e}")]
    NotHermitian { deviation: f64, tolerance: f64 },
    #[error("vector is not normalized: norm {norm} is off unity beyond {tolerance:.1e}")]
    NotNormalized { norm: f64, tolerance: f64 },
    #[error("budget exceeded: requested size {requested} exceeds limit {budget}")]
    BudgetExceeded { requested: usize, budget: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
