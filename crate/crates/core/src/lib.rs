//! Estimation of infinite-time averages of chaotic systems as weighted sums
//! of averages over reference measures: unstable periodic orbits (UPOs) and
//! finite chaotic trajectory segments ("snippets").
//!
//! The central object is the expansion
//!
//! ```text
//! E[a] ≈ Σ_p w_p E_p[a]
//! ```
//!
//! where `E_p[a]` is the average of an observable over reference measure `p`
//! and the weights `w_p` come from one of several schemes:
//!
//! - least-squares weighting (LSW): solve `(A + αI) w = b` where
//!   `A_pq` is a Gaussian-kernel correlation between measures and `b_q` is the
//!   chaotic average of the kernel observable attached to measure `q`;
//! - sparse non-negative LSW (Lawson–Hanson NNLS, then normalized);
//! - simplex-constrained LSW (projected gradient);
//! - Markov weights from a Voronoi partition around the reference sets;
//! - uniform weights;
//! - periodic orbit theory (POT) via a truncated spectral determinant.
//!
//! Everything is wired to the Lorenz-1963 system, with the flow behind a
//! small trait so alternates can be added.

pub mod dynamics;
pub mod experiments;
pub mod kernel;
pub mod measures;
pub mod observables;
pub mod orbits;
pub mod pot;
pub mod weights;

mod rng;
mod spatial;
mod textio;

pub use dynamics::{Params, State, TangentBundle, Trajectory};
pub use kernel::{CorrelationSystem, KernelConfig};
pub use measures::{MeasureKind, ReferenceMeasure, Snippet};
pub use orbits::{OrbitLibrary, PeriodicOrbit};
pub use weights::{Method, WeightVector};

pub use rng::substream;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("integration failure: {0}")]
    Integration(String),

    #[error("orbit refinement failed after {iters} iterations (residual {residual:.3e})")]
    RefinementFailed { iters: usize, residual: f64 },

    #[error("degenerate solution: {0}")]
    DegenerateSolution(String),

    #[error("ambiguous symbol: z-maximum with |x| = {0:.3e}")]
    AmbiguousSymbol(f64),

    #[error("library incomplete after search budget; missing words: {}", missing.join(","))]
    IncompleteLibrary { missing: Vec<String> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
