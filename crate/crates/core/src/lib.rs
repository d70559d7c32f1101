//! Random walks on the lamplighter group ℤ≀ℤ₂ and on the semi-diagonal
//! group ℤ⋉(Φ×Φ).
//!
//! * [`groups`]: configurations, group elements and homomorphisms.
//! * [`measures`]: finitely supported measures with exact convolution,
//!   entropy and total variation, tracking truncated mass as a defect.
//! * [`constructions`]: the weight sequences α, the measures κ_n, λ_α, μ_α,
//!   couplings κ̃_n and the semi-diagonal measure μ̃.
//! * [`walks`]: seeded sample paths, the stopping time τ and the
//!   increment swap.
//! * [`diagnostics`]: entropy rates, invariance tests, τ survival and
//!   stabilization experiments.
//! * [`selfcheck`]: a randomized self-test of the algebra.

pub mod constructions;
pub mod diagnostics;
pub mod groups;
pub mod measures;
pub mod selfcheck;
pub mod walks;

pub use constructions::{AlphaSpec, ConstructionError, CouplingKind, CouplingSpec};
pub use diagnostics::DiagnosticsError;
pub use groups::{
    Configuration, GroupElement, GroupError, LampElement, PairElement, SemiDiagElement,
};
pub use measures::{MeasureError, SparseMeasure};
pub use walks::{WalkError, WalkModel};

/// Default master seed for every seeded experiment.
pub const DEFAULT_SEED: u64 = 0xC0FFEE;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Construction(#[from] ConstructionError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

impl Error {
    /// Whether the failure was the support budget running out.
    pub fn is_budget(&self) -> bool {
        match self {
            Error::Measure(MeasureError::BudgetExceeded { .. }) => true,
            Error::Construction(e) => e.is_budget(),
            Error::Diagnostics(e) => e.is_budget(),
            Error::Walk(e) => e.is_budget(),
            _ => false,
        }
    }
}
