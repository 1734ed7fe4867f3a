//! Construction of elliptic lower-dimensional quasi-periodic solutions of
//! nearly integrable Hamiltonian systems
//! `H = <ω⊙z, z̄> + ε H₁(z, z̄)` on truncated Fourier lattices.
//!
//! A solution is sought as `z(t) = Σ_k ẑ(k) e^{i<k, ω'_T> t}` with real
//! coefficients. The tangential frequency `ω'_T` and the non-resonant
//! coefficients `ẑ_p` are updated alternately: a frequency update from the
//! resonant equations, then a Newton step for `ẑ_p` on a growing box `Λ_N`.

pub mod error;
pub mod evaluate;
pub mod hamiltonian;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod msa;
pub mod resonance;
pub mod solver;
pub mod vectorfield;

pub use error::{FormatError, ModelError, MsaError, SolverError};
pub use hamiltonian::{fpu_beta, henon_heiles, ModelSpec, Monomial, Polynomial};
pub use lattice::{FourierVector, LatticeBox, MultiIndex, Series, SiteIndex};
pub use linalg::LinearSolver;
pub use solver::{iterate, SolverConfig, SolverOutcome};
pub use vectorfield::{BVariant, LatticeOperator};

/// Library version written into output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Cap the worker count of the shared thread pools. Call once, early.
pub fn init_threads(threads: usize) {
    let threads = threads.max(1);
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let par = if threads == 1 { faer::Par::Seq } else { faer::Par::rayon(threads) };
    faer::set_global_parallelism(par);
}
