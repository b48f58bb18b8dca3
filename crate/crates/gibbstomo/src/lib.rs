//! Dense tooling for learning exponential-family (Gibbs) states of local
//! Hamiltonians from expectation-value data.
//!
//! The crate is organized around a handful of cooperating modules:
//!
//! * [`operators`] — site systems, local operators, Pauli strings, embeddings,
//!   partial traces, Hermitian functional calculus and the norms everything
//!   else is measured in.
//! * [`gibbs`] — Gibbs states `sigma(mu) = exp(-beta H(mu)) / Z`, the dual
//!   (max-entropy) objective, its gradient/Hessian, and relative-entropy
//!   identities.
//! * [`shadows`] — randomized single-site Pauli measurements, sample planning
//!   and median-of-means estimation.
//! * [`solver`] — projected gradient descent on the dual with certified
//!   stopping, plus iteration-count bounds and a trajectory auditor.
//! * [`wasserstein`] — Lipschitz constants (Hamming and semigroup flavors),
//!   Wasserstein-1 upper/lower bounds and transport-cost checks.
//! * [`commuting`] — Petz recovery maps, conditional expectations, contraction
//!   coefficients and Hessian spectrum bounds for commuting models.
//! * [`chain`] — exact transfer-matrix machinery for classical Ising-type
//!   chains, sampling, reconstruction and the flatness experiment.
//! * [`cli`] — config-driven experiment commands shared by the `gibbstomo`
//!   binary and the Python bindings.

pub mod operators;
pub mod gibbs;
pub mod shadows;
pub mod solver;
pub mod wasserstein;
pub mod commuting;
pub mod chain;
pub mod cli;

pub use operators::{CMat, SiteSystem, LocalOperator, PauliString, DensityOperator};
pub use gibbs::{ExpectationVector, GibbsModel, HessianBackend, ModelFile, ParameterVector};
