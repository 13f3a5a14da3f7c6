//! Numerical composition of privacy curves.
//!
//! A mechanism is represented by its pair of privacy loss random variables
//! `(X, Y)`. Each PRV is truncated and discretized onto a shared lattice, the
//! lattice distributions are convolved with an FFT, and the composed privacy
//! curve is read off together with rigorous lower and upper bounds.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod budget;
pub mod composition;
pub mod discretization;
pub mod error;
pub mod laws;
pub mod mechanisms;
pub mod numeric;

pub use accountant::{account, account_on_budget, AccountOptions, Accounting, ComponentSummary};
pub use budget::{
    advanced_composition_eps, analytic_gaussian_delta, analytic_gaussian_eps, mechanism_eps, mesh_size, prv_tail_bound,
    truncation_bound, ErrorBudget, DELTA_FLOOR,
};
pub use composition::{
    chernoff_eps, circular_convolve, compose, delta_at, epsilon_at, self_compose, ComposedPrv, DeltaEstimate,
    EpsEstimate, ErrorLedger,
};
pub use discretization::{discretize, discretize_with_refine, lattice_size, DiscretePrv};
pub use error::{PrvError, Result};
pub use mechanisms::{
    approx_dp_prv, conditional_mean, gaussian_prv, invert_direction, laplace_prv, subsample_prv, MechanismPrv,
    SubsampleParams,
};
