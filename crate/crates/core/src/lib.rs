//! Fused latent and graphical models for multivariate binary responses.
//!
//! Responses `x ∈ {0,1}^J` follow `f(x) ∝ exp{½ xᵀ(L + S)x}` where `L = AAᵀ`
//! comes from a low-dimensional latent factor and `S` is a sparse Ising
//! interaction graph. Estimation minimizes the negative pseudo-likelihood with
//! a nuclear-norm penalty on `L` and an L1 penalty on the off-diagonal of `S`.

pub mod admm;
pub mod data;
pub mod error;
pub mod eval;
pub mod exact;
pub mod gof;
pub mod interpret;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod select;
pub mod sim;

pub use admm::{admm_fit, extract_structure, RegularizedFit, SolverConfig, SolverState, Structure};
pub use data::BinaryDataset;
pub use error::{FlagError, Result};
pub use model::{CombinedMatrix, FlagParams, LoadingMatrix};
