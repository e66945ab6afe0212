//! Concrete targets: the Wright-Fisher bridge, product and mixture
//! Gaussians, and small discrete distributions for exact oracles.

mod discrete;
mod product;
mod univariate;
mod wright_fisher;

pub use discrete::{
    apply_left, detailed_balance_error, discrete_transition_oracle, mat_mul, stationary_distribution,
    DiscreteTarget, Matrix, TwoPointKernel, TwoPointTarget, MAX_DISCRETE_STATES,
};
pub use product::{product_target, DiagNormal, ProductTarget, SymmetricBimodal};
pub use univariate::{Normal, NormalMixture, SharedUnivariate, Univariate};
pub use wright_fisher::{
    wf_forward, wf_log_target, wf_step, Anchor, ConstraintMode, Forbidden, WrightFisherBridge,
};
