//! Adaptive Markov chain Monte Carlo and stochastic approximation.
//!
//! The central object is the adaptive loop
//! `phi_{t+1} = phi_t + gamma_t g(X_t, phi_t)`, `X_{t+1} ~ kappa_{phi_{t+1}}(. | X_t)`
//! in [`moi`], built on the kernels of [`mcmc`]. Around it sit learned
//! independence proposals ([`expfam`]), gradient estimators ([`grad`]),
//! optimizers ([`optim`]), parallel tempering ([`tempering`]), transport-map
//! MCMC ([`transport`]), concrete models ([`models`]) and numerical checks of
//! the convergence theory ([`theorylab`]).

pub mod error;
pub mod experiments;
pub mod expfam;
pub mod grad;
pub mod moi;
pub mod mcmc;
pub mod models;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod tempering;
pub mod theorylab;
pub mod transport;

pub use error::{Error, Result};
pub use mcmc::StateVector;
pub use rng::RngStream;
