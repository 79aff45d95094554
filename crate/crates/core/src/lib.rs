//! Trans-Gaussian spatio-temporal stochastic generator for gridded ensemble
//! wind fields.
//!
//! Fitting runs in three stages: per-site Tukey g-and-h autoregressions
//! ([`temporal`]), an evolutionary spectrum across longitude per band
//! ([`spectrum`]) and a banded vector autoregression across latitude on the
//! spectral coefficients ([`latvar`]). [`surrogate`] draws new runs from the
//! fitted model; [`diagnostics`] and [`wpd`] evaluate them.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod latvar;
pub mod optim;
pub mod pipeline;
pub mod spectrum;
pub mod surrogate;
pub mod temporal;
pub mod tukey;
pub mod wpd;

pub use error::{Result, SgError};
