//! Minimum divergence estimation and the generalized bootstrap on finite
//! alphabets.
//!
//! The crate covers:
//!
//! - [`divergence`]: Cressie-Read generators, divergences, conjugates and the
//!   infimum over rescaled masses;
//! - [`weights`]: the weight law matched to each divergence index, with its
//!   cumulant generating function and a numeric Chernoff transform;
//! - [`empirical`]: samples, empirical and weighted empirical measures;
//! - [`models`]: exponential-family and user-evaluated parametric models;
//! - [`estimation`]: minimum divergence and bootstrapped estimators;
//! - [`ldp`]: Monte Carlo estimation of conditional large-deviation slopes.

pub mod divergence;
pub mod empirical;
pub mod error;
pub mod estimation;
pub mod ldp;
pub mod measure;
pub mod models;
pub mod optimize;
pub mod rng;
pub mod weights;

pub use divergence::GammaIndex;
pub use error::{Error, Result};
pub use measure::{Alphabet, ProbVector, SignedMeasure};
