//! Quantile-optimal offline policy learning under unmeasured confounding.
//!
//! The library estimates linear structural quantile functions from
//! confounded offline data through conditional moment restrictions —
//! instrumental variables or negative controls — using a Fenchel-dual
//! minimax loss with a closed-form inner maximization over a polynomial
//! test class. On top of the estimator sit a greedy policy learner and
//! several pessimistic ones (regularized random search, a sampled
//! solution-set learner, an alternating loop, and a multi-quantile
//! spectral-risk variant), plus synthetic data generators with known ground
//! truth and closed-form policy values for noise-free regret curves.

pub mod dgp;
pub mod error;
pub mod eval;
pub mod features;
pub mod fmt;
pub mod learners;
pub mod loss;
pub mod policy;

mod linalg;
mod numeric;

pub use error::{Error, Result};
