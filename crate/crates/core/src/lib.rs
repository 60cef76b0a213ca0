//! Group-fair classification with overlapping groups.
//!
//! The crate is organized bottom-up:
//!
//! * [`groups`]: sensitive-attribute schemas and the four group schemes
//!   (unrestricted, independent, intersectional, gerrymandering).
//! * [`confusion`]: empirical and exact confusion matrices, per group too.
//! * [`metrics`]: linear performance metrics and linear fairness constraints.
//! * [`softmax`]: feature encoding and the weighted softmax objective.
//! * [`eta`]: a multinomial logistic estimate of the class-probability function.
//! * [`oracles`]: plugin and weighted-ERM best responses to a dual vector.
//! * [`solver`]: the primal/dual loop that averages oracle responses.
//! * [`baselines`]: logistic regression with a squared group-rate penalty.
//! * [`theory`]: exact finite distributions and a dense simplex LP over the
//!   confusion polytope.
//! * [`data`]: CSV ingestion and train/test splits.
//! * [`frontier`]: fairness-frontier sweeps and their reports.

pub mod baselines;
pub mod confusion;
pub mod data;
pub mod error;
pub mod eta;
pub mod frontier;
pub mod groups;
pub mod matrix;
pub mod metrics;
pub mod oracles;
pub mod softmax;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
