//! Information-theoretic comparison and fusion of probabilistic representation spaces.
//!
//! A representation space assigns each datum a diagonal Gaussian posterior.
//! Pairwise Bhattacharyya coefficients between those posteriors (the
//! space's *fingerprint*) yield a lower bound on the information the space
//! carries about the data. From that bound follow generalized NMI and VI
//! between spaces, channel-level structure analysis, and a gradient-based
//! fusion of several spaces into one.

extern crate self as infocomp;

pub mod bench;
pub mod channels;
pub mod clustering;
pub mod error;
pub mod estimators;
pub mod fingerprint;
pub mod fusion;
pub mod io;
pub mod numeric;
pub mod posterior;
pub mod similarity;

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
mod testing;

pub use clustering::{DiscreteSoftClustering, HardClustering};
pub use error::{Error, ErrorClass, Result};
pub use estimators::{Estimator, InfoEstimate, McConfig};
pub use fingerprint::{Fingerprint, RowSource};
pub use posterior::{GaussianPosterior, PosteriorSet, SampleIds, SpaceId};
pub use similarity::{Measure, SimilarityValue};
