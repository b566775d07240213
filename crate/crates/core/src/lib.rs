//! Open-world pool-based active learning simulator.
//!
//! A fixed pool of embeddings is labeled batch by batch. Each round a linear
//! softmax head is retrained from scratch on the labeled set, a query strategy
//! picks the next batch, and the oracle reveals its labels. The headline
//! strategy clusters the unlabeled pool for diversity, ranks clusters by the
//! fraction of members whose OOD score exceeds a 95%-TPR threshold, and takes
//! the highest-scoring member of each top cluster.
//!
//! Modules:
//! - [`pool`]: embedding pools, long-tail synthesis, file formats, labeling
//! - [`model`]: the linear head, training and analytic gradients
//! - [`ood`]: OOD scores and threshold calibration
//! - [`cluster`]: k-means, mini-batch k-means, GMM, k-center
//! - [`strategy`]: query strategies
//! - [`bench`]: metrics, the experiment runner, reports and config

pub mod bench;
pub mod cluster;
pub mod error;
pub mod matrix;
pub mod model;
pub mod ood;
pub mod par;
pub mod pool;
pub mod seed;
pub mod strategy;

pub use error::{Error, Result};
