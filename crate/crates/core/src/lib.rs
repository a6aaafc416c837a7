//! Clustering-based unsupervised representation learning with
//! confidence-guided centroids and soft pseudo labels.
//!
//! The pipeline alternates DBSCAN pseudo-labelling with contrastive descent
//! against a centroid bank. Silhouette scores decide which members shape each
//! centroid, and distances to every centroid soften the one-hot targets.

pub mod centroids;
pub mod clustering;
pub mod confidence;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod objective;
pub mod report;
pub mod rng;
pub mod space;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use space::Matrix;
pub use types::{ClusterAssignment, FeatureStore, GroundTruth};
