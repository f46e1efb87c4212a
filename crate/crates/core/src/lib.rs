//! Soft-to-hard matching for robust rigid point-cloud registration.
//!
//! The pipeline turns a feature similarity matrix into a partial doubly
//! stochastic matrix with an augmented Sinkhorn normalization (the S-step),
//! projects it onto a partial permutation matrix with an exact assignment
//! over a variance-adaptive augmented profit matrix (the H-step), and
//! estimates the rigid motion with weighted Procrustes over the surviving
//! one-to-one correspondences.
//!
//! Supporting modules cover hand-crafted point features, synthetic benchmark
//! generation, evaluation metrics, the gradient structure used for
//! end-to-end learning, and a constructive demonstration of why soft
//! matching alone is ambiguous.

pub mod ambiguity;
pub mod assignment;
pub mod error;
pub mod features;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod procrustes;
pub mod sinkhorn;
pub mod spatial;
pub mod synth;

pub use assignment::{project_to_ppm, HStepConfig, PartialPermutationMatrix};
pub use error::{Error, Result};
pub use features::{descriptor, similarity, FeatureConfig, FeatureSet};
pub use geometry::{EulerAngles, PointCloud, RigidMotion};
pub use matrix::DenseMatrix;
pub use par::Execution;
pub use pipeline::{register, RegistrationConfig, RegistrationResult};
pub use procrustes::{correspondences_from_ppm, weighted_procrustes, MatchWeights};
pub use sinkhorn::{augmented_sinkhorn, SinkhornConfig, SoftMatchMatrix};
