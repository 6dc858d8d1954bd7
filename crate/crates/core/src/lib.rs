//! Hierarchical merge-tree image segmentation.
//!
//! The crate takes an over-segmenting watershed partition of an image,
//! represents the region merging order as a full binary merge tree, scores
//! every merge with an ensemble boundary classifier, and solves for the
//! globally optimal consistent merge/split labeling of the tree by dynamic
//! programming. An iterative training/testing loop accumulates per-iteration
//! segmentations into real-valued contour hierarchies, which are evaluated
//! with region metrics (covering, probabilistic Rand index, variation of
//! information) at dataset-optimal and image-optimal scales.
//!
//! Modules follow the processing order: [`segmentation`] holds the shared
//! pixel-labeling types, [`superpixel`] produces the initial partition and
//! region adjacency, [`merge_tree`] builds the hierarchy, [`features`] and
//! [`classifier`] score candidate merges, [`inference`] solves the tree
//! labeling, [`pipeline`] runs the iterative loops, and [`metrics`]
//! evaluates the results. [`synth`] generates the synthetic benchmark data
//! used by the test suites.

pub mod classifier;
pub mod error;
pub mod features;
pub mod forest;
pub mod inference;
pub mod merge_tree;
pub mod metrics;
pub mod pipeline;
pub mod segmentation;
pub mod superpixel;
pub mod synth;

pub use error::{Error, Result};
