//! Unsupervised clustering of plant observations.
//!
//! The crate covers the whole batch pipeline: color-space plant
//! segmentation, hand-crafted feature extraction, Gaussian-model
//! agglomerative clustering (with optional plant-group locking), Dirichlet
//! process mixtures, affinity propagation, evaluation with the DScore and
//! pairwise metrics, and SVG field maps.

pub mod affinity;
pub mod clustering;
pub mod dataset;
pub mod dpgmm;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gaussian;
pub mod io;
pub mod map;
pub mod pipeline;
pub mod partition;
pub mod raster;
pub mod segmentation;
pub mod synthesis;

pub use error::{Error, Result};
