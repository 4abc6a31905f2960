//! Temporal causal discovery from multi-regime time series.
//!
//! The crate learns a dynamic causal graph over `d` variables and their `p`
//! time-lagged copies from one observational regime plus any number of
//! interventional regimes, without requiring the interventional targets to be
//! known. The moving parts:
//!
//! - [`graph`]: the unrolled `(p+1)d`-node graph representation, the smooth
//!   acyclicity functional `trace(exp(S)) - n`, and thresholded extraction of
//!   intra-/inter-slice adjacency matrices.
//! - [`datagen`]: Erdős–Rényi weighted temporal DAGs, SVAR series synthesis,
//!   and perfect-intervention benchmark regimes with ground truth.
//! - [`regime`]: dataset model, windowing, normalization, n-sigma anomaly
//!   segmentation of raw telemetry, and manifest I/O.
//! - [`density`]: masked neural conditional densities with exact reverse-mode
//!   gradients.
//! - [`discovery`]: the relaxed score with straight-through Gumbel mask
//!   sampling and the augmented-Lagrangian outer loop.
//! - [`metainit`]: prompt construction, chat-completion clients (HTTP or
//!   stubbed), answer parsing, and logit initialization from a prior matrix.
//! - [`metrics`]: SHD, SID, full-graph compression, layout-rule edge
//!   classification, and intervention-target F1.

pub mod datagen;
pub mod density;
pub mod discovery;
pub mod error;
pub mod graph;
pub mod metainit;
pub mod metrics;
pub mod regime;

pub use error::{Error, Result};
