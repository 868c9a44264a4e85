//! Bayesian-optimization bounding-box refinement and localization-aware
//! structured SVM training.
//!
//! * [`geometry`]: boxes, IoU, the latent-scale transform, greedy NMS.
//! * [`gp`]: GP regression over boxes, marginal-likelihood fitting, expected improvement.
//! * [`fgs`]: the local fine-grained search loop that proposes refined boxes.
//! * [`structsvm`]: structured hinge objective, subgradients, hard-negative mining.
//! * [`scoring`]: scorer and feature-provider abstractions (oracle, linear, synthetic, file-backed).
//! * [`eval`]: detection matching, AP/mAP, PR curves, localization histograms.
//! * [`proposals`]: proposal ingestion, synthetic generators, local random search.
//! * [`harness`]: datasets, file formats, configuration, experiment drivers.

pub mod error;
pub mod eval;
pub mod fgs;
pub mod geometry;
pub mod harness;
pub mod gp;
pub mod optim;
pub mod proposals;
pub mod scoring;
pub mod structsvm;

pub use error::{ConfigError, DataError, Error, GeometryError, GpError, SvmError};
pub use geometry::{greedy_nms, iou, psi_transform, BoundingBox, TransformedBox};
