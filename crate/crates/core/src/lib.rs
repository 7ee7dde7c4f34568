//! Generic ray-camera calibration toolkit.
//!
//! Cameras are represented as grids of world-space rays (one per image
//! patch). The crate covers the full loop around that representation:
//!
//! * [`ray_camera`]: pixel lifting, bundle construction, world transforms,
//!   Plücker conversion and first-camera scene normalization.
//! * [`distortion`]: parametric aberration profiles, grid distortion fields,
//!   flow extraction from bundles and image remapping.
//! * [`lens_db`]: a JSON-lines lens profile database with seeded sampling and
//!   sequence augmentation.
//! * [`fit`]: Levenberg-Marquardt pinhole fitting, ray intersection and
//!   similarity alignment.
//! * [`diffusion`]: DDPM schedules, forward noising, ancestral sampling with a
//!   pluggable denoiser, and the training losses.
//! * [`attention`]: patchification, a Canny edge map, edge-biased attention and
//!   its analytic gradient.
//! * [`metrics`]: rotation accuracy, camera-center accuracy and mean ray
//!   angular error.

// Parameter checks are written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod diffusion;
pub mod distortion;
pub mod error;
pub mod fit;
pub mod image;
pub mod lens_db;
pub mod metrics;
pub mod ray_camera;
pub mod rng;
pub mod scene;
pub mod selftest;
pub mod synth;

pub use error::{Error, Result};
