//! Single-image dehazing built on the dark channel prior, with a trainable
//! linear correction layer, density-controlled haze synthesis, PSNR/SSIM
//! evaluation, and manifest-based dataset handling.
//!
//! The typical flow: [`dataset::make_fixtures`] or a hand-written manifest
//! supplies clean/hazy pairs, [`mlr::train`] fits the correction weights,
//! [`mlr::dehaze_mldcp`] (or plain [`dcp::dehaze_dcp`]) restores images, and
//! [`metrics::evaluate_pairs`] scores the result.

pub mod dataset;
pub mod dcp;
pub mod error;
pub mod imgcore;
pub mod metrics;
pub mod mlr;
pub mod synth;

pub use error::{Error, Result};
pub use imgcore::{load_image, save_image, PlanarImage, Raster3, ScalarField};
