//! Layerwise thermal image tooling for binder-jetting print jobs.
//!
//! The crate covers the whole monitoring pipeline:
//!
//! * [`image`]: 8-bit layer images, PGM I/O, temperature mapping, crop and blur.
//! * [`calib`]: radial-distortion camera model, checkerboard calibration and undistortion.
//! * [`registration`]: enhanced-correlation-coefficient alignment of whole print-job stacks.
//! * [`slicer`]: STL parsing, planar slicing into layer contours and SVG output.
//! * [`synth`]: seeded domain randomisation, defect injection and dataset manifests.
//! * [`cnn`]: a small convolutional classifier with training, evaluation and repetition statistics.
//!
//! [`desk`] has the desk-scale experiment recipes. [`fixtures`] holds
//! deterministic test geometry and imagery shared by the tests, the guide
//! and the CLI demos.

pub mod calib;
pub mod desk;
pub mod cnn;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod registration;
pub mod rng;
pub mod slicer;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use image::GrayImage;
pub use rng::Rng;
