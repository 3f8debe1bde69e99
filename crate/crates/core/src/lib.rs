//! Stacked-dish detection and dish color classification.
//!
//! The detector turns a photograph into a stack of ellipses: grayscale and
//! equalize ([`raster`]), extract branchless edge contours ([`edges`]),
//! simplify and cut them into smooth pieces ([`polyline`]), fit ellipses and
//! keep the consistent tower ([`ellipses`]), then fill gaps left by weakly
//! visible dishes ([`stack_recon`]). Each dish is warped into a fixed-size
//! patch ([`dishfeat`]) and classified by a small convolutional network
//! ([`cnn`]). [`synth`] renders scenes with exact ground truth, and
//! [`eval`] scores detections and classifications against it.

pub mod billing;
pub mod cnn;
pub mod config;
pub mod dishfeat;
pub mod edges;
pub mod ellipses;
pub mod error;
pub mod eval;
pub mod geom;
pub mod overlay;
pub mod pipeline;
pub mod polyline;
pub mod raster;
pub mod stack_recon;
pub mod synth;

pub use error::{Error, Result};
pub use geom::Point;
pub use raster::Raster;
pub use ellipses::Ellipse;
pub use stack_recon::ParamMatrix;
