//! Disparity-map fusion for multi-exposure stereo, plus the depth-quality
//! metrics used to judge the result and a small dual-encoder network that
//! demonstrates the feature-fusion mechanism end to end.
//!
//! The crate is organized around three pillars:
//!
//! * [`fuse`] — quality-weighted Laplacian-pyramid blending of several
//!   disparity maps estimated from differently exposed stereo pairs
//!   (with [`quality`] providing the per-pixel weights and [`pyramid`]
//!   the multi-scale machinery),
//! * [`metrics`] — the standard eight-metric depth evaluation suite,
//! * [`duonet`] — a desk-scale differentiable network with two
//!   independent encoders whose feature maps are fused multiplicatively,
//!   trained on random-dot stereograms with hand-written gradients.
//!
//! Raster containers and file I/O (PFM/PGM/PPM/PNG) live in [`raster`]
//! and [`io`].

pub mod duonet;
pub mod fuse;
pub mod io;
pub mod metrics;
pub mod pyramid;
pub mod quality;
pub mod raster;

mod error;

pub use error::{Error, Result};
pub use fuse::{fuse_disparities, fuse_naive, fuse_with_details, ExposureStack, FusionDetails};
pub use metrics::{evaluate, CameraCalib, EvalSpace, LogBase, MetricInputs, MetricReport};
pub use pyramid::Pyramid;
pub use quality::{QualityConfig, WeightStack};
pub use raster::{normalize, to_grayscale, DisparityMap, ImageF, Raster};
