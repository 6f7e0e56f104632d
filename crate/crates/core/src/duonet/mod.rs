//! A desk-scale differentiable stereo network with two independent
//! encoders whose per-scale feature maps are fused by element-wise
//! multiplication and injected additively into a shared decoder.
//!
//! Everything is hand-written `f64` numerics: forward passes keep the
//! intermediates needed by the reverse-mode pass, and
//! [`gradient_check`] validates every parameter gradient against central
//! finite differences. The network trains on seeded random-dot stereograms
//! ([`make_stereogram`]) with plain SGD on a masked L1 loss — small enough
//! to verify end to end, faithful enough to demonstrate the fusion
//! mechanism (zeroing either encoder's features annihilates the fused map).

mod data;
mod net;
mod ops;
mod tensor;
mod train;

pub use data::{make_stereogram, StereogramSample};
pub use net::{
    gradient_check, load_net, save_net, DualNet, DualNetGrad, LayerShape, NetHeader, Side, Trace,
    SCALES,
};
pub use ops::{fuse_features, l1_loss, upsample_bilinear2, Conv2d};
pub use tensor::Tensor;
pub use train::train_toy;
