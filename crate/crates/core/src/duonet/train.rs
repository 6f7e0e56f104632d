//! Plain stochastic gradient descent on the toy stereo task.
//!
//! Deliberately free of adaptive machinery: one pass per sample, in the
//! order given, `p -= lr * g` after each. Determinism falls out — the same
//! net and the same samples produce bit-identical loss curves.

use super::data::StereogramSample;
use super::net::DualNet;
use crate::{Error, Result};

/// Trains in place for `epochs` passes over `data`, one SGD step per
/// sample, and returns the mean loss of each epoch. Training aborts with
/// [`Error::NonFiniteLoss`] the moment a sample's loss stops being finite,
/// naming the epoch and sample that diverged.
pub fn train_toy(
    net: &mut DualNet,
    data: &[StereogramSample],
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        for (sample, s) in data.iter().enumerate() {
            let (loss, grad) = net.loss_and_grad(&s.left, &s.right, &s.gt, None)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    sample,
                    value: loss,
                });
            }
            net.apply_sgd(&grad, lr);
            total += loss;
        }
        curve.push(total / data.len() as f64);
    }
    Ok(curve)
}
