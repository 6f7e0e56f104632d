//! Seeded random-dot stereograms: the training diet for the toy network.
//!
//! Each sample is a pair of binary dot images plus a dense disparity
//! target. A single axis-aligned rectangle (between a third and a half of
//! each extent) floats in front of the background: inside it the right
//! view shows the left view's dots displaced by a constant shift, outside
//! it the views agree. Nothing about the rectangle is visible in either
//! image alone — only the cross-view correspondence reveals it, which is
//! exactly what the multiplicative fusion has to pick up.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::{Error, Result};

/// One training sample: two views and the disparity target.
#[derive(Debug, Clone)]
pub struct StereogramSample {
    pub left: Tensor,
    pub right: Tensor,
    /// Dense target: `shift` inside the floating rectangle, zero outside.
    pub gt: Tensor,
}

/// Generates a random-dot stereogram. The same seed always yields the same
/// sample. `shift` must satisfy `4 * shift < width` so the rectangle stays
/// meaningfully wider than the displacement; a zero shift degenerates to
/// identical views over an all-zero target.
pub fn make_stereogram(
    seed: u64,
    height: usize,
    width: usize,
    shift: usize,
) -> Result<StereogramSample> {
    if height < 3 {
        return Err(Error::InvalidParameter(format!(
            "height {height} leaves no room for a floating region"
        )));
    }
    if 4 * shift >= width {
        return Err(Error::InvalidParameter(format!(
            "shift too large: need 4 * shift < width, got shift {shift} at width {width}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut left = Tensor::zeros(height, width, 1);
    for v in left.data_mut() {
        *v = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    }

    // The rectangle covers roughly half the frame so neither depth plane
    // dominates the loss: a foreground/background imbalance would let a
    // constant predictor (the majority-plane median) soak up most of the
    // objective, and nothing about matching would need to be learned.
    let rh = rng.gen_range(3 * height / 5..=17 * height / 20);
    let rw = rng.gen_range(3 * width / 5..=17 * width / 20);
    let top = rng.gen_range(0..=height - rh);
    let lead = rng.gen_range(0..=width - rw);

    let mut gt = Tensor::zeros(height, width, 1);
    for y in top..top + rh {
        for x in lead..lead + rw {
            gt.set(y, x, 0, shift as f64);
        }
    }

    // The right view resamples the left one: displaced inside the region,
    // identical outside, with nearest-pixel fill at the image border.
    let right = Tensor::from_fn(height, width, 1, |y, x, _| {
        let d = gt.at(y, x, 0) as usize;
        left.at(y, x.saturating_sub(d), 0)
    });

    Ok(StereogramSample { left, right, gt })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_the_sample_bitwise() {
        let a = make_stereogram(42, 16, 16, 2).unwrap();
        let b = make_stereogram(42, 16, 16, 2).unwrap();
        assert_eq!(a.left.data(), b.left.data());
        assert_eq!(a.right.data(), b.right.data());
        assert_eq!(a.gt.data(), b.gt.data());
        let c = make_stereogram(43, 16, 16, 2).unwrap();
        assert_ne!(a.left.data(), c.left.data());
    }

    #[test]
    fn dots_are_binary_and_roughly_balanced() {
        let s = make_stereogram(7, 32, 32, 4).unwrap();
        assert!(s.left.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(s.right.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let ones: f64 = s.left.data().iter().sum();
        let frac = ones / (32.0 * 32.0);
        assert!(frac > 0.35 && frac < 0.65, "dot density {frac}");
    }

    #[test]
    fn target_is_a_filled_rectangle_at_the_requested_shift() {
        let s = make_stereogram(3, 24, 24, 3).unwrap();
        let mut y_lo = usize::MAX;
        let mut y_hi = 0;
        let mut x_lo = usize::MAX;
        let mut x_hi = 0;
        let mut raised = 0usize;
        for y in 0..24 {
            for x in 0..24 {
                let v = s.gt.at(y, x, 0);
                assert!(v == 0.0 || v == 3.0);
                if v != 0.0 {
                    raised += 1;
                    y_lo = y_lo.min(y);
                    y_hi = y_hi.max(y);
                    x_lo = x_lo.min(x);
                    x_hi = x_hi.max(x);
                }
            }
        }
        let (rh, rw) = (y_hi - y_lo + 1, x_hi - x_lo + 1);
        assert_eq!(raised, rh * rw, "the raised region is a solid rectangle");
        assert!(rh >= 3 * 24 / 5 && rh <= 17 * 24 / 20);
        assert!(rw >= 3 * 24 / 5 && rw <= 17 * 24 / 20);
    }

    #[test]
    fn right_view_is_the_left_view_displaced_inside_the_region() {
        let s = make_stereogram(11, 32, 32, 4).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let d = s.gt.at(y, x, 0) as usize;
                let expect = s.left.at(y, x.saturating_sub(d), 0);
                assert_eq!(s.right.at(y, x, 0), expect);
                if d == 0 {
                    assert_eq!(s.right.at(y, x, 0), s.left.at(y, x, 0));
                }
            }
        }
    }

    #[test]
    fn zero_shift_degenerates_to_identical_views() {
        let s = make_stereogram(17, 16, 16, 0).unwrap();
        assert_eq!(s.left.data(), s.right.data());
        assert!(s.gt.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let err = make_stereogram(0, 16, 16, 4).unwrap_err();
        match err {
            Error::InvalidParameter(msg) => assert!(msg.contains("shift too large")),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(matches!(
            make_stereogram(0, 2, 16, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(make_stereogram(0, 16, 16, 3).is_ok());
    }
}
