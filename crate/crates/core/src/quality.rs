//! Per-pixel quality measures and the weight maps derived from them.
//!
//! Each disparity map in a stack gets a weight raster built from two
//! measures: *contrast* `C` (median-filtered absolute Laplacian of the
//! normalized disparity, rewarding preserved depth edges) and
//! *well-exposedness* `E` (a Gaussian bump around mid-gray of the left
//! intensity image, punishing blown-out or drowned exposures). The refined
//! weight is `W = C^wC * E^wE`, normalized per pixel across the stack.

use crate::raster::{ImageF, Raster};
use crate::{Error, Result};

/// The fixed 3x3 Laplacian stencil used by [`contrast_measure`].
pub const LAPLACIAN_KERNEL: [[f64; 3]; 3] = [
    [0.0, 1.0, 0.0],
    [1.0, -4.0, 1.0],
    [0.0, 1.0, 0.0],
];

/// Per-pixel sums fall back to a uniform split below this threshold.
pub const WEIGHT_SUM_EPSILON: f64 = 1e-12;

/// Knobs for weight construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityConfig {
    /// Exponent on the contrast measure; `0` disables it.
    pub w_c: f64,
    /// Exponent on the well-exposedness measure; `0` disables it.
    pub w_e: f64,
    /// Width of the exposedness bump around 0.5.
    pub sigma: f64,
    /// Odd window size of the median filter applied to the Laplacian.
    pub median_window: usize,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            w_c: 1.0,
            w_e: 1.0,
            sigma: 0.2,
            median_window: 3,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_c >= 0.0) || !(self.w_e >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight exponents must be >= 0, got w_c={}, w_e={}",
                self.w_c, self.w_e
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.median_window == 0 || self.median_window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "median window must be odd and >= 1, got {}",
                self.median_window
            )));
        }
        Ok(())
    }
}

/// Mirror (reflect-101) index: `-1 -> 1`, `n -> n-2`. Total reflection for
/// arbitrarily far indices so tiny rasters stay well-defined.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Absolute response of the fixed 3x3 Laplacian with mirrored borders.
pub fn abs_laplacian(r: &Raster) -> Raster {
    let (h, w) = r.extent();
    Raster::from_fn(h, w, |y, x| {
        let mut acc = 0.0;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let k = LAPLACIAN_KERNEL[(dy + 1) as usize][(dx + 1) as usize];
                if k != 0.0 {
                    let yy = reflect(y as isize + dy, h);
                    let xx = reflect(x as isize + dx, w);
                    acc += k * r.at(yy, xx);
                }
            }
        }
        acc.abs()
    })
}

/// Median filter with an odd square window and mirrored borders.
pub fn median_blur(r: &Raster, window: usize) -> Result<Raster> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "median window must be odd and >= 1, got {window}"
        )));
    }
    let (h, w) = r.extent();
    let half = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    let mut out = Raster::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            for dy in -half..=half {
                for dx in -half..=half {
                    buf.push(r.at(reflect(y as isize + dy, h), reflect(x as isize + dx, w)));
                }
            }
            buf.sort_unstable_by(f64::total_cmp);
            out.set(y, x, buf[buf.len() / 2]);
        }
    }
    Ok(out)
}

/// Contrast measure: median-filtered absolute Laplacian of a disparity
/// raster that has already been normalized to `[0, 1]`.
pub fn contrast_measure(disp: &Raster, median_window: usize) -> Result<Raster> {
    median_blur(&abs_laplacian(disp), median_window)
}

/// Well-exposedness of a grayscale image in `[0, 1]`:
/// `E = exp(-(v - 0.5)^2 / (2 sigma^2))`.
pub fn well_exposedness(gray: &ImageF, sigma: f64) -> Result<Raster> {
    if gray.channels() != 1 {
        return Err(Error::InvalidInput(format!(
            "well-exposedness expects a single channel, got {}",
            gray.channels()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    let (h, w) = gray.extent();
    let data = gray
        .data()
        .iter()
        .map(|&v| {
            let d = v - 0.5;
            (-(d * d) / denom).exp()
        })
        .collect();
    Ok(Raster::from_vec(h, w, data).expect("extent preserved"))
}

/// Combines the two measures: `W = C^wC * E^wE`, with the convention
/// `0^0 = 1` so a zero exponent removes a measure entirely.
pub fn refine_weights(c: &Raster, e: &Raster, w_c: f64, w_e: f64) -> Result<Raster> {
    if c.extent() != e.extent() {
        return Err(Error::InvalidInput(format!(
            "contrast {:?} and exposedness {:?} extents differ",
            c.extent(),
            e.extent()
        )));
    }
    if !(w_c >= 0.0) || !(w_e >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "weight exponents must be >= 0, got w_c={w_c}, w_e={w_e}"
        )));
    }
    let (h, w) = c.extent();
    let data = c
        .data()
        .iter()
        .zip(e.data())
        .map(|(&cv, &ev)| cv.powf(w_c) * ev.powf(w_e))
        .collect();
    Raster::from_vec(h, w, data)
}

/// Sums `vals` in a canonical (sorted) order so the result is independent
/// of the caller's stack ordering. Shared by weight normalization and both
/// blend paths, which keeps single-level pyramid blending bit-identical to
/// the naive weighted average.
#[inline]
pub(crate) fn sum_sorted(vals: &mut [f64]) -> f64 {
    vals.sort_unstable_by(f64::total_cmp);
    vals.iter().sum()
}

/// Per-pixel normalization across the stack: weights at each pixel sum to 1.
/// Pixels where every map contributed (near-)zero weight fall back to a
/// uniform `1/n` split instead of dividing by nothing.
pub fn normalize_weights(weights: &[Raster]) -> Result<Vec<Raster>> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot normalize an empty weight stack".into()));
    }
    let extent = weights[0].extent();
    for (k, w) in weights.iter().enumerate() {
        if w.extent() != extent {
            return Err(Error::InvalidInput(format!(
                "weight raster {k} has extent {:?}, expected {:?}",
                w.extent(),
                extent
            )));
        }
        if w.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight raster {k} holds negative or non-finite values"
            )));
        }
    }
    let (h, wd) = extent;
    let mut out: Vec<Raster> = (0..n).map(|_| Raster::zeros(h, wd)).collect();
    let mut scratch = vec![0.0f64; n];
    for i in 0..h * wd {
        for k in 0..n {
            scratch[k] = weights[k].data()[i];
        }
        let sum = sum_sorted(&mut scratch);
        if sum < WEIGHT_SUM_EPSILON {
            let u = 1.0 / n as f64;
            for k in 0..n {
                out[k].data_mut()[i] = u;
            }
        } else {
            for k in 0..n {
                out[k].data_mut()[i] = weights[k].data()[i] / sum;
            }
        }
    }
    Ok(out)
}

/// All intermediate weight rasters for a stack, kept around for inspection
/// and debug dumps.
#[derive(Debug, Clone)]
pub struct WeightStack {
    pub contrast: Vec<Raster>,
    pub exposedness: Vec<Raster>,
    pub refined: Vec<Raster>,
    pub normalized: Vec<Raster>,
}

impl WeightStack {
    /// Computes the full weight pipeline for `n` (disparity, grayscale)
    /// pairs. Disparities must already be normalized to `[0, 1]`.
    pub fn compute(disps: &[Raster], grays: &[ImageF], cfg: &QualityConfig) -> Result<WeightStack> {
        cfg.validate()?;
        if disps.is_empty() || disps.len() != grays.len() {
            return Err(Error::InvalidInput(format!(
                "expected equal counts of disparities and images, got {} and {}",
                disps.len(),
                grays.len()
            )));
        }
        let mut contrast = Vec::with_capacity(disps.len());
        let mut exposedness = Vec::with_capacity(disps.len());
        let mut refined = Vec::with_capacity(disps.len());
        for (d, g) in disps.iter().zip(grays) {
            if d.extent() != g.extent() {
                return Err(Error::InvalidInput(format!(
                    "disparity {:?} and image {:?} extents differ",
                    d.extent(),
                    g.extent()
                )));
            }
            let c = contrast_measure(d, cfg.median_window)?;
            let e = well_exposedness(g, cfg.sigma)?;
            refined.push(refine_weights(&c, &e, cfg.w_c, cfg.w_e)?);
            contrast.push(c);
            exposedness.push(e);
        }
        let normalized = normalize_weights(&refined)?;
        Ok(WeightStack {
            contrast,
            exposedness,
            refined,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ImageF;

    fn gray(h: usize, w: usize, v: f64) -> ImageF {
        ImageF::new(h, w, 1, vec![v; h * w]).unwrap()
    }

    #[test]
    fn exposedness_peaks_at_mid_gray() {
        let e = well_exposedness(&gray(1, 1, 0.5), 0.2).unwrap();
        assert_eq!(e.at(0, 0), 1.0);
    }

    #[test]
    fn exposedness_matches_hand_values() {
        let e = well_exposedness(&gray(1, 2, 0.7), 0.2).unwrap();
        assert!((e.at(0, 0) - (-0.5f64).exp()).abs() < 1e-9);
        let e0 = well_exposedness(&gray(1, 1, 0.0), 0.2).unwrap();
        assert!((e0.at(0, 0) - (-3.125f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn exposedness_rejects_bad_inputs() {
        assert!(well_exposedness(&gray(1, 1, 0.5), 0.0).is_err());
        assert!(well_exposedness(&gray(1, 1, 0.5), -1.0).is_err());
        let rgb = ImageF::new(1, 1, 3, vec![0.5; 3]).unwrap();
        assert!(well_exposedness(&rgb, 0.2).is_err());
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let c = contrast_measure(&Raster::constant(8, 8, 0.42), 3).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_of_ramp_vanishes_inside() {
        // Linear ramps are in the Laplacian's null space away from borders;
        // mirrored borders also cancel for an axis-aligned ramp.
        let r = Raster::from_fn(7, 9, |_, x| 0.1 * x as f64);
        let lap = abs_laplacian(&r);
        for y in 0..7 {
            for x in 1..8 {
                assert!(lap.at(y, x).abs() < 1e-12, "({y},{x}) = {}", lap.at(y, x));
            }
        }
    }

    #[test]
    fn impulse_laplacian_before_median() {
        // Center impulse on a 5x5 zero field: |response| is 4 at the center
        // and 1 at its 4-neighbors.
        let mut r = Raster::zeros(5, 5);
        r.set(2, 2, 1.0);
        let lap = abs_laplacian(&r);
        assert_eq!(lap.at(2, 2), 4.0);
        for (y, x) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(lap.at(y, x), 1.0);
        }
        assert_eq!(lap.at(0, 0), 0.0);
        // The 3x3 median knocks the peak down to the neighborhood level
        // (four 1s surround the 4) and clears the lone neighbors entirely.
        let c = contrast_measure(&r, 3).unwrap();
        assert_eq!(c.at(2, 2), 1.0);
        for (y, x) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(c.at(y, x), 0.0);
        }
    }

    #[test]
    fn median_blur_rejects_even_windows() {
        let r = Raster::zeros(4, 4);
        assert!(median_blur(&r, 2).is_err());
        assert!(median_blur(&r, 0).is_err());
        assert!(median_blur(&r, 1).is_ok());
    }

    #[test]
    fn median_window_one_is_identity() {
        let r = Raster::from_fn(3, 4, |y, x| (y * 4 + x) as f64);
        let m = median_blur(&r, 1).unwrap();
        assert_eq!(m, r);
    }

    #[test]
    fn refine_hand_values() {
        let c = Raster::constant(1, 1, 0.3);
        let e = Raster::constant(1, 1, 1.0);
        let w = refine_weights(&c, &e, 2.0, 1.0).unwrap();
        assert!((w.at(0, 0) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn refine_zero_exponents_yield_unit_weights() {
        let c = Raster::constant(2, 2, 0.0);
        let e = Raster::constant(2, 2, 0.0);
        let w = refine_weights(&c, &e, 0.0, 0.0).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0)); // 0^0 = 1
    }

    #[test]
    fn refine_rejects_negative_exponents() {
        let r = Raster::constant(1, 1, 1.0);
        assert!(refine_weights(&r, &r, -1.0, 0.0).is_err());
    }

    #[test]
    fn normalize_weights_hand_case() {
        let ws = vec![
            Raster::constant(1, 1, 2.0),
            Raster::constant(1, 1, 3.0),
            Raster::constant(1, 1, 5.0),
        ];
        let n = normalize_weights(&ws).unwrap();
        assert!((n[0].at(0, 0) - 0.2).abs() < 1e-15);
        assert!((n[1].at(0, 0) - 0.3).abs() < 1e-15);
        assert!((n[2].at(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalize_weights_zero_pixels_fall_back_to_uniform() {
        let ws = vec![Raster::zeros(2, 2), Raster::zeros(2, 2)];
        let n = normalize_weights(&ws).unwrap();
        for k in 0..2 {
            assert!(n[k].data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn normalize_weights_rejects_bad_stacks() {
        assert!(normalize_weights(&[]).is_err());
        let ws = vec![Raster::zeros(2, 2), Raster::zeros(2, 3)];
        assert!(normalize_weights(&ws).is_err());
        let neg = vec![Raster::constant(1, 1, -0.1)];
        assert!(normalize_weights(&neg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(QualityConfig::default().validate().is_ok());
        let bad = QualityConfig {
            median_window: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = QualityConfig {
            sigma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = QualityConfig {
            w_c: -0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
