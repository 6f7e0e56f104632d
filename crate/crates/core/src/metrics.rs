//! Depth/disparity quality metrics.
//!
//! The standard eight-metric suite: absolute and squared relative error,
//! RMSE, log-RMSE (base 10 by default, natural log on request), the three
//! threshold accuracies at `1.25^i`, and mean SSIM. Error metrics normalize
//! by the ground-truth value. Aggregation runs in `f64` over the pixels
//! valid in every operand.

use std::fmt;

use crate::raster::{DisparityMap, Raster};
use crate::{Error, Result};

/// Disparities at or below this threshold cannot be inverted into depth.
pub const MIN_DISPARITY: f64 = 1e-6;

/// Stereo geometry needed to turn disparities into metric depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraCalib {
    /// Stereo baseline in meters.
    pub baseline_m: f64,
    /// Focal length in pixels.
    pub focal_px: f64,
}

impl CameraCalib {
    pub fn new(baseline_m: f64, focal_px: f64) -> Result<Self> {
        if !(baseline_m > 0.0 && baseline_m.is_finite()) || !(focal_px > 0.0 && focal_px.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "calibration must be positive and finite, got baseline {baseline_m} m, focal {focal_px} px"
            )));
        }
        Ok(CameraCalib { baseline_m, focal_px })
    }
}

/// Which logarithm [`log_err`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Ten,
    Natural,
}

/// Whether a report was computed on disparities or on metric depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSpace {
    Disparity,
    Depth,
}

impl fmt::Display for EvalSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalSpace::Disparity => write!(f, "disparity"),
            EvalSpace::Depth => write!(f, "depth"),
        }
    }
}

/// A prediction/ground-truth pair restricted to a common validity mask.
#[derive(Debug, Clone)]
pub struct MetricInputs {
    predicted: Raster,
    ground_truth: Raster,
    valid: Vec<bool>,
    valid_count: usize,
}

impl MetricInputs {
    /// Pairs two rasters under a mask. At least one pixel must be valid.
    pub fn new(predicted: Raster, ground_truth: Raster, valid: Vec<bool>) -> Result<Self> {
        if predicted.extent() != ground_truth.extent() {
            return Err(Error::InvalidInput(format!(
                "prediction {:?} and ground truth {:?} extents differ",
                predicted.extent(),
                ground_truth.extent()
            )));
        }
        if valid.len() != predicted.data().len() {
            return Err(Error::InvalidInput(format!(
                "mask holds {} entries for {} pixels",
                valid.len(),
                predicted.data().len()
            )));
        }
        let valid_count = valid.iter().filter(|&&v| v).count();
        if valid_count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(MetricInputs {
            predicted,
            ground_truth,
            valid,
            valid_count,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    /// Iterates `(predicted, ground_truth)` over valid pixels in raster order.
    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.predicted
            .data()
            .iter()
            .zip(self.ground_truth.data())
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|((&p, &g), _)| (p, g))
    }

    fn require_positive_gt(&self, what: &str) -> Result<()> {
        for (_, g) in self.pairs() {
            if !(g > 0.0) {
                return Err(Error::Domain(format!(
                    "{what} requires positive ground truth, found {g}"
                )));
            }
        }
        Ok(())
    }

    fn require_positive_both(&self, what: &str) -> Result<()> {
        for (p, g) in self.pairs() {
            if !(p > 0.0) || !(g > 0.0) {
                return Err(Error::Domain(format!(
                    "{what} requires positive values, found prediction {p}, ground truth {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean absolute error relative to the ground truth: `mean(|y* - y| / y)`.
pub fn abs_rel(m: &MetricInputs) -> Result<f64> {
    m.require_positive_gt("abs_rel")?;
    let sum: f64 = m.pairs().map(|(p, g)| (p - g).abs() / g).sum();
    Ok(sum / m.valid_count() as f64)
}

/// Mean squared error relative to the ground truth: `mean((y* - y)^2 / y)`.
pub fn sq_rel(m: &MetricInputs) -> Result<f64> {
    m.require_positive_gt("sq_rel")?;
    let sum: f64 = m.pairs().map(|(p, g)| (p - g) * (p - g) / g).sum();
    Ok(sum / m.valid_count() as f64)
}

/// Root-mean-square error.
pub fn rmse(m: &MetricInputs) -> Result<f64> {
    let sum: f64 = m.pairs().map(|(p, g)| (p - g) * (p - g)).sum();
    Ok((sum / m.valid_count() as f64).sqrt())
}

/// RMSE of the logarithms, base 10 by default.
pub fn log_err(m: &MetricInputs, base: LogBase) -> Result<f64> {
    m.require_positive_both("log_err")?;
    let log = |v: f64| match base {
        LogBase::Ten => v.log10(),
        LogBase::Natural => v.ln(),
    };
    let sum: f64 = m
        .pairs()
        .map(|(p, g)| {
            let d = log(p) - log(g);
            d * d
        })
        .sum();
    Ok((sum / m.valid_count() as f64).sqrt())
}

/// Fraction of pixels whose larger ratio `max(y*/y, y/y*)` is below `thres`.
pub fn threshold_acc(m: &MetricInputs, thres: f64) -> Result<f64> {
    if !(thres > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must exceed 1, got {thres}"
        )));
    }
    m.require_positive_both("threshold accuracy")?;
    let hits = m
        .pairs()
        .filter(|&(p, g)| (p / g).max(g / p) < thres)
        .count();
    Ok(hits as f64 / m.valid_count() as f64)
}

/// Gaussian window used by [`ssim`]: size 11 (shrunk on small inputs to an
/// odd size fitting both extents), sigma 1.5, normalized to sum 1.
fn ssim_window(h: usize, w: usize) -> Vec<f64> {
    let mut n = 11usize.min(h).min(w);
    if n % 2 == 0 {
        n -= 1;
    }
    let half = (n / 2) as f64;
    let sigma = 1.5f64;
    let mut win: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = win.iter().sum();
    for v in &mut win {
        *v /= sum;
    }
    win
}

fn min_max_stretch(r: &Raster) -> Raster {
    let (lo, hi) = r.min_max();
    if hi > lo {
        r.map(|v| (v - lo) / (hi - lo))
    } else {
        // A constant plane carries no structure; its location is arbitrary.
        Raster::constant(r.height(), r.width(), 0.0)
    }
}

/// Mean structural similarity with the standard constants
/// `C1 = 0.01^2`, `C2 = 0.03^2` on a unit dynamic range. Both inputs are
/// min-max normalized to `[0, 1]` first, making the score invariant to
/// affine rescaling of either map. Windows are evaluated at every position
/// where they fit entirely inside the raster.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    if a.extent() != b.extent() {
        return Err(Error::InvalidInput(format!(
            "ssim inputs have extents {:?} and {:?}",
            a.extent(),
            b.extent()
        )));
    }
    let (h, w) = a.extent();
    let a = min_max_stretch(a);
    let b = min_max_stretch(b);
    let win = ssim_window(h, w);
    let n = win.len();
    let (oh, ow) = (h - n + 1, w - n + 1);

    // Separable Gaussian moments: horizontal pass then vertical.
    let planes: [&dyn Fn(usize, usize) -> f64; 5] = [
        &|y, x| a.at(y, x),
        &|y, x| b.at(y, x),
        &|y, x| a.at(y, x) * a.at(y, x),
        &|y, x| b.at(y, x) * b.at(y, x),
        &|y, x| a.at(y, x) * b.at(y, x),
    ];
    let mut moments = Vec::with_capacity(5);
    for plane in planes {
        let mut horiz = vec![0.0f64; h * ow];
        for y in 0..h {
            for x in 0..ow {
                let mut acc = 0.0;
                for (t, &k) in win.iter().enumerate() {
                    acc += k * plane(y, x + t);
                }
                horiz[y * ow + x] = acc;
            }
        }
        let mut full = vec![0.0f64; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for (t, &k) in win.iter().enumerate() {
                    acc += k * horiz[(y + t) * ow + x];
                }
                full[y * ow + x] = acc;
            }
        }
        moments.push(full);
    }

    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (mu_a, mu_b) = (moments[0][i], moments[1][i]);
        let var_a = moments[2][i] - mu_a * mu_a;
        let var_b = moments[3][i] - mu_b * mu_b;
        let cov = moments[4][i] - mu_a * mu_b;
        let num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2);
        let den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2);
        total += num / den;
    }
    Ok(total / (oh * ow) as f64)
}

/// Depth from disparity: `Z = baseline * focal / d`. Pixels whose disparity
/// is invalid or at most [`MIN_DISPARITY`] become invalid in the output; the
/// sample there is set to zero so the raster stays finite everywhere.
pub fn depth_from_disparity(disp: &DisparityMap, calib: &CameraCalib) -> DisparityMap {
    let (h, w) = disp.extent();
    let bf = calib.baseline_m * calib.focal_px;
    let mut data = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let d = disp.data()[i];
        if disp.mask()[i] && d > MIN_DISPARITY {
            data.push(bf / d);
            valid.push(true);
        } else {
            data.push(0.0);
            valid.push(false);
        }
    }
    DisparityMap::new(h, w, data, valid).expect("depth samples are finite and positive")
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub log_err: f64,
    pub rmse: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub ssim: f64,
    pub space: EvalSpace,
    pub log_base: LogBase,
    pub valid_count: usize,
}

impl MetricReport {
    /// CSV header matching [`MetricReport::to_csv_row`]. Column order is the
    /// conventional table layout: errors first, then accuracies, then SSIM.
    pub fn csv_header() -> &'static str {
        "abs_rel,sq_rel,log_err,rmse,sigma1,sigma2,sigma3,ssim,space"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.abs_rel,
            self.sq_rel,
            self.log_err,
            self.rmse,
            self.sigma1,
            self.sigma2,
            self.sigma3,
            self.ssim,
            self.space
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let log_label = match self.log_base {
            LogBase::Ten => "log10",
            LogBase::Natural => "log_e",
        };
        writeln!(
            f,
            "evaluation over {} valid pixels ({} space)",
            self.valid_count, self.space
        )?;
        writeln!(
            f,
            "  {:<10} {:<10} {:<10} {:<10} {:<8} {:<8} {:<8} {:<8}",
            "abs_rel", "sq_rel", log_label, "rmse", "sigma1", "sigma2", "sigma3", "ssim"
        )?;
        write!(
            f,
            "  {:<10.4} {:<10.4} {:<10.4} {:<10.4} {:<8.4} {:<8.4} {:<8.4} {:<8.4}",
            self.abs_rel,
            self.sq_rel,
            self.log_err,
            self.rmse,
            self.sigma1,
            self.sigma2,
            self.sigma3,
            self.ssim
        )
    }
}

/// Runs the whole suite on a prediction/ground-truth pair.
///
/// With a calibration, both maps are converted to metric depth first and the
/// report says so; otherwise the comparison happens in disparity space.
/// The common mask is the AND of both validity masks restricted to strictly
/// positive values (ratio and log metrics are undefined otherwise). SSIM is
/// evaluated on the full rasters with invalid samples zeroed first, since
/// its sliding windows have no notion of missing pixels.
pub fn evaluate(
    predicted: &DisparityMap,
    ground_truth: &DisparityMap,
    calib: Option<&CameraCalib>,
    log_base: LogBase,
) -> Result<MetricReport> {
    if predicted.extent() != ground_truth.extent() {
        return Err(Error::InvalidInput(format!(
            "prediction {:?} and ground truth {:?} extents differ",
            predicted.extent(),
            ground_truth.extent()
        )));
    }
    let (space, pred, gt) = match calib {
        Some(c) => (
            EvalSpace::Depth,
            depth_from_disparity(predicted, c),
            depth_from_disparity(ground_truth, c),
        ),
        None => (EvalSpace::Disparity, predicted.clone(), ground_truth.clone()),
    };
    let n = pred.data().len();
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        valid.push(pred.mask()[i] && gt.mask()[i] && pred.data()[i] > 0.0 && gt.data()[i] > 0.0);
    }
    if valid.iter().all(|&v| !v) {
        return Err(Error::EmptyMask);
    }

    let zero_invalid = |m: &DisparityMap| {
        let mut r = m.to_raster();
        for (v, &ok) in r.data_mut().iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        r
    };
    let ssim_score = ssim(&zero_invalid(&pred), &zero_invalid(&gt))?;

    let m = MetricInputs::new(pred.to_raster(), gt.to_raster(), valid)?;
    Ok(MetricReport {
        abs_rel: abs_rel(&m)?,
        sq_rel: sq_rel(&m)?,
        log_err: log_err(&m, log_base)?,
        rmse: rmse(&m)?,
        sigma1: threshold_acc(&m, 1.25)?,
        sigma2: threshold_acc(&m, 1.25f64.powi(2))?,
        sigma3: threshold_acc(&m, 1.25f64.powi(3))?,
        ssim: ssim_score,
        space,
        log_base,
        valid_count: m.valid_count(),
    })
}
