//! Raster containers: single-channel float grids, interleaved intensity
//! images, and disparity maps with validity masks.
//!
//! All pixel data is stored row-major with `f64` samples; file formats that
//! carry narrower types widen on load and narrow on store (see [`crate::io`]).

use crate::{Error, Result};

/// Rec. 709 luma weights used by [`to_grayscale`].
const LUMA_R: f64 = 0.2126;
const LUMA_G: f64 = 0.7152;
const LUMA_B: f64 = 0.0722;

/// A single-channel float raster, row-major.
///
/// This is the workhorse carrier for quality measures, pyramid levels and
/// blending intermediates. Extents are always at least 1×1.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Raster {
    /// All-zero raster. Panics on a zero extent (a programming error, not
    /// an input condition).
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "raster extent must be positive");
        Raster {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Constant-valued raster.
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        let mut r = Raster::zeros(height, width);
        r.data.fill(value);
        r
    }

    /// Builds a raster by evaluating `f(y, x)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut r = Raster::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                r.data[y * width + x] = f(y, x);
            }
        }
        r
    }

    /// Wraps an existing row-major buffer.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("raster extent must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "raster buffer holds {} samples, extent {}x{} needs {}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        Ok(Raster { height, width, data })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)` pair, handy for extent comparisons.
    #[inline]
    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        debug_assert!(y < self.height && x < self.width);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        debug_assert!(y < self.height && x < self.width);
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Minimum and maximum over all samples.
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Element-wise map into a new raster.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// An intensity image with 1 or 3 interleaved channels.
///
/// Loaders normalize integer formats so samples land in `[0, 1]`; float
/// formats are taken as-is. All samples are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageF {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image extent must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidInput(format!(
                "image buffer holds {} samples, extent {}x{}x{} needs {}",
                data.len(),
                height,
                width,
                channels,
                height * width * channels
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "image sample {bad} is not finite"
            )));
        }
        Ok(ImageF {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn sample(&self, y: usize, x: usize, c: usize) -> f64 {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Reinterprets a single-channel image as a bare raster.
    pub fn to_raster(&self) -> Result<Raster> {
        if self.channels != 1 {
            return Err(Error::InvalidInput(format!(
                "expected a single-channel image, got {} channels",
                self.channels
            )));
        }
        Raster::from_vec(self.height, self.width, self.data.clone())
    }

    pub fn from_raster(r: &Raster) -> Result<ImageF> {
        ImageF::new(r.height(), r.width(), 1, r.data().to_vec())
    }
}

/// A disparity (or depth) raster paired with a per-pixel validity mask.
///
/// Valid pixels are finite and non-negative; pixels failing that test are
/// carried along but excluded from statistics, weights and metrics. The
/// container is value-agnostic: depth maps produced by
/// [`crate::metrics::depth_from_disparity`] reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// Builds a map and derives the mask: a pixel is valid iff its sample
    /// is finite and `>= 0`. Middlebury-style ground truth marks unknown
    /// pixels with `inf`, which this rule picks up directly.
    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("disparity extent must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "disparity buffer holds {} samples, extent {}x{} needs {}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        let valid = data.iter().map(|v| v.is_finite() && *v >= 0.0).collect();
        Ok(DisparityMap {
            height,
            width,
            data,
            valid,
        })
    }

    /// Builds a map with an explicit mask. Every pixel claimed valid must
    /// hold a finite, non-negative sample.
    pub fn new(height: usize, width: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("disparity extent must be positive".into()));
        }
        if data.len() != height * width || valid.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "disparity buffers hold {}/{} samples, extent {}x{} needs {}",
                data.len(),
                valid.len(),
                height,
                width,
                height * width
            )));
        }
        for i in 0..data.len() {
            if valid[i] && !(data[i].is_finite() && data[i] >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "pixel {} is marked valid but holds {}",
                    i, data[i]
                )));
            }
        }
        Ok(DisparityMap {
            height,
            width,
            data,
            valid,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Copies the sample plane into a bare raster (mask dropped).
    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    /// Min/max over valid pixels, or `None` when nothing is valid.
    pub fn min_max_valid(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for i in 0..self.data.len() {
            if self.valid[i] {
                lo = lo.min(self.data[i]);
                hi = hi.max(self.data[i]);
                any = true;
            }
        }
        any.then_some((lo, hi))
    }
}

/// Rec. 709 grayscale conversion: `0.2126 R + 0.7152 G + 0.0722 B`.
pub fn to_grayscale(img: &ImageF) -> Result<ImageF> {
    if img.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "grayscale conversion expects 3 channels, got {}",
            img.channels()
        )));
    }
    let (h, w) = img.extent();
    let mut out = Vec::with_capacity(h * w);
    for px in img.data().chunks_exact(3) {
        let y = LUMA_R * px[0] + LUMA_G * px[1] + LUMA_B * px[2];
        out.push(y.clamp(0.0, 1.0));
    }
    ImageF::new(h, w, 1, out)
}

/// Affine rescale of every sample: `(v - lo) / (hi - lo)`, clamped to `[0, 1]`.
pub fn normalize(img: &ImageF, lo: f64, hi: f64) -> Result<ImageF> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(Error::InvalidRange(format!(
            "normalize needs finite hi > lo, got lo={lo}, hi={hi}"
        )));
    }
    let span = hi - lo;
    let data = img
        .data()
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect();
    ImageF::new(img.height(), img.width(), img.channels(), data)
}
