//! Fusing a stack of disparity maps from differently exposed stereo pairs.
//!
//! The pipeline: jointly normalize all disparities to `[0, 1]` by the global
//! min/max over the stack, build per-pixel weights from contrast and
//! well-exposedness, zero the weight of invalid pixels, normalize weights
//! across the stack, blend the Laplacian pyramids of the disparities under
//! the Gaussian pyramids of the weights, collapse, and map back to the
//! original disparity range. The output mask is the AND of the input masks,
//! and samples are clamped to non-negative disparities.

use crate::pyramid::{self, Pyramid};
use crate::quality::{self, QualityConfig, WeightStack};
use crate::raster::{to_grayscale, DisparityMap, ImageF, Raster};
use crate::{Error, Result};

/// Value used for invalid pixels in the normalized maps: mid-range keeps
/// the filtering bleed neutral; those pixels carry zero weight and end up
/// masked out of the result anyway.
const INVALID_FILL: f64 = 0.5;

/// `n` exposures of the same scene: a left intensity image and a disparity
/// map per exposure, plus a free-form label (exposure time, file stem, ...).
#[derive(Debug, Clone)]
pub struct ExposureStack {
    left_images: Vec<ImageF>,
    disparities: Vec<DisparityMap>,
    labels: Vec<String>,
}

impl ExposureStack {
    pub fn new(
        left_images: Vec<ImageF>,
        disparities: Vec<DisparityMap>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if left_images.is_empty() {
            return Err(Error::InvalidInput(
                "stack must contain at least one exposure".into(),
            ));
        }
        if left_images.len() != disparities.len() || left_images.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "expected equal counts, got {} images, {} disparities, {} labels",
                left_images.len(),
                disparities.len(),
                labels.len()
            )));
        }
        let extent = disparities[0].extent();
        for k in 0..left_images.len() {
            if left_images[k].extent() != extent || disparities[k].extent() != extent {
                return Err(Error::InvalidInput(format!(
                    "exposure {k} ({}) has extents image {:?} / disparity {:?}, expected {:?}",
                    labels[k],
                    left_images[k].extent(),
                    disparities[k].extent(),
                    extent
                )));
            }
        }
        Ok(ExposureStack {
            left_images,
            disparities,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.disparities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disparities.is_empty()
    }

    pub fn extent(&self) -> (usize, usize) {
        self.disparities[0].extent()
    }

    pub fn left_images(&self) -> &[ImageF] {
        &self.left_images
    }

    pub fn disparities(&self) -> &[DisparityMap] {
        &self.disparities
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Everything the fusion computed on the way to the result; kept for
/// inspection, weight previews and pyramid dumps.
#[derive(Debug, Clone)]
pub struct FusionDetails {
    pub fused: DisparityMap,
    pub weights: WeightStack,
    /// Disparities after joint normalization (invalid pixels filled).
    pub normalized: Vec<Raster>,
    pub disparity_pyramids: Vec<Pyramid>,
    pub weight_pyramids: Vec<Pyramid>,
    /// Pyramid depth actually used.
    pub levels: usize,
    /// Global `(min, max)` over valid pixels of the whole stack.
    pub range: (f64, f64),
}

struct Prepared {
    normalized: Vec<Raster>,
    weights: WeightStack,
    range: (f64, f64),
    mask_and: Vec<bool>,
}

fn prepare(stack: &ExposureStack, cfg: &QualityConfig) -> Result<Prepared> {
    cfg.validate()?;
    let n = stack.len();
    let (h, w) = stack.extent();

    // Global disparity range over every valid pixel in the stack.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in stack.disparities() {
        if let Some((dlo, dhi)) = d.min_max_valid() {
            lo = lo.min(dlo);
            hi = hi.max(dhi);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(
            "stack holds no valid disparity pixels".into(),
        ));
    }
    if hi <= lo {
        return Err(Error::InvalidRange(format!(
            "disparity range is degenerate: every valid pixel in the stack is {lo} \
             (first input: {})",
            stack.labels()[0]
        )));
    }
    let span = hi - lo;

    let normalized: Vec<Raster> = stack
        .disparities()
        .iter()
        .map(|d| {
            Raster::from_fn(h, w, |y, x| {
                if d.is_valid(y, x) {
                    ((d.at(y, x) - lo) / span).clamp(0.0, 1.0)
                } else {
                    INVALID_FILL
                }
            })
        })
        .collect();

    let grays: Vec<ImageF> = stack
        .left_images()
        .iter()
        .map(|img| {
            if img.channels() == 3 {
                to_grayscale(img)
            } else {
                Ok(img.clone())
            }
        })
        .collect::<Result<_>>()?;

    // Refined weights, with invalid pixels forced to zero weight before the
    // per-pixel normalization (so valid maps absorb their share).
    let mut contrast = Vec::with_capacity(n);
    let mut exposedness = Vec::with_capacity(n);
    let mut refined = Vec::with_capacity(n);
    for k in 0..n {
        let c = quality::contrast_measure(&normalized[k], cfg.median_window)?;
        let e = quality::well_exposedness(&grays[k], cfg.sigma)?;
        let mut r = quality::refine_weights(&c, &e, cfg.w_c, cfg.w_e)?;
        let mask = stack.disparities()[k].mask();
        for (v, &ok) in r.data_mut().iter_mut().zip(mask) {
            if !ok {
                *v = 0.0;
            }
        }
        contrast.push(c);
        exposedness.push(e);
        refined.push(r);
    }
    let normalized_weights = quality::normalize_weights(&refined)?;
    let weights = WeightStack {
        contrast,
        exposedness,
        refined,
        normalized: normalized_weights,
    };

    let mut mask_and = vec![true; h * w];
    for d in stack.disparities() {
        for (m, &ok) in mask_and.iter_mut().zip(d.mask()) {
            *m &= ok;
        }
    }

    Ok(Prepared {
        normalized,
        weights,
        range: (lo, hi),
        mask_and,
    })
}

/// Maps a blended raster in normalized units back to disparities, clamping
/// to non-negative values, and attaches the combined mask.
fn finalize(blended: Raster, range: (f64, f64), mask: Vec<bool>) -> Result<DisparityMap> {
    let (lo, hi) = range;
    let span = hi - lo;
    let (h, w) = blended.extent();
    let data = blended
        .into_data()
        .into_iter()
        .map(|v| (v * span + lo).max(0.0))
        .collect();
    DisparityMap::new(h, w, data, mask)
}

fn resolve_levels(extent: (usize, usize), levels: Option<usize>) -> Result<usize> {
    let cap = pyramid::max_levels(extent.0, extent.1);
    match levels {
        None => Ok(cap.saturating_sub(2).max(1)),
        Some(l) if l >= 1 && l <= cap => Ok(l),
        Some(l) => Err(Error::InvalidParameter(format!(
            "level count {l} out of range 1..={cap} for extent {extent:?}"
        ))),
    }
}

/// Full multi-band fusion, returning every intermediate product.
///
/// `levels = None` picks the default depth `max_levels - 2` (clamped to at
/// least one level) so the coarsest level keeps a few pixels per side.
pub fn fuse_with_details(
    stack: &ExposureStack,
    cfg: &QualityConfig,
    levels: Option<usize>,
) -> Result<FusionDetails> {
    let levels = resolve_levels(stack.extent(), levels)?;
    let prep = prepare(stack, cfg)?;

    let disparity_pyramids: Vec<Pyramid> = prep
        .normalized
        .iter()
        .map(|d| pyramid::laplacian_pyramid(d, levels))
        .collect::<Result<_>>()?;
    let weight_pyramids: Vec<Pyramid> = prep
        .weights
        .normalized
        .iter()
        .map(|w| pyramid::gaussian_pyramid(w, levels))
        .collect::<Result<_>>()?;

    let blended = pyramid::collapse(&pyramid::blend_pyramids(
        &disparity_pyramids,
        &weight_pyramids,
    )?)?;
    let fused = finalize(blended, prep.range, prep.mask_and)?;

    Ok(FusionDetails {
        fused,
        weights: prep.weights,
        normalized: prep.normalized,
        disparity_pyramids,
        weight_pyramids,
        levels,
        range: prep.range,
    })
}

/// Multi-band fused disparity map (see [`fuse_with_details`]).
pub fn fuse_disparities(
    stack: &ExposureStack,
    cfg: &QualityConfig,
    levels: Option<usize>,
) -> Result<DisparityMap> {
    Ok(fuse_with_details(stack, cfg, levels)?.fused)
}

/// Single-scale reference fusion: the per-pixel weighted average of the
/// stack under the same normalized weights, without pyramid smoothing.
/// Seams in the weight maps show up directly in this output.
pub fn fuse_naive(stack: &ExposureStack, cfg: &QualityConfig) -> Result<DisparityMap> {
    let prep = prepare(stack, cfg)?;
    let disps: Vec<&Raster> = prep.normalized.iter().collect();
    let weights: Vec<&Raster> = prep.weights.normalized.iter().collect();
    let blended = pyramid::naive_blend(&disps, &weights)?;
    finalize(blended, prep.range, prep.mask_and)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_image(h: usize, w: usize, v: f64) -> ImageF {
        ImageF::new(h, w, 1, vec![v; h * w]).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> DisparityMap {
        let data = (0..h * w).map(|_| rng.gen_range(lo..hi)).collect();
        DisparityMap::from_data(h, w, data).unwrap()
    }

    fn stack_of(images: Vec<ImageF>, disps: Vec<DisparityMap>) -> ExposureStack {
        let labels = (0..images.len()).map(|k| format!("exp{k}")).collect();
        ExposureStack::new(images, disps, labels).unwrap()
    }

    #[test]
    fn consensus_of_identical_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_map(&mut rng, 32, 24, 3.0, 40.0);
        let images = vec![
            flat_image(32, 24, 0.2),
            flat_image(32, 24, 0.5),
            flat_image(32, 24, 0.9),
        ];
        let stack = stack_of(images, vec![d.clone(), d.clone(), d.clone()]);
        let fused = fuse_disparities(&stack, &QualityConfig::default(), None).unwrap();
        let (lo, hi) = d.min_max_valid().unwrap();
        let span = hi - lo;
        for i in 0..fused.data().len() {
            let rel = (fused.data()[i] - d.data()[i]).abs() / span;
            assert!(rel < 1e-4, "pixel {i}: rel err {rel}");
        }
        assert!(fused.mask().iter().all(|&m| m));
    }

    #[test]
    fn single_map_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_map(&mut rng, 17, 23, 0.0, 10.0);
        let stack = stack_of(vec![flat_image(17, 23, 0.4)], vec![d.clone()]);
        let fused = fuse_disparities(&stack, &QualityConfig::default(), None).unwrap();
        let span = 10.0;
        for i in 0..fused.data().len() {
            assert!((fused.data()[i] - d.data()[i]).abs() / span < 1e-4);
        }
    }

    #[test]
    fn permuting_the_stack_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let maps: Vec<DisparityMap> =
            (0..3).map(|_| random_map(&mut rng, 21, 19, 1.0, 9.0)).collect();
        let images = vec![
            flat_image(21, 19, 0.1),
            flat_image(21, 19, 0.5),
            flat_image(21, 19, 0.8),
        ];
        let forward = stack_of(images.clone(), maps.clone());
        let backward = stack_of(
            images.into_iter().rev().collect(),
            maps.into_iter().rev().collect(),
        );
        let cfg = QualityConfig::default();
        let a = fuse_disparities(&forward, &cfg, None).unwrap();
        let b = fuse_disparities(&backward, &cfg, None).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn output_stays_within_stack_range_plus_overshoot() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let maps: Vec<DisparityMap> =
                (0..3).map(|_| random_map(&mut rng, 33, 29, 5.0, 55.0)).collect();
            let images: Vec<ImageF> = (0..3)
                .map(|_| {
                    let data = (0..33 * 29).map(|_| rng.gen_range(0.0..1.0)).collect();
                    ImageF::new(33, 29, 1, data).unwrap()
                })
                .collect();
            let stack = stack_of(images, maps);
            let fused = fuse_disparities(&stack, &QualityConfig::default(), None).unwrap();
            let delta = 0.05 * 50.0;
            let (lo, hi): (f64, f64) = (5.0 - delta, 55.0 + delta);
            for &v in fused.data() {
                assert!(v >= lo.max(0.0) && v <= hi, "trial {trial}: {v} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn invalid_pixels_are_masked_out_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Poke a hole in one input.
        let a = {
            let base = random_map(&mut rng, 16, 16, 1.0, 5.0);
            let mut data = base.data().to_vec();
            data[40] = f64::INFINITY;
            DisparityMap::from_data(16, 16, data).unwrap()
        };
        let b = random_map(&mut rng, 16, 16, 1.0, 5.0);
        let stack = stack_of(
            vec![flat_image(16, 16, 0.5), flat_image(16, 16, 0.5)],
            vec![a, b],
        );
        let fused = fuse_disparities(&stack, &QualityConfig::default(), None).unwrap();
        assert!(!fused.mask()[40]);
        assert!(fused.data()[40].is_finite());
        assert_eq!(fused.valid_count(), 16 * 16 - 1);
    }

    #[test]
    fn exposedness_exponent_pulls_toward_better_exposed_map() {
        // Two constant maps, contrast disabled (w_c = 0) so only E acts.
        // Map 0 is backed by a mid-gray image (E = 1), map 1 by a darker
        // one. Raising w_e must move the result toward map 0.
        let (h, w) = (8, 8);
        let d0 = DisparityMap::from_data(h, w, vec![10.0; h * w]).unwrap();
        let d1 = DisparityMap::from_data(h, w, vec![20.0; h * w]).unwrap();
        let images = vec![flat_image(h, w, 0.5), flat_image(h, w, 0.2)];
        let stack = stack_of(images, vec![d0, d1]);
        let fuse_at = |w_e: f64| {
            let cfg = QualityConfig {
                w_c: 0.0,
                w_e,
                ..Default::default()
            };
            fuse_disparities(&stack, &cfg, Some(1)).unwrap().at(4, 4)
        };
        let r1 = fuse_at(1.0);
        let r2 = fuse_at(2.0);
        let r4 = fuse_at(4.0);
        assert!(r1 > r2 && r2 > r4, "{r1} {r2} {r4}");
        assert!((r4 - 10.0).abs() < (r1 - 10.0).abs());
    }

    #[test]
    fn degenerate_range_is_rejected_with_label() {
        let d = DisparityMap::from_data(8, 8, vec![7.0; 64]).unwrap();
        let stack = stack_of(
            vec![flat_image(8, 8, 0.5), flat_image(8, 8, 0.6)],
            vec![d.clone(), d],
        );
        match fuse_disparities(&stack, &QualityConfig::default(), None) {
            Err(Error::InvalidRange(msg)) => assert!(msg.contains("exp0"), "{msg}"),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_extents_are_rejected_by_construction() {
        let err = ExposureStack::new(
            vec![flat_image(8, 8, 0.5), flat_image(8, 9, 0.5)],
            vec![
                DisparityMap::from_data(8, 8, vec![1.0; 64]).unwrap(),
                DisparityMap::from_data(8, 9, vec![1.0; 72]).unwrap(),
            ],
            vec!["a".into(), "b".into()],
        );
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn naive_and_single_level_fuse_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let maps: Vec<DisparityMap> =
            (0..3).map(|_| random_map(&mut rng, 12, 10, 2.0, 8.0)).collect();
        let images: Vec<ImageF> = vec![
            flat_image(12, 10, 0.3),
            flat_image(12, 10, 0.5),
            flat_image(12, 10, 0.7),
        ];
        let stack = stack_of(images, maps);
        let cfg = QualityConfig::default();
        let pyr1 = fuse_disparities(&stack, &cfg, Some(1)).unwrap();
        let naive = fuse_naive(&stack, &cfg).unwrap();
        for (a, b) in pyr1.data().iter().zip(naive.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_level_counts_are_rejected() {
        let d = DisparityMap::from_data(8, 8, (0..64).map(|i| i as f64).collect()).unwrap();
        let stack = stack_of(vec![flat_image(8, 8, 0.5)], vec![d]);
        let cfg = QualityConfig::default();
        assert!(fuse_disparities(&stack, &cfg, Some(0)).is_err());
        assert!(fuse_disparities(&stack, &cfg, Some(9)).is_err());
        assert!(fuse_disparities(&stack, &cfg, Some(4)).is_ok());
    }
}
