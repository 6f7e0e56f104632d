//! Deterministic input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dispfuse::{DisparityMap, ExposureStack, ImageF, Raster};

/// Smooth raster with broad structure plus fine noise, worst-ish case for
/// pyramid reconstruction.
pub fn textured_raster(seed: u64, h: usize, w: usize) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-0.3..0.3)).collect();
    Raster::from_fn(h, w, |y, x| {
        let wave = ((y as f64 / 7.0).sin() + (x as f64 / 11.0).cos()) * 8.0;
        20.0 + wave + noise[y * w + x]
    })
}

/// Three-exposure stack over one scene: a shared disparity field observed
/// under dark, mid, and bright grayscale renderings.
pub fn synthetic_stack(seed: u64, h: usize, w: usize) -> ExposureStack {
    let scene = textured_raster(seed, h, w);
    let mut images = Vec::new();
    let mut disps = Vec::new();
    let mut labels = Vec::new();
    for (k, level) in [0.25, 0.5, 0.75].into_iter().enumerate() {
        let img = ImageF::new(
            h,
            w,
            1,
            scene.data().iter().map(|v| (level + v / 200.0).clamp(0.0, 1.0)).collect(),
        )
        .expect("image extent");
        let disp = DisparityMap::from_data(h, w, scene.data().to_vec()).expect("map extent");
        images.push(img);
        disps.push(disp);
        labels.push(format!("exp{k}"));
    }
    ExposureStack::new(images, disps, labels).expect("well-formed stack")
}

/// Pair of rasters with correlated structure for the metric benchmarks.
pub fn metric_pair(seed: u64, h: usize, w: usize) -> (DisparityMap, DisparityMap) {
    let gt = textured_raster(seed, h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let pred: Vec<f64> = gt.data().iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
    (
        DisparityMap::from_data(h, w, pred).expect("map extent"),
        DisparityMap::from_data(h, w, gt.data().to_vec()).expect("map extent"),
    )
}
