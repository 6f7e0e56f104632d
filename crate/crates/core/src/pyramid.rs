//! Gaussian and Laplacian pyramids with multi-band blending.
//!
//! The pyramids use the classic 5-tap binomial kernel `[1 4 6 4 1]/16`
//! applied separably with mirrored borders. Downsampling keeps the
//! even-indexed samples (`ceil(n/2)` extent chain, so odd extents are
//! fine); upsampling zero-inserts into the finer extent and blurs with the
//! same kernel at twice the gain per axis. Because each Laplacian band is
//! formed with exactly the same upsampler that [`collapse`] uses, the round
//! trip reconstructs the input up to float rounding.

use crate::quality::{reflect, sum_sorted};
use crate::raster::Raster;
use crate::{Error, Result};

/// 5-tap binomial blur kernel; the taps are exact dyadic rationals, so the
/// kernel sums to exactly 1 and constants survive filtering bit-for-bit.
const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// A resolution pyramid.
#[derive(Debug, Clone, PartialEq)]
pub enum Pyramid {
    /// Repeatedly blurred-and-decimated copies, finest first.
    Gaussian { levels: Vec<Raster> },
    /// Band-pass residuals (finest first) plus the coarsest Gaussian level.
    Laplacian { bands: Vec<Raster>, base: Raster },
}

impl Pyramid {
    /// Number of levels (for a Laplacian pyramid the base counts as one).
    pub fn len(&self) -> usize {
        match self {
            Pyramid::Gaussian { levels } => levels.len(),
            Pyramid::Laplacian { bands, .. } => bands.len() + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Largest usable level count for an extent: `floor(log2(min(h, w))) + 1`.
pub fn max_levels(height: usize, width: usize) -> usize {
    let m = height.min(width).max(1);
    (usize::BITS - 1 - m.leading_zeros()) as usize + 1
}

/// Separable 5-tap blur with mirrored borders.
fn blur5(r: &Raster) -> Raster {
    let (h, w) = r.extent();
    // Horizontal pass.
    let mut tmp = Raster::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in KERNEL.iter().enumerate() {
                let xx = reflect(x as isize + t as isize - 2, w);
                acc += k * r.at(y, xx);
            }
            tmp.set(y, x, acc);
        }
    }
    // Vertical pass.
    let mut out = Raster::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in KERNEL.iter().enumerate() {
                let yy = reflect(y as isize + t as isize - 2, h);
                acc += k * tmp.at(yy, x);
            }
            out.set(y, x, acc);
        }
    }
    out
}

/// Blur and keep even-indexed samples: `ceil(n/2)` per axis.
fn downsample2(r: &Raster) -> Raster {
    let blurred = blur5(r);
    let (h, w) = r.extent();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Raster::from_fn(oh, ow, |y, x| blurred.at(2 * y, 2 * x))
}

/// Zero-insert into the requested finer extent, blur, and restore the DC
/// gain (x2 per axis). The target extent must be the one the source was
/// decimated from, i.e. `ceil(target/2) == source`.
fn upsample2(r: &Raster, target_h: usize, target_w: usize) -> Result<Raster> {
    let (h, w) = r.extent();
    if target_h.div_ceil(2) != h || target_w.div_ceil(2) != w {
        return Err(Error::InvalidInput(format!(
            "cannot upsample {:?} to {}x{}: extents are not a decimation pair",
            r.extent(),
            target_h,
            target_w
        )));
    }
    let mut sparse = Raster::zeros(target_h, target_w);
    for y in 0..h {
        for x in 0..w {
            sparse.set(2 * y, 2 * x, r.at(y, x));
        }
    }
    let mut up = blur5(&sparse);
    for v in up.data_mut() {
        *v *= 4.0;
    }
    Ok(up)
}

fn check_levels(r: &Raster, levels: usize) -> Result<()> {
    let cap = max_levels(r.height(), r.width());
    if levels == 0 || levels > cap {
        return Err(Error::InvalidParameter(format!(
            "level count {levels} out of range 1..={cap} for extent {:?}",
            r.extent()
        )));
    }
    Ok(())
}

fn gaussian_chain(r: &Raster, levels: usize) -> Vec<Raster> {
    let mut chain = Vec::with_capacity(levels);
    chain.push(r.clone());
    for l in 1..levels {
        let next = downsample2(&chain[l - 1]);
        chain.push(next);
    }
    chain
}

/// Gaussian pyramid with `levels` levels, finest first.
pub fn gaussian_pyramid(r: &Raster, levels: usize) -> Result<Pyramid> {
    check_levels(r, levels)?;
    Ok(Pyramid::Gaussian {
        levels: gaussian_chain(r, levels),
    })
}

/// Laplacian pyramid: `levels - 1` band-pass residuals plus the coarsest
/// Gaussian level. One level means no bands — the base carries everything.
pub fn laplacian_pyramid(r: &Raster, levels: usize) -> Result<Pyramid> {
    check_levels(r, levels)?;
    let gs = gaussian_chain(r, levels);
    let mut bands = Vec::with_capacity(levels - 1);
    for l in 0..levels - 1 {
        let (h, w) = gs[l].extent();
        let up = upsample2(&gs[l + 1], h, w)?;
        let mut band = gs[l].clone();
        for (b, u) in band.data_mut().iter_mut().zip(up.data()) {
            *b -= u;
        }
        bands.push(band);
    }
    let base = gs[levels - 1].clone();
    Ok(Pyramid::Laplacian { bands, base })
}

/// Rebuilds the raster a Laplacian pyramid was decomposed from.
pub fn collapse(p: &Pyramid) -> Result<Raster> {
    let (bands, base) = match p {
        Pyramid::Laplacian { bands, base } => (bands, base),
        Pyramid::Gaussian { .. } => {
            return Err(Error::InvalidInput(
                "collapse expects a laplacian pyramid".into(),
            ));
        }
    };
    let mut acc = base.clone();
    for band in bands.iter().rev() {
        let (h, w) = band.extent();
        let mut up = upsample2(&acc, h, w)?;
        for (u, b) in up.data_mut().iter_mut().zip(band.data()) {
            *u += b;
        }
        acc = up;
    }
    Ok(acc)
}

/// Shared per-pixel weighted sum; pairs are reduced in a canonical order so
/// the result does not depend on the stack ordering.
fn blend_plane(disps: &[&Raster], weights: &[&Raster]) -> Raster {
    let (h, w) = disps[0].extent();
    let n = disps.len();
    let mut products = vec![0.0f64; n];
    Raster::from_fn(h, w, |y, x| {
        for k in 0..n {
            products[k] = weights[k].at(y, x) * disps[k].at(y, x);
        }
        sum_sorted(&mut products)
    })
}

fn check_stack_extents(disps: &[&Raster], weights: &[&Raster]) -> Result<()> {
    if disps.is_empty() {
        return Err(Error::InvalidInput("cannot blend an empty stack".into()));
    }
    if disps.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "expected equal counts, got {} disparities and {} weights",
            disps.len(),
            weights.len()
        )));
    }
    let extent = disps[0].extent();
    for (k, (d, w)) in disps.iter().zip(weights).enumerate() {
        if d.extent() != extent || w.extent() != extent {
            return Err(Error::InvalidInput(format!(
                "stack entry {k} has extents {:?}/{:?}, expected {:?}",
                d.extent(),
                w.extent(),
                extent
            )));
        }
    }
    Ok(())
}

/// Weighted average of `n` rasters with per-pixel weights (assumed to sum
/// to 1 at each pixel). This is the single-scale reference blend.
pub fn naive_blend(disps: &[&Raster], weights: &[&Raster]) -> Result<Raster> {
    check_stack_extents(disps, weights)?;
    Ok(blend_plane(disps, weights))
}

/// Multi-band blend: for every level (bands and base alike) computes the
/// per-pixel weighted sum of the disparity bands under the Gaussian-smoothed
/// weights. Inputs: Laplacian pyramids of the disparities and Gaussian
/// pyramids of the per-pixel normalized weights, all with equal level counts.
pub fn blend_pyramids(disps: &[Pyramid], weights: &[Pyramid]) -> Result<Pyramid> {
    if disps.is_empty() {
        return Err(Error::InvalidInput("cannot blend an empty stack".into()));
    }
    if disps.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "expected equal counts, got {} disparity and {} weight pyramids",
            disps.len(),
            weights.len()
        )));
    }
    let mut disp_parts = Vec::with_capacity(disps.len());
    let mut weight_levels = Vec::with_capacity(weights.len());
    for (k, (d, w)) in disps.iter().zip(weights).enumerate() {
        let (bands, base) = match d {
            Pyramid::Laplacian { bands, base } => (bands, base),
            Pyramid::Gaussian { .. } => {
                return Err(Error::InvalidInput(format!(
                    "disparity pyramid {k} must be laplacian"
                )));
            }
        };
        let levels = match w {
            Pyramid::Gaussian { levels } => levels,
            Pyramid::Laplacian { .. } => {
                return Err(Error::InvalidInput(format!(
                    "weight pyramid {k} must be gaussian"
                )));
            }
        };
        if levels.len() != bands.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "pyramid {k}: {} weight levels for {} disparity levels",
                levels.len(),
                bands.len() + 1
            )));
        }
        disp_parts.push((bands, base));
        weight_levels.push(levels);
    }
    let band_count = disp_parts[0].0.len();
    if disp_parts.iter().any(|(b, _)| b.len() != band_count) {
        return Err(Error::InvalidInput(
            "disparity pyramids disagree on level count".into(),
        ));
    }

    let mut out_bands = Vec::with_capacity(band_count);
    for l in 0..band_count {
        let ds: Vec<&Raster> = disp_parts.iter().map(|(b, _)| &(*b)[l]).collect();
        let ws: Vec<&Raster> = weight_levels.iter().map(|levels| &levels[l]).collect();
        check_stack_extents(&ds, &ws)?;
        out_bands.push(blend_plane(&ds, &ws));
    }
    let ds: Vec<&Raster> = disp_parts.iter().map(|(_, base)| *base).collect();
    let ws: Vec<&Raster> = weight_levels.iter().map(|levels| &levels[band_count]).collect();
    check_stack_extents(&ds, &ws)?;
    let out_base = blend_plane(&ds, &ws);
    Ok(Pyramid::Laplacian {
        bands: out_bands,
        base: out_base,
    })
}
