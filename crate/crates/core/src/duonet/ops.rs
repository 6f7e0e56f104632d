//! Differentiable primitives: zero-padded convolution, ReLU, bilinear
//! upsampling, softplus, element-wise fusion and the masked L1 loss.
//! Each forward has a matching reverse-mode companion.

use rand::Rng;

use super::tensor::Tensor;
use crate::{Error, Result};

/// A convolution layer's parameters. Weights are stored as
/// `[ky][kx][cin][cout]` with `cout` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv2d {
    pub fn new(kh: usize, kw: usize, cin: usize, cout: usize, stride: usize, pad: usize) -> Conv2d {
        Conv2d {
            kh,
            kw,
            cin,
            cout,
            stride,
            pad,
            w: vec![0.0; kh * kw * cin * cout],
            b: vec![0.0; cout],
        }
    }

    /// He-uniform initialization: `U(+-sqrt(6 / fan_in))` weights and a
    /// small positive constant bias. The inputs here are sparse binary dot
    /// patterns, so a receptive field can easily be all-zero; a zero bias
    /// would pin such a unit exactly on the ReLU kink, whereas 0.05 keeps
    /// every unit initially live and the loss surface smooth around the
    /// starting point.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = (self.kh * self.kw * self.cin) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for v in &mut self.w {
            *v = rng.gen_range(-bound..bound);
        }
        self.b.fill(0.05);
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn out_extent(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kh) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kw) / self.stride + 1;
        (oh, ow)
    }
}

/// Gradients for one convolution layer.
#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ConvGrad {
    pub fn zeros_like(conv: &Conv2d) -> ConvGrad {
        ConvGrad {
            w: vec![0.0; conv.w.len()],
            b: vec![0.0; conv.b.len()],
        }
    }
}

/// Zero-padded convolution.
pub(super) fn conv2d(x: &Tensor, conv: &Conv2d) -> Tensor {
    debug_assert_eq!(x.channels(), conv.cin);
    let (h, w, _) = x.shape();
    let (oh, ow) = conv.out_extent(h, w);
    let mut out = Tensor::zeros(oh, ow, conv.cout);
    let cout = conv.cout;
    let cin = conv.cin;
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = out.pixel_mut(oy, ox);
            acc.copy_from_slice(&conv.b);
            for ky in 0..conv.kh {
                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..conv.kw {
                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = x.pixel(iy as usize, ix as usize);
                    let base = (ky * conv.kw + kx) * cin;
                    for ci in 0..cin {
                        let xv = px[ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &conv.w[(base + ci) * cout..(base + ci) * cout + cout];
                        for co in 0..cout {
                            acc[co] += xv * wrow[co];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reverse-mode companion of [`conv2d`]: returns the input gradient and the
/// parameter gradients for the upstream gradient `gout`.
pub(super) fn conv2d_backward(x: &Tensor, conv: &Conv2d, gout: &Tensor) -> (Tensor, ConvGrad) {
    let (h, w, _) = x.shape();
    let (oh, ow) = conv.out_extent(h, w);
    debug_assert_eq!(gout.shape(), (oh, ow, conv.cout));
    let mut gx = Tensor::zeros(h, w, conv.cin);
    let mut grad = ConvGrad::zeros_like(conv);
    let cout = conv.cout;
    let cin = conv.cin;
    for oy in 0..oh {
        for ox in 0..ow {
            let g = gout.pixel(oy, ox);
            for co in 0..cout {
                grad.b[co] += g[co];
            }
            for ky in 0..conv.kh {
                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..conv.kw {
                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = x.pixel(iy as usize, ix as usize);
                    let gpx = gx.pixel_mut(iy as usize, ix as usize);
                    let base = (ky * conv.kw + kx) * cin;
                    for ci in 0..cin {
                        let off = (base + ci) * cout;
                        let wrow = &conv.w[off..off + cout];
                        let grow = &mut grad.w[off..off + cout];
                        let xv = px[ci];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            grow[co] += xv * g[co];
                            acc += wrow[co] * g[co];
                        }
                        gpx[ci] += acc;
                    }
                }
            }
        }
    }
    (gx, grad)
}

pub(super) fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Backward through ReLU given the *forward output* `out`.
pub(super) fn relu_backward(out: &Tensor, gout: &Tensor) -> Tensor {
    let mut g = gout.clone();
    for (gv, &ov) in g.data_mut().iter_mut().zip(out.data()) {
        if ov <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Element-wise multiplicative feature fusion. Zeroing either operand
/// annihilates the result exactly.
pub fn fuse_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidInput(format!(
            "fusion operands have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (h, w, c) = a.shape();
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(h, w, c, data)
}

/// Doubles both spatial extents with bilinear interpolation
/// (half-pixel-centered sampling, edge clamped): corner samples of the
/// input are preserved at the output corners.
pub fn upsample_bilinear2(x: &Tensor) -> Tensor {
    let (h, w, c) = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(oh, ow, c);
    for oy in 0..oh {
        let (y0, y1, wy) = src_coords(oy, h);
        for ox in 0..ow {
            let (x0, x1, wx) = src_coords(ox, w);
            let p00 = x.pixel(y0, x0);
            let p01 = x.pixel(y0, x1);
            let p10 = x.pixel(y1, x0);
            let p11 = x.pixel(y1, x1);
            let o = out.pixel_mut(oy, ox);
            for ch in 0..c {
                let top = p00[ch] * (1.0 - wx) + p01[ch] * wx;
                let bot = p10[ch] * (1.0 - wx) + p11[ch] * wx;
                o[ch] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Source row/column pair and interpolation weight for output index `o`
/// under `x2` upsampling: `src = (o + 0.5)/2 - 0.5`, clamped to the extent.
#[inline]
fn src_coords(o: usize, n: usize) -> (usize, usize, f64) {
    let src = (o as f64 + 0.5) / 2.0 - 0.5;
    let f = src.floor();
    let t = src - f;
    let i0 = (f as isize).clamp(0, n as isize - 1) as usize;
    let i1 = (f as isize + 1).clamp(0, n as isize - 1) as usize;
    (i0, i1, t)
}

/// Scatter-transpose of [`upsample_bilinear2`].
pub(super) fn upsample_bilinear2_backward(gout: &Tensor, h: usize, w: usize) -> Tensor {
    let (oh, ow, c) = gout.shape();
    debug_assert_eq!((oh, ow), (2 * h, 2 * w));
    let mut gx = Tensor::zeros(h, w, c);
    for oy in 0..oh {
        let (y0, y1, wy) = src_coords(oy, h);
        for ox in 0..ow {
            let (x0, x1, wx) = src_coords(ox, w);
            let g = gout.pixel(oy, ox).to_vec();
            for (ch, &gv) in g.iter().enumerate() {
                gx.pixel_mut(y0, x0)[ch] += gv * (1.0 - wy) * (1.0 - wx);
                gx.pixel_mut(y0, x1)[ch] += gv * (1.0 - wy) * wx;
                gx.pixel_mut(y1, x0)[ch] += gv * wy * (1.0 - wx);
                gx.pixel_mut(y1, x1)[ch] += gv * wy * wx;
            }
        }
    }
    gx
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub(super) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `d softplus / dx = sigmoid(x)`, computed without overflow.
#[inline]
pub(super) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Masked mean absolute error and its gradient with respect to `pred`.
/// `mask` (when given) selects the pixels that count; it must keep at least
/// one.
pub fn l1_loss(pred: &Tensor, gt: &Tensor, mask: Option<&[bool]>) -> Result<(f64, Tensor)> {
    if pred.shape() != gt.shape() {
        return Err(Error::InvalidInput(format!(
            "loss operands have shapes {:?} and {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if let Some(m) = mask {
        if m.len() != pred.data().len() {
            return Err(Error::InvalidInput(format!(
                "mask holds {} entries for {} samples",
                m.len(),
                pred.data().len()
            )));
        }
    }
    let n = match mask {
        Some(m) => m.iter().filter(|&&v| v).count(),
        None => pred.data().len(),
    };
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = pred.clone();
    for (i, gv) in grad.data_mut().iter_mut().enumerate() {
        let keep = mask.map_or(true, |m| m[i]);
        if keep {
            let d = pred.data()[i] - gt.data()[i];
            loss += d.abs() * inv;
            // signum(0.0) is 1.0 in IEEE terms; the subgradient we want
            // at an exact hit is 0.
            *gv = if d == 0.0 { 0.0 } else { d.signum() * inv };
        } else {
            *gv = 0.0;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference on a scalar function of one conv layer.
    fn fd_conv(x: &Tensor, conv: &Conv2d, eps: f64) -> (ConvGrad, Tensor) {
        // Loss = sum of outputs; analytic upstream gradient is all ones.
        let loss = |c: &Conv2d, xs: &Tensor| conv2d(xs, c).data().iter().sum::<f64>();
        let mut grad = ConvGrad::zeros_like(conv);
        for i in 0..conv.w.len() {
            let mut cp = conv.clone();
            cp.w[i] += eps;
            let up = loss(&cp, x);
            cp.w[i] -= 2.0 * eps;
            let dn = loss(&cp, x);
            grad.w[i] = (up - dn) / (2.0 * eps);
        }
        for i in 0..conv.b.len() {
            let mut cp = conv.clone();
            cp.b[i] += eps;
            let up = loss(&cp, x);
            cp.b[i] -= 2.0 * eps;
            let dn = loss(&cp, x);
            grad.b[i] = (up - dn) / (2.0 * eps);
        }
        let mut gx = Tensor::zeros(x.height(), x.width(), x.channels());
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let up = loss(conv, &xp);
            xp.data_mut()[i] -= 2.0 * eps;
            let dn = loss(conv, &xp);
            gx.data_mut()[i] = (up - dn) / (2.0 * eps);
        }
        (grad, gx)
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        let denom = a.abs().max(b.abs()).max(1e-6);
        assert!((a - b).abs() / denom < tol, "{a} vs {b}");
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut conv = Conv2d::new(3, 3, 1, 1, 1, 1);
        conv.w[(1 * 3 + 1) * 1] = 1.0; // center tap
        let x = Tensor::from_fn(4, 5, 1, |y, x, _| (y * 5 + x) as f64);
        let out = conv2d(&x, &conv);
        assert_eq!(out.shape(), (4, 5, 1));
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_stride2_halves_even_extents() {
        let conv = Conv2d::new(3, 3, 2, 4, 2, 1);
        let x = Tensor::zeros(16, 12, 2);
        assert_eq!(conv2d(&x, &conv).shape(), (8, 6, 4));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(stride, pad, cin, cout) in &[(1usize, 1usize, 2usize, 3usize), (2, 1, 1, 2)] {
            let mut conv = Conv2d::new(3, 3, cin, cout, stride, pad);
            conv.init(&mut rng);
            for b in &mut conv.b {
                *b = rng.gen_range(-0.5..0.5);
            }
            let x = Tensor::from_fn(6, 6, cin, |_, _, _| rng.gen_range(-1.0..1.0));
            let out = conv2d(&x, &conv);
            let ones = Tensor::zeros(out.height(), out.width(), out.channels()).map(|_| 1.0);
            let (gx, grad) = conv2d_backward(&x, &conv, &ones);
            let (fd_grad, fd_gx) = fd_conv(&x, &conv, 1e-5);
            for i in 0..grad.w.len() {
                assert_close(grad.w[i], fd_grad.w[i], 1e-6);
            }
            for i in 0..grad.b.len() {
                assert_close(grad.b[i], fd_grad.b[i], 1e-6);
            }
            for i in 0..gx.data().len() {
                assert_close(gx.data()[i], fd_gx.data()[i], 1e-6);
            }
        }
    }

    #[test]
    fn bilinear_upsample_hand_case() {
        let x = Tensor::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = upsample_bilinear2(&x);
        assert_eq!(up.shape(), (4, 4, 1));
        let expect = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        for (a, b) in up.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // Corners of the input survive at the output corners.
        assert_eq!(up.at(0, 0, 0), 0.0);
        assert_eq!(up.at(0, 3, 0), 1.0);
        assert_eq!(up.at(3, 0, 0), 2.0);
        assert_eq!(up.at(3, 3, 0), 3.0);
    }

    #[test]
    fn bilinear_backward_is_the_transpose() {
        // <up(x), g> == <x, up^T(g)> for random vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(3, 4, 2, |_, _, _| rng.gen_range(-1.0..1.0));
        let g = Tensor::from_fn(6, 8, 2, |_, _, _| rng.gen_range(-1.0..1.0));
        let up = upsample_bilinear2(&x);
        let gx = upsample_bilinear2_backward(&g, 3, 4);
        let lhs: f64 = up.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn fusion_annihilates_on_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::from_fn(4, 4, 3, |_, _, _| rng.gen_range(-2.0..2.0));
        let z = Tensor::zeros(4, 4, 3);
        let f = fuse_features(&a, &z).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
        let f = fuse_features(&z, &a).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fusion_is_commutative_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::from_fn(5, 3, 2, |_, _, _| rng.gen_range(-2.0..2.0));
        let b = Tensor::from_fn(5, 3, 2, |_, _, _| rng.gen_range(-2.0..2.0));
        let ab = fuse_features(&a, &b).unwrap();
        let ba = fuse_features(&b, &a).unwrap();
        for (x, y) in ab.data().iter().zip(ba.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn softplus_is_stable_and_positive() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(softplus(-5.0) > 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn l1_loss_hand_case_and_mask() {
        let pred = Tensor::from_vec(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gt = Tensor::from_vec(1, 4, 1, vec![1.0, 0.0, 3.0, 0.0]).unwrap();
        let (loss, grad) = l1_loss(&pred, &gt, None).unwrap();
        assert!((loss - 1.5).abs() < 1e-15); // (0 + 2 + 0 + 4) / 4
        assert_eq!(grad.data(), &[0.0, 0.25, 0.0, 0.25]);

        let mask = vec![false, true, false, false];
        let (loss, grad) = l1_loss(&pred, &gt, Some(&mask)).unwrap();
        assert_eq!(loss, 2.0);
        assert_eq!(grad.data(), &[0.0, 1.0, 0.0, 0.0]);

        assert!(matches!(
            l1_loss(&pred, &gt, Some(&[false; 4])),
            Err(Error::EmptyMask)
        ));
    }
}
