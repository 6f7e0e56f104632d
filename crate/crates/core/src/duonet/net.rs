//! The dual-encoder / single-decoder network.
//!
//! Two encoders with *independent* parameters (identical shapes) each
//! produce a feature map per scale; downsampling is a stride-2 convolution
//! followed by a 2-layer residual conv block. The per-scale maps from the
//! two sides are fused by element-wise multiplication, so information can
//! only cross between the views through those products. The decoder starts
//! from the coarsest fused map and, per stage, doubles the resolution
//! bilinearly, halves the channel count with a 1x1 convolution, *adds* the
//! fused map of that scale, and refines with a 3x3 convolution. A softplus
//! head keeps the predicted disparity positive.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::StereogramSample;
use super::ops::{
    self, conv2d, conv2d_backward, relu, relu_backward, upsample_bilinear2,
    upsample_bilinear2_backward, Conv2d, ConvGrad,
};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Number of encoder scales (and decoder stages).
pub const SCALES: usize = 3;

const ENC_LAYERS: usize = 3 * SCALES; // down + conv_a + conv_b per scale
const LEFT0: usize = 0;
const RIGHT0: usize = ENC_LAYERS;
const BOTTLENECK: usize = 2 * ENC_LAYERS;
const STAGE0: usize = BOTTLENECK + 1;
const FINAL_HALVE: usize = STAGE0 + 2 * (SCALES - 1);
const HEAD: usize = FINAL_HALVE + 1;
const LAYER_COUNT: usize = HEAD + 1;

/// Which encoder a query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct DualNet {
    base_width: usize,
    layers: Vec<Conv2d>,
}

/// Gradients for every layer, in the net's canonical layer order.
#[derive(Debug, Clone)]
pub struct DualNetGrad {
    layers: Vec<ConvGrad>,
}

impl DualNetGrad {
    fn zeros_like(net: &DualNet) -> DualNetGrad {
        DualNetGrad {
            layers: net.layers.iter().map(ConvGrad::zeros_like).collect(),
        }
    }

    /// Flattens in the same order as [`DualNet::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Max absolute gradient over the layers of one encoder.
    pub fn encoder_max_abs(&self, side: Side) -> f64 {
        let base = match side {
            Side::Left => LEFT0,
            Side::Right => RIGHT0,
        };
        self.layers[base..base + ENC_LAYERS]
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b))
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

impl DualNet {
    /// Builds a net with encoder widths `(w, 2w, 4w)` for `base_width = w`
    /// (must be even so the head-side channel halving stays integral) and
    /// He-uniform initialization from the seed.
    pub fn new(base_width: usize, seed: u64) -> Result<DualNet> {
        if base_width < 2 || base_width % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "base width must be even and >= 2, got {base_width}"
            )));
        }
        let w = |s: usize| base_width << s;
        let mut layers = Vec::with_capacity(LAYER_COUNT);
        for _side in 0..2 {
            for s in 0..SCALES {
                let cin = if s == 0 { 1 } else { w(s - 1) };
                layers.push(Conv2d::new(3, 3, cin, w(s), 2, 1)); // down
                layers.push(Conv2d::new(3, 3, w(s), w(s), 1, 1)); // conv_a
                layers.push(Conv2d::new(3, 3, w(s), w(s), 1, 1)); // conv_b
            }
        }
        let top = w(SCALES - 1);
        layers.push(Conv2d::new(3, 3, top, top, 1, 1)); // bottleneck
        for s in (0..SCALES - 1).rev() {
            layers.push(Conv2d::new(1, 1, w(s + 1), w(s), 1, 0)); // halve
            layers.push(Conv2d::new(3, 3, w(s), w(s), 1, 1)); // refine
        }
        layers.push(Conv2d::new(1, 1, base_width, base_width / 2, 1, 0)); // final halve
        layers.push(Conv2d::new(3, 3, base_width / 2, 1, 1, 1)); // head
        debug_assert_eq!(layers.len(), LAYER_COUNT);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut layers {
            layer.init(&mut rng);
        }
        Ok(DualNet { base_width, layers })
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn scales(&self) -> usize {
        SCALES
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    fn enc_layer(&self, side: Side, scale: usize, which: usize) -> &Conv2d {
        let base = match side {
            Side::Left => LEFT0,
            Side::Right => RIGHT0,
        };
        &self.layers[base + scale * 3 + which]
    }

    /// Canonical layer names, used by the serialized header.
    fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(LAYER_COUNT);
        for side in ["left", "right"] {
            for s in 0..SCALES {
                names.push(format!("{side}.scale{s}.down"));
                names.push(format!("{side}.scale{s}.conv_a"));
                names.push(format!("{side}.scale{s}.conv_b"));
            }
        }
        names.push("decoder.bottleneck".into());
        for s in (0..SCALES - 1).rev() {
            names.push(format!("decoder.stage{s}.halve"));
            names.push(format!("decoder.stage{s}.refine"));
        }
        names.push("decoder.final.halve".into());
        names.push("decoder.head".into());
        names
    }

    /// Concatenated parameters (per layer: weights then biases).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mutable access to the parameter at a flat index (same order as
    /// [`DualNet::to_flat`]).
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.w.len() {
                return &mut l.w[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return &mut l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Zeroes the biases of one encoder (useful to make an all-zero clue
    /// propagate as exactly zero features).
    pub fn zero_encoder_biases(&mut self, side: Side) {
        let base = match side {
            Side::Left => LEFT0,
            Side::Right => RIGHT0,
        };
        for l in &mut self.layers[base..base + ENC_LAYERS] {
            l.b.fill(0.0);
        }
    }

    /// Swaps the left and right encoder parameter sets.
    pub fn swap_encoders(&mut self) {
        for i in 0..ENC_LAYERS {
            self.layers.swap(LEFT0 + i, RIGHT0 + i);
        }
    }

    fn check_clues(&self, left: &Tensor, right: &Tensor) -> Result<()> {
        if left.shape() != right.shape() {
            return Err(Error::InvalidInput(format!(
                "clue shapes differ: {:?} vs {:?}",
                left.shape(),
                right.shape()
            )));
        }
        let (h, w, c) = left.shape();
        if c != 1 {
            return Err(Error::InvalidInput(format!(
                "clues must be single-channel, got {c}"
            )));
        }
        let div = 1usize << SCALES;
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!(
                "clue extent {h}x{w} must be divisible by {div}"
            )));
        }
        Ok(())
    }

    fn encode(&self, side: Side, clue: &Tensor) -> EncTrace {
        let mut x = Vec::with_capacity(SCALES);
        let mut d = Vec::with_capacity(SCALES);
        let mut u = Vec::with_capacity(SCALES);
        let mut f = Vec::with_capacity(SCALES);
        let mut cur = clue.clone();
        for s in 0..SCALES {
            let dn = relu(&conv2d(&cur, self.enc_layer(side, s, 0)));
            let ua = relu(&conv2d(&dn, self.enc_layer(side, s, 1)));
            let vb = conv2d(&ua, self.enc_layer(side, s, 2));
            let mut fpre = dn.clone();
            for (fv, &vv) in fpre.data_mut().iter_mut().zip(vb.data()) {
                *fv += vv;
            }
            let fs = relu(&fpre);
            x.push(cur);
            d.push(dn);
            u.push(ua);
            cur = fs.clone();
            f.push(fs);
        }
        EncTrace { x, d, u, f }
    }

    /// Runs the network, keeping every intermediate needed by the backward
    /// pass (and by tests that inspect activations).
    pub fn forward_trace(&self, left: &Tensor, right: &Tensor) -> Result<Trace> {
        self.check_clues(left, right)?;
        let lt = self.encode(Side::Left, left);
        let rt = self.encode(Side::Right, right);
        let fused: Vec<Tensor> = (0..SCALES)
            .map(|s| ops::fuse_features(&lt.f[s], &rt.f[s]).expect("shapes match"))
            .collect();

        let bneck = relu(&conv2d(&fused[SCALES - 1], &self.layers[BOTTLENECK]));
        let mut stages = Vec::with_capacity(SCALES - 1);
        let mut cur = bneck.clone();
        for (i, s) in (0..SCALES - 1).rev().enumerate() {
            let up = upsample_bilinear2(&cur);
            let halve = relu(&conv2d(&up, &self.layers[STAGE0 + 2 * i]));
            let mut injected = halve.clone();
            for (iv, &fv) in injected.data_mut().iter_mut().zip(fused[s].data()) {
                *iv += fv;
            }
            let refined = relu(&conv2d(&injected, &self.layers[STAGE0 + 2 * i + 1]));
            cur = refined.clone();
            stages.push(StageTrace {
                up,
                halve,
                injected,
                refined,
            });
        }
        let fin_up = upsample_bilinear2(&cur);
        let fin_halve = relu(&conv2d(&fin_up, &self.layers[FINAL_HALVE]));
        let head_pre = conv2d(&fin_halve, &self.layers[HEAD]);
        let out = head_pre.map(ops::softplus);
        Ok(Trace {
            left: lt,
            right: rt,
            fused,
            bneck,
            stages,
            fin_up,
            fin_halve,
            head_pre,
            out,
        })
    }

    /// Plain forward pass.
    pub fn forward(&self, left: &Tensor, right: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(left, right)?.out)
    }

    /// Loss only (used by the finite-difference probes).
    pub fn loss(
        &self,
        left: &Tensor,
        right: &Tensor,
        gt: &Tensor,
        mask: Option<&[bool]>,
    ) -> Result<f64> {
        let out = self.forward(left, right)?;
        Ok(ops::l1_loss(&out, gt, mask)?.0)
    }

    /// Forward + reverse pass: masked L1 loss and the full parameter
    /// gradient.
    pub fn loss_and_grad(
        &self,
        left: &Tensor,
        right: &Tensor,
        gt: &Tensor,
        mask: Option<&[bool]>,
    ) -> Result<(f64, DualNetGrad)> {
        let trace = self.forward_trace(left, right)?;
        let (loss, gout) = ops::l1_loss(&trace.out, gt, mask)?;
        let grad = self.backward(&trace, &gout);
        Ok((loss, grad))
    }

    fn backward(&self, t: &Trace, gout: &Tensor) -> DualNetGrad {
        let mut grad = DualNetGrad::zeros_like(self);

        // Head: softplus', then the 3x3 head conv.
        let mut g = gout.clone();
        for (gv, &pre) in g.data_mut().iter_mut().zip(t.head_pre.data()) {
            *gv *= ops::sigmoid(pre);
        }
        let (g_fin_halve, gl) = conv2d_backward(&t.fin_halve, &self.layers[HEAD], &g);
        grad.layers[HEAD] = gl;
        let g = relu_backward(&t.fin_halve, &g_fin_halve);
        let (g_fin_up, gl) = conv2d_backward(&t.fin_up, &self.layers[FINAL_HALVE], &g);
        grad.layers[FINAL_HALVE] = gl;
        let (h, w, _) = t.stages.last().map_or(t.bneck.shape(), |s| s.refined.shape());
        let mut g_cur = upsample_bilinear2_backward(&g_fin_up, h, w);

        // Decoder stages, finest first (reverse of construction order).
        let mut g_fused: Vec<Option<Tensor>> = vec![None; SCALES];
        for (i, s) in (0..SCALES - 1).rev().enumerate().rev() {
            let st = &t.stages[i];
            let g_ref = relu_backward(&st.refined, &g_cur);
            let (g_injected, gl) = conv2d_backward(&st.injected, &self.layers[STAGE0 + 2 * i + 1], &g_ref);
            grad.layers[STAGE0 + 2 * i + 1] = gl;
            // The injection was an addition: the gradient flows unchanged
            // into both the fused map and the halve output.
            g_fused[s] = Some(g_injected.clone());
            let g_halve = relu_backward(&st.halve, &g_injected);
            let (g_up, gl) = conv2d_backward(&st.up, &self.layers[STAGE0 + 2 * i], &g_halve);
            grad.layers[STAGE0 + 2 * i] = gl;
            let (ph, pw) = if i == 0 {
                (t.bneck.height(), t.bneck.width())
            } else {
                (t.stages[i - 1].refined.height(), t.stages[i - 1].refined.width())
            };
            g_cur = upsample_bilinear2_backward(&g_up, ph, pw);
        }

        // Bottleneck into the coarsest fused map.
        let g_b = relu_backward(&t.bneck, &g_cur);
        let (g_top, gl) = conv2d_backward(&t.fused[SCALES - 1], &self.layers[BOTTLENECK], &g_b);
        grad.layers[BOTTLENECK] = gl;
        g_fused[SCALES - 1] = Some(g_top);

        // Product rule at each fusion, then the two encoders.
        let mut g_left: Vec<Tensor> = Vec::with_capacity(SCALES);
        let mut g_right: Vec<Tensor> = Vec::with_capacity(SCALES);
        for s in 0..SCALES {
            let gf = g_fused[s].as_ref().expect("every scale receives gradient");
            g_left.push(ops::fuse_features(gf, &t.right.f[s]).expect("shapes match"));
            g_right.push(ops::fuse_features(gf, &t.left.f[s]).expect("shapes match"));
        }
        self.encoder_backward(Side::Left, &t.left, g_left, &mut grad);
        self.encoder_backward(Side::Right, &t.right, g_right, &mut grad);
        grad
    }

    fn encoder_backward(
        &self,
        side: Side,
        t: &EncTrace,
        g_f: Vec<Tensor>,
        grad: &mut DualNetGrad,
    ) {
        let base = match side {
            Side::Left => LEFT0,
            Side::Right => RIGHT0,
        };
        let mut carry: Option<Tensor> = None;
        for s in (0..SCALES).rev() {
            let mut g = g_f[s].clone();
            if let Some(c) = carry.take() {
                for (gv, &cv) in g.data_mut().iter_mut().zip(c.data()) {
                    *gv += cv;
                }
            }
            let g_fpre = relu_backward(&t.f[s], &g);
            let (g_u, gl) = conv2d_backward(&t.u[s], &self.layers[base + s * 3 + 2], &g_fpre);
            grad.layers[base + s * 3 + 2] = gl;
            let g_upre = relu_backward(&t.u[s], &g_u);
            let (g_d_a, gl) = conv2d_backward(&t.d[s], &self.layers[base + s * 3 + 1], &g_upre);
            grad.layers[base + s * 3 + 1] = gl;
            // Identity skip: d feeds both the block and the sum.
            let mut g_d = g_d_a;
            for (gv, &sv) in g_d.data_mut().iter_mut().zip(g_fpre.data()) {
                *gv += sv;
            }
            let g_dpre = relu_backward(&t.d[s], &g_d);
            let (g_x, gl) = conv2d_backward(&t.x[s], &self.layers[base + s * 3], &g_dpre);
            grad.layers[base + s * 3] = gl;
            if s > 0 {
                carry = Some(g_x);
            }
        }
    }

    /// One plain SGD step: `p -= lr * g`.
    pub fn apply_sgd(&mut self, grad: &DualNetGrad, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (p, gv) in l.w.iter_mut().zip(&g.w) {
                *p -= lr * gv;
            }
            for (p, gv) in l.b.iter_mut().zip(&g.b) {
                *p -= lr * gv;
            }
        }
    }
}

/// Encoder intermediates for one side.
#[derive(Debug, Clone)]
struct EncTrace {
    /// Input to the scale's down-convolution (`x[0]` is the clue).
    x: Vec<Tensor>,
    /// Post-ReLU downsampled map.
    d: Vec<Tensor>,
    /// Post-ReLU output of the block's first convolution.
    u: Vec<Tensor>,
    /// The scale's feature map (after skip and ReLU).
    f: Vec<Tensor>,
}

#[derive(Debug, Clone)]
struct StageTrace {
    up: Tensor,
    halve: Tensor,
    injected: Tensor,
    refined: Tensor,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    left: EncTrace,
    right: EncTrace,
    fused: Vec<Tensor>,
    bneck: Tensor,
    stages: Vec<StageTrace>,
    fin_up: Tensor,
    fin_halve: Tensor,
    head_pre: Tensor,
    out: Tensor,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.out
    }

    pub fn into_output(self) -> Tensor {
        self.out
    }

    /// Post-activation feature map of one encoder at a scale.
    pub fn encoder_feature(&self, side: Side, scale: usize) -> &Tensor {
        let t = match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        };
        &t.f[scale]
    }

    /// The multiplicatively fused map at a scale.
    pub fn fused(&self, scale: usize) -> &Tensor {
        &self.fused[scale]
    }
}

/// Max relative error between analytic gradients and central finite
/// differences over *every* parameter, probing the masked L1 loss on one
/// sample. Relative error uses a small absolute floor so honestly-zero
/// gradients compare cleanly.
///
/// The loss surface is piecewise smooth: ReLUs put kinks in it, and a probe
/// bracket that straddles a kink yields a difference quotient that estimates
/// no derivative at all. Each quotient is therefore *certified* before use:
/// the central difference is recomputed at half the step, and the two must
/// agree. Smooth curvature cancels out of central differences, so honest
/// quotients agree immediately; a kink inside one bracket but not the other
/// breaks the agreement and forces further halving until the bracket clears
/// the kink. The certificate never looks at the analytic gradient, so the
/// oracle stays independent. Halving stops after eight rounds — beyond that
/// the quotients sink into floating-point cancellation noise.
pub fn gradient_check(net: &DualNet, sample: &StereogramSample, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    let (_, grad) =
        net.loss_and_grad(&sample.left, &sample.right, &sample.gt, None)?;
    let analytic = grad.to_flat();
    let mut probe = net.clone();
    fn central(
        probe: &mut DualNet,
        sample: &StereogramSample,
        i: usize,
        orig: f64,
        step: f64,
    ) -> Result<f64> {
        *probe.param_mut(i) = orig + step;
        let up = probe.loss(&sample.left, &sample.right, &sample.gt, None)?;
        *probe.param_mut(i) = orig - step;
        let down = probe.loss(&sample.left, &sample.right, &sample.gt, None)?;
        *probe.param_mut(i) = orig;
        Ok((up - down) / (2.0 * step))
    }
    let mut max_rel = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        let mut step = eps;
        let mut fd = central(&mut probe, sample, i, orig, step)?;
        for _ in 0..8 {
            let finer = central(&mut probe, sample, i, orig, step / 2.0)?;
            let scale = fd.abs().max(finer.abs()).max(1e-6);
            let agreed = (fd - finer).abs() <= 5e-5 * scale;
            fd = finer;
            step /= 2.0;
            if agreed {
                break;
            }
        }
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

const MAGIC: &[u8; 8] = b"DUONET1\n";

/// JSON header stored in front of the flat parameter payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetHeader {
    pub format: u32,
    pub scales: usize,
    pub base_width: usize,
    pub seed: Option<u64>,
    pub param_count: usize,
    pub shapes: Vec<LayerShape>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
}

fn shapes_of(net: &DualNet) -> Vec<LayerShape> {
    net.layer_names()
        .into_iter()
        .zip(&net.layers)
        .map(|(name, l)| LayerShape {
            name,
            kh: l.kh,
            kw: l.kw,
            cin: l.cin,
            cout: l.cout,
            stride: l.stride,
            pad: l.pad,
        })
        .collect()
}

/// Serializes a net: magic, little-endian header length, JSON header
/// (shapes, seed, config), then the flat `f64` parameter payload.
pub fn save_net(path: impl AsRef<Path>, net: &DualNet, seed: Option<u64>) -> Result<()> {
    let path = path.as_ref();
    let header = NetHeader {
        format: 1,
        scales: SCALES,
        base_width: net.base_width(),
        seed,
        param_count: net.param_count(),
        shapes: shapes_of(net),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::InvalidInput(format!("cannot encode net header: {e}")))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + net.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in net.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a net saved by [`save_net`], validating the header against a
/// freshly constructed network of the same configuration.
pub fn load_net(path: impl AsRef<Path>) -> Result<(DualNet, NetHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(path, 0, "not a serialized net (bad magic)"));
    }
    let len_off = MAGIC.len();
    let json_len = u32::from_le_bytes(bytes[len_off..len_off + 4].try_into().unwrap()) as usize;
    let json_off = len_off + 4;
    if bytes.len() < json_off + json_len {
        return Err(Error::format(path, bytes.len(), "truncated header"));
    }
    let header: NetHeader = serde_json::from_slice(&bytes[json_off..json_off + json_len])
        .map_err(|e| Error::format(path, json_off, format!("bad header: {e}")))?;
    if header.format != 1 || header.scales != SCALES {
        return Err(Error::format(
            path,
            json_off,
            format!("unsupported net format {} / scales {}", header.format, header.scales),
        ));
    }
    let mut net = DualNet::new(header.base_width, 0)?;
    if header.param_count != net.param_count() || header.shapes != shapes_of(&net) {
        return Err(Error::format(
            path,
            json_off,
            "header shapes do not match the declared configuration",
        ));
    }
    let payload = &bytes[json_off + json_len..];
    if payload.len() != net.param_count() * 8 {
        return Err(Error::format(
            path,
            json_off + json_len,
            format!(
                "parameter payload holds {} bytes, expected {}",
                payload.len(),
                net.param_count() * 8
            ),
        ));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    net.set_flat(&flat)?;
    Ok((net, header))
}

#[cfg(test)]
mod tests {
    use super::super::data::make_stereogram;
    use super::*;

    fn clues(h: usize, w: usize) -> (Tensor, Tensor) {
        let pat = |y: usize, x: usize| ((y * 31 + x * 7) % 13) as f64 / 13.0;
        let left = Tensor::from_fn(h, w, 1, |y, x, _| pat(y, x));
        let right = Tensor::from_fn(h, w, 1, |y, x, _| pat(y, (x + 2) % w) * 0.8);
        (left, right)
    }

    #[test]
    fn output_extent_matches_input_extent() {
        let net = DualNet::new(4, 1).unwrap();
        let (l, r) = clues(16, 24);
        let out = net.forward(&l, &r).unwrap();
        assert_eq!(out.shape(), (16, 24, 1));
        assert!(out.data().iter().all(|&v| v > 0.0), "softplus head is positive");
    }

    #[test]
    fn rejects_extents_not_divisible_by_the_scale_factor() {
        let net = DualNet::new(4, 1).unwrap();
        let (l, r) = clues(16, 16);
        let bad = Tensor::zeros(20, 16, 1);
        assert!(matches!(net.forward(&bad, &bad), Err(Error::InvalidInput(_))));
        let two = Tensor::zeros(16, 16, 2);
        assert!(matches!(net.forward(&two, &two), Err(Error::InvalidInput(_))));
        assert!(matches!(net.forward(&l, &Tensor::zeros(16, 24, 1)), Err(Error::InvalidInput(_))));
        assert!(net.forward(&l, &r).is_ok());
    }

    #[test]
    fn rejects_odd_or_tiny_base_width() {
        assert!(matches!(DualNet::new(3, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(DualNet::new(0, 0), Err(Error::InvalidParameter(_))));
        assert!(DualNet::new(2, 0).is_ok());
    }

    #[test]
    fn parameter_counts_are_the_documented_budgets() {
        assert_eq!(DualNet::new(2, 0).unwrap().param_count(), 4_693);
        assert_eq!(DualNet::new(8, 0).unwrap().param_count(), 73_273);
    }

    #[test]
    fn all_zero_parameters_reduce_to_a_constant_head_bias() {
        let mut net = DualNet::new(4, 1).unwrap();
        let n = net.param_count();
        net.set_flat(&vec![0.0; n]).unwrap();
        *net.param_mut(n - 1) = 1.5; // the head bias is the last parameter
        let (l, r) = clues(16, 16);
        let out = net.forward(&l, &r).unwrap();
        let expect = 1.5f64.exp().ln_1p();
        for &v in out.data() {
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn zero_right_clue_yields_exactly_zero_left_encoder_gradients() {
        let mut net = DualNet::new(4, 3).unwrap();
        net.zero_encoder_biases(Side::Right);
        let (l, _) = clues(16, 16);
        let r = Tensor::zeros(16, 16, 1);
        let gt = Tensor::from_fn(16, 16, 1, |y, _, _| (y % 3) as f64);
        let trace = net.forward_trace(&l, &r).unwrap();
        for s in 0..SCALES {
            assert!(trace.encoder_feature(Side::Right, s).data().iter().all(|&v| v == 0.0));
            assert!(trace.fused(s).data().iter().all(|&v| v == 0.0));
        }
        let (_, grad) = net.loss_and_grad(&l, &r, &gt, None).unwrap();
        assert_eq!(grad.encoder_max_abs(Side::Left), 0.0);
        assert!(grad.encoder_max_abs(Side::Right) == 0.0, "dead input, dead side");
        // The decoder still learns: its bias paths carry gradient.
        let any_decoder = grad.layers[BOTTLENECK..]
            .iter()
            .flat_map(|g| g.w.iter().chain(&g.b))
            .any(|&v| v != 0.0);
        assert!(any_decoder);
    }

    #[test]
    fn swapping_clues_and_encoders_is_bit_exact() {
        let net = DualNet::new(4, 7).unwrap();
        let mut swapped = net.clone();
        swapped.swap_encoders();
        let (l, r) = clues(16, 16);
        let gt = Tensor::from_fn(16, 16, 1, |y, x, _| ((y + x) % 4) as f64);
        let (loss_a, grad_a) = net.loss_and_grad(&l, &r, &gt, None).unwrap();
        let (loss_b, grad_b) = swapped.loss_and_grad(&r, &l, &gt, None).unwrap();
        assert_eq!(loss_a.to_bits(), loss_b.to_bits());
        for i in 0..ENC_LAYERS {
            assert_eq!(grad_a.layers[LEFT0 + i].w, grad_b.layers[RIGHT0 + i].w);
            assert_eq!(grad_a.layers[LEFT0 + i].b, grad_b.layers[RIGHT0 + i].b);
            assert_eq!(grad_a.layers[RIGHT0 + i].w, grad_b.layers[LEFT0 + i].w);
        }
        assert_eq!(grad_a.layers[HEAD].w, grad_b.layers[HEAD].w);
    }

    #[test]
    fn perturbing_one_encoder_leaves_the_other_side_untouched() {
        let net = DualNet::new(4, 5).unwrap();
        let (l, r) = clues(16, 16);
        let base = net.forward_trace(&l, &r).unwrap();
        let mut bumped = net.clone();
        *bumped.param_mut(0) += 0.25; // left.scale0.down weight
        let probe = bumped.forward_trace(&l, &r).unwrap();
        for s in 0..SCALES {
            assert_eq!(
                base.encoder_feature(Side::Right, s).data(),
                probe.encoder_feature(Side::Right, s).data(),
                "right features must not see left parameters"
            );
        }
        assert_ne!(
            base.encoder_feature(Side::Left, 0).data(),
            probe.encoder_feature(Side::Left, 0).data()
        );
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let net = DualNet::new(2, 11).unwrap();
        let sample = make_stereogram(5, 8, 8, 1).unwrap();
        let max_rel = gradient_check(&net, &sample, 1e-3).unwrap();
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn serialization_round_trips_every_parameter_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = DualNet::new(4, 99).unwrap();
        save_net(&path, &net, Some(99)).unwrap();
        let (loaded, header) = load_net(&path).unwrap();
        assert_eq!(loaded.to_flat(), net.to_flat());
        assert_eq!(header.base_width, 4);
        assert_eq!(header.seed, Some(99));
        assert_eq!(header.param_count, net.param_count());
        assert_eq!(header.shapes[0].name, "left.scale0.down");
        assert_eq!(header.shapes.last().unwrap().name, "decoder.head");

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        match load_net(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn sgd_step_moves_parameters_against_the_gradient() {
        let mut net = DualNet::new(2, 4).unwrap();
        let sample = make_stereogram(9, 16, 16, 2).unwrap();
        let before = net
            .loss(&sample.left, &sample.right, &sample.gt, None)
            .unwrap();
        for _ in 0..20 {
            let (_, grad) = net
                .loss_and_grad(&sample.left, &sample.right, &sample.gt, None)
                .unwrap();
            net.apply_sgd(&grad, 1e-2);
        }
        let after = net
            .loss(&sample.left, &sample.right, &sample.gt, None)
            .unwrap();
        assert!(
            after < before,
            "20 steps on one sample should reduce its loss ({before} -> {after})"
        );
    }
}
