//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! topological order for the backward sweep. A node requires a gradient iff
//! it is a trainable leaf or any of its inputs requires one.

use super::kernels::{col2im, gemm, im2col, ConvGeom, Layout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    /// 2x2 kernel, stride 2 transposed convolution (exact 2x upsampling).
    ConvTranspose2 {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    InstanceNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<u8>,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Affine {
        x: NodeId,
        scale: f64,
    },
    MeanSpatial {
        x: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros of `shape` when nothing flowed in.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: [usize; 4]) -> Tensor {
        self.grads
            .get_mut(id.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(msg()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.nodes[id.0].requires_grad)
    }

    /// Square-kernel convolution with zero padding. `w` is `[O, C, k, k]`,
    /// `b` is `[1, O, 1, 1]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let [n, c, h, wd] = self.value(x).shape();
        let [o, wc, kh, kw] = self.value(w).shape();
        check(wc == c && kh == kw && stride >= 1, || {
            format!(
                "conv weight {:?} for input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            )
        })?;
        check(h + 2 * pad >= kh && wd + 2 * pad >= kw, || {
            format!("kernel {kh} too large for {h}x{wd} input with pad {pad}")
        })?;
        if let Some(b) = b {
            check(self.value(b).numel() == o, || "conv bias length".into())?;
        }
        let g = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel: kh,
            stride,
            pad,
        };
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = Tensor::zeros([n, o, oh, ow]);
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; g.col_rows() * g.col_cols()]
        };
        {
            let xv = &self.nodes[x.0].value;
            let wv = self.nodes[w.0].value.data();
            for i in 0..n {
                let col_src: &[f64] = if g.is_pointwise() {
                    xv.item(i)
                } else {
                    im2col(xv.item(i), &g, &mut cols);
                    &cols
                };
                let dst = out.item_mut(i);
                if let Some(b) = b {
                    let bv = self.nodes[b.0].value.data();
                    for (oc, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                        chunk.fill(bv[oc]);
                    }
                }
                let beta = if b.is_some() { 1.0 } else { 0.0 };
                gemm(
                    o,
                    g.col_rows(),
                    oh * ow,
                    wv,
                    Layout::Normal,
                    col_src,
                    Layout::Normal,
                    beta,
                    dst,
                );
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Transposed convolution with a 2x2 kernel and stride 2. `w` is
    /// `[C, O, 2, 2]`, `b` is `[1, O, 1, 1]`.
    pub fn conv_transpose2(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let [n, c, h, wd] = self.value(x).shape();
        let [wc, o, kh, kw] = self.value(w).shape();
        check(wc == c && kh == 2 && kw == 2, || {
            format!(
                "transposed conv weight {:?} for input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            )
        })?;
        check(self.value(b).numel() == o, || {
            "transposed conv bias length".into()
        })?;
        let hw = h * wd;
        let mut z = vec![0.0; o * 4 * hw];
        let mut out = Tensor::zeros([n, o, 2 * h, 2 * wd]);
        {
            let xv = &self.nodes[x.0].value;
            let wv = self.nodes[w.0].value.data();
            let bv = self.nodes[b.0].value.data();
            for i in 0..n {
                // z[(o, a, b), p] = sum_c w[c, (o, a, b)] x[c, p]
                gemm(
                    o * 4,
                    c,
                    hw,
                    wv,
                    Layout::Transposed,
                    xv.item(i),
                    Layout::Normal,
                    0.0,
                    &mut z,
                );
                let dst = out.item_mut(i);
                scatter_up2(&z, o, h, wd, dst, bv);
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::ConvTranspose2 { x, w, b }, rg))
    }

    /// Per-item, per-channel normalisation with a learned affine.
    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        const EPS: f64 = 1e-5;
        let shape = self.value(x).shape();
        let [n, c, _, _] = shape;
        check(
            self.value(gamma).numel() == c && self.value(beta).numel() == c,
            || "instance norm affine length".into(),
        )?;
        let plane = self.value(x).plane_len();
        let mut out = Tensor::zeros(shape);
        let mut means = Vec::with_capacity(n * c);
        let mut inv_stds = Vec::with_capacity(n * c);
        {
            let xv = self.value(x).data();
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            let od = out.data_mut();
            for i in 0..n * c {
                let ch = i % c;
                let src = &xv[i * plane..(i + 1) * plane];
                let mean = src.iter().sum::<f64>() / plane as f64;
                let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
                let inv_std = 1.0 / (var + EPS).sqrt();
                for (o, &v) in od[i * plane..(i + 1) * plane].iter_mut().zip(src) {
                    *o = gv[ch] * (v - mean) * inv_std + bv[ch];
                }
                means.push(mean);
                inv_stds.push(inv_std);
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                mean: means,
                inv_std: inv_stds,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    /// 2x2 max pooling, stride 2. Spatial dims must be even.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let [n, c, h, w] = self.value(x).shape();
        check(h % 2 == 0 && w % 2 == 0, || {
            format!("max pool needs even dims, got {h}x{w}")
        })?;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0u8; n * c * oh * ow];
        {
            let xv = self.value(x).data();
            let od = out.data_mut();
            for p in 0..n * c {
                let src = &xv[p * h * w..(p + 1) * h * w];
                for y in 0..oh {
                    for xo in 0..ow {
                        let base = 2 * y * w + 2 * xo;
                        let cand = [src[base], src[base + 1], src[base + w], src[base + w + 1]];
                        let mut best = 0;
                        for k in 1..4 {
                            if cand[k] > cand[best] {
                                best = k;
                            }
                        }
                        let o = p * oh * ow + y * ow + xo;
                        od[o] = cand[best];
                        argmax[o] = best as u8;
                    }
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [n, ca, h, w] = self.value(a).shape();
        let [nb, cb, hb, wb] = self.value(b).shape();
        check(n == nb && h == hb && w == wb, || {
            format!(
                "concat {:?} with {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )
        })?;
        let mut out = Tensor::zeros([n, ca + cb, h, w]);
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..n {
                let dst = out.item_mut(i);
                let split = av.item_len();
                dst[..split].copy_from_slice(av.item(i));
                dst[split..].copy_from_slice(bv.item(i));
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::tanh);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Tanh { x }, rg)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn mean_spatial(&mut self, x: NodeId) -> NodeId {
        let [n, c, _, _] = self.value(x).shape();
        let plane = self.value(x).plane_len();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let out = Tensor::from_vec([n, c, 1, 1], data).expect("shape matches");
        let rg = self.any_grad(&[x]);
        self.push(out, Op::MeanSpatial { x }, rg)
    }

    /// Back-propagates the given output seeds (`d loss / d node`) to every
    /// node that requires a gradient.
    pub fn backward(&self, seeds: &[(NodeId, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (id, seed) in seeds {
            check(seed.shape() == self.value(*id).shape(), || {
                format!(
                    "seed {:?} for node {:?}",
                    seed.shape(),
                    self.value(*id).shape()
                )
            })?;
            accumulate(&mut grads, *id, seed.clone());
            last = last.max(id.0 + 1);
        }
        for idx in (0..last).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &gy, &mut grads);
            // Keep the gradient so callers may inspect intermediate nodes.
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backward_node(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [n, c, h, wd] = xv.shape();
                let [o, _, k, _] = wv.shape();
                let g = ConvGeom {
                    channels: c,
                    height: h,
                    width: wd,
                    kernel: k,
                    stride: *stride,
                    pad: *pad,
                };
                let ncols = g.col_cols();
                let nrows = g.col_rows();
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = Tensor::zeros(self.value(*b).shape());
                        for i in 0..n {
                            for (oc, ch) in gy.item(i).chunks(ncols).enumerate() {
                                gb.data_mut()[oc] += ch.iter().sum::<f64>();
                            }
                        }
                        accumulate(grads, *b, gb);
                    }
                }
                let mut gw = want_w.then(|| Tensor::zeros(wv.shape()));
                let mut gx = want_x.then(|| Tensor::zeros(xv.shape()));
                let mut cols = if g.is_pointwise() {
                    Vec::new()
                } else {
                    vec![0.0; nrows * ncols]
                };
                let mut dcols = if g.is_pointwise() || !want_x {
                    Vec::new()
                } else {
                    vec![0.0; nrows * ncols]
                };
                for i in 0..n {
                    let dy = gy.item(i);
                    if let Some(gw) = gw.as_mut() {
                        let col_src: &[f64] = if g.is_pointwise() {
                            xv.item(i)
                        } else {
                            im2col(xv.item(i), &g, &mut cols);
                            &cols
                        };
                        // dW (O x R) += dY (O x P) · cols^T (P x R)
                        gemm(
                            o,
                            ncols,
                            nrows,
                            dy,
                            Layout::Normal,
                            col_src,
                            Layout::Transposed,
                            1.0,
                            gw.data_mut(),
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        if g.is_pointwise() {
                            gemm(
                                nrows,
                                o,
                                ncols,
                                wv.data(),
                                Layout::Transposed,
                                dy,
                                Layout::Normal,
                                1.0,
                                gx.item_mut(i),
                            );
                        } else {
                            gemm(
                                nrows,
                                o,
                                ncols,
                                wv.data(),
                                Layout::Transposed,
                                dy,
                                Layout::Normal,
                                0.0,
                                &mut dcols,
                            );
                            col2im(&dcols, &g, gx.item_mut(i));
                        }
                    }
                }
                if let Some(gw) = gw {
                    accumulate(grads, *w, gw);
                }
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
            }
            Op::ConvTranspose2 { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [n, c, h, wd] = xv.shape();
                let o = wv.shape()[1];
                let hw = h * wd;
                let mut dz = vec![0.0; o * 4 * hw];
                let mut gw = self.wants(*w).then(|| Tensor::zeros(wv.shape()));
                let mut gx = self.wants(*x).then(|| Tensor::zeros(xv.shape()));
                let mut gb = self
                    .wants(*b)
                    .then(|| Tensor::zeros(self.value(*b).shape()));
                for i in 0..n {
                    let dy = gy.item(i);
                    gather_up2(dy, o, h, wd, &mut dz);
                    if let Some(gb) = gb.as_mut() {
                        for (oc, ch) in dy.chunks(4 * hw).enumerate() {
                            gb.data_mut()[oc] += ch.iter().sum::<f64>();
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        // dW (C x 4O) += X (C x P) · dZ^T (P x 4O)
                        gemm(
                            c,
                            hw,
                            o * 4,
                            xv.item(i),
                            Layout::Normal,
                            &dz,
                            Layout::Transposed,
                            1.0,
                            gw.data_mut(),
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        // dX (C x P) = W (C x 4O) · dZ (4O x P)
                        gemm(
                            c,
                            o * 4,
                            hw,
                            wv.data(),
                            Layout::Normal,
                            &dz,
                            Layout::Normal,
                            0.0,
                            gx.item_mut(i),
                        );
                    }
                }
                if let Some(g) = gw {
                    accumulate(grads, *w, g);
                }
                if let Some(g) = gx {
                    accumulate(grads, *x, g);
                }
                if let Some(g) = gb {
                    accumulate(grads, *b, g);
                }
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma).data();
                let [_, c, _, _] = xv.shape();
                let plane = xv.plane_len();
                let m = plane as f64;
                let mut gg = self
                    .wants(*gamma)
                    .then(|| Tensor::zeros(self.value(*gamma).shape()));
                let mut gbeta = self
                    .wants(*beta)
                    .then(|| Tensor::zeros(self.value(*beta).shape()));
                let mut gx = self.wants(*x).then(|| Tensor::zeros(xv.shape()));
                for (i, (&mu, &inv)) in mean.iter().zip(inv_std).enumerate() {
                    let ch = i % c;
                    let src = &xv.data()[i * plane..(i + 1) * plane];
                    let dy = &gy.data()[i * plane..(i + 1) * plane];
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for (&v, &d) in src.iter().zip(dy) {
                        sum_dy += d;
                        sum_dy_xhat += d * (v - mu) * inv;
                    }
                    if let Some(g) = gg.as_mut() {
                        g.data_mut()[ch] += sum_dy_xhat;
                    }
                    if let Some(g) = gbeta.as_mut() {
                        g.data_mut()[ch] += sum_dy;
                    }
                    if let Some(g) = gx.as_mut() {
                        let scale = gv[ch] * inv / m;
                        let dst = &mut g.data_mut()[i * plane..(i + 1) * plane];
                        for ((o, &v), &d) in dst.iter_mut().zip(src).zip(dy) {
                            let xhat = (v - mu) * inv;
                            *o = scale * (m * d - sum_dy - xhat * sum_dy_xhat);
                        }
                    }
                }
                if let Some(g) = gg {
                    accumulate(grads, *gamma, g);
                }
                if let Some(g) = gbeta {
                    accumulate(grads, *beta, g);
                }
                if let Some(g) = gx {
                    accumulate(grads, *x, g);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                let mut gx = gy.clone();
                for (g, &v) in gx.data_mut().iter_mut().zip(xv) {
                    if v <= 0.0 {
                        *g *= slope;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::MaxPool2 { x, argmax } => {
                let [n, c, h, w] = self.value(*x).shape();
                let (oh, ow) = (h / 2, w / 2);
                let mut gx = Tensor::zeros([n, c, h, w]);
                let gd = gx.data_mut();
                for p in 0..n * c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let o = p * oh * ow + y * ow + xo;
                            let k = argmax[o] as usize;
                            let idx = p * h * w + (2 * y + k / 2) * w + 2 * xo + k % 2;
                            gd[idx] += gy.data()[o];
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Concat { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let split = av.item_len();
                let n = av.shape()[0];
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    for i in 0..n {
                        ga.item_mut(i).copy_from_slice(&gy.item(i)[..split]);
                    }
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    for i in 0..n {
                        gb.item_mut(i).copy_from_slice(&gy.item(i)[split..]);
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Tanh { x } => {
                let mut gx = gy.clone();
                for (g, &t) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *g *= 1.0 - t * t;
                }
                accumulate(grads, *x, gx);
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, gy.map(|g| g * scale));
            }
            Op::MeanSpatial { x } => {
                let xv = self.value(*x);
                let plane = xv.plane_len();
                let mut gx = Tensor::zeros(xv.shape());
                for (chunk, &g) in gx.data_mut().chunks_mut(plane).zip(gy.data()) {
                    chunk.fill(g / plane as f64);
                }
                accumulate(grads, *x, gx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// `z` holds `[(o, a, b), p]` blocks; writes `out[o, 2i + a, 2j + b]` plus bias.
fn scatter_up2(z: &[f64], o: usize, h: usize, w: usize, out: &mut [f64], bias: &[f64]) {
    let hw = h * w;
    let ow = 2 * w;
    for oc in 0..o {
        let dst = &mut out[oc * 4 * hw..(oc + 1) * 4 * hw];
        for a in 0..2 {
            for b in 0..2 {
                let src = &z[((oc * 2 + a) * 2 + b) * hw..][..hw];
                for i in 0..h {
                    let row = &mut dst[(2 * i + a) * ow..];
                    for j in 0..w {
                        row[2 * j + b] = src[i * w + j] + bias[oc];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`scatter_up2`] without the bias.
fn gather_up2(dy: &[f64], o: usize, h: usize, w: usize, dz: &mut [f64]) {
    let hw = h * w;
    let ow = 2 * w;
    for oc in 0..o {
        let src = &dy[oc * 4 * hw..(oc + 1) * 4 * hw];
        for a in 0..2 {
            for b in 0..2 {
                let dst = &mut dz[((oc * 2 + a) * 2 + b) * hw..][..hw];
                for i in 0..h {
                    let row = &src[(2 * i + a) * ow..];
                    for j in 0..w {
                        dst[i * w + j] = row[2 * j + b];
                    }
                }
            }
        }
    }
}
