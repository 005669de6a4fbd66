//! Backbone building blocks: fused convolutions, C2f blocks and SPPF, each
//! with a backward pass that propagates gradients to the module *input* only.
//! Weights are immutable after load, so no weight gradients exist anywhere.

use crate::tensor::Tensor;

/// Activation applied after a convolution. Batch norm is assumed fused into
/// the convolution weights at export time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Act {
    Linear,
    Relu,
    Silu,
    Sigmoid,
}

impl Act {
    fn apply_in_place(self, t: &mut Tensor) {
        match self {
            Act::Linear => {}
            Act::Relu => {
                for v in t.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Act::Silu => {
                for v in t.data_mut() {
                    *v *= sigmoid(*v);
                }
            }
            Act::Sigmoid => {
                for v in t.data_mut() {
                    *v = sigmoid(*v);
                }
            }
        }
    }

    /// Multiplies `dy` by the activation derivative evaluated at the
    /// pre-activation values.
    fn backward_in_place(self, dy: &mut Tensor, preact: &Tensor) {
        match self {
            Act::Linear => {}
            Act::Relu => {
                for (g, &x) in dy.data_mut().iter_mut().zip(preact.data()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Act::Silu => {
                for (g, &x) in dy.data_mut().iter_mut().zip(preact.data()) {
                    let s = sigmoid(x);
                    *g *= s * (1.0 + x * (1.0 - s));
                }
            }
            Act::Sigmoid => {
                for (g, &x) in dy.data_mut().iter_mut().zip(preact.data()) {
                    let s = sigmoid(x);
                    *g *= s * (1.0 - s);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// 2D convolution with bias and a fused activation.
#[derive(Debug, Clone)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub act: Act,
    /// `[out_c][in_c][k][k]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct ConvCache {
    /// Pre-activation output, kept only when the activation needs it.
    preact: Option<Tensor>,
}

impl Conv {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, act: Act) -> Self {
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            act,
            weights: vec![0.0; out_c * in_c * k * k],
            bias: vec![0.0; out_c],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    #[inline]
    fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((oc * self.in_c + ic) * self.k + ky) * self.k + kx]
    }

    #[allow(clippy::needless_range_loop)] // offset arithmetic across three slices
    pub fn forward(&self, x: &Tensor, cache: Option<&mut ConvCache>) -> Tensor {
        debug_assert_eq!(x.channels(), self.in_c);
        let (oh, ow) = self.out_shape(x.height(), x.width());
        let mut out = Tensor::zeros(self.out_c, oh, ow);
        let (xh, xw) = (x.height(), x.width());
        let s = self.stride;
        for oc in 0..self.out_c {
            let b = self.bias[oc];
            for v in out.channel_mut(oc) {
                *v = b;
            }
        }
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                let x_ch = x.channel(ic);
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let w = self.weight(oc, ic, ky, kx);
                        let (ox_lo, ox_hi) = match x_range(ow, xw, s, kx, self.pad) {
                            Some(r) => r,
                            None => continue,
                        };
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - self.pad as isize;
                            if iy < 0 || iy as usize >= xh {
                                continue;
                            }
                            let x_row = &x_ch[iy as usize * xw..(iy as usize + 1) * xw];
                            let out_base = (oc * oh + oy) * ow;
                            let out_row = &mut out.data_mut()[out_base..out_base + ow];
                            for ox in ox_lo..=ox_hi {
                                let ix = ox * s + kx - self.pad;
                                out_row[ox] += w * x_row[ix];
                            }
                        }
                    }
                }
            }
        }
        if let Some(c) = cache {
            c.preact = match self.act {
                Act::Linear => None,
                _ => Some(out.clone()),
            };
        }
        self.act.apply_in_place(&mut out);
        out
    }

    /// Gradient of a scalar loss w.r.t. the convolution input, given the
    /// gradient w.r.t. its output.
    #[allow(clippy::needless_range_loop)] // offset arithmetic across three slices
    pub fn backward(&self, dy: &Tensor, cache: &ConvCache, in_h: usize, in_w: usize) -> Tensor {
        let mut dyp = dy.clone();
        if let Some(preact) = &cache.preact {
            self.act.backward_in_place(&mut dyp, preact);
        } else {
            debug_assert_eq!(self.act, Act::Linear);
        }
        let (oh, ow) = (dyp.height(), dyp.width());
        let mut dx = Tensor::zeros(self.in_c, in_h, in_w);
        let s = self.stride;
        for oc in 0..self.out_c {
            let dy_ch = dyp.channel(oc);
            for ic in 0..self.in_c {
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let w = self.weight(oc, ic, ky, kx);
                        let (ox_lo, ox_hi) = match x_range(ow, in_w, s, kx, self.pad) {
                            Some(r) => r,
                            None => continue,
                        };
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - self.pad as isize;
                            if iy < 0 || iy as usize >= in_h {
                                continue;
                            }
                            let dy_row = &dy_ch[oy * ow..(oy + 1) * ow];
                            let dx_base = (ic * in_h + iy as usize) * in_w;
                            let dx_row = &mut dx.data_mut()[dx_base..dx_base + in_w];
                            for ox in ox_lo..=ox_hi {
                                let ix = ox * s + kx - self.pad;
                                dx_row[ix] += w * dy_row[ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Output-x range for which `ox * stride + kx - pad` lands inside `[0, in_w)`.
#[inline]
fn x_range(ow: usize, in_w: usize, stride: usize, kx: usize, pad: usize) -> Option<(usize, usize)> {
    let lo = if kx >= pad {
        0
    } else {
        (pad - kx).div_ceil(stride)
    };
    if in_w + pad <= kx {
        return None;
    }
    let hi = ((in_w - 1 + pad - kx) / stride).min(ow.wrapping_sub(1));
    if lo > hi || ow == 0 {
        return None;
    }
    Some((lo, hi))
}

/// Residual bottleneck used inside C2f: two 3×3 convolutions plus an optional
/// identity shortcut (handled by the enclosing C2f).
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub cv1: Conv,
    pub cv2: Conv,
}

#[derive(Debug, Default)]
pub struct BottleneckCache {
    cv1: ConvCache,
    cv2: ConvCache,
    mid_shape: (usize, usize),
}

impl Bottleneck {
    fn forward(&self, x: &Tensor, cache: Option<&mut BottleneckCache>) -> Tensor {
        match cache {
            Some(c) => {
                let mid = self.cv1.forward(x, Some(&mut c.cv1));
                c.mid_shape = (mid.height(), mid.width());
                self.cv2.forward(&mid, Some(&mut c.cv2))
            }
            None => {
                let mid = self.cv1.forward(x, None);
                self.cv2.forward(&mid, None)
            }
        }
    }

    fn backward(&self, dy: &Tensor, cache: &BottleneckCache, in_h: usize, in_w: usize) -> Tensor {
        let (mh, mw) = cache.mid_shape;
        let dmid = self.cv2.backward(dy, &cache.cv2, mh, mw);
        self.cv1.backward(&dmid, &cache.cv1, in_h, in_w)
    }
}

/// C2f block: a 1×1 expansion, a chain of bottlenecks over the second half of
/// the channels, concatenation of every intermediate, then a 1×1 fusion.
#[derive(Debug, Clone)]
pub struct C2f {
    pub cv1: Conv,
    pub cv2: Conv,
    pub bottlenecks: Vec<Bottleneck>,
    pub hidden: usize,
    pub shortcut: bool,
}

#[derive(Debug, Default)]
pub struct C2fCache {
    cv1: ConvCache,
    cv2: ConvCache,
    bns: Vec<BottleneckCache>,
    spatial: (usize, usize),
}

impl C2f {
    pub fn forward(&self, x: &Tensor, mut cache: Option<&mut C2fCache>) -> Tensor {
        let expanded = match cache.as_deref_mut() {
            Some(c) => {
                c.spatial = {
                    let (h, w) = self.cv1.out_shape(x.height(), x.width());
                    (h, w)
                };
                self.cv1.forward(x, Some(&mut c.cv1))
            }
            None => self.cv1.forward(x, None),
        };
        let (a, b) = expanded.split_channels(self.hidden);
        let mut parts = vec![a, b];
        if let Some(c) = cache.as_deref_mut() {
            c.bns = (0..self.bottlenecks.len())
                .map(|_| BottleneckCache::default())
                .collect();
        }
        for (i, bn) in self.bottlenecks.iter().enumerate() {
            let cur = parts.last().expect("at least two parts");
            let mut out = match cache.as_deref_mut() {
                Some(c) => bn.forward(cur, Some(&mut c.bns[i])),
                None => bn.forward(cur, None),
            };
            if self.shortcut {
                out.add_assign(cur);
            }
            parts.push(out);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let cat = Tensor::concat_channels(&refs);
        match cache {
            Some(c) => self.cv2.forward(&cat, Some(&mut c.cv2)),
            None => self.cv2.forward(&cat, None),
        }
    }

    pub fn backward(&self, dy: &Tensor, cache: &C2fCache, in_h: usize, in_w: usize) -> Tensor {
        let (h, w) = cache.spatial;
        let dcat = self.cv2.backward(dy, &cache.cv2, h, w);
        // Split the concat gradient into the per-part gradients.
        let n = self.bottlenecks.len();
        let mut part_grads: Vec<Tensor> = Vec::with_capacity(n + 2);
        let mut rest = dcat;
        for _ in 0..n + 1 {
            let (head, tail) = rest.split_channels(self.hidden);
            part_grads.push(head);
            rest = tail;
        }
        part_grads.push(rest);
        // Walk the bottleneck chain in reverse, accumulating into the
        // gradient of each predecessor part.
        for i in (0..n).rev() {
            let g_out = part_grads[i + 2].clone();
            let g_in = self.bottlenecks[i].backward(&g_out, &cache.bns[i], h, w);
            part_grads[i + 1].add_assign(&g_in);
            if self.shortcut {
                part_grads[i + 1].add_assign(&g_out);
            }
        }
        let d_expanded = Tensor::concat_channels(&[&part_grads[0], &part_grads[1]]);
        self.cv1.backward(&d_expanded, &cache.cv1, in_h, in_w)
    }
}

/// SPPF: 1×1 reduce, three chained max-pools, concat, 1×1 fuse.
#[derive(Debug, Clone)]
pub struct Sppf {
    pub cv1: Conv,
    pub cv2: Conv,
    pub k: usize,
}

#[derive(Debug, Default)]
pub struct SppfCache {
    cv1: ConvCache,
    cv2: ConvCache,
    argmax: [Vec<u32>; 3],
    spatial: (usize, usize),
}

impl Sppf {
    pub fn forward(&self, x: &Tensor, mut cache: Option<&mut SppfCache>) -> Tensor {
        let y = match cache.as_deref_mut() {
            Some(c) => {
                c.spatial = self.cv1.out_shape(x.height(), x.width());
                self.cv1.forward(x, Some(&mut c.cv1))
            }
            None => self.cv1.forward(x, None),
        };
        let (p1, a1) = max_pool_same(&y, self.k);
        let (p2, a2) = max_pool_same(&p1, self.k);
        let (p3, a3) = max_pool_same(&p2, self.k);
        if let Some(c) = cache.as_deref_mut() {
            c.argmax = [a1, a2, a3];
        }
        let cat = Tensor::concat_channels(&[&y, &p1, &p2, &p3]);
        match cache {
            Some(c) => self.cv2.forward(&cat, Some(&mut c.cv2)),
            None => self.cv2.forward(&cat, None),
        }
    }

    pub fn backward(&self, dy: &Tensor, cache: &SppfCache, in_h: usize, in_w: usize) -> Tensor {
        let (h, w) = cache.spatial;
        let dcat = self.cv2.backward(dy, &cache.cv2, h, w);
        let c = self.cv1.out_c;
        let (dy0, rest) = dcat.split_channels(c);
        let (dp1, rest) = rest.split_channels(c);
        let (dp2, dp3) = rest.split_channels(c);
        let mut g2 = dp2;
        g2.add_assign(&max_pool_backward(&dp3, &cache.argmax[2], c, h, w));
        let mut g1 = dp1;
        g1.add_assign(&max_pool_backward(&g2, &cache.argmax[1], c, h, w));
        let mut g0 = dy0;
        g0.add_assign(&max_pool_backward(&g1, &cache.argmax[0], c, h, w));
        self.cv1.backward(&g0, &cache.cv1, in_h, in_w)
    }
}

/// Stride-1 max pool with `same` padding; returns the pooled tensor and the
/// flat input index of each selected maximum (first occurrence wins on ties).
fn max_pool_same(x: &Tensor, k: usize) -> (Tensor, Vec<u32>) {
    let pad = k / 2;
    let (c, h, w) = x.shape();
    let mut out = Tensor::zeros(c, h, w);
    let mut argmax = vec![0u32; c * h * w];
    for ch in 0..c {
        let x_ch = x.channel(ch);
        for oy in 0..h {
            for ox in 0..w {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                let y_lo = oy.saturating_sub(pad);
                let y_hi = (oy + pad).min(h - 1);
                let x_lo = ox.saturating_sub(pad);
                let x_hi = (ox + pad).min(w - 1);
                for iy in y_lo..=y_hi {
                    for ix in x_lo..=x_hi {
                        let v = x_ch[iy * w + ix];
                        if v > best {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                let o = (ch * h + oy) * w + ox;
                out.data_mut()[o] = best;
                argmax[o] = (ch * h * w + best_idx) as u32;
            }
        }
    }
    (out, argmax)
}

fn max_pool_backward(dy: &Tensor, argmax: &[u32], c: usize, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(c, h, w);
    for (i, &g) in dy.data().iter().enumerate() {
        dx.data_mut()[argmax[i] as usize] += g;
    }
    dx
}

/// One top-level backbone module.
#[derive(Debug, Clone)]
pub enum Module {
    Conv(Conv),
    C2f(C2f),
    Sppf(Sppf),
}

#[derive(Debug)]
pub enum ModuleCache {
    Conv(ConvCache),
    C2f(C2fCache),
    Sppf(SppfCache),
}

impl Module {
    pub fn out_channels(&self) -> usize {
        match self {
            Module::Conv(c) => c.out_c,
            Module::C2f(b) => b.cv2.out_c,
            Module::Sppf(s) => s.cv2.out_c,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Module::Conv(c) => c.in_c,
            Module::C2f(b) => b.cv1.in_c,
            Module::Sppf(s) => s.cv1.in_c,
        }
    }

    /// Spatial downsampling factor contributed by this module.
    pub fn stride_factor(&self) -> usize {
        match self {
            Module::Conv(c) => c.stride,
            Module::C2f(_) | Module::Sppf(_) => 1,
        }
    }

    pub fn new_cache(&self) -> ModuleCache {
        match self {
            Module::Conv(_) => ModuleCache::Conv(ConvCache::default()),
            Module::C2f(_) => ModuleCache::C2f(C2fCache::default()),
            Module::Sppf(_) => ModuleCache::Sppf(SppfCache::default()),
        }
    }

    pub fn forward(&self, x: &Tensor, cache: Option<&mut ModuleCache>) -> Tensor {
        match (self, cache) {
            (Module::Conv(m), Some(ModuleCache::Conv(c))) => m.forward(x, Some(c)),
            (Module::Conv(m), None) => m.forward(x, None),
            (Module::C2f(m), Some(ModuleCache::C2f(c))) => m.forward(x, Some(c)),
            (Module::C2f(m), None) => m.forward(x, None),
            (Module::Sppf(m), Some(ModuleCache::Sppf(c))) => m.forward(x, Some(c)),
            (Module::Sppf(m), None) => m.forward(x, None),
            _ => unreachable!("cache kind matches module kind"),
        }
    }

    pub fn backward(&self, dy: &Tensor, cache: &ModuleCache, in_h: usize, in_w: usize) -> Tensor {
        match (self, cache) {
            (Module::Conv(m), ModuleCache::Conv(c)) => m.backward(dy, c, in_h, in_w),
            (Module::C2f(m), ModuleCache::C2f(c)) => m.backward(dy, c, in_h, in_w),
            (Module::Sppf(m), ModuleCache::Sppf(c)) => m.backward(dy, c, in_h, in_w),
            _ => unreachable!("cache kind matches module kind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_with(weights: Vec<f64>, bias: Vec<f64>, spec: (usize, usize, usize, usize, usize)) -> Conv {
        let (in_c, out_c, k, stride, pad) = spec;
        let mut c = Conv::new(in_c, out_c, k, stride, pad, Act::Linear);
        c.weights = weights;
        c.bias = bias;
        c
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1 reproduces the input.
        let c = conv_with(vec![1.0], vec![0.0], (1, 1, 1, 1, 0));
        let x = Tensor::from_data(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = c.forward(&x, None);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_box_filter_hand_computed() {
        // 3x3 all-ones kernel, pad 1, stride 1 on a 2x2 input sums the
        // in-bounds neighborhood.
        let c = conv_with(vec![1.0; 9], vec![0.0], (1, 1, 3, 1, 1));
        let x = Tensor::from_data(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = c.forward(&x, None);
        // Every output sees all four values (2x2 input fits in any 3x3 window).
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn conv_stride_two_shape() {
        let c = Conv::new(3, 5, 3, 2, 1, Act::Silu);
        let x = Tensor::zeros(3, 64, 48);
        let y = c.forward(&x, None);
        assert_eq!(y.shape(), (5, 32, 24));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        for act in [Act::Linear, Act::Silu, Act::Relu, Act::Sigmoid] {
            let mut c = Conv::new(2, 3, 3, 2, 1, act);
            for w in c.weights.iter_mut() {
                *w = unit();
            }
            for b in c.bias.iter_mut() {
                *b = unit() * 0.1;
            }
            let x = Tensor::from_data(2, 6, 5, (0..60).map(|_| unit() + 0.6).collect()).unwrap();
            // Scalar loss: sum of outputs.
            let mut cache = ConvCache::default();
            let y = c.forward(&x, Some(&mut cache));
            let dy = Tensor::from_data(y.channels(), y.height(), y.width(), vec![1.0; y.len()])
                .unwrap();
            let dx = c.backward(&dy, &cache, x.height(), x.width());
            let h = 1e-6;
            for i in (0..x.len()).step_by(7) {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fp: f64 = c.forward(&xp, None).data().iter().sum();
                let fm: f64 = c.forward(&xm, None).data().iter().sum();
                let num = (fp - fm) / (2.0 * h);
                let ana = dx.data()[i];
                assert!(
                    (num - ana).abs() <= 1e-6 * (1.0 + num.abs().max(ana.abs())),
                    "{act:?} idx {i}: numeric {num} vs analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn c2f_and_sppf_backward_match_finite_differences() {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        let mut rand_conv = |in_c: usize, out_c: usize, k: usize, s: usize, act: Act| {
            let mut c = Conv::new(in_c, out_c, k, s, k / 2, act);
            for w in c.weights.iter_mut() {
                *w = unit() * 0.6;
            }
            for b in c.bias.iter_mut() {
                *b = unit() * 0.1;
            }
            c
        };
        let c2f = C2f {
            cv1: rand_conv(3, 4, 1, 1, Act::Silu),
            cv2: rand_conv(6, 3, 1, 1, Act::Silu),
            bottlenecks: vec![Bottleneck {
                cv1: rand_conv(2, 2, 3, 1, Act::Silu),
                cv2: rand_conv(2, 2, 3, 1, Act::Silu),
            }],
            hidden: 2,
            shortcut: true,
        };
        let sppf = Sppf {
            cv1: rand_conv(3, 2, 1, 1, Act::Silu),
            cv2: rand_conv(8, 3, 1, 1, Act::Silu),
            k: 5,
        };
        let modules = [Module::C2f(c2f), Module::Sppf(sppf)];
        for m in &modules {
            let x = Tensor::from_data(3, 6, 6, (0..108).map(|_| unit() + 0.5).collect()).unwrap();
            let mut cache = m.new_cache();
            let y = m.forward(&x, Some(&mut cache));
            let dy =
                Tensor::from_data(y.channels(), y.height(), y.width(), vec![1.0; y.len()]).unwrap();
            let dx = m.backward(&dy, &cache, x.height(), x.width());
            let h = 1e-6;
            for i in (0..x.len()).step_by(11) {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fp: f64 = m.forward(&xp, None).data().iter().sum();
                let fm: f64 = m.forward(&xm, None).data().iter().sum();
                let num = (fp - fm) / (2.0 * h);
                let ana = dx.data()[i];
                assert!(
                    (num - ana).abs() <= 1e-5 * (1.0 + num.abs().max(ana.abs())),
                    "idx {i}: numeric {num} vs analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::from_data(1, 2, 2, vec![1.0, 4.0, 2.0, 3.0]).unwrap();
        let (p, arg) = max_pool_same(&x, 3);
        assert!(p.data().iter().all(|&v| v == 4.0));
        let dy = Tensor::from_data(1, 2, 2, vec![1.0; 4]).unwrap();
        let dx = max_pool_backward(&dy, &arg, 1, 2, 2);
        assert_eq!(dx.data(), &[0.0, 4.0, 0.0, 0.0]);
    }
}
