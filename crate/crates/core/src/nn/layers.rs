//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, so a
//! `backward` call must follow the matching `forward`. Weights are stored at
//! unit scale and multiplied by `1/sqrt(fan_in)` at use (equalized learning
//! rate), which keeps one learning rate meaningful across layer widths.

use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{gemm, Tensor};

/// A trainable buffer and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    fn normal(len: usize, rng: &mut impl Rng) -> Self {
        Self::new((0..len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub trait Layer: Send {
    fn forward(&mut self, x: &Tensor) -> Tensor;
    fn backward(&mut self, grad_out: &Tensor) -> Tensor;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// 2-D convolution over NCHW input, lowered to im2col + GEMM.
pub struct Conv2d {
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gain: f32,
    weight: Param,
    bias: Param,
    cols: Vec<Vec<f32>>,
    in_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            gain: 1.0 / ((in_c * k * k) as f32).sqrt(),
            weight: Param::normal(out_c * in_c * k * k, rng),
            bias: Param::new(vec![0.0; out_c]),
            cols: Vec::new(),
            in_hw: (0, 0),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let kk = self.k * self.k;
        for c in 0..self.in_c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut cols[(c * kk + ky * self.k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let kk = self.k * self.k;
        for c in 0..self.in_c {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &cols[(c * kk + ky * self.k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn scaled_weight(&self) -> Vec<f32> {
        self.weight.value.iter().map(|w| w * self.gain).collect()
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let s = x.shape();
        assert_eq!(s.len(), 4, "conv input must be NCHW");
        assert_eq!(s[1], self.in_c, "conv channel mismatch");
        let (n, h, w) = (s[0], s[2], s[3]);
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let ckk = self.in_c * self.k * self.k;
        let weight = self.scaled_weight();
        let mut out = Tensor::zeros(&[n, self.out_c, oh, ow]);
        self.cols.resize_with(n, Vec::new);
        self.in_hw = (h, w);
        for i in 0..n {
            let mut cols = std::mem::take(&mut self.cols[i]);
            cols.resize(ckk * ohw, 0.0);
            self.im2col(x.sample(i), h, w, &mut cols);
            let o = out.sample_mut(i);
            for (c, b) in self.bias.value.iter().enumerate() {
                o[c * ohw..(c + 1) * ohw].iter_mut().for_each(|v| *v = *b);
            }
            gemm(self.out_c, ckk, ohw, &weight, false, &cols, false, o, true);
            self.cols[i] = cols;
        }
        self.cols.truncate(n);
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let n = grad_out.batch();
        let (h, w) = self.in_hw;
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let ckk = self.in_c * self.k * self.k;
        let weight = self.scaled_weight();
        let mut dx = Tensor::zeros(&[n, self.in_c, h, w]);
        let mut dcols = vec![0.0f32; ckk * ohw];
        let mut dw = vec![0.0f32; self.weight.value.len()];
        for i in 0..n {
            let g = grad_out.sample(i);
            for c in 0..self.out_c {
                self.bias.grad[c] += g[c * ohw..(c + 1) * ohw].iter().sum::<f32>();
            }
            gemm(self.out_c, ohw, ckk, g, false, &self.cols[i], true, &mut dw, true);
            gemm(ckk, self.out_c, ohw, &weight, true, g, false, &mut dcols, false);
            self.col2im(&dcols, h, w, dx.sample_mut(i));
        }
        for (g, d) in self.weight.grad.iter_mut().zip(&dw) {
            *g += d * self.gain;
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Per-channel (depthwise) convolution, as used in inverted-residual blocks.
pub struct DepthwiseConv2d {
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gain: f32,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl DepthwiseConv2d {
    pub fn new(c: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Self {
            c,
            k,
            stride,
            pad,
            gain: 1.0 / ((k * k) as f32).sqrt(),
            weight: Param::normal(c * k * k, rng),
            bias: Param::new(vec![0.0; c]),
            input: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Visits every (output index, input index, kernel index) triple of one plane.
    fn for_each_tap(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = self.out_hw(h, w);
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        f(oy * ow + ox, iy as usize * w + ix as usize, ky * self.k + kx);
                    }
                }
            }
        }
    }
}

impl Layer for DepthwiseConv2d {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let s = x.shape();
        assert_eq!(s[1], self.c, "depthwise channel mismatch");
        let (n, h, w) = (s[0], s[2], s[3]);
        let (oh, ow) = self.out_hw(h, w);
        let kk = self.k * self.k;
        let mut out = Tensor::zeros(&[n, self.c, oh, ow]);
        for i in 0..n {
            let xi = x.sample(i);
            let oi = out.sample_mut(i);
            for c in 0..self.c {
                let plane = &xi[c * h * w..(c + 1) * h * w];
                let kern = &self.weight.value[c * kk..(c + 1) * kk];
                let dst = &mut oi[c * oh * ow..(c + 1) * oh * ow];
                dst.iter_mut().for_each(|v| *v = self.bias.value[c]);
                self.for_each_tap(h, w, |o, p, t| dst[o] += plane[p] * kern[t] * self.gain);
            }
        }
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward before forward");
        let s = x.shape();
        let (n, h, w) = (s[0], s[2], s[3]);
        let (oh, ow) = self.out_hw(h, w);
        let kk = self.k * self.k;
        let mut dx = Tensor::zeros(s);
        let mut dw = vec![0.0f32; self.weight.value.len()];
        for i in 0..n {
            let xi = x.sample(i);
            let gi = grad_out.sample(i);
            let di = dx.sample_mut(i);
            for c in 0..self.c {
                let plane = &xi[c * h * w..(c + 1) * h * w];
                let g = &gi[c * oh * ow..(c + 1) * oh * ow];
                let kern = &self.weight.value[c * kk..(c + 1) * kk];
                let dplane = &mut di[c * h * w..(c + 1) * h * w];
                let dk = &mut dw[c * kk..(c + 1) * kk];
                self.bias.grad[c] += g.iter().sum::<f32>();
                self.for_each_tap(h, w, |o, p, t| {
                    dk[t] += g[o] * plane[p];
                    dplane[p] += g[o] * kern[t] * self.gain;
                });
            }
        }
        for (g, d) in self.weight.grad.iter_mut().zip(&dw) {
            *g += d * self.gain;
        }
        self.input = Some(x);
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer over `[N, in]` input.
pub struct Linear {
    inp: usize,
    out: usize,
    gain: f32,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            inp,
            out,
            gain: 1.0 / (inp as f32).sqrt(),
            weight: Param::normal(out * inp, rng),
            bias: Param::new(vec![0.0; out]),
            input: None,
        }
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.sample_len(), self.inp, "linear input width mismatch");
        let weight: Vec<f32> = self.weight.value.iter().map(|w| w * self.gain).collect();
        let mut y = Tensor::zeros(&[n, self.out]);
        for i in 0..n {
            y.sample_mut(i).copy_from_slice(&self.bias.value);
        }
        gemm(n, self.inp, self.out, x.data(), false, &weight, true, y.data_mut(), true);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward before forward");
        let n = x.batch();
        let weight: Vec<f32> = self.weight.value.iter().map(|w| w * self.gain).collect();
        let mut dx = Tensor::zeros(&[n, self.inp]);
        gemm(n, self.out, self.inp, grad_out.data(), false, &weight, false, dx.data_mut(), false);
        let mut dw = vec![0.0f32; self.out * self.inp];
        gemm(self.out, n, self.inp, grad_out.data(), true, x.data(), false, &mut dw, false);
        for (g, d) in self.weight.grad.iter_mut().zip(&dw) {
            *g += d * self.gain;
        }
        for i in 0..n {
            for (b, g) in self.bias.grad.iter_mut().zip(grad_out.sample(i)) {
                *b += g;
            }
        }
        let shape = x.shape().to_vec();
        self.input = Some(x);
        dx.reshape(&shape)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Leaky ReLU; slope 0 gives a plain ReLU.
pub struct LeakyRelu {
    slope: f32,
    input: Option<Tensor>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self { slope, input: None }
    }

    pub fn relu() -> Self {
        Self::new(0.0)
    }
}

impl Layer for LeakyRelu {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        let s = self.slope;
        x.map(|v| if v > 0.0 { v } else { v * s })
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward before forward");
        let mut g = grad_out.clone();
        for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
            if *xv <= 0.0 {
                *gv *= self.slope;
            }
        }
        g
    }
}

pub struct Tanh {
    output: Option<Tensor>,
}

impl Tanh {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl Default for Tanh {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Tanh {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = x.map(f32::tanh);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let y = self.output.as_ref().expect("backward before forward");
        let mut g = grad_out.clone();
        for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
            *gv *= 1.0 - yv * yv;
        }
        g
    }
}

/// Reshapes each sample, keeping the batch axis.
pub struct Reshape {
    target: Vec<usize>,
    in_shape: Vec<usize>,
}

impl Reshape {
    pub fn new(per_sample: &[usize]) -> Self {
        Self {
            target: per_sample.to_vec(),
            in_shape: Vec::new(),
        }
    }

    pub fn flatten() -> Self {
        Self::new(&[])
    }
}

impl Layer for Reshape {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = x.shape().to_vec();
        let mut shape = vec![x.batch()];
        if self.target.is_empty() {
            shape.push(x.sample_len());
        } else {
            shape.extend(&self.target);
        }
        x.clone().reshape(&shape)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        grad_out.clone().reshape(&self.in_shape)
    }
}

/// Nearest-neighbour 2x upsampling.
pub struct Upsample2x {
    in_shape: Vec<usize>,
}

impl Upsample2x {
    pub fn new() -> Self {
        Self { in_shape: Vec::new() }
    }
}

impl Default for Upsample2x {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Upsample2x {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        self.in_shape = s.to_vec();
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        let src = x.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let s = &self.in_shape;
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut dx = Tensor::zeros(s);
        let g = grad_out.data();
        let d = dx.data_mut();
        for p in 0..n * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    d[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
                }
            }
        }
        dx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Global spatial pooling `[N,C,H,W] -> [N,C]`.
pub struct GlobalPool {
    kind: PoolKind,
    in_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl GlobalPool {
    pub fn new(kind: PoolKind) -> Self {
        Self {
            kind,
            in_shape: Vec::new(),
            argmax: Vec::new(),
        }
    }
}

impl Layer for GlobalPool {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        self.in_shape = s.to_vec();
        self.argmax.clear();
        let mut out = Tensor::zeros(&[n, c]);
        for (p, plane) in x.data().chunks(hw).enumerate() {
            out.data_mut()[p] = match self.kind {
                PoolKind::Avg => plane.iter().sum::<f32>() / hw as f32,
                PoolKind::Max => {
                    let (idx, v) = plane
                        .iter()
                        .enumerate()
                        .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                    self.argmax.push(idx);
                    v
                }
            };
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let s = &self.in_shape;
        let hw = s[2] * s[3];
        let mut dx = Tensor::zeros(s);
        for (p, g) in grad_out.data().iter().enumerate() {
            let plane = &mut dx.data_mut()[p * hw..(p + 1) * hw];
            match self.kind {
                PoolKind::Avg => plane.iter_mut().for_each(|v| *v = g / hw as f32),
                PoolKind::Max => plane[self.argmax[p]] = *g,
            }
        }
        dx
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, layer: impl Layer + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h);
        }
        h
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// `y = x + body(x)`; body must preserve shape.
pub struct Residual {
    body: Sequential,
}

impl Residual {
    pub fn new(body: Sequential) -> Self {
        Self { body }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = self.body.forward(x);
        assert_eq!(y.shape(), x.shape(), "residual body changed shape");
        for (a, b) in y.data_mut().iter_mut().zip(x.data()) {
            *a += b;
        }
        y
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut g = self.body.backward(grad_out);
        for (a, b) in g.data_mut().iter_mut().zip(grad_out.data()) {
            *a += b;
        }
        g
    }

    fn params(&self) -> Vec<&Param> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.body.params_mut()
    }
}
