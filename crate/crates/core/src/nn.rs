//! Tensor primitives with hand-written backward passes.
//!
//! Feature maps are `Tensor3` in height x width x channel order with the
//! channel index fastest. Convolution kernels are stored HWIO:
//! `w[((ky * 3 + kx) * cin + c) * cout + o]`, so the innermost loops of both
//! passes run over contiguous output channels.

use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("channel mismatch: kernel expects {expected} input channels, tensor has {found}")]
    Channels { expected: usize, found: usize },
    #[error("input {h}x{w} too small for a 3x3 kernel with padding {pad}")]
    TooSmall { h: usize, w: usize, pad: usize },
    #[error("tensor data length {len} does not match {h}x{w}x{c}")]
    Length { len: usize, h: usize, w: usize, c: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != h * w * c {
            return Err(ShapeError::Length { len: data.len(), h, w, c });
        }
        Ok(Self { h, w, c, data })
    }

    pub fn filled(h: usize, w: usize, c: usize, v: f64) -> Self {
        Self { h, w, c, data: vec![v; h * w * c] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.idx(y, x, ch)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn fill_uniform(rng: &mut SplitMix64, out: &mut [f64], bound: f64) {
    for v in out {
        *v = rng.uniform(-bound, bound);
    }
}

/// 3x3 convolution, stride 1, zero padding `pad` (0 = valid).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub pad: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn zeros(cin: usize, cout: usize, pad: usize) -> Self {
        Self { cin, cout, pad, weights: vec![0.0; 9 * cin * cout], bias: vec![0.0; cout] }
    }

    pub fn glorot(cin: usize, cout: usize, pad: usize, rng: &mut SplitMix64) -> Self {
        let mut c = Self::zeros(cin, cout, pad);
        fill_uniform(rng, &mut c.weights, glorot_bound(9 * cin, 9 * cout));
        c
    }

    #[inline]
    pub fn widx(&self, ky: usize, kx: usize, c: usize, o: usize) -> usize {
        ((ky * 3 + kx) * self.cin + c) * self.cout + o
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), ShapeError> {
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < 3 || pw < 3 {
            return Err(ShapeError::TooSmall { h, w, pad: self.pad });
        }
        Ok((ph - 2, pw - 2))
    }

    pub fn forward(&self, input: &Tensor3) -> Result<Tensor3, ShapeError> {
        if input.c != self.cin {
            return Err(ShapeError::Channels { expected: self.cin, found: input.c });
        }
        let (oh, ow) = self.output_dims(input.h, input.w)?;
        let (cin, cout) = (self.cin, self.cout);
        let mut out = Tensor3::zeros(oh, ow, cout);
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (oy * ow + ox) * cout;
                let acc = &mut out.data[base..base + cout];
                acc.copy_from_slice(&self.bias);
                for ky in 0..3 {
                    let iy = oy + ky;
                    if iy < self.pad || iy - self.pad >= input.h {
                        continue;
                    }
                    let iy = iy - self.pad;
                    for kx in 0..3 {
                        let ix = ox + kx;
                        if ix < self.pad || ix - self.pad >= input.w {
                            continue;
                        }
                        let ix = ix - self.pad;
                        let src = &input.data[(iy * input.w + ix) * cin..][..cin];
                        let wtap = &self.weights[(ky * 3 + kx) * cin * cout..][..cin * cout];
                        for (c, &v) in src.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let wrow = &wtap[c * cout..(c + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += v * wv;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and, when requested,
    /// returns the gradient with respect to `input`.
    pub fn backward(
        &self,
        input: &Tensor3,
        dout: &Tensor3,
        grad: &mut Conv3x3,
        want_input_grad: bool,
    ) -> Option<Tensor3> {
        let (cin, cout) = (self.cin, self.cout);
        let (oh, ow) = (dout.h, dout.w);
        let mut din = want_input_grad.then(|| Tensor3::zeros(input.h, input.w, cin));
        for oy in 0..oh {
            for ox in 0..ow {
                let g = &dout.data[(oy * ow + ox) * cout..][..cout];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (b, &gv) in grad.bias.iter_mut().zip(g) {
                    *b += gv;
                }
                for ky in 0..3 {
                    let iy = oy + ky;
                    if iy < self.pad || iy - self.pad >= input.h {
                        continue;
                    }
                    let iy = iy - self.pad;
                    for kx in 0..3 {
                        let ix = ox + kx;
                        if ix < self.pad || ix - self.pad >= input.w {
                            continue;
                        }
                        let ix = ix - self.pad;
                        let off = (iy * input.w + ix) * cin;
                        let src = &input.data[off..off + cin];
                        let tap = (ky * 3 + kx) * cin * cout;
                        let gw = &mut grad.weights[tap..tap + cin * cout];
                        for (c, &v) in src.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            for (a, &gv) in gw[c * cout..(c + 1) * cout].iter_mut().zip(g) {
                                *a += v * gv;
                            }
                        }
                        if let Some(din) = din.as_mut() {
                            let wtap = &self.weights[tap..tap + cin * cout];
                            let dst = &mut din.data[off..off + cin];
                            for (c, d) in dst.iter_mut().enumerate() {
                                let wrow = &wtap[c * cout..(c + 1) * cout];
                                let mut s = 0.0;
                                for (&wv, &gv) in wrow.iter().zip(g) {
                                    s += wv * gv;
                                }
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        din
    }
}

pub fn relu(t: &Tensor3) -> Tensor3 {
    Tensor3 { h: t.h, w: t.w, c: t.c, data: t.data.iter().map(|&v| v.max(0.0)).collect() }
}

/// Zeroes the gradient where the forward activation was not positive.
pub fn relu_backward(activated: &Tensor3, dout: &mut Tensor3) {
    for (g, &a) in dout.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Output of [`maxpool2x2`]: the pooled tensor plus, for each output
/// element, the flat input index that won its window.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub out: Tensor3,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2x2 max pooling, stride 2. Odd trailing rows and columns
/// are dropped. Ties go to the first element in row-major window order.
pub fn maxpool2x2(t: &Tensor3) -> Pooled {
    let (oh, ow, c) = (t.h / 2, t.w / 2, t.c);
    let mut out = Tensor3::zeros(oh, ow, c);
    let mut argmax = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_i = t.idx(2 * oy, 2 * ox, ch);
                let mut best = t.data[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = t.idx(2 * oy + dy, 2 * ox + dx, ch);
                    if t.data[i] > best {
                        best = t.data[i];
                        best_i = i;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out.data[o] = best;
                argmax[o] = best_i;
            }
        }
    }
    Pooled { out, argmax }
}

pub fn maxpool_backward(input_shape: (usize, usize, usize), argmax: &[usize], dout: &Tensor3) -> Tensor3 {
    let (h, w, c) = input_shape;
    let mut din = Tensor3::zeros(h, w, c);
    for (&i, &g) in argmax.iter().zip(&dout.data) {
        din.data[i] += g;
    }
    din
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// SGD with classical momentum: `v = mu v - lr g; p += v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }

    /// Scale that caps the L2 norm of `grads * scale` at `max_norm`.
    pub fn clipped_scale(grads: &[&[f64]], scale: f64, max_norm: f64) -> f64 {
        let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt() * scale;
        if norm > max_norm {
            scale * max_norm / norm
        } else {
            scale
        }
    }

    /// Updates each parameter slice with the matching gradient slice times
    /// `scale`. The slice list must keep the same order and lengths across calls.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, scale: f64) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi - self.lr * scale * gi;
                *pi += *vi;
            }
        }
    }
}
