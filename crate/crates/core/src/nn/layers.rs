use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Scalar, Tensor};

const KERNEL: usize = 3;
const PAD: usize = 1;

/// Uniform He-style initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches data length")
}

/// 3x3 convolution, stride 1, zero padding 1, over a single `[C, H, W]` sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Fully connected layer `y = W x + b` with `W` stored `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * KERNEL * KERNEL;
        Self {
            weight: he_uniform(&[out_ch, in_ch, KERNEL, KERNEL], fan_in, rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    /// Returns the output and the unfolded input (`[C*9, H*W]`) needed by backward.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>), NnError> {
        let (c, h, w) = chw(x, self.in_channels())?;
        let o = self.out_channels();
        let k = c * KERNEL * KERNEL;
        let hw = h * w;
        let cols = im2col(x.data(), c, h, w);
        let mut out = vec![T::zero(); o * hw];
        for (row, &b) in out.chunks_mut(hw).zip(self.bias.data()) {
            row.iter_mut().for_each(|v| *v = b);
        }
        T::gemm(
            o,
            k,
            hw,
            T::one(),
            self.weight.data(),
            (k as isize, 1),
            &cols,
            (hw as isize, 1),
            T::one(),
            &mut out,
            (hw as isize, 1),
        );
        Ok((Tensor::from_vec(&[o, h, w], out)?, cols))
    }

    /// Accumulates parameter gradients into `acc`; returns the input gradient
    /// when `need_input_grad` is set.
    pub fn backward(
        &self,
        in_shape: &[usize],
        cols: &[T],
        grad_out: &Tensor<T>,
        acc: &mut Conv2d<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let o = self.out_channels();
        grad_out.expect_shape(&[o, h, w])?;
        let k = c * KERNEL * KERNEL;
        let hw = h * w;
        let gy = grad_out.data();
        // dW += dY * cols^T
        T::gemm(
            o,
            hw,
            k,
            T::one(),
            gy,
            (hw as isize, 1),
            cols,
            (1, hw as isize),
            T::one(),
            acc.weight.data_mut(),
            (k as isize, 1),
        );
        for (gb, row) in acc.bias.data_mut().iter_mut().zip(gy.chunks(hw)) {
            *gb = *gb + row.iter().copied().sum::<T>();
        }
        if !need_input_grad {
            return Ok(None);
        }
        // dcols = W^T * dY
        let mut dcols = vec![T::zero(); k * hw];
        T::gemm(
            k,
            o,
            hw,
            T::one(),
            self.weight.data(),
            (1, k as isize),
            gy,
            (hw as isize, 1),
            T::zero(),
            &mut dcols,
            (hw as isize, 1),
        );
        Ok(Some(Tensor::from_vec(in_shape, col2im(&dcols, c, h, w))?))
    }
}

fn chw<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize, usize), NnError> {
    match *x.shape() {
        [c, h, w] if c == channels => Ok((c, h, w)),
        _ => Err(NnError::ShapeMismatch {
            expected: vec![channels, 0, 0],
            found: x.shape().to_vec(),
        }),
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * KERNEL * KERNEL * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < PAD || sy - PAD >= h {
                        continue;
                    }
                    let src_row = &plane[(sy - PAD) * w..(sy - PAD + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    // output x reads input x + kx - PAD
                    let (x0, x1) = (PAD.saturating_sub(kx), (w + PAD - kx).min(w));
                    for xo in x0..x1 {
                        dst_row[xo] = src_row[xo + kx - PAD];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < PAD || sy - PAD >= h {
                        continue;
                    }
                    let dst_row = &mut plane[(sy - PAD) * w..(sy - PAD + 1) * w];
                    let src_row = &src[y * w..(y + 1) * w];
                    let (x0, x1) = (PAD.saturating_sub(kx), (w + PAD - kx).min(w));
                    for xo in x0..x1 {
                        let d = &mut dst_row[xo + kx - PAD];
                        *d = *d + src_row[xo];
                    }
                }
            }
        }
    }
    x
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: he_uniform(&[outputs, inputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        let (o, i) = (self.outputs(), self.inputs());
        if x.len() != i {
            return Err(NnError::ShapeMismatch {
                expected: vec![i],
                found: vec![x.len()],
            });
        }
        let mut y = self.bias.data().to_vec();
        T::gemm(
            o,
            i,
            1,
            T::one(),
            self.weight.data(),
            (i as isize, 1),
            x,
            (1, 1),
            T::one(),
            &mut y,
            (1, 1),
        );
        Ok(y)
    }

    /// Accumulates `dW += g x^T`, `db += g` into `acc` and returns `W^T g`.
    pub fn backward(&self, x: &[T], grad_out: &[T], acc: &mut Dense<T>) -> Result<Vec<T>, NnError> {
        let (o, i) = (self.outputs(), self.inputs());
        if x.len() != i || grad_out.len() != o {
            return Err(NnError::ShapeMismatch {
                expected: vec![i, o],
                found: vec![x.len(), grad_out.len()],
            });
        }
        T::gemm(
            o,
            1,
            i,
            T::one(),
            grad_out,
            (1, 1),
            x,
            (1, 1),
            T::one(),
            acc.weight.data_mut(),
            (i as isize, 1),
        );
        for (b, &g) in acc.bias.data_mut().iter_mut().zip(grad_out) {
            *b = *b + g;
        }
        let mut gx = vec![T::zero(); i];
        T::gemm(
            i,
            o,
            1,
            T::one(),
            self.weight.data(),
            (1, i as isize),
            grad_out,
            (1, 1),
            T::zero(),
            &mut gx,
            (1, 1),
        );
        Ok(gx)
    }
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Masks `grad` where the forward *output* was not positive.
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling with stride 2 (odd trailing row/column dropped).
/// Returns the pooled tensor and the flat input index of each maximum.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    let &[c, h, w] = x.shape() else {
        return Err(NnError::ShapeMismatch {
            expected: vec![0, 0, 0],
            found: x.shape().to_vec(),
        });
    };
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(NnError::InvalidShape(x.shape().to_vec()));
    }
    let data = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for idx in [best + 1, best + w, best + w + 1] {
                    // strict comparison keeps the first maximum on ties
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, arg))
}

pub fn max_pool2_backward<T: Scalar>(in_shape: &[usize], argmax: &[u32], grad_out: &[T]) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out) {
        d[i as usize] = d[i as usize] + g;
    }
    gx
}

/// One layer of a [`Sequential`] stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Relu,
    MaxPool2,
    Dense(Dense<T>),
    Flatten,
}

/// Forward state kept for backward.
#[derive(Debug)]
pub enum Cache<T> {
    Conv { in_shape: Vec<usize>, cols: Vec<T> },
    Relu { output: Vec<T> },
    MaxPool { in_shape: Vec<usize>, argmax: Vec<u32> },
    Dense { input: Vec<T> },
    Flatten { in_shape: Vec<usize> },
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, Cache<T>), NnError> {
        match self {
            Layer::Conv2d(conv) => {
                let in_shape = x.shape().to_vec();
                let (y, cols) = conv.forward(&x)?;
                Ok((y, Cache::Conv { in_shape, cols }))
            }
            Layer::Relu => {
                let mut y = x;
                relu(y.data_mut());
                let output = y.data().to_vec();
                Ok((y, Cache::Relu { output }))
            }
            Layer::MaxPool2 => {
                let in_shape = x.shape().to_vec();
                let (y, argmax) = max_pool2(&x)?;
                Ok((y, Cache::MaxPool { in_shape, argmax }))
            }
            Layer::Dense(dense) => {
                let input = x.into_data();
                let y = dense.forward(&input)?;
                let n = y.len();
                Ok((Tensor::from_vec(&[n], y)?, Cache::Dense { input }))
            }
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                let n = x.len();
                Ok((x.reshape(&[n])?, Cache::Flatten { in_shape }))
            }
        }
    }

    /// Backward through one layer, accumulating parameter gradients into the
    /// matching layer of `acc`.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: Tensor<T>,
        acc: &mut Layer<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        match (self, cache, acc) {
            (Layer::Conv2d(conv), Cache::Conv { in_shape, cols }, Layer::Conv2d(acc)) => {
                conv.backward(in_shape, cols, &grad_out, acc, need_input_grad)
            }
            (Layer::Relu, Cache::Relu { output }, Layer::Relu) => {
                let mut g = grad_out;
                if g.len() != output.len() {
                    return Err(NnError::ShapeMismatch {
                        expected: vec![output.len()],
                        found: g.shape().to_vec(),
                    });
                }
                relu_backward(output, g.data_mut());
                Ok(Some(g))
            }
            (Layer::MaxPool2, Cache::MaxPool { in_shape, argmax }, Layer::MaxPool2) => {
                if grad_out.len() != argmax.len() {
                    return Err(NnError::ShapeMismatch {
                        expected: vec![argmax.len()],
                        found: grad_out.shape().to_vec(),
                    });
                }
                Ok(Some(max_pool2_backward(in_shape, argmax, grad_out.data())))
            }
            (Layer::Dense(dense), Cache::Dense { input }, Layer::Dense(acc)) => {
                let gx = dense.backward(input, grad_out.data(), acc)?;
                let n = gx.len();
                Ok(Some(Tensor::from_vec(&[n], gx)?))
            }
            (Layer::Flatten, Cache::Flatten { in_shape }, Layer::Flatten) => Ok(Some(grad_out.reshape(in_shape)?)),
            _ => Err(NnError::CacheMismatch),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(c.zeros_like()),
            Layer::Dense(d) => Layer::Dense(d.zeros_like()),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2 => Layer::MaxPool2,
            Layer::Flatten => Layer::Flatten,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }
}

/// A chain of layers applied to one sample at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.layers.iter().try_fold(x, |x, l| Ok(l.forward(x)?.0))
    }

    pub fn forward_cached(&self, x: Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = x;
        for layer in &self.layers {
            let (y, cache) = layer.forward(x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Backpropagates `grad_out`, accumulating into `acc` (same architecture).
    /// Returns the input gradient if requested.
    pub fn backward(
        &self,
        caches: &[Cache<T>],
        grad_out: Tensor<T>,
        acc: &mut Sequential<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        if caches.len() != self.layers.len() || acc.layers.len() != self.layers.len() {
            return Err(NnError::CacheMismatch);
        }
        let mut g = grad_out;
        for idx in (0..self.layers.len()).rev() {
            let need = idx > 0 || need_input_grad;
            match self.layers[idx].backward(&caches[idx], g, &mut acc.layers[idx], need)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// The four-block convolutional embedding network:
/// `4 x [Conv3x3(channels) -> ReLU -> MaxPool2x2]` followed by flatten.
pub fn convnet4<T: Scalar, R: Rng>(in_ch: usize, channels: usize, rng: &mut R) -> Sequential<T> {
    let mut layers = Vec::with_capacity(13);
    let mut c = in_ch;
    for _ in 0..4 {
        layers.push(Layer::Conv2d(Conv2d::new(c, channels, rng)));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool2);
        c = channels;
    }
    layers.push(Layer::Flatten);
    Sequential::new(layers)
}

/// Flattened output length of [`convnet4`] on a square `side x side` input.
pub fn convnet4_output_len(channels: usize, side: usize) -> usize {
    let s = (0..4).fold(side, |s, _| s / 2);
    channels * s * s
}
