//! Network layers: valid-padding convolutions (dense and depthwise
//! separable), average pooling, flatten, fully connected and softmax, each
//! with a hand-written backward pass.
//!
//! Convolutions use stride 1 and no padding; pooling is 2x2 stride 2 with
//! odd trailing rows/columns dropped. The forward loops skip zero inputs -
//! event patches are mostly empty, and `x * w` contributes exactly nothing
//! when `x == 0`, so results are unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::{Shape, Tensor};

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn apply(self, values: &mut [f64]) {
        if self == Activation::Relu {
            for v in values {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// Masks an upstream gradient by the activation derivative, judged from
    /// the post-activation output (valid for ReLU: output > 0 iff input > 0).
    fn masked(self, output: &[f64], grad: &[f64]) -> Vec<f64> {
        match self {
            Activation::Linear => grad.to_vec(),
            Activation::Relu => output
                .iter()
                .zip(grad)
                .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
                .collect(),
        }
    }
}

/// Weight-free description of a layer, used for model files, architecture
/// tables and the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { kh: usize, kw: usize, filters: usize, activation: Activation },
    SepConv2d { kh: usize, kw: usize, filters: usize, activation: Activation },
    AvgPool,
    GlobalAvgPool,
    Flatten,
    Dense { units: usize, activation: Activation },
    Softmax,
}

/// Dense 2-D convolution. Weights are laid out `[kh][kw][in_ch][filters]`
/// (filters contiguous), biases per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kh: usize,
    pub kw: usize,
    pub in_ch: usize,
    pub filters: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Depthwise-separable convolution: a per-channel `kh x kw` depthwise filter
/// (`[kh][kw][in_ch]`), then a 1x1 pointwise mix (`[in_ch][filters]`) with
/// bias. The activation applies after the pointwise step.
#[derive(Debug, Clone, PartialEq)]
pub struct SepConv2d {
    pub kh: usize,
    pub kw: usize,
    pub in_ch: usize,
    pub filters: usize,
    pub depthwise: Vec<f64>,
    pub pointwise: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Fully connected layer. Weights `[in][out]` (outputs contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    SepConv2d(SepConv2d),
    AvgPool,
    GlobalAvgPool,
    Flatten,
    Dense(Dense),
    Softmax,
}

impl Layer {
    /// Instantiates a zero-weight layer for `spec` on `input` and returns it
    /// with its output shape.
    pub fn from_spec(spec: LayerSpec, input: Shape) -> Result<(Layer, Shape)> {
        let layer = match spec {
            LayerSpec::Conv2d { kh, kw, filters, activation } => {
                let (_, _, c) = spatial(input, "conv2d")?;
                Layer::Conv2d(Conv2d {
                    kh,
                    kw,
                    in_ch: c,
                    filters,
                    weights: vec![0.0; kh * kw * c * filters],
                    bias: vec![0.0; filters],
                    activation,
                })
            }
            LayerSpec::SepConv2d { kh, kw, filters, activation } => {
                let (_, _, c) = spatial(input, "sep_conv2d")?;
                Layer::SepConv2d(SepConv2d {
                    kh,
                    kw,
                    in_ch: c,
                    filters,
                    depthwise: vec![0.0; kh * kw * c],
                    pointwise: vec![0.0; c * filters],
                    bias: vec![0.0; filters],
                    activation,
                })
            }
            LayerSpec::AvgPool => Layer::AvgPool,
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { units, activation } => {
                let in_dim = input.flat_len().ok_or_else(|| {
                    Error::shape(format!("dense layer needs a flat input, got {input}"))
                })?;
                Layer::Dense(Dense {
                    in_dim,
                    out_dim: units,
                    weights: vec![0.0; in_dim * units],
                    bias: vec![0.0; units],
                    activation,
                })
            }
            LayerSpec::Softmax => Layer::Softmax,
        };
        let out = layer.output_shape(input)?;
        Ok((layer, out))
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(l) => LayerSpec::Conv2d {
                kh: l.kh,
                kw: l.kw,
                filters: l.filters,
                activation: l.activation,
            },
            Layer::SepConv2d(l) => LayerSpec::SepConv2d {
                kh: l.kh,
                kw: l.kw,
                filters: l.filters,
                activation: l.activation,
            },
            Layer::AvgPool => LayerSpec::AvgPool,
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(l) => LayerSpec::Dense {
                units: l.out_dim,
                activation: l.activation,
            },
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv2d(l) => conv_output_shape(input, l.kh, l.kw, l.in_ch, l.filters, "conv2d"),
            Layer::SepConv2d(l) => {
                conv_output_shape(input, l.kh, l.kw, l.in_ch, l.filters, "sep_conv2d")
            }
            Layer::AvgPool => {
                let (h, w, c) = spatial(input, "avg_pool")?;
                if h < 2 || w < 2 {
                    return Err(Error::shape(format!(
                        "avg_pool needs at least 2x2 input, got {input}"
                    )));
                }
                Ok(Shape::Hwc { h: h / 2, w: w / 2, c })
            }
            Layer::GlobalAvgPool => {
                let (_, _, c) = spatial(input, "global_avg_pool")?;
                Ok(Shape::Flat(c))
            }
            Layer::Flatten => {
                let (h, w, c) = spatial(input, "flatten")?;
                Ok(Shape::Flat(h * w * c))
            }
            Layer::Dense(l) => {
                let n = input.flat_len().ok_or_else(|| {
                    Error::shape(format!("dense layer needs a flat input, got {input}"))
                })?;
                if n != l.in_dim {
                    return Err(Error::shape(format!(
                        "dense layer expects {} inputs, got {n}",
                        l.in_dim
                    )));
                }
                Ok(Shape::Flat(l.out_dim))
            }
            Layer::Softmax => {
                let n = input.flat_len().ok_or_else(|| {
                    Error::shape(format!("softmax needs a flat input, got {input}"))
                })?;
                Ok(Shape::Flat(n))
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(l) => l.weights.len() + l.bias.len(),
            Layer::SepConv2d(l) => l.depthwise.len() + l.pointwise.len() + l.bias.len(),
            Layer::Dense(l) => l.weights.len() + l.bias.len(),
            _ => 0,
        }
    }

    /// Parameter blocks in serialization order (kernel(s) then bias).
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv2d(l) => vec![&l.weights, &l.bias],
            Layer::SepConv2d(l) => vec![&l.depthwise, &l.pointwise, &l.bias],
            Layer::Dense(l) => vec![&l.weights, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weights, &mut l.bias],
            Layer::SepConv2d(l) => vec![&mut l.depthwise, &mut l.pointwise, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weights, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Glorot-uniform weight init, zero biases.
    pub fn randomize(&mut self, rng: &mut impl Rng) {
        fn fill(values: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in values {
                *v = rng.gen_range(-limit..limit);
            }
        }
        match self {
            Layer::Conv2d(l) => {
                let fan_in = l.kh * l.kw * l.in_ch;
                let fan_out = l.kh * l.kw * l.filters;
                fill(&mut l.weights, fan_in, fan_out, rng);
                l.bias.fill(0.0);
            }
            Layer::SepConv2d(l) => {
                let k = l.kh * l.kw;
                fill(&mut l.depthwise, k, k, rng);
                fill(&mut l.pointwise, l.in_ch, l.filters, rng);
                l.bias.fill(0.0);
            }
            Layer::Dense(l) => {
                fill(&mut l.weights, l.in_dim, l.out_dim, rng);
                l.bias.fill(0.0);
            }
            _ => {}
        }
    }

    /// Runs the layer. The second return value is the side cache needed by
    /// the backward pass (the depthwise intermediate for `SepConv2d`).
    pub fn forward(&self, input: &Tensor) -> (Tensor, Option<Tensor>) {
        match self {
            Layer::Conv2d(l) => (l.forward(input), None),
            Layer::SepConv2d(l) => {
                let (out, depth) = l.forward(input);
                (out, Some(depth))
            }
            Layer::AvgPool => (avg_pool_forward(input), None),
            Layer::GlobalAvgPool => (global_avg_pool_forward(input), None),
            Layer::Flatten => {
                let out = input
                    .reshaped(Shape::Flat(input.len()))
                    .expect("flatten preserves length");
                (out, None)
            }
            Layer::Dense(l) => (l.forward(input), None),
            Layer::Softmax => (softmax_forward(input), None),
        }
    }

    /// Accumulates parameter gradients into `grad_params` (this layer's
    /// region, kernel-then-bias order) and writes the input gradient into
    /// `grad_in` (pre-zeroed, same length as `input`).
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        side: Option<&Tensor>,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_in: &mut [f64],
    ) {
        match self {
            Layer::Conv2d(l) => l.backward(input, output, grad_out, grad_params, grad_in),
            Layer::SepConv2d(l) => l.backward(
                input,
                output,
                side.expect("sep_conv2d backward needs its depthwise cache"),
                grad_out,
                grad_params,
                grad_in,
            ),
            Layer::AvgPool => avg_pool_backward(input, grad_out, grad_in),
            Layer::GlobalAvgPool => global_avg_pool_backward(input, grad_out, grad_in),
            Layer::Flatten => grad_in.copy_from_slice(grad_out),
            Layer::Dense(l) => l.backward(input, output, grad_out, grad_params, grad_in),
            Layer::Softmax => softmax_backward(output, grad_out, grad_in),
        }
    }
}

fn spatial(shape: Shape, what: &str) -> Result<(usize, usize, usize)> {
    shape
        .hwc()
        .ok_or_else(|| Error::shape(format!("{what} needs a spatial input, got {shape}")))
}

fn conv_output_shape(
    input: Shape,
    kh: usize,
    kw: usize,
    in_ch: usize,
    filters: usize,
    what: &str,
) -> Result<Shape> {
    let (h, w, c) = spatial(input, what)?;
    if c != in_ch {
        return Err(Error::shape(format!(
            "{what} expects {in_ch} input channels, got {c}"
        )));
    }
    if kh == 0 || kw == 0 || filters == 0 {
        return Err(Error::shape(format!("{what} kernel and filter counts must be positive")));
    }
    if h < kh || w < kw {
        return Err(Error::shape(format!(
            "{what} kernel {kh}x{kw} larger than input {input}"
        )));
    }
    Ok(Shape::Hwc {
        h: h - kh + 1,
        w: w - kw + 1,
        c: filters,
    })
}

impl Conv2d {
    fn forward(&self, input: &Tensor) -> Tensor {
        let (h, w, c) = input.shape().hwc().expect("validated at construction");
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let nf = self.filters;
        let x = input.as_slice();
        let mut out = Tensor::zeros(Shape::Hwc { h: oh, w: ow, c: nf });
        let o = out.as_mut_slice();
        for y in 0..oh {
            for xo in 0..ow {
                let acc = &mut o[(y * ow + xo) * nf..(y * ow + xo) * nf + nf];
                acc.copy_from_slice(&self.bias);
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let in_base = ((y + i) * w + (xo + j)) * c;
                        let w_base = (i * self.kw + j) * c * nf;
                        for ch in 0..c {
                            let xv = x[in_base + ch];
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &self.weights[w_base + ch * nf..w_base + ch * nf + nf];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
                self.activation.apply(acc);
            }
        }
        out
    }

    fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_in: &mut [f64],
    ) {
        let (h, w, c) = input.shape().hwc().expect("validated at construction");
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let nf = self.filters;
        let g = self.activation.masked(output.as_slice(), grad_out);
        let x = input.as_slice();
        let (dw, db) = grad_params.split_at_mut(self.weights.len());
        for y in 0..oh {
            for xo in 0..ow {
                let gpos = &g[(y * ow + xo) * nf..(y * ow + xo) * nf + nf];
                if gpos.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (b, &gv) in db.iter_mut().zip(gpos) {
                    *b += gv;
                }
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let in_base = ((y + i) * w + (xo + j)) * c;
                        let w_base = (i * self.kw + j) * c * nf;
                        for ch in 0..c {
                            let row = w_base + ch * nf;
                            let wrow = &self.weights[row..row + nf];
                            let mut din = 0.0;
                            for (wv, gv) in wrow.iter().zip(gpos) {
                                din += wv * gv;
                            }
                            grad_in[in_base + ch] += din;
                            let xv = x[in_base + ch];
                            if xv != 0.0 {
                                let dwrow = &mut dw[row..row + nf];
                                for (d, &gv) in dwrow.iter_mut().zip(gpos) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl SepConv2d {
    fn forward(&self, input: &Tensor) -> (Tensor, Tensor) {
        let (h, w, c) = input.shape().hwc().expect("validated at construction");
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let nf = self.filters;
        let x = input.as_slice();

        let mut depth = Tensor::zeros(Shape::Hwc { h: oh, w: ow, c });
        let d = depth.as_mut_slice();
        for y in 0..oh {
            for xo in 0..ow {
                let acc = &mut d[(y * ow + xo) * c..(y * ow + xo) * c + c];
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let in_base = ((y + i) * w + (xo + j)) * c;
                        let k_base = (i * self.kw + j) * c;
                        for ch in 0..c {
                            let xv = x[in_base + ch];
                            if xv != 0.0 {
                                acc[ch] += xv * self.depthwise[k_base + ch];
                            }
                        }
                    }
                }
            }
        }

        let mut out = Tensor::zeros(Shape::Hwc { h: oh, w: ow, c: nf });
        let o = out.as_mut_slice();
        let d = depth.as_slice();
        for pos in 0..oh * ow {
            let acc = &mut o[pos * nf..pos * nf + nf];
            acc.copy_from_slice(&self.bias);
            for ch in 0..c {
                let dv = d[pos * c + ch];
                if dv == 0.0 {
                    continue;
                }
                let prow = &self.pointwise[ch * nf..ch * nf + nf];
                for (a, &pv) in acc.iter_mut().zip(prow) {
                    *a += dv * pv;
                }
            }
            self.activation.apply(acc);
        }
        (out, depth)
    }

    fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        depth: &Tensor,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_in: &mut [f64],
    ) {
        let (h, w, c) = input.shape().hwc().expect("validated at construction");
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let nf = self.filters;
        let g = self.activation.masked(output.as_slice(), grad_out);
        let x = input.as_slice();
        let d = depth.as_slice();
        let (ddw, rest) = grad_params.split_at_mut(self.depthwise.len());
        let (dpw, db) = rest.split_at_mut(self.pointwise.len());

        // Back through the pointwise mix.
        let mut gdepth = vec![0.0; oh * ow * c];
        for pos in 0..oh * ow {
            let gpos = &g[pos * nf..pos * nf + nf];
            if gpos.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (b, &gv) in db.iter_mut().zip(gpos) {
                *b += gv;
            }
            for ch in 0..c {
                let prow = &self.pointwise[ch * nf..ch * nf + nf];
                let mut acc = 0.0;
                for (pv, gv) in prow.iter().zip(gpos) {
                    acc += pv * gv;
                }
                gdepth[pos * c + ch] = acc;
                let dv = d[pos * c + ch];
                if dv != 0.0 {
                    let dprow = &mut dpw[ch * nf..ch * nf + nf];
                    for (dp, &gv) in dprow.iter_mut().zip(gpos) {
                        *dp += dv * gv;
                    }
                }
            }
        }

        // Back through the depthwise filter.
        for y in 0..oh {
            for xo in 0..ow {
                let g_base = (y * ow + xo) * c;
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let in_base = ((y + i) * w + (xo + j)) * c;
                        let k_base = (i * self.kw + j) * c;
                        for ch in 0..c {
                            let gd = gdepth[g_base + ch];
                            if gd == 0.0 {
                                continue;
                            }
                            let xv = x[in_base + ch];
                            if xv != 0.0 {
                                ddw[k_base + ch] += xv * gd;
                            }
                            grad_in[in_base + ch] += self.depthwise[k_base + ch] * gd;
                        }
                    }
                }
            }
        }
    }
}

impl Dense {
    fn forward(&self, input: &Tensor) -> Tensor {
        let x = input.as_slice();
        let no = self.out_dim;
        let mut out = Tensor::zeros(Shape::Flat(no));
        let acc = out.as_mut_slice();
        acc.copy_from_slice(&self.bias);
        for (i, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &self.weights[i * no..i * no + no];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xv * wv;
            }
        }
        self.activation.apply(acc);
        out
    }

    fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_in: &mut [f64],
    ) {
        let g = self.activation.masked(output.as_slice(), grad_out);
        let x = input.as_slice();
        let no = self.out_dim;
        let (dw, db) = grad_params.split_at_mut(self.weights.len());
        for (b, &gv) in db.iter_mut().zip(&g) {
            *b += gv;
        }
        for (i, &xv) in x.iter().enumerate() {
            let wrow = &self.weights[i * no..i * no + no];
            let mut din = 0.0;
            for (wv, gv) in wrow.iter().zip(&g) {
                din += wv * gv;
            }
            grad_in[i] = din;
            if xv != 0.0 {
                let dwrow = &mut dw[i * no..i * no + no];
                for (d, &gv) in dwrow.iter_mut().zip(&g) {
                    *d += xv * gv;
                }
            }
        }
    }
}

fn avg_pool_forward(input: &Tensor) -> Tensor {
    let (h, w, c) = input.shape().hwc().expect("validated at construction");
    let (oh, ow) = (h / 2, w / 2);
    let x = input.as_slice();
    let mut out = Tensor::zeros(Shape::Hwc { h: oh, w: ow, c });
    let o = out.as_mut_slice();
    for y in 0..oh {
        for xo in 0..ow {
            for ch in 0..c {
                let sum = x[((2 * y) * w + 2 * xo) * c + ch]
                    + x[((2 * y) * w + 2 * xo + 1) * c + ch]
                    + x[((2 * y + 1) * w + 2 * xo) * c + ch]
                    + x[((2 * y + 1) * w + 2 * xo + 1) * c + ch];
                o[(y * ow + xo) * c + ch] = sum * 0.25;
            }
        }
    }
    out
}

fn avg_pool_backward(input: &Tensor, grad_out: &[f64], grad_in: &mut [f64]) {
    let (h, w, c) = input.shape().hwc().expect("validated at construction");
    let (oh, ow) = (h / 2, w / 2);
    for y in 0..oh {
        for xo in 0..ow {
            for ch in 0..c {
                let gv = grad_out[(y * ow + xo) * c + ch] * 0.25;
                grad_in[((2 * y) * w + 2 * xo) * c + ch] += gv;
                grad_in[((2 * y) * w + 2 * xo + 1) * c + ch] += gv;
                grad_in[((2 * y + 1) * w + 2 * xo) * c + ch] += gv;
                grad_in[((2 * y + 1) * w + 2 * xo + 1) * c + ch] += gv;
            }
        }
    }
    // Odd trailing rows/columns never influenced the output; their gradient
    // stays zero.
}

fn global_avg_pool_forward(input: &Tensor) -> Tensor {
    let (h, w, c) = input.shape().hwc().expect("validated at construction");
    let x = input.as_slice();
    let mut out = Tensor::zeros(Shape::Flat(c));
    let o = out.as_mut_slice();
    for pos in 0..h * w {
        for ch in 0..c {
            o[ch] += x[pos * c + ch];
        }
    }
    let scale = 1.0 / (h * w) as f64;
    for v in o {
        *v *= scale;
    }
    out
}

fn global_avg_pool_backward(input: &Tensor, grad_out: &[f64], grad_in: &mut [f64]) {
    let (h, w, c) = input.shape().hwc().expect("validated at construction");
    let scale = 1.0 / (h * w) as f64;
    for pos in 0..h * w {
        for ch in 0..c {
            grad_in[pos * c + ch] = grad_out[ch] * scale;
        }
    }
}

/// Numerically stable softmax: exponentials are taken after subtracting the
/// row maximum.
fn softmax_forward(input: &Tensor) -> Tensor {
    let x = input.as_slice();
    let mut out = Tensor::zeros(input.shape());
    let o = out.as_mut_slice();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (oi, &xi) in o.iter_mut().zip(x) {
        *oi = (xi - max).exp();
        sum += *oi;
    }
    for oi in o.iter_mut() {
        *oi /= sum;
    }
    out
}

/// dL/dx_i = p_i * (g_i - sum_j g_j p_j).
fn softmax_backward(output: &Tensor, grad_out: &[f64], grad_in: &mut [f64]) {
    let p = output.as_slice();
    let mut dot = 0.0;
    for (gv, pv) in grad_out.iter().zip(p) {
        dot += gv * pv;
    }
    for i in 0..p.len() {
        grad_in[i] = p[i] * (grad_out[i] - dot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference convolution: six plain loops, no tricks.
    pub(crate) fn naive_conv(
        input: &Tensor,
        kh: usize,
        kw: usize,
        in_ch: usize,
        filters: usize,
        weights: &[f64],
        bias: &[f64],
    ) -> Vec<f64> {
        let (h, w, c) = input.shape().hwc().unwrap();
        assert_eq!(c, in_ch);
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0; oh * ow * filters];
        for y in 0..oh {
            for x in 0..ow {
                for f in 0..filters {
                    let mut acc = bias[f];
                    for i in 0..kh {
                        for j in 0..kw {
                            for ch in 0..c {
                                acc += input.at(y + i, x + j, ch)
                                    * weights[((i * kw + j) * c + ch) * filters + f];
                            }
                        }
                    }
                    out[(y * ow + x) * filters + f] = acc;
                }
            }
        }
        out
    }

    fn filled(shape: Shape, seed: u64) -> Tensor {
        // Cheap deterministic pseudo-values in roughly [-1, 1], with some
        // exact zeros to exercise the sparsity fast path.
        let mut t = Tensor::zeros(shape);
        let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(1);
        for v in t.as_mut_slice() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = ((state >> 11) as f64) / (1u64 << 53) as f64;
            *v = if u < 0.25 { 0.0 } else { 2.0 * u - 1.0 };
        }
        t
    }

    #[test]
    fn one_by_one_identity_kernel_passes_input_through() {
        let input = filled(Shape::Hwc { h: 4, w: 5, c: 1 }, 3);
        let conv = Conv2d {
            kh: 1,
            kw: 1,
            in_ch: 1,
            filters: 1,
            weights: vec![1.0],
            bias: vec![0.0],
            activation: Activation::Linear,
        };
        let out = conv.forward(&input);
        assert_eq!(out.as_slice(), input.as_slice());
    }

    #[test]
    fn zero_input_yields_bias_everywhere() {
        let input = Tensor::zeros(Shape::Hwc { h: 6, w: 6, c: 2 });
        let conv = Conv2d {
            kh: 3,
            kw: 3,
            in_ch: 2,
            filters: 4,
            weights: vec![0.5; 3 * 3 * 2 * 4],
            bias: vec![1.0, -2.0, 0.25, 0.0],
            activation: Activation::Linear,
        };
        let out = conv.forward(&input);
        for pos in 0..4 * 4 {
            assert_eq!(&out.as_slice()[pos * 4..pos * 4 + 4], &[1.0, -2.0, 0.25, 0.0]);
        }
    }

    #[test]
    fn conv_matches_the_naive_reference() {
        let input = filled(Shape::Hwc { h: 8, w: 7, c: 2 }, 11);
        let mut conv = Conv2d {
            kh: 3,
            kw: 3,
            in_ch: 2,
            filters: 4,
            weights: vec![0.0; 3 * 3 * 2 * 4],
            bias: vec![0.1, -0.2, 0.3, 0.4],
            activation: Activation::Linear,
        };
        let w = filled(Shape::Flat(conv.weights.len()), 17);
        conv.weights.copy_from_slice(w.as_slice());
        let fast = conv.forward(&input);
        let slow = naive_conv(&input, 3, 3, 2, 4, &conv.weights, &conv.bias);
        for (a, b) in fast.as_slice().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn sepconv_matches_composed_naive_convolutions() {
        // Depthwise = per-channel conv with a diagonal kernel layout;
        // pointwise = 1x1 dense conv. Composing the two references must
        // reproduce the fused layer.
        let (kh, kw, c, nf) = (3, 3, 2, 5);
        let input = filled(Shape::Hwc { h: 7, w: 6, c }, 23);
        let mut sep = SepConv2d {
            kh,
            kw,
            in_ch: c,
            filters: nf,
            depthwise: vec![0.0; kh * kw * c],
            pointwise: vec![0.0; c * nf],
            bias: vec![0.05, -0.1, 0.0, 0.2, 0.4],
            activation: Activation::Linear,
        };
        sep.depthwise
            .copy_from_slice(filled(Shape::Flat(kh * kw * c), 29).as_slice());
        sep.pointwise
            .copy_from_slice(filled(Shape::Flat(c * nf), 31).as_slice());
        let (fast, _) = sep.forward(&input);

        // Depthwise as a dense conv whose cross-channel taps are zero.
        let mut dw_dense = vec![0.0; kh * kw * c * c];
        for i in 0..kh {
            for j in 0..kw {
                for ch in 0..c {
                    dw_dense[((i * kw + j) * c + ch) * c + ch] = sep.depthwise[(i * kw + j) * c + ch];
                }
            }
        }
        let depth = naive_conv(&input, kh, kw, c, c, &dw_dense, &vec![0.0; c]);
        let depth_t = Tensor::from_vec(Shape::Hwc { h: 5, w: 4, c }, depth).unwrap();
        let out = naive_conv(&depth_t, 1, 1, c, nf, &sep.pointwise, &sep.bias);
        for (a, b) in fast.as_slice().iter().zip(&out) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn sepconv_single_channel_passthrough_pointwise_equals_dense_conv() {
        // With in_ch = 1 and pointwise weight 1, the separable layer is a
        // plain convolution.
        let input = filled(Shape::Hwc { h: 6, w: 6, c: 1 }, 41);
        let kernel = filled(Shape::Flat(9), 43);
        let sep = SepConv2d {
            kh: 3,
            kw: 3,
            in_ch: 1,
            filters: 1,
            depthwise: kernel.as_slice().to_vec(),
            pointwise: vec![1.0],
            bias: vec![0.0],
            activation: Activation::Linear,
        };
        let conv = Conv2d {
            kh: 3,
            kw: 3,
            in_ch: 1,
            filters: 1,
            weights: kernel.as_slice().to_vec(),
            bias: vec![0.0],
            activation: Activation::Linear,
        };
        let (a, _) = sep.forward(&input);
        let b = conv.forward(&input);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool_of_constant_is_constant_and_floors_odd_dims() {
        let mut input = Tensor::zeros(Shape::Hwc { h: 15, w: 15, c: 3 });
        input.as_mut_slice().fill(2.5);
        let out = avg_pool_forward(&input);
        assert_eq!(out.shape(), Shape::Hwc { h: 7, w: 7, c: 3 });
        assert!(out.as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn global_avg_pool_averages_per_channel() {
        let input = Tensor::from_vec(
            Shape::Hwc { h: 2, w: 2, c: 2 },
            vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0],
        )
        .unwrap();
        let out = global_avg_pool_forward(&input);
        assert_eq!(out.as_slice(), &[2.5, 25.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let input = Tensor::zeros(Shape::Flat(4));
        let out = softmax_forward(&input);
        for &p in out.as_slice() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let input = Tensor::from_vec(Shape::Flat(4), vec![1e4, -1e4, 0.0, 5e3]).unwrap();
        let out = softmax_forward(&input);
        let sum: f64 = out.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(out.as_slice().iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(out.as_slice()[0] > 0.999);
    }

    #[test]
    fn relu_masks_gradients_where_output_is_zero() {
        let out = [0.0, 1.5, 0.0, 2.0];
        let grad = [1.0, 1.0, 1.0, 1.0];
        let g = Activation::Relu.masked(&out, &grad);
        assert_eq!(g, vec![0.0, 1.0, 0.0, 1.0]);
    }
}
