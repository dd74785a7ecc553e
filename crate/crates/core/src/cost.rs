//! Analytical compute/memory cost model for [`Network`] stacks, plus an
//! instrumented forward pass that counts the same operations one by one.
//!
//! Conventions (multiplies and adds counted separately, 1 MAC = 2 FLOPs):
//!
//! * convolution: `2·kh·kw·Cin·F` per output element, plus one bias add;
//! * separable convolution: depthwise `2·kh·kw·Cin` plus pointwise
//!   `2·Cin·F` per output position, plus bias adds;
//! * dense: `2·in·out + out`;
//! * average pooling: kernel-area ops per output (three adds, one scale);
//! * global average pooling: one accumulate per input element (the per
//!   channel divide is folded into this count);
//! * flatten and ReLU: free;
//! * softmax: `5·N` (max scan, subtract, exp, accumulate, divide).
//!
//! Memory is modeled two ways. `Layerwise` keeps each layer's full input and
//! output maps alive while it runs. `Tiled` pushes a `tile x tile` input
//! window through the spatial trunk (a valid conv shrinks the tile by
//! `k - 1`, a pool halves it); flatten and dense layers break tiling by
//! needing their whole input feature map at once, which is exactly why the
//! fully connected stack dominates. In both modes the reported total is the
//! *bottleneck working set*: the largest single-layer sum of that layer's
//! parameter bytes and its live activation bytes. (Summing total parameter
//! bytes with the activation peak would instead charge every layer's weights
//! to every layer; a layer-at-a-time device only holds one layer's weights
//! while it computes.)

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Network, Shape, Tensor};

/// Knobs for the memory model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    /// Side of the square input window propagated in tiled mode.
    pub tile: usize,
    /// Bytes per activation element.
    pub act_byte_width: u64,
    /// Bytes per weight/bias.
    pub weight_byte_width: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig { tile: 21, act_byte_width: 1, weight_byte_width: 1 }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 {
            return Err(Error::validation("tile side must be at least 1"));
        }
        if self.act_byte_width == 0 || self.weight_byte_width == 0 {
            return Err(Error::validation("byte widths must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    Layerwise,
    Tiled,
}

/// One mode's memory figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    /// Peak live activation bytes over the layer sequence.
    pub act_bytes: u64,
    /// All weights and biases at the configured width.
    pub param_bytes: u64,
    /// Bottleneck working set: max over layers of that layer's parameter
    /// bytes plus its live activation bytes.
    pub total_bytes: u64,
}

/// Everything the cost CLI reports for one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub param_bytes: u64,
    pub act_bytes_layerwise: u64,
    pub total_bytes_layerwise: u64,
    /// `None` when the tile dies mid-trunk (a layer would see a non-positive
    /// window) so tiled execution is impossible at this tile size.
    pub act_bytes_tiled: Option<u64>,
    pub total_bytes_tiled: Option<u64>,
    pub tile: usize,
}

/// Analytic FLOP count under the conventions in the module docs.
pub fn flops(net: &Network) -> u64 {
    let shapes = net.shapes();
    net.layers()
        .iter()
        .zip(shapes.windows(2))
        .map(|(layer, io)| layer_flops(layer, io[0], io[1]))
        .sum()
}

fn layer_flops(layer: &Layer, input: Shape, output: Shape) -> u64 {
    let out_positions = |s: Shape| -> u64 {
        let (h, w, _) = s.hwc().expect("spatial output");
        (h * w) as u64
    };
    match layer {
        Layer::Conv2d(l) => {
            let pos = out_positions(output);
            let macs = 2 * (l.kh * l.kw * l.in_ch * l.filters) as u64 * pos;
            macs + pos * l.filters as u64
        }
        Layer::SepConv2d(l) => {
            let pos = out_positions(output);
            let depthwise = 2 * (l.kh * l.kw * l.in_ch) as u64 * pos;
            let pointwise = 2 * (l.in_ch * l.filters) as u64 * pos;
            depthwise + pointwise + pos * l.filters as u64
        }
        Layer::AvgPool => {
            let (h, w, c) = output.hwc().expect("spatial output");
            4 * (h * w * c) as u64
        }
        Layer::GlobalAvgPool => {
            let (h, w, c) = input.hwc().expect("spatial input");
            (h * w * c) as u64
        }
        Layer::Flatten => 0,
        Layer::Dense(l) => 2 * (l.in_dim * l.out_dim) as u64 + l.out_dim as u64,
        Layer::Softmax => 5 * input.len() as u64,
    }
}

/// Runs a dense (no sparsity shortcuts) forward pass, counting every
/// multiply and add under the same conventions as [`flops`]. Returns the
/// network output - identical to [`Network::forward`] - and the count.
pub fn flops_instrumented(net: &Network, input: &Tensor) -> Result<(Tensor, u64)> {
    if input.shape() != net.input_shape() {
        return Err(Error::shape(format!(
            "network expects input {}, got {}",
            net.input_shape(),
            input.shape()
        )));
    }
    let mut cursor = input.clone();
    let mut count = 0u64;
    for layer in net.layers() {
        cursor = instrumented_layer(layer, &cursor, &mut count);
    }
    Ok((cursor, count))
}

fn instrumented_layer(layer: &Layer, input: &Tensor, count: &mut u64) -> Tensor {
    match layer {
        Layer::Conv2d(l) => {
            let (h, w, c) = input.shape().hwc().unwrap();
            let (oh, ow) = (h - l.kh + 1, w - l.kw + 1);
            let x = input.as_slice();
            let mut out = Tensor::zeros(Shape::Hwc { h: oh, w: ow, c: l.filters });
            let o = out.as_mut_slice();
            let nf = l.filters;
            for y in 0..oh {
                for xo in 0..ow {
                    let acc = &mut o[(y * ow + xo) * nf..(y * ow + xo) * nf + nf];
                    acc.copy_from_slice(&l.bias);
                    *count += nf as u64; // bias adds
                    for i in 0..l.kh {
                        for j in 0..l.kw {
                            let in_base = ((y + i) * w + (xo + j)) * c;
                            let w_base = (i * l.kw + j) * c * nf;
                            for ch in 0..c {
                                let xv = x[in_base + ch];
                                let wrow = &l.weights[w_base + ch * nf..w_base + ch * nf + nf];
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a += xv * wv;
                                }
                                *count += 2 * nf as u64;
                            }
                        }
                    }
                    apply_activation(l.activation, acc);
                }
            }
            out
        }
        Layer::SepConv2d(l) => {
            let (h, w, c) = input.shape().hwc().unwrap();
            let (oh, ow) = (h - l.kh + 1, w - l.kw + 1);
            let x = input.as_slice();
            let nf = l.filters;
            let mut depth = vec![0.0; oh * ow * c];
            for y in 0..oh {
                for xo in 0..ow {
                    let acc = &mut depth[(y * ow + xo) * c..(y * ow + xo) * c + c];
                    for i in 0..l.kh {
                        for j in 0..l.kw {
                            let in_base = ((y + i) * w + (xo + j)) * c;
                            let k_base = (i * l.kw + j) * c;
                            for ch in 0..c {
                                acc[ch] += x[in_base + ch] * l.depthwise[k_base + ch];
                            }
                            *count += 2 * c as u64;
                        }
                    }
                }
            }
            let mut out = Tensor::zeros(Shape::Hwc { h: oh, w: ow, c: nf });
            let o = out.as_mut_slice();
            for pos in 0..oh * ow {
                let acc = &mut o[pos * nf..pos * nf + nf];
                acc.copy_from_slice(&l.bias);
                *count += nf as u64;
                for ch in 0..c {
                    let dv = depth[pos * c + ch];
                    let prow = &l.pointwise[ch * nf..ch * nf + nf];
                    for (a, &pv) in acc.iter_mut().zip(prow) {
                        *a += dv * pv;
                    }
                    *count += 2 * nf as u64;
                }
                apply_activation(l.activation, acc);
            }
            out
        }
        Layer::AvgPool => {
            let (h, w, c) = input.shape().hwc().unwrap();
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
                        *count += 4;
                    }
                }
            }
            out
        }
        Layer::GlobalAvgPool => {
            let (h, w, c) = input.shape().hwc().unwrap();
            let x = input.as_slice();
            let mut out = Tensor::zeros(Shape::Flat(c));
            let o = out.as_mut_slice();
            for pos in 0..h * w {
                for ch in 0..c {
                    o[ch] += x[pos * c + ch];
                    *count += 1;
                }
            }
            let scale = 1.0 / (h * w) as f64;
            for v in o {
                *v *= scale;
            }
            out
        }
        Layer::Flatten => input
            .reshaped(Shape::Flat(input.len()))
            .expect("flatten preserves length"),
        Layer::Dense(l) => {
            let x = input.as_slice();
            let no = l.out_dim;
            let mut out = Tensor::zeros(Shape::Flat(no));
            let acc = out.as_mut_slice();
            acc.copy_from_slice(&l.bias);
            *count += no as u64;
            for (i, &xv) in x.iter().enumerate() {
                let wrow = &l.weights[i * no..i * no + no];
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a += xv * wv;
                }
                *count += 2 * no as u64;
            }
            apply_activation(l.activation, acc);
            out
        }
        Layer::Softmax => {
            let x = input.as_slice();
            let n = x.len();
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
            *count += 5 * n as u64;
            out
        }
    }
}

fn apply_activation(activation: Activation, values: &mut [f64]) {
    if activation == Activation::Relu {
        for v in values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Per-layer live activation element counts for layerwise execution:
/// each layer holds its full input and output maps.
fn layerwise_act_elems(net: &Network) -> Vec<u64> {
    net.shapes()
        .windows(2)
        .map(|io| (io[0].len() + io[1].len()) as u64)
        .collect()
}

/// Tile state while walking the trunk.
enum TileCursor {
    /// Spatial tiling still alive: current window height/width.
    Window { th: usize, tw: usize },
    /// A flatten/dense/global-pool boundary was crossed; later layers see
    /// full buffers.
    Broken,
}

/// Per-layer live activation element counts in tiled mode, or `None` when
/// the tile dies (some layer would see a non-positive window).
fn tiled_act_elems(net: &Network, tile: usize) -> Option<Vec<u64>> {
    let shapes = net.shapes();
    let mut cursor = match shapes[0] {
        Shape::Hwc { h, w, .. } => TileCursor::Window { th: tile.min(h), tw: tile.min(w) },
        Shape::Flat(_) => TileCursor::Broken,
    };
    let mut elems = Vec::with_capacity(net.layers().len());
    for (layer, io) in net.layers().iter().zip(shapes.windows(2)) {
        let (input, output) = (io[0], io[1]);
        let req = match (&cursor, layer) {
            (TileCursor::Window { th, tw }, Layer::Conv2d(_) | Layer::SepConv2d(_)) => {
                let (kh, kw, filters, in_ch) = match layer {
                    Layer::Conv2d(l) => (l.kh, l.kw, l.filters, l.in_ch),
                    Layer::SepConv2d(l) => (l.kh, l.kw, l.filters, l.in_ch),
                    _ => unreachable!(),
                };
                if *th < kh || *tw < kw {
                    return None;
                }
                let (oth, otw) = (th - kh + 1, tw - kw + 1);
                let req = (th * tw * in_ch + oth * otw * filters) as u64;
                cursor = TileCursor::Window { th: oth, tw: otw };
                req
            }
            (TileCursor::Window { th, tw }, Layer::AvgPool) => {
                let (oth, otw) = (th / 2, tw / 2);
                if oth == 0 || otw == 0 {
                    return None;
                }
                let c = input.hwc().expect("spatial input").2;
                let req = ((th * tw + oth * otw) * c) as u64;
                cursor = TileCursor::Window { th: oth, tw: otw };
                req
            }
            (TileCursor::Window { th, tw }, Layer::GlobalAvgPool) => {
                // Streams tiles into C running sums.
                let c = input.hwc().expect("spatial input").2;
                let req = (th * tw * c + c) as u64;
                cursor = TileCursor::Broken;
                req
            }
            // Flatten and dense need the whole input feature map resident -
            // the mechanism that makes the FC stack the memory bottleneck.
            _ => {
                cursor = TileCursor::Broken;
                (input.len() + output.len()) as u64
            }
        };
        elems.push(req);
    }
    Some(elems)
}

fn summarize(net: &Network, act_elems: &[u64], cfg: &CostConfig) -> MemoryReport {
    let param_bytes: u64 = net
        .layers()
        .iter()
        .map(|l| l.param_count() as u64 * cfg.weight_byte_width)
        .sum();
    let act_bytes = act_elems
        .iter()
        .map(|&e| e * cfg.act_byte_width)
        .max()
        .unwrap_or(0);
    let total_bytes = net
        .layers()
        .iter()
        .zip(act_elems)
        .map(|(l, &e)| l.param_count() as u64 * cfg.weight_byte_width + e * cfg.act_byte_width)
        .max()
        .unwrap_or(0);
    MemoryReport { act_bytes, param_bytes, total_bytes }
}

fn check_tile_precondition(net: &Network, tile: usize) -> Result<()> {
    if let Shape::Hwc { h, w, .. } = net.input_shape() {
        if tile > h.min(w) {
            return Err(Error::validation(format!(
                "tile {tile} exceeds the input side ({h}x{w})"
            )));
        }
    }
    Ok(())
}

/// Memory figures for one execution mode. Tiled mode errors when the tile
/// cannot survive the trunk.
pub fn memory(net: &Network, mode: MemoryMode, cfg: &CostConfig) -> Result<MemoryReport> {
    cfg.validate()?;
    match mode {
        MemoryMode::Layerwise => Ok(summarize(net, &layerwise_act_elems(net), cfg)),
        MemoryMode::Tiled => {
            check_tile_precondition(net, cfg.tile)?;
            let elems = tiled_act_elems(net, cfg.tile).ok_or_else(|| {
                Error::validation(format!(
                    "tile {} dies inside the trunk (a layer would see an empty window)",
                    cfg.tile
                ))
            })?;
            Ok(summarize(net, &elems, cfg))
        }
    }
}

/// Full cost summary. The tiled columns are `None` when the tile dies
/// mid-trunk; a tile larger than the input is still an error.
pub fn cost_report(net: &Network, cfg: &CostConfig) -> Result<CostReport> {
    cfg.validate()?;
    check_tile_precondition(net, cfg.tile)?;
    let layerwise = summarize(net, &layerwise_act_elems(net), cfg);
    let tiled = tiled_act_elems(net, cfg.tile).map(|elems| summarize(net, &elems, cfg));
    Ok(CostReport {
        flops: flops(net),
        param_bytes: layerwise.param_bytes,
        act_bytes_layerwise: layerwise.act_bytes,
        total_bytes_layerwise: layerwise.total_bytes,
        act_bytes_tiled: tiled.as_ref().map(|t| t.act_bytes),
        total_bytes_tiled: tiled.as_ref().map(|t| t.total_bytes),
        tile: cfg.tile,
    })
}
