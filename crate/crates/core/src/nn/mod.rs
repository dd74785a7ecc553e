//! A small, dependency-free convolutional network engine in f64.
//!
//! Layers keep their parameters inline; optimizers and model files view the
//! whole network as one flat parameter vector (layer order, kernel(s) before
//! bias within a layer). Everything is seeded and single-threaded by
//! default, so a given configuration reproduces bit-for-bit.

pub mod grad_check;
mod layers;
mod model_io;
mod tensor;
mod train;

pub use layers::{Activation, Conv2d, Dense, Layer, LayerSpec, SepConv2d};
pub use model_io::{read_model, write_model, MODEL_FORMAT_VERSION};
pub use tensor::{Shape, Tensor};
pub use train::{
    balanced_accuracy_lenient, cross_entropy, train, write_history_csv, Adam, EpochStats,
    Example, TrainConfig,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The classifier variants used throughout: a LeNet-style baseline and six
/// trims of it (separable convolutions, reduced heads, global pooling,
/// larger kernels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchLabel {
    /// Baseline: two dense 5x5 convs, two dense hidden layers.
    Bl,
    /// Both convolutions depthwise-separable.
    Bn,
    /// Second convolution depthwise-separable.
    Ma,
    /// Second conv separable with 5 filters and a single-layer head.
    Tn,
    /// Baseline trunk with global average pooling instead of flatten.
    Lg,
    /// Baseline with 7x7 kernels.
    Lk,
    /// Baseline trunk with a single-layer head.
    Sn,
}

impl ArchLabel {
    pub const ALL: [ArchLabel; 7] = [
        ArchLabel::Bl,
        ArchLabel::Bn,
        ArchLabel::Ma,
        ArchLabel::Tn,
        ArchLabel::Lg,
        ArchLabel::Lk,
        ArchLabel::Sn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchLabel::Bl => "BL",
            ArchLabel::Bn => "BN",
            ArchLabel::Ma => "MA",
            ArchLabel::Tn => "TN",
            ArchLabel::Lg => "LG",
            ArchLabel::Lk => "LK",
            ArchLabel::Sn => "SN",
        }
    }

    pub fn from_name(name: &str) -> Result<ArchLabel> {
        ArchLabel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::validation(format!("unknown architecture '{name}'")))
    }
}

impl std::fmt::Display for ArchLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifier input patches are 42x42 pixels.
pub const PATCH_SIZE: usize = 42;

/// Builds the layer stack for `label` on a `PATCH_SIZE` square input with
/// `in_ch` channels (1 or 2 depending on the frame representation). Weights
/// start at zero; call [`Network::randomize`] or load a model before use.
pub fn build_architecture(label: ArchLabel, in_ch: usize) -> Result<Network> {
    use LayerSpec::*;
    let relu = Activation::Relu;
    let linear = Activation::Linear;
    let (k, f2) = match label {
        ArchLabel::Lk => (7, 16),
        ArchLabel::Tn => (5, 5),
        _ => (5, 16),
    };
    let conv1: LayerSpec = match label {
        ArchLabel::Bn => SepConv2d { kh: k, kw: k, filters: 6, activation: relu },
        _ => Conv2d { kh: k, kw: k, filters: 6, activation: relu },
    };
    let conv2: LayerSpec = match label {
        ArchLabel::Bn | ArchLabel::Ma | ArchLabel::Tn => {
            SepConv2d { kh: k, kw: k, filters: f2, activation: relu }
        }
        _ => Conv2d { kh: k, kw: k, filters: f2, activation: relu },
    };
    let mut specs = vec![conv1, AvgPool, conv2, AvgPool];
    match label {
        ArchLabel::Lg => specs.push(GlobalAvgPool),
        _ => specs.push(Flatten),
    }
    match label {
        ArchLabel::Tn | ArchLabel::Sn => {}
        _ => {
            specs.push(Dense { units: 120, activation: relu });
            specs.push(Dense { units: 84, activation: relu });
        }
    }
    specs.push(Dense { units: 4, activation: linear });
    specs.push(Softmax);

    let net = Network::new(
        Shape::Hwc { h: PATCH_SIZE, w: PATCH_SIZE, c: in_ch },
        &specs,
    )?;
    Ok(net.with_label(label))
}

/// Intermediate activations from a forward pass, kept for backprop.
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[i + 1]` is layer `i`'s output.
    pub acts: Vec<Tensor>,
    /// Per-layer side products (the depthwise map of a separable conv).
    pub sides: Vec<Option<Tensor>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("cache always holds the input")
    }
}

/// A feed-forward layer stack with a fixed input shape.
#[derive(Debug, Clone)]
pub struct Network {
    label: Option<ArchLabel>,
    input_shape: Shape,
    layers: Vec<Layer>,
    /// `shapes[0]` is the input shape, `shapes[i + 1]` layer `i`'s output.
    shapes: Vec<Shape>,
}

impl Network {
    /// Assembles zero-weight layers from `specs`, checking that each layer
    /// accepts its predecessor's output shape.
    pub fn new(input_shape: Shape, specs: &[LayerSpec]) -> Result<Network> {
        if input_shape.is_empty() {
            return Err(Error::shape(format!("degenerate input shape {input_shape}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shapes = vec![input_shape];
        let mut cursor = input_shape;
        for &spec in specs {
            let (layer, out) = Layer::from_spec(spec, cursor)?;
            layers.push(layer);
            shapes.push(out);
            cursor = out;
        }
        Ok(Network {
            label: None,
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn with_label(mut self, label: ArchLabel) -> Network {
        self.label = Some(label);
        self
    }

    pub fn label(&self) -> Option<ArchLabel> {
        self.label
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("shapes is never empty")
    }

    /// Input shape followed by each layer's output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flat parameter vector: layers in order, kernel(s) then bias within a
    /// layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for block in layer.param_blocks() {
                out.extend_from_slice(block);
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::validation(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for block in layer.param_blocks_mut() {
                block.copy_from_slice(&flat[offset..offset + block.len()]);
                offset += block.len();
            }
        }
        Ok(())
    }

    /// Reinitializes all weights (Glorot uniform) from `seed`; biases reset
    /// to zero.
    pub fn randomize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            layer.randomize(&mut rng);
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::shape(format!(
                "network expects input {}, got {}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Runs the network, returning only the final output.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut cursor = input.clone();
        for layer in &self.layers {
            let (out, _) = layer.forward(&cursor);
            cursor = out;
        }
        Ok(cursor)
    }

    /// Runs the network keeping every intermediate activation.
    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut sides = Vec::with_capacity(self.layers.len());
        acts.push(input.clone());
        for layer in &self.layers {
            let (out, side) = layer.forward(acts.last().expect("non-empty"));
            acts.push(out);
            sides.push(side);
        }
        Ok(ForwardCache { acts, sides })
    }

    /// Backpropagates `grad_output` (dL/d output) through a cached forward
    /// pass. Returns the flat parameter gradient (same layout as
    /// [`Network::params`]) and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(
            grad_output.len(),
            cache.output().len(),
            "output gradient length mismatch"
        );
        let mut grads = vec![0.0; self.param_count()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut cursor = 0;
        for layer in &self.layers {
            offsets.push(cursor);
            cursor += layer.param_count();
        }

        let mut g = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            let output = &cache.acts[i + 1];
            let mut gin = vec![0.0; input.len()];
            let region = &mut grads[offsets[i]..offsets[i] + layer.param_count()];
            layer.backward(input, output, cache.sides[i].as_ref(), &g, region, &mut gin);
            g = gin;
        }
        (grads, g)
    }

    /// Argmax over the network output (ties resolve to the smaller index).
    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        let out = self.forward(input)?;
        Ok(argmax(out.as_slice()))
    }
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
