//! Model persistence: a JSON descriptor (architecture, shapes, counts) next
//! to a little-endian f32 weight blob in flat parameter order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ArchLabel, LayerSpec, Network, Shape};

/// Bumped whenever the descriptor schema or weight layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

const MODEL_FORMAT_NAME: &str = "evscope-model";

#[derive(Debug, Serialize, Deserialize)]
struct ModelDescriptor {
    format: String,
    version: u32,
    arch: Option<String>,
    input: Shape,
    layers: Vec<LayerSpec>,
    param_count: usize,
}

/// Writes `net` as a descriptor at `json_path` and weights at `weights_path`.
pub fn write_model(net: &Network, json_path: &Path, weights_path: &Path) -> Result<()> {
    let descriptor = ModelDescriptor {
        format: MODEL_FORMAT_NAME.to_string(),
        version: MODEL_FORMAT_VERSION,
        arch: net.label().map(|l| l.name().to_string()),
        input: net.input_shape(),
        layers: net.specs(),
        param_count: net.param_count(),
    };
    let mut json = BufWriter::new(File::create(json_path)?);
    serde_json::to_writer_pretty(&mut json, &descriptor)?;
    json.write_all(b"\n")?;
    json.flush()?;

    let mut bin = BufWriter::new(File::create(weights_path)?);
    for value in net.params() {
        bin.write_all(&(value as f32).to_le_bytes())?;
    }
    bin.flush()?;
    Ok(())
}

/// Loads a model written by [`write_model`]. The weight file length must
/// match the descriptor's parameter count exactly.
pub fn read_model(json_path: &Path, weights_path: &Path) -> Result<Network> {
    let descriptor: ModelDescriptor =
        serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    if descriptor.format != MODEL_FORMAT_NAME {
        return Err(Error::validation(format!(
            "not a model descriptor (format '{}')",
            descriptor.format
        )));
    }
    if descriptor.version != MODEL_FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
            descriptor.version
        )));
    }
    let mut net = Network::new(descriptor.input, &descriptor.layers)?;
    if let Some(name) = &descriptor.arch {
        net = net.with_label(ArchLabel::from_name(name)?);
    }
    if net.param_count() != descriptor.param_count {
        return Err(Error::validation(format!(
            "descriptor claims {} parameters but the layer stack has {}",
            descriptor.param_count,
            net.param_count()
        )));
    }

    let mut bytes = Vec::new();
    BufReader::new(File::open(weights_path)?).read_to_end(&mut bytes)?;
    if bytes.len() != descriptor.param_count * 4 {
        return Err(Error::validation(format!(
            "weight file holds {} bytes, expected {} for {} f32 parameters",
            bytes.len(),
            descriptor.param_count * 4,
            descriptor.param_count
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    net.set_params(&params)?;
    Ok(net)
}
