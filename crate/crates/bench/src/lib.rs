//! Shared fixtures for the criterion benchmarks in `benches/`.
//!
//! The benchmarks cover the pipeline's hot paths: event accumulation,
//! binary downsampling, connected-component labeling, and the classifier's
//! convolution forward pass. Run them with `cargo bench -p evscope-bench`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evscope_core::event::EventStream;
use evscope_core::nn::{build_architecture, ArchLabel, Network, Shape, Tensor, PATCH_SIZE};
use evscope_core::region::BinaryImage;
use evscope_core::scene::{synthesize_scene, ClassLabel, ObjectSpec, SceneConfig};
use evscope_core::{Frame, Representation};

/// A random binary image at the proposer's working resolution.
pub fn random_binary_image(seed: u64, width: usize, height: usize, density: f64) -> BinaryImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = BinaryImage::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            img.set(x, y, rng.gen_bool(density));
        }
    }
    img
}

/// A random full-resolution one-bit frame.
pub fn random_frame(seed: u64, density: f64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = Frame::zeros(0, 0, 240, 180, Representation::OneBit1Ch);
    for y in 0..180 {
        for x in 0..240 {
            if rng.gen_bool(density) {
                frame.set(x, y, 0, 1);
            }
        }
    }
    frame
}

/// A one-second synthetic scene with one object of every class.
pub fn sample_stream(seed: u64) -> EventStream {
    let mut objects = Vec::new();
    let mut row = 4i32;
    for (i, class) in ClassLabel::ALL.into_iter().enumerate() {
        let (w, h) = class.nominal_size();
        objects.push(ObjectSpec {
            class,
            width: w,
            height: h,
            velocity: 110.0 + 10.0 * i as f64,
            entry_time: 0,
            entry_row: row,
        });
        row += h as i32 + 10;
    }
    let cfg = SceneConfig {
        duration: 1_000_000,
        objects,
        rng_seed: seed,
        ..SceneConfig::default()
    };
    synthesize_scene(&cfg).expect("valid scene config").0
}

/// A randomly initialized two-channel network plus a matching random input.
pub fn network_with_input(label: ArchLabel, seed: u64) -> (Network, Tensor) {
    let mut net = build_architecture(label, 2).expect("known architecture");
    net.randomize(seed);
    let shape = Shape::Hwc { h: PATCH_SIZE, w: PATCH_SIZE, c: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let data: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let input = Tensor::from_vec(shape, data).expect("shape matches data");
    (net, input)
}
