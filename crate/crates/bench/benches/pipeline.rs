//! Hot-path benchmarks: accumulation, downsampling, labeling, convolution.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use evscope_bench::{network_with_input, random_binary_image, random_frame, sample_stream};
use evscope_core::frame::accumulate;
use evscope_core::nn::ArchLabel;
use evscope_core::region::{ccl_label, downsample_or, BinaryImage, Connectivity};
use evscope_core::FrameConfig;

fn bench_accumulate(c: &mut Criterion) {
    let stream = sample_stream(11);
    let cfg = FrameConfig::default();
    c.bench_function("accumulate_1s_scene", |b| {
        b.iter(|| accumulate(black_box(&stream), black_box(&cfg)).unwrap())
    });
}

fn bench_downsample(c: &mut Criterion) {
    let frame = random_frame(12, 0.15);
    let img = BinaryImage::from_frame(&frame).unwrap();
    c.bench_function("downsample_or_240x180_to_40x60", |b| {
        b.iter(|| downsample_or(black_box(&img), 6, 3).unwrap())
    });
}

fn bench_ccl(c: &mut Criterion) {
    let img = random_binary_image(13, 40, 60, 0.3);
    c.bench_function("ccl_label_40x60_density_30pct", |b| {
        b.iter(|| ccl_label(black_box(&img), Connectivity::Eight))
    });
}

fn bench_conv_forward(c: &mut Criterion) {
    let (net, input) = network_with_input(ArchLabel::Bl, 14);
    c.bench_function("baseline_cnn_forward_42x42x2", |b| {
        b.iter(|| net.forward(black_box(&input)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_accumulate,
    bench_downsample,
    bench_ccl,
    bench_conv_forward
);
criterion_main!(benches);
