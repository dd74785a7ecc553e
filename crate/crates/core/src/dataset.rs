//! Dataset construction: matches region proposals (or ground-truth boxes) to
//! interpolated track annotations, cuts fixed 42x42 classifier patches, and
//! assembles balanced train/validation/test splits.
//!
//! Leakage rules: the train/validation split is by track (stratified per
//! class) so near-duplicate consecutive frames of one object never straddle
//! the split, and test samples come only from separate held-out scenes.
//! Everything is seeded; rebuilding a dataset from the same scenes and
//! configuration is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::{iou, BoundingBox};
use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::frame::{
    accumulate, suppress_isolated, to_one_bit, to_single_channel, Frame, FrameConfig,
    Representation,
};
use crate::nn::{Example, Tensor, PATCH_SIZE};
use crate::region::{ccl_rp, hist_rp, CclParams, HistParams, Proposal, RpSource};
use crate::scene::{ClassLabel, TrackAnnotation, NUM_CLASSES};

/// Bumped whenever the archive layout changes.
pub const DATASET_FORMAT_VERSION: u32 = 1;

const DATASET_FORMAT_NAME: &str = "evscope-dataset";

/// A fixed 42x42 window of raw per-pixel counts in some representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    repr: Representation,
    /// `(y * 42 + x) * channels + c`.
    data: Vec<u8>,
}

impl Patch {
    pub fn from_raw(repr: Representation, data: Vec<u8>) -> Result<Patch> {
        let expected = PATCH_SIZE * PATCH_SIZE * repr.channels();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "patch needs {expected} values for {}, got {}",
                repr.name(),
                data.len()
            )));
        }
        if repr != Representation::MultiBit2Ch && data.iter().any(|&v| v > 1) {
            return Err(Error::validation(format!(
                "one-bit patch contains a count above 1 ({})",
                repr.name()
            )));
        }
        Ok(Patch { repr, data })
    }

    pub fn repr(&self) -> Representation {
        self.repr
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * PATCH_SIZE + x) * self.repr.channels() + c]
    }
}

/// One classifier example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patch: Patch,
    pub class: ClassLabel,
    pub track_id: u32,
    pub frame_index: u32,
    pub origin: RpSource,
}

impl Example for Sample {
    fn input(&self, normalization: f64) -> Tensor {
        Tensor::from_u8_hwc(
            PATCH_SIZE,
            PATCH_SIZE,
            self.patch.repr.channels(),
            &self.patch.data,
            normalization,
        )
        .expect("patch dimensions are validated at construction")
    }

    fn class_index(&self) -> usize {
        self.class.index()
    }
}

/// A synthesized or recorded scene: its event stream plus ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub stream: EventStream,
    pub tracks: Vec<TrackAnnotation>,
}

/// The assembled splits. Train and validation share no track; test samples
/// come from scenes the other splits never saw.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub representation: Representation,
    pub rp_source: RpSource,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Everything that controls dataset construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub rp_source: RpSource,
    pub representation: Representation,
    /// Upsample under-represented training classes to the largest class
    /// count (bikes through augmentation, others by replication).
    pub balance: bool,
    /// A proposal must beat this IoU (strictly) against some live track.
    pub iou_min: f64,
    pub frame: FrameConfig,
    pub ccl: CclParams,
    pub hist: HistParams,
    /// Isolated-pixel suppression applied to the detection view before
    /// region proposal; 0 disables.
    pub rp_min_neighbors: u8,
    /// Fraction of each class's tracks held out for validation.
    pub val_fraction: f64,
    pub split_seed: u64,
    pub augment_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            rp_source: RpSource::Ccl,
            representation: Representation::OneBit2Ch,
            balance: true,
            iou_min: 0.1,
            frame: FrameConfig::default(),
            ccl: CclParams::default(),
            hist: HistParams::default(),
            rp_min_neighbors: 1,
            val_fraction: 0.2,
            split_seed: 17,
            augment_seed: 23,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.iou_min) {
            return Err(Error::validation("iou_min must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::validation("val_fraction must be in [0, 1)"));
        }
        if self.rp_min_neighbors > 8 {
            return Err(Error::validation("rp_min_neighbors must be in 0..=8"));
        }
        Ok(())
    }
}

/// Linearly interpolates a track's box at time `t`, rounding each coordinate
/// to the nearest integer. `None` outside the track's keyframe span.
pub fn interpolate_box(track: &TrackAnnotation, t: u64) -> Option<BoundingBox> {
    let kfs = &track.keyframes;
    let (first, last) = (kfs.first()?, kfs.last()?);
    if t < first.t || t > last.t {
        return None;
    }
    // Index of the first keyframe strictly after t; its predecessor exists
    // because t >= first.t.
    let after = kfs.partition_point(|k| k.t <= t);
    let a = &kfs[after - 1];
    if a.t == t || after == kfs.len() {
        return Some(a.bbox);
    }
    let b = &kfs[after];
    let alpha = (t - a.t) as f64 / (b.t - a.t) as f64;
    let lerp = |from: f64, to: f64| from + (to - from) * alpha;
    Some(BoundingBox {
        x0: lerp(a.bbox.x0 as f64, b.bbox.x0 as f64).round() as i32,
        y0: lerp(a.bbox.y0 as f64, b.bbox.y0 as f64).round() as i32,
        w: lerp(a.bbox.w as f64, b.bbox.w as f64).round() as u32,
        h: lerp(a.bbox.h as f64, b.bbox.h as f64).round() as u32,
    })
}

/// Pairs each proposal with the live ground-truth box of maximal IoU at the
/// proposal frame's mid-time (`k * interval + interval / 2`). Proposals
/// whose best IoU does not exceed `iou_min` are dropped; IoU ties resolve to
/// the lower track id.
pub fn match_proposals(
    proposals: &[Proposal],
    tracks: &[TrackAnnotation],
    frame_interval_us: u64,
    iou_min: f64,
) -> Vec<(Proposal, u32, ClassLabel)> {
    let mut matched = Vec::new();
    for proposal in proposals {
        let t_mid = proposal.frame_index as u64 * frame_interval_us + frame_interval_us / 2;
        let mut best: Option<(f64, u32, ClassLabel)> = None;
        for track in tracks {
            let Some(gt) = interpolate_box(track, t_mid) else {
                continue;
            };
            let overlap = iou(&proposal.bbox, &gt);
            let wins = match best {
                None => true,
                Some((b, id, _)) => {
                    overlap > b || (overlap == b && track.track_id < id)
                }
            };
            if wins {
                best = Some((overlap, track.track_id, track.class));
            }
        }
        if let Some((overlap, id, class)) = best {
            if overlap > iou_min {
                matched.push((*proposal, id, class));
            }
        }
    }
    matched
}

/// Cuts the 42x42 window centered on the box centroid (rounded) out of the
/// frame. The window keeps whatever frame content it covers - context around
/// small boxes, a central crop of large ones - and is zero-filled where it
/// leaves the frame.
pub fn extract_patch(frame: &Frame, bbox: &BoundingBox) -> Patch {
    let channels = frame.channels();
    let cx = (bbox.x0 as f64 + bbox.w as f64 / 2.0).round() as i64;
    let cy = (bbox.y0 as f64 + bbox.h as f64 / 2.0).round() as i64;
    let half = (PATCH_SIZE / 2) as i64;
    let (wx0, wy0) = (cx - half, cy - half);
    let mut data = vec![0u8; PATCH_SIZE * PATCH_SIZE * channels];
    for py in 0..PATCH_SIZE {
        let fy = wy0 + py as i64;
        if fy < 0 || fy >= frame.height as i64 {
            continue;
        }
        for px in 0..PATCH_SIZE {
            let fx = wx0 + px as i64;
            if fx < 0 || fx >= frame.width as i64 {
                continue;
            }
            for c in 0..channels {
                data[(py * PATCH_SIZE + px) * channels + c] =
                    frame.get(fx as u16, fy as u16, c).min(255) as u8;
            }
        }
    }
    Patch {
        repr: frame.repr,
        data,
    }
}

/// The four 42x42 boxes anchored at the corners of `bbox`, clamped into the
/// frame. Dimensions smaller than 42 collapse that axis (the opposing
/// corners coincide).
pub fn corner_patches(bbox: &BoundingBox, frame_w: u32, frame_h: u32) -> [BoundingBox; 4] {
    let side = PATCH_SIZE as i64;
    let clamp = |v: i64, dim: u32| -> i32 { v.clamp(0, (dim as i64 - side).max(0)) as i32 };
    let left = clamp(bbox.x0 as i64, frame_w);
    let right = clamp(bbox.x0 as i64 + bbox.w as i64 - side, frame_w);
    let top = clamp(bbox.y0 as i64, frame_h);
    let bottom = clamp(bbox.y0 as i64 + bbox.h as i64 - side, frame_h);
    let patch = |x0, y0| BoundingBox { x0, y0, w: PATCH_SIZE as u32, h: PATCH_SIZE as u32 };
    [
        patch(left, top),
        patch(right, top),
        patch(left, bottom),
        patch(right, bottom),
    ]
}

/// Rotates a patch by `theta_deg` about the patch center (20.5, 20.5) with
/// nearest-neighbor sampling, then shifts it by whole pixels. Exposed pixels
/// are zero; counts are never interpolated, so representation invariants
/// survive.
pub fn rotate_translate_patch(patch: &Patch, theta_deg: f64, dx: i32, dy: i32) -> Patch {
    let channels = patch.repr.channels();
    let n = PATCH_SIZE;
    let center = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = theta_deg.to_radians().sin_cos();

    let mut rotated = vec![0u8; n * n * channels];
    for y in 0..n {
        for x in 0..n {
            // Inverse-map the output pixel into the source patch.
            let rx = x as f64 - center;
            let ry = y as f64 - center;
            let sx = (center + rx * cos + ry * sin).round();
            let sy = (center - rx * sin + ry * cos).round();
            if sx < 0.0 || sy < 0.0 || sx >= n as f64 || sy >= n as f64 {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            for c in 0..channels {
                rotated[(y * n + x) * channels + c] = patch.data[(sy * n + sx) * channels + c];
            }
        }
    }

    let mut data = vec![0u8; n * n * channels];
    for y in 0..n {
        let sy = y as i64 - dy as i64;
        if sy < 0 || sy >= n as i64 {
            continue;
        }
        for x in 0..n {
            let sx = x as i64 - dx as i64;
            if sx < 0 || sx >= n as i64 {
                continue;
            }
            for c in 0..channels {
                data[(y * n + x) * channels + c] =
                    rotated[(sy as usize * n + sx as usize) * channels + c];
            }
        }
    }
    Patch {
        repr: patch.repr,
        data,
    }
}

/// Randomized bike augmentation: rotation up to +/-15 degrees, translation
/// up to +/-4 pixels each way. Draw order (angle, dx, dy) is fixed for
/// reproducibility. Caller ensures the sample is a bike.
pub fn augment_bike(sample: &Sample, rng: &mut ChaCha8Rng) -> Sample {
    debug_assert_eq!(sample.class, ClassLabel::Bike);
    let theta = rng.gen_range(-15.0..=15.0);
    let dx = rng.gen_range(-4..=4);
    let dy = rng.gen_range(-4..=4);
    Sample {
        patch: rotate_translate_patch(&sample.patch, theta, dx, dy),
        ..sample.clone()
    }
}

/// Converts an accumulated multi-bit frame into the requested view.
fn as_representation(frame: &Frame, repr: Representation) -> Result<Frame> {
    match repr {
        Representation::MultiBit2Ch => Ok(frame.clone()),
        Representation::OneBit2Ch => to_one_bit(frame),
        Representation::OneBit1Ch => to_single_channel(&to_one_bit(frame)?),
    }
}

/// Samples of one scene, with track ids shifted by `track_offset`. Returns
/// the samples and the id space the scene consumed.
fn scene_samples(
    scene: &Scene,
    track_offset: u32,
    enrich_corners: bool,
    cfg: &DatasetConfig,
) -> Result<(Vec<Sample>, u32)> {
    let frames = accumulate(&scene.stream, &cfg.frame)?;
    let (width, height) = (scene.stream.width() as u32, scene.stream.height() as u32);
    let class_of: BTreeMap<u32, ClassLabel> =
        scene.tracks.iter().map(|t| (t.track_id, t.class)).collect();

    let mut samples = Vec::new();
    for frame in &frames {
        // (box, original track id) pairs to cut patches from.
        let boxed: Vec<(BoundingBox, u32)> = match cfg.rp_source {
            RpSource::Gt => {
                let t_mid = frame.index as u64 * cfg.frame.interval + cfg.frame.interval / 2;
                scene
                    .tracks
                    .iter()
                    .filter_map(|t| interpolate_box(t, t_mid).map(|b| (b, t.track_id)))
                    .collect()
            }
            RpSource::Ccl | RpSource::Hist => {
                let detection = suppress_isolated(
                    &to_single_channel(&to_one_bit(frame)?)?,
                    cfg.rp_min_neighbors,
                )?;
                let proposals = match cfg.rp_source {
                    RpSource::Ccl => ccl_rp(&detection, &cfg.ccl)?,
                    _ => hist_rp(&detection, &cfg.hist)?,
                };
                match_proposals(&proposals, &scene.tracks, cfg.frame.interval, cfg.iou_min)
                    .into_iter()
                    .map(|(p, id, _)| (p.bbox, id))
                    .collect()
            }
        };
        if boxed.is_empty() {
            continue;
        }

        let view = as_representation(frame, cfg.representation)?;
        for (bbox, original_id) in boxed {
            let class = class_of[&original_id];
            let base = Sample {
                patch: extract_patch(&view, &bbox),
                class,
                track_id: original_id + track_offset,
                frame_index: frame.index,
                origin: cfg.rp_source,
            };
            let oversized = bbox.w > PATCH_SIZE as u32 || bbox.h > PATCH_SIZE as u32;
            let enrich = enrich_corners
                && oversized
                && matches!(class, ClassLabel::Bus | ClassLabel::TruckVan);
            samples.push(base.clone());
            if enrich {
                for corner in corner_patches(&bbox, width, height) {
                    samples.push(Sample {
                        patch: extract_patch(&view, &corner),
                        ..base.clone()
                    });
                }
            }
        }
    }
    let span = scene.tracks.iter().map(|t| t.track_id + 1).max().unwrap_or(0);
    Ok((samples, span))
}

/// Splits training-scene samples into train/validation by track, stratified
/// per class: each class with at least two tracks sends
/// `clamp(round(val_fraction * n), 1, n - 1)` tracks to validation.
fn split_by_track(
    samples: Vec<Sample>,
    val_fraction: f64,
    seed: u64,
) -> (Vec<Sample>, Vec<Sample>) {
    let mut tracks_per_class: [BTreeSet<u32>; NUM_CLASSES] = Default::default();
    for s in &samples {
        tracks_per_class[s.class.index()].insert(s.track_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_tracks = BTreeSet::new();
    for tracks in &tracks_per_class {
        let n = tracks.len();
        if n < 2 || val_fraction == 0.0 {
            continue;
        }
        let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut ids: Vec<u32> = tracks.iter().copied().collect();
        ids.shuffle(&mut rng);
        val_tracks.extend(ids.into_iter().take(n_val));
    }
    samples
        .into_iter()
        .partition(|s| !val_tracks.contains(&s.track_id))
}

/// Upsamples every under-represented training class to the largest class
/// count: bikes through fresh augmentations, other classes by replication.
fn balance_train(train: &mut Vec<Sample>, augment_seed: u64) {
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, s) in train.iter().enumerate() {
        by_class[s.class.index()].push(i);
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(augment_seed);
    let mut extra = Vec::new();
    for class in ClassLabel::ALL {
        let originals = &by_class[class.index()];
        if originals.is_empty() {
            continue; // caught by the class-coverage check before balancing
        }
        for i in 0..target - originals.len() {
            let source = &train[originals[i % originals.len()]];
            extra.push(if class == ClassLabel::Bike {
                augment_bike(source, &mut rng)
            } else {
                source.clone()
            });
        }
    }
    train.append(&mut extra);
}

fn check_class_coverage(samples: &[Sample], what: &str) -> Result<()> {
    let mut seen = [false; NUM_CLASSES];
    for s in samples {
        seen[s.class.index()] = true;
    }
    for class in ClassLabel::ALL {
        if !seen[class.index()] {
            return Err(Error::validation(format!(
                "no {what} samples for class {class}"
            )));
        }
    }
    Ok(())
}

/// Builds the full dataset. Training scenes produce the train/validation
/// splits (with corner enrichment and optional balancing); test scenes are
/// held out verbatim - no enrichment, no balancing.
pub fn build_dataset(
    train_scenes: &[Scene],
    test_scenes: &[Scene],
    cfg: &DatasetConfig,
) -> Result<DatasetSplit> {
    cfg.validate()?;
    if train_scenes.is_empty() {
        return Err(Error::validation("need at least one training scene"));
    }
    if test_scenes.is_empty() {
        return Err(Error::validation("need at least one held-out test scene"));
    }

    let mut offset = 0u32;
    let mut pool = Vec::new();
    for scene in train_scenes {
        let (mut samples, span) = scene_samples(scene, offset, true, cfg)?;
        pool.append(&mut samples);
        offset += span;
    }
    let mut test = Vec::new();
    for scene in test_scenes {
        let (mut samples, span) = scene_samples(scene, offset, false, cfg)?;
        test.append(&mut samples);
        offset += span;
    }

    let (mut train, val) = split_by_track(pool, cfg.val_fraction, cfg.split_seed);
    check_class_coverage(&train, "training")?;
    check_class_coverage(&test, "test")?;
    if cfg.balance {
        balance_train(&mut train, cfg.augment_seed);
    }

    Ok(DatasetSplit {
        representation: cfg.representation,
        rp_source: cfg.rp_source,
        train,
        val,
        test,
    })
}

#[derive(Serialize, Deserialize)]
struct ClassEntry {
    name: String,
    index: u8,
}

#[derive(Serialize, Deserialize)]
struct SplitCounts {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    representation: Representation,
    rp_source: RpSource,
    patch_size: usize,
    classes: Vec<ClassEntry>,
    splits: SplitCounts,
}

fn write_split_bin(path: &Path, samples: &[Sample], repr: Representation) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        if s.patch.repr != repr {
            return Err(Error::validation(format!(
                "sample representation {} does not match the dataset's {}",
                s.patch.repr.name(),
                repr.name()
            )));
        }
        out.write_all(&[s.class.index() as u8])?;
        out.write_all(&s.track_id.to_le_bytes())?;
        out.write_all(&s.frame_index.to_le_bytes())?;
        out.write_all(&s.patch.data)?;
    }
    out.flush()?;
    Ok(())
}

fn read_split_bin(
    path: &Path,
    repr: Representation,
    origin: RpSource,
    expected: usize,
) -> Result<Vec<Sample>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let patch_len = PATCH_SIZE * PATCH_SIZE * repr.channels();
    let record = 1 + 4 + 4 + patch_len;
    if bytes.len() != expected * record {
        return Err(Error::validation(format!(
            "{} holds {} bytes, expected {} for {expected} records",
            path.display(),
            bytes.len(),
            expected * record
        )));
    }
    let mut samples = Vec::with_capacity(expected);
    for chunk in bytes.chunks_exact(record) {
        let class = ClassLabel::from_index(chunk[0] as usize)?;
        let track_id = u32::from_le_bytes([chunk[1], chunk[2], chunk[3], chunk[4]]);
        let frame_index = u32::from_le_bytes([chunk[5], chunk[6], chunk[7], chunk[8]]);
        let patch = Patch::from_raw(repr, chunk[9..].to_vec())?;
        samples.push(Sample {
            patch,
            class,
            track_id,
            frame_index,
            origin,
        });
    }
    Ok(samples)
}

/// Writes the dataset as `manifest.json` plus one binary record file per
/// split (u8 class, u32 track, u32 frame, then the raw patch bytes).
pub fn save_dataset(dir: &Path, split: &DatasetSplit) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: DATASET_FORMAT_NAME.to_string(),
        version: DATASET_FORMAT_VERSION,
        representation: split.representation,
        rp_source: split.rp_source,
        patch_size: PATCH_SIZE,
        classes: ClassLabel::ALL
            .into_iter()
            .map(|c| ClassEntry { name: c.name().to_string(), index: c.index() as u8 })
            .collect(),
        splits: SplitCounts {
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
        },
    };
    let mut out = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;

    write_split_bin(&dir.join("train.bin"), &split.train, split.representation)?;
    write_split_bin(&dir.join("val.bin"), &split.val, split.representation)?;
    write_split_bin(&dir.join("test.bin"), &split.test, split.representation)?;
    Ok(())
}

/// Loads a dataset archive written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let manifest: Manifest =
        serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    if manifest.format != DATASET_FORMAT_NAME {
        return Err(Error::validation(format!(
            "not a dataset manifest (format '{}')",
            manifest.format
        )));
    }
    if manifest.version != DATASET_FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported dataset format version {} (expected {DATASET_FORMAT_VERSION})",
            manifest.version
        )));
    }
    if manifest.patch_size != PATCH_SIZE {
        return Err(Error::validation(format!(
            "archive patch size {} unsupported (expected {PATCH_SIZE})",
            manifest.patch_size
        )));
    }
    let (repr, origin) = (manifest.representation, manifest.rp_source);
    Ok(DatasetSplit {
        representation: repr,
        rp_source: origin,
        train: read_split_bin(&dir.join("train.bin"), repr, origin, manifest.splits.train)?,
        val: read_split_bin(&dir.join("val.bin"), repr, origin, manifest.splits.val)?,
        test: read_split_bin(&dir.join("test.bin"), repr, origin, manifest.splits.test)?,
    })
}
