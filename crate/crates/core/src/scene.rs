//! Synthetic moving-object scenes with ground-truth tracks.
//!
//! The generator stands in for a roadside recording: rectangles of
//! class-typical size travel horizontally across the sensor. A moving
//! rectangle of uniform intensity only changes brightness at its boundary,
//! so events are emitted along the box perimeter - ON on the leading half,
//! OFF on the trailing half - plus uniform background noise. Ground truth is
//! a keyframe list of the (clipped) box position every millisecond.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity, SENSOR_HEIGHT, SENSOR_WIDTH};

/// Number of object classes.
pub const NUM_CLASSES: usize = 4;

/// Ground-truth keyframe spacing in microseconds.
pub const KEYFRAME_INTERVAL_US: u64 = 1_000;

/// Object classes, ordered by model output index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Car,
    Bus,
    TruckVan,
    Bike,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Car,
        ClassLabel::Bus,
        ClassLabel::TruckVan,
        ClassLabel::Bike,
    ];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Car => 0,
            ClassLabel::Bus => 1,
            ClassLabel::TruckVan => 2,
            ClassLabel::Bike => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::validation(format!("class index {i} out of range 0..{NUM_CLASSES}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Car => "car",
            ClassLabel::Bus => "bus",
            ClassLabel::TruckVan => "truck_van",
            ClassLabel::Bike => "bike",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "car" => Ok(ClassLabel::Car),
            "bus" => Ok(ClassLabel::Bus),
            "truck_van" => Ok(ClassLabel::TruckVan),
            "bike" => Ok(ClassLabel::Bike),
            other => Err(Error::validation(format!(
                "unknown class {other:?}; expected one of car, bus, truck_van, bike"
            ))),
        }
    }

    /// Median on-sensor box size (width, height) in pixels for this class.
    pub fn nominal_size(self) -> (u32, u32) {
        match self {
            ClassLabel::Car => (44, 19),
            ClassLabel::Bus => (101, 41),
            ClassLabel::TruckVan => (50, 25),
            ClassLabel::Bike => (21, 16),
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One moving rectangle in a synthetic scene.
///
/// Objects enter from off-screen on the side they are moving away from
/// (`velocity > 0` enters at the left edge) and are clipped while partially
/// visible. A zero-velocity object never becomes visible and emits nothing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: ClassLabel,
    pub width: u32,
    pub height: u32,
    /// Horizontal speed in pixels per second; sign gives the direction.
    pub velocity: f64,
    /// Time at which the object starts entering, in microseconds.
    pub entry_time: u64,
    /// Top row of the box (fixed for the whole trajectory).
    pub entry_row: i32,
}

impl ObjectSpec {
    /// Box position at time `t`, before clipping. `None` before entry or
    /// after the box has fully left the sensor.
    fn unclipped_box_at(&self, t: u64, sensor_width: u16) -> Option<BoundingBox> {
        if t < self.entry_time || self.velocity == 0.0 {
            return None;
        }
        let dt_s = (t - self.entry_time) as f64 / 1e6;
        let x_start = if self.velocity > 0.0 {
            -(self.width as f64)
        } else {
            sensor_width as f64
        };
        let x0 = (x_start + self.velocity * dt_s).round() as i64;
        if x0 >= sensor_width as i64 || x0 + self.width as i64 <= 0 {
            return None;
        }
        Some(BoundingBox::new(
            x0 as i32,
            self.entry_row,
            self.width,
            self.height,
        ))
    }
}

/// Full description of one synthetic scene. Given the same config the
/// generator produces byte-identical output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u16,
    pub height: u16,
    /// Scene length in microseconds.
    pub duration: u64,
    pub objects: Vec<ObjectSpec>,
    /// Expected events per boundary pixel per second while an object moves.
    pub edge_event_rate: f64,
    /// Expected background events per pixel per second (random polarity).
    pub noise_rate: f64,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: SENSOR_WIDTH,
            height: SENSOR_HEIGHT,
            duration: 2_000_000,
            objects: Vec::new(),
            edge_event_rate: 200.0,
            noise_rate: 0.05,
            rng_seed: 0,
        }
    }
}

/// Ground-truth box at one keyframe time, clipped to the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: u64,
    pub bbox: BoundingBox,
}

/// Ground-truth trajectory of one object.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackAnnotation {
    pub track_id: u32,
    pub class: ClassLabel,
    pub keyframes: Vec<Keyframe>,
}

/// Number of pixels on the perimeter of a `w x h` box.
fn perimeter_len(w: u32, h: u32) -> u64 {
    if w == 0 || h == 0 {
        0
    } else if h == 1 {
        w as u64
    } else if w == 1 {
        h as u64
    } else {
        2 * (w as u64 + h as u64) - 4
    }
}

/// The `idx`-th perimeter pixel of `b`, enumerated top row, bottom row, then
/// the two side columns.
fn perimeter_pixel(b: &BoundingBox, idx: u64) -> (i32, i32) {
    let w = b.w as u64;
    let h = b.h as u64;
    if idx < w {
        return (b.x0 + idx as i32, b.y0);
    }
    let idx = idx - w;
    if h == 1 {
        unreachable!("index past single-row perimeter");
    }
    if idx < w {
        return (b.x0 + idx as i32, b.y0 + (h - 1) as i32);
    }
    let idx = idx - w;
    let side = idx / (h - 2);
    let row = idx % (h - 2);
    let x = if side == 0 { b.x0 } else { b.x0 + (w - 1) as i32 };
    (x, b.y0 + 1 + row as i32)
}

/// Generates the event stream and ground-truth tracks for `cfg`.
///
/// Events are Poisson-sampled per millisecond tick: each visible moving
/// object emits on its clipped perimeter (leading half ON, trailing half
/// OFF), and background noise lands uniformly with random polarity. The
/// returned stream is time-sorted; objects that never become visible have no
/// annotation. Deterministic in `cfg.rng_seed`.
pub fn synthesize_scene(cfg: &SceneConfig) -> Result<(EventStream, Vec<TrackAnnotation>)> {
    if cfg.duration == 0 {
        return Err(Error::validation("scene duration must be positive"));
    }
    if cfg.edge_event_rate < 0.0 || cfg.noise_rate < 0.0 {
        return Err(Error::validation("event rates must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut events: Vec<Event> = Vec::new();
    let mut tracks: Vec<TrackAnnotation> = cfg
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| TrackAnnotation {
            track_id: i as u32,
            class: o.class,
            keyframes: Vec::new(),
        })
        .collect();

    let noise_per_tick = cfg.noise_rate * cfg.width as f64 * cfg.height as f64;
    let mut t0 = 0u64;
    while t0 < cfg.duration {
        let tick_len = KEYFRAME_INTERVAL_US.min(cfg.duration - t0);
        for (obj, track) in cfg.objects.iter().zip(tracks.iter_mut()) {
            let unclipped = match obj.unclipped_box_at(t0, cfg.width) {
                Some(b) => b,
                None => continue,
            };
            let clipped = match unclipped.clip_to(cfg.width as u32, cfg.height as u32) {
                Some(b) => b,
                None => continue,
            };
            track.keyframes.push(Keyframe { t: t0, bbox: clipped });

            let boundary = perimeter_len(clipped.w, clipped.h);
            let lambda = cfg.edge_event_rate * boundary as f64 * tick_len as f64 / 1e6;
            if lambda <= 0.0 {
                continue;
            }
            let count = Poisson::new(lambda).expect("positive lambda").sample(&mut rng) as u64;
            // Leading half of the perimeter (in the direction of travel)
            // brightens, trailing half darkens.
            let center_x = unclipped.x0 as f64 + unclipped.w as f64 / 2.0;
            for _ in 0..count {
                let idx = rng.gen_range(0..boundary);
                let (x, y) = perimeter_pixel(&clipped, idx);
                let leading = if obj.velocity > 0.0 {
                    (x as f64 + 0.5) >= center_x
                } else {
                    (x as f64 + 0.5) <= center_x
                };
                events.push(Event {
                    t: t0 + rng.gen_range(0..tick_len),
                    x: x as u16,
                    y: y as u16,
                    polarity: if leading { Polarity::On } else { Polarity::Off },
                });
            }
        }

        if noise_per_tick > 0.0 {
            let lambda = noise_per_tick * tick_len as f64 / 1e6;
            let count = Poisson::new(lambda).expect("positive lambda").sample(&mut rng) as u64;
            for _ in 0..count {
                events.push(Event {
                    t: t0 + rng.gen_range(0..tick_len),
                    x: rng.gen_range(0..cfg.width),
                    y: rng.gen_range(0..cfg.height),
                    polarity: if rng.gen::<bool>() { Polarity::On } else { Polarity::Off },
                });
            }
        }
        t0 += tick_len;
    }

    events.sort_by_key(|e| e.t);
    tracks.retain(|t| !t.keyframes.is_empty());
    let stream = EventStream::new(cfg.width, cfg.height, events)?;
    Ok((stream, tracks))
}

/// Parameters for building a family of related scenes (used by the CLI and
/// the end-to-end tests). Each scene gets `tracks_per_class` objects of every
/// class with randomized speed, direction, entry time and row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSetParams {
    pub seed: u64,
    pub scene_count: usize,
    pub tracks_per_class: usize,
    pub duration: u64,
    pub edge_event_rate: f64,
    pub noise_rate: f64,
    pub width: u16,
    pub height: u16,
    /// Per-class speed range in px/s, indexed by `ClassLabel::index`.
    pub speed_ranges: [(f64, f64); NUM_CLASSES],
}

impl Default for SceneSetParams {
    fn default() -> Self {
        SceneSetParams {
            seed: 1,
            scene_count: 4,
            tracks_per_class: 2,
            duration: 2_500_000,
            edge_event_rate: 200.0,
            noise_rate: 0.05,
            width: SENSOR_WIDTH,
            height: SENSOR_HEIGHT,
            speed_ranges: [(140.0, 240.0), (120.0, 200.0), (130.0, 220.0), (90.0, 160.0)],
        }
    }
}

/// Expands `params` into per-scene configs. Scene `i` derives its RNG stream
/// from `params.seed` and `i`, so the set is reproducible as a whole and
/// scenes stay independent.
pub fn scene_set(params: &SceneSetParams) -> Vec<SceneConfig> {
    (0..params.scene_count)
        .map(|i| {
            let scene_seed = params
                .seed
                .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
            let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
            let mut objects = Vec::new();
            for class in ClassLabel::ALL {
                let (w, h) = class.nominal_size();
                let (lo, hi) = params.speed_ranges[class.index()];
                for _ in 0..params.tracks_per_class {
                    let speed = rng.gen_range(lo..hi);
                    let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    let entry_time = rng.gen_range(0..params.duration / 3);
                    let entry_row = rng.gen_range(0..(params.height as i32 - h as i32).max(1));
                    objects.push(ObjectSpec {
                        class,
                        width: w,
                        height: h,
                        velocity: speed * dir,
                        entry_time,
                        entry_row,
                    });
                }
            }
            SceneConfig {
                width: params.width,
                height: params.height,
                duration: params.duration,
                objects,
                edge_event_rate: params.edge_event_rate,
                noise_rate: params.noise_rate,
                rng_seed: scene_seed.wrapping_add(17),
            }
        })
        .collect()
}
