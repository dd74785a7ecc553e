//! Event-camera primitives: single events and validated event streams.
//!
//! An event is the atomic sensor output: a pixel coordinate, a microsecond
//! timestamp and a polarity bit (OFF = brightness decrease, ON = increase).
//! Streams are kept sorted by timestamp; all downstream processing relies on
//! that ordering.

use crate::error::{Error, Result};

/// Default sensor width in pixels.
pub const SENSOR_WIDTH: u16 = 240;
/// Default sensor height in pixels.
pub const SENSOR_HEIGHT: u16 = 180;

/// Polarity of a brightness change. OFF maps to channel 0, ON to channel 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Polarity::Off),
            1 => Ok(Polarity::On),
            other => Err(Error::validation(format!(
                "polarity must be 0 (OFF) or 1 (ON), got {other}"
            ))),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }

    /// Channel index used by two-channel frame representations.
    pub fn channel(self) -> usize {
        self.as_u8() as usize
    }
}

/// One sensor event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Timestamp in microseconds since stream start.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// A time-ordered event stream together with its sensor geometry.
///
/// Invariants (enforced by [`EventStream::new`]):
/// * events are sorted by `t` (ties allowed, original order preserved),
/// * every event lies inside `width` x `height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(format!(
                "sensor geometry must be nonzero, got {width}x{height}"
            )));
        }
        let mut last_t = 0u64;
        for (i, ev) in events.iter().enumerate() {
            if ev.x >= width || ev.y >= height {
                return Err(Error::validation(format!(
                    "event {i} at ({}, {}) outside sensor bounds {width}x{height}",
                    ev.x, ev.y
                )));
            }
            if ev.t < last_t {
                return Err(Error::validation(format!(
                    "event {i} has timestamp {} < previous {last_t}; stream must be sorted",
                    ev.t
                )));
            }
            last_t = ev.t;
        }
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}
