//! Fixed-interval frame accumulation and representation transforms.
//!
//! Events are binned into half-open windows `[k*interval, (k+1)*interval)`
//! by polarity channel (0 = OFF, 1 = ON), counting spikes per pixel with a
//! saturation clip. Downstream consumers use one of three views:
//!
//! * `MultiBit2Ch` - clipped counts, two polarity channels ("what" input),
//! * `OneBit2Ch`   - per-channel occupancy bits,
//! * `OneBit1Ch`   - channel-OR occupancy ("where" input for detection).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventStream;

/// Pixel-value layout of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    #[serde(rename = "mb2c")]
    MultiBit2Ch,
    #[serde(rename = "1b2c")]
    OneBit2Ch,
    #[serde(rename = "1b1c")]
    OneBit1Ch,
}

impl Representation {
    pub fn channels(self) -> usize {
        match self {
            Representation::MultiBit2Ch | Representation::OneBit2Ch => 2,
            Representation::OneBit1Ch => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Representation::MultiBit2Ch => "mb2c",
            Representation::OneBit2Ch => "1b2c",
            Representation::OneBit1Ch => "1b1c",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mb2c" => Ok(Representation::MultiBit2Ch),
            "1b2c" => Ok(Representation::OneBit2Ch),
            "1b1c" => Ok(Representation::OneBit1Ch),
            other => Err(Error::validation(format!(
                "unknown representation {other:?}; expected mb2c, 1b2c or 1b1c"
            ))),
        }
    }
}

/// Accumulation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    /// Frame interval in microseconds.
    pub interval: u64,
    /// Per-pixel spike count ceiling for the multi-bit representation.
    pub clip_max: u16,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            interval: 66_000,
            clip_max: 15,
        }
    }
}

/// One accumulated frame. Data is row-major with interleaved channels:
/// `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: u32,
    /// Start of this frame's accumulation window, in microseconds.
    pub t_start: u64,
    pub width: u16,
    pub height: u16,
    pub repr: Representation,
    data: Vec<u16>,
}

impl Frame {
    pub fn zeros(index: u32, t_start: u64, width: u16, height: u16, repr: Representation) -> Self {
        Frame {
            index,
            t_start,
            width,
            height,
            repr,
            data: vec![0; width as usize * height as usize * repr.channels()],
        }
    }

    pub fn channels(&self) -> usize {
        self.repr.channels()
    }

    #[inline]
    fn offset(&self, x: u16, y: u16, c: usize) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels() + c
    }

    #[inline]
    pub fn get(&self, x: u16, y: u16, c: usize) -> u16 {
        self.data[self.offset(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u16, y: u16, c: usize, v: u16) {
        let i = self.offset(x, y, c);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// Sum of all pixel values across channels.
    pub fn total_count(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    /// True if any channel at `(x, y)` is nonzero.
    #[inline]
    pub fn any_at(&self, x: u16, y: u16) -> bool {
        (0..self.channels()).any(|c| self.get(x, y, c) != 0)
    }
}

/// Accumulates a stream into contiguous frames `0..=floor(t_last/interval)`.
/// Windows with no events still yield an (all-zero) frame so indices line up
/// with wall-clock time. An empty stream yields no frames.
pub fn accumulate(stream: &EventStream, cfg: &FrameConfig) -> Result<Vec<Frame>> {
    if cfg.interval == 0 {
        return Err(Error::validation("frame interval must be positive"));
    }
    if cfg.clip_max == 0 {
        return Err(Error::validation("clip_max must be at least 1"));
    }
    let events = stream.events();
    let last_t = match events.last() {
        None => return Ok(Vec::new()),
        Some(e) => e.t,
    };
    let frame_count = (last_t / cfg.interval) as usize + 1;
    let mut frames: Vec<Frame> = (0..frame_count)
        .map(|k| {
            Frame::zeros(
                k as u32,
                k as u64 * cfg.interval,
                stream.width(),
                stream.height(),
                Representation::MultiBit2Ch,
            )
        })
        .collect();
    for ev in events {
        let k = (ev.t / cfg.interval) as usize;
        let frame = &mut frames[k];
        let i = frame.offset(ev.x, ev.y, ev.polarity.channel());
        // Equivalent to clipping the final count at clip_max, without
        // overflow risk for permissive clip settings.
        if frame.data[i] < cfg.clip_max {
            frame.data[i] += 1;
        }
    }
    Ok(frames)
}

/// Thresholds a multi-bit frame to per-channel occupancy bits.
pub fn to_one_bit(frame: &Frame) -> Result<Frame> {
    if frame.repr != Representation::MultiBit2Ch {
        return Err(Error::shape(format!(
            "to_one_bit expects a multi-bit 2-channel frame, got {:?}",
            frame.repr
        )));
    }
    let mut out = frame.clone();
    out.repr = Representation::OneBit2Ch;
    for v in &mut out.data {
        *v = (*v != 0) as u16;
    }
    Ok(out)
}

/// ORs the two occupancy channels into a single detection channel.
pub fn to_single_channel(frame: &Frame) -> Result<Frame> {
    if frame.repr != Representation::OneBit2Ch {
        return Err(Error::shape(format!(
            "to_single_channel expects a one-bit 2-channel frame, got {:?}",
            frame.repr
        )));
    }
    let mut out = Frame::zeros(
        frame.index,
        frame.t_start,
        frame.width,
        frame.height,
        Representation::OneBit1Ch,
    );
    for y in 0..frame.height {
        for x in 0..frame.width {
            let v = (frame.get(x, y, 0) != 0 || frame.get(x, y, 1) != 0) as u16;
            out.set(x, y, 0, v);
        }
    }
    Ok(out)
}

/// Splits a multi-bit frame into the (where, what) pair: a one-bit
/// single-channel detection view and the untouched classification counts.
pub fn what_where_split(frame: &Frame) -> Result<(Frame, Frame)> {
    let where_frame = to_single_channel(&to_one_bit(frame)?)?;
    Ok((where_frame, frame.clone()))
}

/// Clears set pixels with fewer than `min_neighbors` set 8-neighbors.
/// `min_neighbors = 0` is the identity. Only defined on the detection view.
pub fn suppress_isolated(frame: &Frame, min_neighbors: u8) -> Result<Frame> {
    if frame.repr != Representation::OneBit1Ch {
        return Err(Error::shape(format!(
            "suppress_isolated expects a one-bit 1-channel frame, got {:?}",
            frame.repr
        )));
    }
    if min_neighbors > 8 {
        return Err(Error::validation(format!(
            "min_neighbors must be in 0..=8, got {min_neighbors}"
        )));
    }
    if min_neighbors == 0 {
        return Ok(frame.clone());
    }
    let mut out = frame.clone();
    for y in 0..frame.height as i32 {
        for x in 0..frame.width as i32 {
            if frame.get(x as u16, y as u16, 0) == 0 {
                continue;
            }
            let mut neighbors = 0u8;
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0
                        && ny >= 0
                        && nx < frame.width as i32
                        && ny < frame.height as i32
                        && frame.get(nx as u16, ny as u16, 0) != 0
                    {
                        neighbors += 1;
                    }
                }
            }
            if neighbors < min_neighbors {
                out.set(x as u16, y as u16, 0, 0);
            }
        }
    }
    Ok(out)
}

/// Debug dump: one JSON header line, then one CSV line per row with
/// channel-interleaved values (`x`-major).
pub fn write_frame_dump(mut w: impl Write, frame: &Frame) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        k: u32,
        t_start: u64,
        w: u16,
        h: u16,
        c: usize,
        repr: &'a str,
    }
    let header = Header {
        k: frame.index,
        t_start: frame.t_start,
        w: frame.width,
        h: frame.height,
        c: frame.channels(),
        repr: frame.repr.name(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for y in 0..frame.height {
        let row: Vec<String> = (0..frame.width)
            .flat_map(|x| (0..frame.channels()).map(move |c| (x, c)))
            .map(|(x, c)| frame.get(x, y, c).to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a dump produced by [`write_frame_dump`].
pub fn read_frame_dump(r: impl BufRead) -> Result<Frame> {
    #[derive(Deserialize)]
    struct Header {
        k: u32,
        t_start: u64,
        w: u16,
        h: u16,
        c: usize,
        repr: String,
    }
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::parse("line 1", "missing frame header"))??;
    let header: Header = serde_json::from_str(&header_line)?;
    let repr = Representation::from_name(&header.repr)?;
    if repr.channels() != header.c {
        return Err(Error::parse(
            "line 1",
            format!("representation {} implies {} channels, header says {}", header.repr, repr.channels(), header.c),
        ));
    }
    let mut frame = Frame::zeros(header.k, header.t_start, header.w, header.h, repr);
    for y in 0..header.h {
        let line_no = y as usize + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(format!("line {line_no}"), "missing pixel row"))??;
        let values: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        let expected = header.w as usize * header.c;
        if values.len() != expected {
            return Err(Error::parse(
                format!("line {line_no}"),
                format!("expected {expected} values, got {}", values.len()),
            ));
        }
        for x in 0..header.w {
            for c in 0..header.c {
                let v = values[x as usize * header.c + c];
                let v: u16 = v.parse().map_err(|_| {
                    Error::parse(format!("line {line_no}"), format!("bad count {v:?}"))
                })?;
                frame.set(x, y, c, v);
            }
        }
    }
    Ok(frame)
}
