//! On-disk interchange formats.
//!
//! * Event CSV: header `t_us,x,y,p`, one event per line. Carries no sensor
//!   geometry, so the reader takes the expected width/height.
//! * Event binary: magic `EVS1`, little-endian `u16` width, `u16` height,
//!   `u64` count, then `(u64 t, u16 x, u16 y, u8 p)` per event.
//! * Annotations: a JSON array of tracks
//!   `{track_id, class, keyframes: [{t_us, x, y, w, h}]}`.
//!
//! Writers and readers round-trip exactly; readers re-validate the stream
//! invariants (sortedness, bounds) on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::scene::{ClassLabel, Keyframe, TrackAnnotation};

pub const EVENT_CSV_HEADER: &str = "t_us,x,y,p";
pub const EVENT_BINARY_MAGIC: &[u8; 4] = b"EVS1";

/// Writes `stream` as CSV. Geometry is not stored in this format.
pub fn write_events_csv(mut w: impl Write, stream: &EventStream) -> Result<()> {
    writeln!(w, "{EVENT_CSV_HEADER}")?;
    for ev in stream.events() {
        writeln!(w, "{},{},{},{}", ev.t, ev.x, ev.y, ev.polarity.as_u8())?;
    }
    Ok(())
}

/// Reads CSV events, validating against the supplied sensor geometry.
/// An empty file yields an empty stream.
pub fn read_events_csv(r: impl BufRead, width: u16, height: u16) -> Result<EventStream> {
    let mut events = Vec::new();
    let mut lines = r.lines();
    let header = match lines.next() {
        None => return EventStream::new(width, height, events),
        Some(h) => h?,
    };
    if header.trim_end_matches('\r') != EVENT_CSV_HEADER {
        return Err(Error::parse(
            "line 1",
            format!("expected header {EVENT_CSV_HEADER:?}, got {header:?}"),
        ));
    }
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next_field = |name: &str| {
            fields
                .next()
                .ok_or_else(|| Error::parse(format!("line {line_no}"), format!("missing field {name}")))
        };
        let t = parse_num::<u64>(next_field("t_us")?, line_no, "t_us")?;
        let x = parse_num::<u16>(next_field("x")?, line_no, "x")?;
        let y = parse_num::<u16>(next_field("y")?, line_no, "y")?;
        let p = parse_num::<u8>(next_field("p")?, line_no, "p")?;
        if let Some(extra) = fields.next() {
            return Err(Error::parse(
                format!("line {line_no}"),
                format!("unexpected trailing field {extra:?}"),
            ));
        }
        let polarity = Polarity::from_u8(p)
            .map_err(|e| Error::parse(format!("line {line_no}"), e.to_string()))?;
        events.push(Event { t, x, y, polarity });
    }
    EventStream::new(width, height, events)
}

fn parse_num<T: std::str::FromStr>(s: &str, line_no: usize, field: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| {
        Error::parse(
            format!("line {line_no}"),
            format!("field {field} is not a valid number: {s:?}"),
        )
    })
}

/// Writes `stream` in the binary `EVS1` format (geometry included).
pub fn write_events_binary(mut w: impl Write, stream: &EventStream) -> Result<()> {
    w.write_all(EVENT_BINARY_MAGIC)?;
    w.write_all(&stream.width().to_le_bytes())?;
    w.write_all(&stream.height().to_le_bytes())?;
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    for ev in stream.events() {
        w.write_all(&ev.t.to_le_bytes())?;
        w.write_all(&ev.x.to_le_bytes())?;
        w.write_all(&ev.y.to_le_bytes())?;
        w.write_all(&[ev.polarity.as_u8()])?;
    }
    Ok(())
}

/// Reads a binary `EVS1` event file.
pub fn read_events_binary(mut r: impl Read) -> Result<EventStream> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::parse("offset 0", format!("missing magic: {e}")))?;
    if &magic != EVENT_BINARY_MAGIC {
        return Err(Error::parse(
            "offset 0",
            format!("bad magic {magic:?}, expected {EVENT_BINARY_MAGIC:?}"),
        ));
    }
    let width = u16::from_le_bytes(read_array(&mut r, 4)?);
    let height = u16::from_le_bytes(read_array(&mut r, 6)?);
    let count = u64::from_le_bytes(read_array(&mut r, 8)?);
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    for i in 0..count {
        let offset = 16 + i * 13;
        let t = u64::from_le_bytes(read_array(&mut r, offset)?);
        let x = u16::from_le_bytes(read_array(&mut r, offset + 8)?);
        let y = u16::from_le_bytes(read_array(&mut r, offset + 10)?);
        let p = read_array::<1>(&mut r, offset + 12)?[0];
        let polarity = Polarity::from_u8(p)
            .map_err(|e| Error::parse(format!("offset {}", offset + 12), e.to_string()))?;
        events.push(Event { t, x, y, polarity });
    }
    EventStream::new(width, height, events)
}

fn read_array<const N: usize>(r: &mut impl Read, offset: u64) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::parse(format!("offset {offset}"), format!("truncated record: {e}")))?;
    Ok(buf)
}

#[derive(Serialize, Deserialize)]
struct KeyframeDto {
    t_us: u64,
    x: i32,
    y: i32,
    w: u32,
    h: u32,
}

#[derive(Serialize, Deserialize)]
struct TrackDto {
    track_id: u32,
    class: String,
    keyframes: Vec<KeyframeDto>,
}

/// Writes ground-truth tracks as a JSON array.
pub fn write_annotations(w: impl Write, tracks: &[TrackAnnotation]) -> Result<()> {
    let dtos: Vec<TrackDto> = tracks
        .iter()
        .map(|t| TrackDto {
            track_id: t.track_id,
            class: t.class.name().to_string(),
            keyframes: t
                .keyframes
                .iter()
                .map(|k| KeyframeDto {
                    t_us: k.t,
                    x: k.bbox.x0,
                    y: k.bbox.y0,
                    w: k.bbox.w,
                    h: k.bbox.h,
                })
                .collect(),
        })
        .collect();
    serde_json::to_writer_pretty(w, &dtos)?;
    Ok(())
}

/// Reads ground-truth tracks, validating class names and keyframe ordering.
pub fn read_annotations(r: impl Read) -> Result<Vec<TrackAnnotation>> {
    let dtos: Vec<TrackDto> = serde_json::from_reader(r)?;
    let mut tracks = Vec::with_capacity(dtos.len());
    for dto in dtos {
        let class = ClassLabel::from_name(&dto.class).map_err(|e| {
            Error::parse(format!("track {}", dto.track_id), e.to_string())
        })?;
        let mut keyframes = Vec::with_capacity(dto.keyframes.len());
        let mut last_t = None;
        for k in dto.keyframes {
            if k.w == 0 || k.h == 0 {
                return Err(Error::parse(
                    format!("track {}", dto.track_id),
                    format!("degenerate keyframe box {}x{} at t={}", k.w, k.h, k.t_us),
                ));
            }
            if let Some(prev) = last_t {
                if k.t_us <= prev {
                    return Err(Error::parse(
                        format!("track {}", dto.track_id),
                        format!("keyframes not strictly increasing at t={}", k.t_us),
                    ));
                }
            }
            last_t = Some(k.t_us);
            keyframes.push(Keyframe {
                t: k.t_us,
                bbox: BoundingBox::new(k.x, k.y, k.w, k.h),
            });
        }
        tracks.push(TrackAnnotation {
            track_id: dto.track_id,
            class,
            keyframes,
        });
    }
    Ok(tracks)
}

/// Convenience file wrappers used by the CLI.
pub fn write_events_binary_file(path: &Path, stream: &EventStream) -> Result<()> {
    write_events_binary(BufWriter::new(File::create(path)?), stream)
}

pub fn read_events_binary_file(path: &Path) -> Result<EventStream> {
    read_events_binary(BufReader::new(File::open(path)?))
}

pub fn write_events_csv_file(path: &Path, stream: &EventStream) -> Result<()> {
    write_events_csv(BufWriter::new(File::create(path)?), stream)
}

pub fn read_events_csv_file(path: &Path, width: u16, height: u16) -> Result<EventStream> {
    read_events_csv(BufReader::new(File::open(path)?), width, height)
}

pub fn write_annotations_file(path: &Path, tracks: &[TrackAnnotation]) -> Result<()> {
    write_annotations(BufWriter::new(File::create(path)?), tracks)
}

pub fn read_annotations_file(path: &Path) -> Result<Vec<TrackAnnotation>> {
    read_annotations(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: u64, x: u16, y: u16, p: u8) -> Event {
        Event {
            t,
            x,
            y,
            polarity: Polarity::from_u8(p).unwrap(),
        }
    }

    #[test]
    fn csv_single_line_parses_to_known_event() {
        let input = "t_us,x,y,p\n1000,5,7,1\n";
        let s = read_events_csv(input.as_bytes(), 240, 180).unwrap();
        assert_eq!(s.events(), &[ev(1000, 5, 7, 1)]);
    }

    #[test]
    fn csv_empty_file_is_an_empty_stream() {
        let s = read_events_csv("".as_bytes(), 240, 180).unwrap();
        assert_eq!(s.len(), 0);
    }

    #[test]
    fn csv_reports_line_numbers_for_bad_records() {
        let input = "t_us,x,y,p\n1000,5,7,1\n2000,nope,7,0\n";
        let err = read_events_csv(input.as_bytes(), 240, 180).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains('x'), "{msg}");
    }

    #[test]
    fn csv_rejects_out_of_bounds_coordinates() {
        let input = "t_us,x,y,p\n1000,240,0,1\n";
        let err = read_events_csv(input.as_bytes(), 240, 180).unwrap_err();
        assert!(err.to_string().contains("outside sensor bounds"));
    }

    #[test]
    fn binary_rejects_bad_magic() {
        let err = read_events_binary(&b"EVS2aaaaaaaaaaaa"[..]).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn binary_reports_offset_for_truncation() {
        let mut buf = Vec::new();
        let s = EventStream::new(240, 180, vec![ev(1, 2, 3, 0), ev(2, 3, 4, 1)]).unwrap();
        write_events_binary(&mut buf, &s).unwrap();
        buf.truncate(buf.len() - 5);
        let err = read_events_binary(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn annotations_round_trip() {
        let tracks = vec![TrackAnnotation {
            track_id: 3,
            class: ClassLabel::TruckVan,
            keyframes: vec![
                Keyframe { t: 0, bbox: BoundingBox::new(10, 20, 50, 25) },
                Keyframe { t: 1000, bbox: BoundingBox::new(11, 20, 50, 25) },
            ],
        }];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &tracks).unwrap();
        let back = read_annotations(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].track_id, 3);
        assert_eq!(back[0].class, ClassLabel::TruckVan);
        assert_eq!(back[0].keyframes, tracks[0].keyframes);
    }

    #[test]
    fn annotations_reject_unknown_class() {
        let json = r#"[{"track_id":0,"class":"tank","keyframes":[]}]"#;
        let err = read_annotations(json.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("tank"), "{err}");
    }

    proptest! {
        #[test]
        fn both_formats_round_trip(
            raw in proptest::collection::vec((0u64..1_000_000, 0u16..240, 0u16..180, 0u8..2), 0..200)
        ) {
            let mut evs: Vec<Event> = raw
                .into_iter()
                .map(|(t, x, y, p)| ev(t, x, y, p))
                .collect();
            evs.sort_by_key(|e| e.t);
            let stream = EventStream::new(240, 180, evs).unwrap();

            let mut csv = Vec::new();
            write_events_csv(&mut csv, &stream).unwrap();
            let via_csv = read_events_csv(&csv[..], 240, 180).unwrap();
            prop_assert_eq!(&via_csv, &stream);

            let mut bin = Vec::new();
            write_events_binary(&mut bin, &stream).unwrap();
            let via_bin = read_events_binary(&bin[..]).unwrap();
            prop_assert_eq!(&via_bin, &stream);
        }
    }
}
