use super::{DvsEvent, EventStream};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EVS1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;
const RECORD_LEN: usize = 4 + 2 + 2 + 1;

/// On-disk event encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    /// `t_us,x,y,p` text, optionally preceded by a
    /// `# width=W height=H duration_us=D` metadata line.
    Csv,
    /// `EVS1` little-endian records.
    Binary,
}

impl EventFormat {
    /// Guesses from the file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

/// Side information gathered while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Descents in the file's event order (0 for sorted files).
    pub reordered: usize,
}

pub fn load_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    load_events_with_report(path, format).map(|(s, _)| s)
}

pub fn load_events_with_report(path: &Path, format: EventFormat) -> Result<(EventStream, LoadReport)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let stream = match format {
        EventFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                location: format!("{}: byte {}", path.display(), e.utf8_error().valid_up_to()),
                message: "file is not valid UTF-8".into(),
            })?;
            parse_csv(&text, &path.display().to_string())?
        }
        EventFormat::Binary => parse_binary(&bytes, &path.display().to_string())?,
    };
    if stream.reordered() > 0 {
        log::warn!("{}: {} out-of-order events sorted", path.display(), stream.reordered());
    }
    let report = LoadReport {
        reordered: stream.reordered(),
    };
    Ok((stream, report))
}

pub fn save_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let bytes = match format {
        EventFormat::Csv => encode_csv(stream).into_bytes(),
        EventFormat::Binary => encode_binary(stream)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_err(name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{name}: line {line}"),
        message: message.into(),
    }
}

pub(crate) fn parse_csv(text: &str, name: &str) -> Result<EventStream> {
    let mut dims: (Option<u32>, Option<u32>, Option<u64>) = (None, None, None);
    let mut events = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for kv in meta.split_whitespace() {
                let Some((k, v)) = kv.split_once('=') else {
                    continue;
                };
                let bad = |_| parse_err(name, lineno, format!("bad metadata value `{kv}`"));
                match k {
                    "width" => dims.0 = Some(v.parse().map_err(bad)?),
                    "height" => dims.1 = Some(v.parse().map_err(bad)?),
                    "duration_us" => dims.2 = Some(v.parse().map_err(bad)?),
                    _ => {}
                }
            }
            continue;
        }
        if !saw_header {
            let cols: Vec<_> = line.split(',').map(str::trim).collect();
            if cols != ["t_us", "x", "y", "p"] {
                return Err(parse_err(name, lineno, format!("expected header `t_us,x,y,p`, got `{line}`")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<_> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(name, lineno, format!("expected 4 fields, got {}", fields.len())));
        }
        let t = fields[0]
            .parse::<u64>()
            .map_err(|e| parse_err(name, lineno, format!("t_us: {e}")))?;
        let x = fields[1]
            .parse::<u16>()
            .map_err(|e| parse_err(name, lineno, format!("x: {e}")))?;
        let y = fields[2]
            .parse::<u16>()
            .map_err(|e| parse_err(name, lineno, format!("y: {e}")))?;
        let p = fields[3]
            .parse::<u8>()
            .map_err(|e| parse_err(name, lineno, format!("p: {e}")))?;
        events.push(DvsEvent::new(t, x, y, p));
    }
    if !saw_header {
        return Err(parse_err(name, 1, "missing `t_us,x,y,p` header"));
    }
    let width = dims
        .0
        .unwrap_or_else(|| events.iter().map(|e| u32::from(e.x) + 1).max().unwrap_or(1));
    let height = dims
        .1
        .unwrap_or_else(|| events.iter().map(|e| u32::from(e.y) + 1).max().unwrap_or(1));
    let duration = dims
        .2
        .unwrap_or_else(|| events.iter().map(|e| e.t).max().unwrap_or(0));
    EventStream::new(width, height, duration, events)
}

fn encode_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 * stream.len() + 64);
    let _ = writeln!(
        out,
        "# width={} height={} duration_us={}",
        stream.width(),
        stream.height(),
        stream.duration_us()
    );
    out.push_str("t_us,x,y,p\n");
    for e in stream.events() {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.polarity);
    }
    out
}

pub(crate) fn parse_binary(bytes: &[u8], name: &str) -> Result<EventStream> {
    let err = |offset: usize, message: String| Error::Parse {
        location: format!("{name}: offset {offset}"),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(0, format!("file shorter than {HEADER_LEN}-byte header")));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "missing EVS1 magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let width = u32_at(4);
    let height = u32_at(8);
    let duration = u64_at(12);
    let count = u64_at(20) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count.saturating_mul(RECORD_LEN) {
        let complete = body.len() / RECORD_LEN;
        return Err(err(
            HEADER_LEN + complete * RECORD_LEN,
            format!("header declares {count} records, body holds {} bytes", body.len()),
        ));
    }
    let events = body
        .chunks_exact(RECORD_LEN)
        .map(|r| {
            DvsEvent::new(
                u64::from(u32::from_le_bytes(r[0..4].try_into().unwrap())),
                u16::from_le_bytes(r[4..6].try_into().unwrap()),
                u16::from_le_bytes(r[6..8].try_into().unwrap()),
                r[8],
            )
        })
        .collect();
    EventStream::new(width, height, duration, events)
}

fn encode_binary(stream: &EventStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&stream.duration_us().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        let t = u32::try_from(e.t)
            .map_err(|_| Error::validation(format!("timestamp {} does not fit the u32 record field", e.t)))?;
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity);
    }
    Ok(out)
}
