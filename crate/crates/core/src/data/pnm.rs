//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit raster: `channels` is 3 for P6 and 1 for P5.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn magic(channels: usize) -> &'static str {
    if channels == 3 {
        "P6"
    } else {
        "P5"
    }
}

pub fn encode(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Vec<u8>> {
    if channels != 1 && channels != 3 {
        return Err(Error::Format(format!("unsupported channel count {channels}")));
    }
    if data.len() != width * height * channels {
        return Err(Error::Format(format!(
            "{width}x{height}x{channels} raster given {} bytes",
            data.len()
        )));
    }
    let mut out = format!("{}\n{width} {height}\n255\n", magic(channels)).into_bytes();
    out.extend_from_slice(data);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("missing or malformed {what}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Format("expected P5 or P6 magic".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("maxval must be 255, got {maxval}")));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("header must end with one whitespace byte".into()));
    }
    let body = &bytes[cur.pos + 1..];
    let expected = width * height * channels;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "{width}x{height} {} body needs {expected} bytes, found {}",
            magic(channels),
            body.len()
        )));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: body.to_vec(),
    })
}

pub fn write(path: &Path, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<()> {
    let bytes = encode(width, height, channels, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a raster and checks it has the expected channel count.
pub fn read(path: &Path, channels: usize) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let r = decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })?;
    if r.channels != channels {
        return Err(Error::Format(format!(
            "{}: expected {} data",
            path.display(),
            magic(channels)
        )));
    }
    Ok(r)
}
