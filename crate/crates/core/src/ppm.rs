//! Binary PNM (P5/P6) reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded raster: interleaved channels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

impl Depth {
    fn maxval(self) -> u32 {
        match self {
            Depth::Eight => 255,
            Depth::Sixteen => 65535,
        }
    }
}

fn quantize(v: f64, maxval: u32) -> u32 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * maxval as f64).round() as u32
}

/// Encodes an RGB buffer (values clamped into `[0, 1]`) as P6. Each entry of
/// `comments` becomes a `# ...` header line.
pub fn encode_p6(width: usize, height: usize, rgb: &[f64], depth: Depth, comments: &[String]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "rgb buffer does not match dimensions");
    let maxval = depth.maxval();
    let mut out = Vec::with_capacity(rgb.len() * 2 + 64);
    out.extend_from_slice(b"P6\n");
    for c in comments {
        writeln!(out, "# {c}").unwrap();
    }
    writeln!(out, "{width} {height}\n{maxval}").unwrap();
    for &v in rgb {
        let q = quantize(v, maxval);
        match depth {
            Depth::Eight => out.push(q as u8),
            Depth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn write_p6(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[f64], depth: Depth) -> Result<()> {
    fs::write(path, encode_p6(width, height, rgb, depth, &[]))?;
    Ok(())
}

/// Parses P5 (grey) or P6 (RGB) data with any maxval up to 65535.
pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Image(format!("unsupported magic `{other}`"))),
    };
    let width = parse_header_number(bytes, &mut pos)?;
    let height = parse_header_number(bytes, &mut pos)?;
    let maxval = parse_header_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Image(format!("maxval {maxval} outside 1..=65535")));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let n = width * height * channels;
    let body = bytes
        .get(pos..pos + n * bytes_per)
        .ok_or_else(|| Error::Image(format!("expected {} sample bytes", n * bytes_per)))?;
    let scale = 1.0 / maxval as f64;
    let data = if bytes_per == 1 {
        body.iter().map(|&b| b as f64 * scale).collect()
    } else {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<Raster> {
    decode(&fs::read(path)?)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Image("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::Image(format!("bad header field `{tok}`")))
}
