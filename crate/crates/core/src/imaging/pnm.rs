//! Binary PGM (P5) and single-channel PFM (Pf) codecs.

use std::fs;
use std::path::Path;

use super::{DisparityMap, IntensityImage, LabelMap};
use crate::error::{Error, Result};

struct Header<'a> {
    tokens: Vec<&'a str>,
    data_offset: usize,
}

/// Reads `count` whitespace-separated header tokens, skipping `#` comments.
/// The data starts after exactly one whitespace byte following the last token.
fn read_header(bytes: &[u8], count: usize) -> Result<Header<'_>> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        let tok =
            std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::MalformedHeader("non-ASCII header".into()))?;
        tokens.push(tok);
    }
    if i >= bytes.len() {
        return Err(Error::MalformedHeader("missing data separator".into()));
    }
    Ok(Header { tokens, data_offset: i + 1 })
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::MalformedHeader(format!("bad {what}: {tok:?}")))
}

fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u16>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::MalformedHeader(format!("expected P5, found {magic:?}")));
    }
    let header = read_header(&bytes[2..], 3)?;
    let width: usize = parse_num(header.tokens[0], "width")?;
    let height: usize = parse_num(header.tokens[1], "height")?;
    let maxval: u32 = parse_num(header.tokens[2], "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("invalid geometry {width}x{height}/{maxval}")));
    }
    let data = &bytes[2 + header.data_offset..];
    let n = width * height;
    let samples = if maxval < 256 {
        if data.len() < n {
            return Err(Error::TruncatedData { expected: n, got: data.len() });
        }
        data[..n].iter().map(|&b| b as u16).collect()
    } else {
        if data.len() < 2 * n {
            return Err(Error::TruncatedData { expected: 2 * n, got: data.len() });
        }
        data[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok((width, height, maxval as u16, samples))
}

fn encode_pgm(width: usize, height: usize, maxval: u16, samples: impl Iterator<Item = u16>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(samples.map(|s| s as u8));
    } else {
        for s in samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<IntensityImage> {
    let (width, height, maxval, samples) = decode_pgm(&fs::read(path)?)?;
    IntensityImage::new(width, height, maxval, samples.into_iter().map(|s| s as f32).collect())
}

/// Writes samples rounded and clamped to `[0, maxval]`.
pub fn save_pgm(path: impl AsRef<Path>, img: &IntensityImage) -> Result<()> {
    let max = img.maxval as f32;
    let samples = img.data.iter().map(|&v| v.round().clamp(0.0, max) as u16);
    fs::write(path, encode_pgm(img.width, img.height, img.maxval, samples))?;
    Ok(())
}

pub fn load_label_pgm(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (width, height, _, samples) = decode_pgm(&fs::read(path)?)?;
    LabelMap::new(width, height, samples)
}

/// Label maps are always stored with 16-bit samples.
pub fn save_label_pgm(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let bytes = encode_pgm(labels.width, labels.height, u16::MAX, labels.data.iter().copied());
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::MalformedHeader("expected PFM magic".into()));
    }
    match bytes[1] {
        b'f' => {}
        b'F' => return Err(Error::UnsupportedChannels(3)),
        _ => return Err(Error::MalformedHeader("expected Pf".into())),
    }
    let header = read_header(&bytes[2..], 3)?;
    let width: usize = parse_num(header.tokens[0], "width")?;
    let height: usize = parse_num(header.tokens[1], "height")?;
    let scale: f64 = parse_num(header.tokens[2], "scale")?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(Error::MalformedHeader("invalid PFM geometry or scale".into()));
    }
    let little = scale < 0.0;
    let data = &bytes[2 + header.data_offset..];
    let n = width * height;
    if data.len() < 4 * n {
        return Err(Error::TruncatedData { expected: 4 * n, got: data.len() });
    }
    let mut values = vec![0f32; n];
    for (i, c) in data[..4 * n].chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        // rows are stored bottom-up
        let (row, col) = (i / width, i % width);
        values[(height - 1 - row) * width + col] = v;
    }
    DisparityMap::new(width, height, values)
}

/// Little-endian PFM; invalid disparities are written as `NaN`.
pub fn save_pfm(path: impl AsRef<Path>, dmap: &DisparityMap) -> Result<()> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", dmap.width, dmap.height).into_bytes();
    for row in (0..dmap.height).rev() {
        for v in &dmap.data[row * dmap.width..(row + 1) * dmap.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}
