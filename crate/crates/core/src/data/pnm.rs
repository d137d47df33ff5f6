//! Netpbm grayscale (PGM) and color (PPM) images, ASCII and binary.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        return Err(Error::Image("not a P2/P3/P5/P6 netpbm file".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed header".into()))?;
    }
    // exactly one whitespace byte separates the header from binary data
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("malformed header".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Image(format!("bad dimensions {width}x{height} / maxval {maxval}")));
    }
    Ok(Header {
        magic: [bytes[0], bytes[1]],
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes a netpbm image into a `[C, H, W]` tensor scaled to [0, 1].
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    let channels = if matches!(h.magic[1], b'3' | b'6') { 3 } else { 1 };
    let count = channels * h.width * h.height;
    let body = &bytes[h.data_start..];
    let raw: Vec<usize> = match h.magic[1] {
        b'2' | b'3' => body
            .split(u8::is_ascii_whitespace)
            .filter(|t| !t.is_empty())
            .take(count)
            .map(|t| std::str::from_utf8(t).ok().and_then(|s| s.parse().ok()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Image("malformed ASCII sample".into()))?,
        _ => {
            let wide = h.maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            if body.len() < need {
                return Err(Error::Image(format!("truncated data: need {need} bytes, have {}", body.len())));
            }
            if wide {
                body[..need].chunks(2).map(|c| usize::from(u16::from_be_bytes([c[0], c[1]]))).collect()
            } else {
                body[..need].iter().map(|&b| usize::from(b)).collect()
            }
        }
    };
    if raw.len() != count {
        return Err(Error::Image(format!("expected {count} samples, found {}", raw.len())));
    }
    if raw.iter().any(|&v| v > h.maxval) {
        return Err(Error::Image("sample exceeds maxval".into()));
    }
    let plane = h.width * h.height;
    let mut data = vec![0.0; count];
    // interleaved RGB -> planar
    for (i, &v) in raw.iter().enumerate() {
        let (px, c) = (i / channels, i % channels);
        data[c * plane + px] = v as f64 / h.maxval as f64;
    }
    Tensor::new([channels, h.height, h.width], data)
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Encodes a `[C, H, W]` tensor (C = 1 or 3, values clamped to [0, 1]) as
/// binary PGM/PPM with the given maxval.
pub fn encode(image: &Tensor, maxval: u16) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || !matches!(shape[0], 1 | 3) || maxval == 0 {
        return Err(Error::Image(format!("cannot encode shape {shape:?}")));
    }
    let (c, hgt, wid) = (shape[0], shape[1], shape[2]);
    let mut out = format!("P{}\n{wid} {hgt}\n{maxval}\n", if c == 3 { 6 } else { 5 }).into_bytes();
    let plane = hgt * wid;
    for px in 0..plane {
        for ch in 0..c {
            let v = (image.data()[ch * plane + px].clamp(0.0, 1.0) * f64::from(maxval)).round() as u16;
            if maxval > 255 {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

pub fn write(path: &Path, image: &Tensor, maxval: u16) -> Result<()> {
    let bytes = encode(image, maxval)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes 8-bit interleaved RGB rows as a binary PPM.
pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Image(format!("{} bytes do not form a {width}x{height} RGB image", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
