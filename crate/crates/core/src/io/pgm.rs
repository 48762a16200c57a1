use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

fn bad(msg: &str) -> Error {
    Error::InvalidArgument(format!("malformed PGM: {msg}"))
}

/// Decodes a binary (P5) PGM into a single-channel map scaled to `[0, 1]`.
/// Both 8-bit and 16-bit (big-endian) samples are accepted.
pub fn decode_pgm(bytes: &[u8]) -> Result<FeatureMap<f32>> {
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 signature"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("expected a number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header not terminated"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad dimensions or maxval"));
    }
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let raw = bytes.get(pos..pos + need).ok_or(Error::TruncatedPayload)?;
    let scale = 1.0 / maxval as f32;
    let data = if wide {
        raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale).collect()
    } else {
        raw.iter().map(|&b| b as f32 * scale).collect()
    };
    FeatureMap::new(1, h, w, data)
}

pub fn read_pgm(path: &Path) -> Result<FeatureMap<f32>> {
    decode_pgm(&std::fs::read(path)?)
}
