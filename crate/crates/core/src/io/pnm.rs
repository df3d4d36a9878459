//! Binary PGM (`P5`) and PPM (`P6`) images with 8-bit samples.

use crate::error::{Error, Result};
use crate::field::{PixelField, Shape};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
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
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::malformed("PNM header", format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::malformed("PNM header", format!("{what} out of range")))
    }
}

/// Decodes a P5 (one channel) or P6 (three channels) image, scaling samples
/// by `1 / maxval`. Only `maxval <= 255` is accepted.
pub fn decode(bytes: &[u8]) -> Result<PixelField> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            let head = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
            return Err(Error::UnsupportedFormat(format!("PNM magic {head:?}")));
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("PNM maxval {maxval}")));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::malformed("PNM header", "missing separator before raster"));
    }
    let data = &bytes[cur.pos + 1..];
    let shape = Shape::new(channels, height, width)?;
    let expected = shape.len();
    if data.len() < expected {
        return Err(Error::Truncated {
            what: "PNM raster",
            expected,
            actual: data.len(),
        });
    }
    let scale = 1.0 / maxval as f64;
    let plane = height * width;
    let mut values = vec![0.0; expected];
    // interleaved samples to planar channels
    for (i, &b) in data[..expected].iter().enumerate() {
        let (px, ch) = (i / channels, i % channels);
        if b as usize > maxval {
            return Err(Error::malformed(
                "PNM raster",
                format!("sample {b} above maxval {maxval}"),
            ));
        }
        values[ch * plane + px] = b as f64 * scale;
    }
    PixelField::new(shape, values)
}

/// Encodes a one- or three-channel field as P5 / P6 with maxval 255, values
/// clamped to `[0, 1]` and rounded.
pub fn encode(field: &PixelField) -> Result<Vec<u8>> {
    let shape = field.shape();
    let magic = match shape.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::UnsupportedFormat(format!("{c}-channel image as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    let plane = shape.plane();
    for px in 0..plane {
        for ch in 0..shape.channels {
            let v = field.values()[ch * plane + px].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}
