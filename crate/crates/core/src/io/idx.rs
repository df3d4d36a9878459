//! IDX container (big-endian header, unsigned-byte payload), optionally
//! gzip-compressed.

use std::io::Read;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decompressed inputs larger than this are rejected.
pub const MAX_DECOMPRESSED: u64 = 1 << 30;

/// Raw image block: `count` images of `rows x cols` bytes, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Returns `bytes` unchanged unless they start with the gzip magic, in
/// which case they are inflated.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if !bytes.starts_with(&[0x1f, 0x8b]) {
        return Ok(bytes.to_vec());
    }
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .take(MAX_DECOMPRESSED + 1)
        .read_to_end(&mut out)
        .map_err(|e| Error::malformed("gzip stream", e.to_string()))?;
    if out.len() as u64 > MAX_DECOMPRESSED {
        return Err(Error::malformed("gzip stream", "decompressed size exceeds 1 GiB"));
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Truncated {
            what,
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0, "IDX header")?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, dims: &[u32], what: &'static str) -> Result<&'a [u8]> {
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::malformed(what, "dimension product overflows"))?;
    let expected = header
        .checked_add(len)
        .ok_or_else(|| Error::malformed(what, "dimension product overflows"))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what,
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::malformed(
            what,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    Ok(&bytes[header..])
}

/// Parses an (optionally gzipped) IDX image file with magic `0x00000803`.
pub fn parse_images(raw: &[u8]) -> Result<IdxImages> {
    let bytes = maybe_gunzip(raw)?;
    check_magic(&bytes, IMAGES_MAGIC)?;
    let dims = [
        read_u32(&bytes, 4, "IDX header")?,
        read_u32(&bytes, 8, "IDX header")?,
        read_u32(&bytes, 12, "IDX header")?,
    ];
    let pixels = payload(&bytes, 16, &dims, "IDX image payload")?.to_vec();
    Ok(IdxImages {
        count: dims[0] as usize,
        rows: dims[1] as usize,
        cols: dims[2] as usize,
        pixels,
    })
}

/// Parses an (optionally gzipped) IDX label file with magic `0x00000801`.
pub fn parse_labels(raw: &[u8]) -> Result<Vec<u8>> {
    let bytes = maybe_gunzip(raw)?;
    check_magic(&bytes, LABELS_MAGIC)?;
    let n = read_u32(&bytes, 4, "IDX header")?;
    Ok(payload(&bytes, 8, &[n], "IDX label payload")?.to_vec())
}

/// Serializes an uncompressed IDX image file.
pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

/// Serializes an uncompressed IDX label file.
pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
