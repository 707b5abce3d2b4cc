//! Image file formats: PGM (`P2`/`P5`) and the raw `NLR1` float format.
//!
//! `NLR1` is an ASCII header line `NLR1 <width> <height>\n` followed by
//! `width * height` little-endian IEEE-754 doubles in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const NLR1_MAGIC: &[u8] = b"NLR1";

/// On-disk image encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary graymap, one byte per pixel, maxval 255.
    PgmBinary,
    /// ASCII graymap, maxval 255.
    PgmAscii,
    /// Lossless 64-bit float raster.
    Nlr1,
}

impl ImageFormat {
    /// Picks the output format from a file extension; anything that is not
    /// `.pgm` is written as `NLR1`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::PgmBinary,
            _ => ImageFormat::Nlr1,
        }
    }
}

/// Decodes a PGM or NLR1 image, detected from the magic bytes.
pub fn decode_image<D>(bytes: &[u8]) -> Result<Image<D>> {
    if bytes.starts_with(NLR1_MAGIC) {
        decode_nlr1(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        decode_pgm(bytes)
    } else {
        Err(Error::Format("unrecognized magic (expected P2, P5 or NLR1)".into()))
    }
}

pub fn read_image<D>(path: &Path) -> Result<Image<D>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_image(&bytes)
}

pub fn write_image<D>(path: &Path, img: &Image<D>, format: ImageFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_image(&mut out, img, format)?;
    out.flush()?;
    Ok(())
}

pub fn encode_image<D, W: Write>(out: &mut W, img: &Image<D>, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::PgmBinary => encode_pgm_binary(out, img),
        ImageFormat::PgmAscii => encode_pgm_ascii(out, img),
        ImageFormat::Nlr1 => encode_nlr1(out, img),
    }
}

/// Rounds to the nearest integer and clamps into `0..=255`.
#[inline]
pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

fn encode_pgm_binary<D, W: Write>(out: &mut W, img: &Image<D>) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    out.write_all(&bytes)?;
    Ok(())
}

fn encode_pgm_ascii<D, W: Write>(out: &mut W, img: &Image<D>) -> Result<()> {
    write!(out, "P2\n{} {}\n255\n", img.width(), img.height())?;
    for row in img.data().chunks(img.width()) {
        let line: Vec<String> = row.iter().map(|&v| to_byte(v).to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

fn encode_nlr1<D, W: Write>(out: &mut W, img: &Image<D>) -> Result<()> {
    write!(out, "NLR1 {} {}\n", img.width(), img.height())?;
    let mut buf = Vec::with_capacity(img.len() * 8);
    for v in img.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn decode_nlr1<D>(bytes: &[u8]) -> Result<Image<D>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("NLR1 header is not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::Format("NLR1 header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 3 || fields[0] != "NLR1" {
        return Err(Error::Format(format!("bad NLR1 header `{header}`")));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad NLR1 dimension `{s}`")))
    };
    let width = parse(fields[1])?;
    let height = parse(fields[2])?;
    let payload = &bytes[newline + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("NLR1 dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "NLR1 payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Image::new(width, height, data)
}

/// Cursor over a PGM header: whitespace-separated tokens with `#` comments.
struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("expected {what} in PGM data")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Format(format!("{what} out of range")))
    }
}

fn decode_pgm<D>(bytes: &[u8]) -> Result<Image<D>> {
    let binary = bytes.starts_with(b"P5");
    let mut tok = Tokens { bytes, pos: 2 };
    let width = tok.number("width")?;
    let height = tok.number("height")?;
    let maxval = tok.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM dimensions overflow".into()))?;
    let mut data = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tok.pos + 1;
        let sample_bytes = if maxval > 255 { 2 } else { 1 };
        let end = start + n * sample_bytes;
        if bytes.len() < end {
            return Err(Error::Format(format!(
                "P5 raster truncated: {} bytes, expected {}",
                bytes.len().saturating_sub(start),
                n * sample_bytes
            )));
        }
        let raster = &bytes[start..end];
        if sample_bytes == 1 {
            data.extend(raster.iter().map(|&b| f64::from(b)));
        } else {
            data.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]]))),
            );
        }
    } else {
        for _ in 0..n {
            let v = tok.number("sample")?;
            if v > maxval {
                return Err(Error::Format(format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as f64);
        }
    }
    Image::new(width, height, data)
}
