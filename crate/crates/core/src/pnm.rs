//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

struct Header {
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Parse(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Parse("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse(format!("bad header byte at offset {pos}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("header value out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Parse("missing whitespace after maxval".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Parse(format!("zero-sized image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        offset: pos + 1,
    })
}

fn payload(bytes: &[u8], h: &Header, channels: usize) -> Result<Vec<u8>> {
    let n = h.width * h.height * channels;
    let data = bytes
        .get(h.offset..h.offset + n)
        .ok_or_else(|| Error::Parse(format!("expected {n} bytes of pixel data")))?;
    Ok(data.to_vec())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes, b"P5")?;
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        data: payload(bytes, &h, 1)?,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes, b"P6")?;
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data: payload(bytes, &h, 3)?,
    })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&std::fs::read(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    Ok(std::fs::write(path, encode_pgm(img))?)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&std::fs::read(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    Ok(std::fs::write(path, encode_ppm(img))?)
}
