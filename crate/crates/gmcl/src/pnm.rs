//! Binary PGM (P5) and PPM (P6) images with maxval 255.

use std::path::Path;

use crate::error::{read, write, GmclError, Result};

/// Decoded image, channel-interleaved as stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// `height · width · channels` bytes, row-major, interleaved.
    pub pixels: Vec<u8>,
}

impl Pnm {
    /// Planar `[channels, height, width]` layout.
    pub fn planar(&self) -> Vec<u8> {
        let (c, n) = (self.channels, self.width * self.height);
        let mut out = vec![0; c * n];
        for (i, px) in self.pixels.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * n + i] = v;
            }
        }
        out
    }

    pub fn from_planar(channels: usize, height: usize, width: usize, planar: &[u8]) -> Self {
        let n = width * height;
        let mut pixels = vec![0; channels * n];
        for ch in 0..channels {
            for i in 0..n {
                pixels[i * channels + ch] = planar[ch * n + i];
            }
        }
        Pnm { channels, width, height, pixels }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
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

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Pnm> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(GmclError::format(path, "not a binary PGM (P5) or PPM (P6) file")),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let mut field = |what: &str| c.number().ok_or_else(|| GmclError::format(path, format!("malformed header: missing {what}")));
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(GmclError::format(path, format!("unsupported maxval {maxval}; only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(GmclError::format(path, "empty image"));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(GmclError::format(path, "malformed header: no separator before pixel data"));
    }
    let body = &bytes[c.pos + 1..];
    let need = width * height * channels;
    if body.len() != need {
        return Err(GmclError::format(path, format!("pixel data is {} bytes, expected {need}", body.len())));
    }
    Ok(Pnm { channels, width, height, pixels: body.to_vec() })
}

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    decode(path, &read(path)?)
}

pub fn write_pnm(path: &Path, image: &Pnm) -> Result<()> {
    write(path, &image.encode())
}
