//! Synthetic camera frames and the binary PGM (P5) codec.

use thiserror::Error;

use super::mix_seed;

pub const FRAME_WIDTH: usize = 64;
pub const FRAME_HEIGHT: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("not a binary PGM (P5) image")]
    BadMagic,
    #[error("bad PGM header: {0}")]
    BadHeader(&'static str),
    #[error("only 8-bit PGM is supported (maxval {0})")]
    UnsupportedDepth(u32),
    #[error("pixel data has {got} bytes, expected {expected}")]
    Truncated { got: usize, expected: usize },
}

/// An 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl SimImage {
    /// Render the frame for one press.
    ///
    /// The first eight pixels of row 0 hold `press_id` in little-endian byte
    /// order and the next eight hold `seed`, so distinct inputs always give
    /// distinct frames. The rest is a gradient overlaid with seeded noise.
    pub fn render(press_id: u64, seed: u64) -> SimImage {
        let mut state = mix_seed(seed, press_id);
        let mut pixels = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT);
        for y in 0..FRAME_HEIGHT {
            for x in 0..FRAME_WIDTH {
                state = splitmix64(state);
                let gradient = (x * 2 + y * 2) as u8;
                pixels.push(gradient.wrapping_add((state >> 58) as u8 * 4));
            }
        }
        pixels[..8].copy_from_slice(&press_id.to_le_bytes());
        pixels[8..16].copy_from_slice(&seed.to_le_bytes());
        SimImage {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            pixels,
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<SimImage, PgmError> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        if cursor.token()? != b"P5" {
            return Err(PgmError::BadMagic);
        }
        let width = cursor.number()? as usize;
        let height = cursor.number()? as usize;
        let maxval = cursor.number()?;
        if maxval != 255 {
            return Err(PgmError::UnsupportedDepth(maxval));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let start = cursor.pos + 1;
        let expected = width * height;
        let data = bytes.get(start..).unwrap_or_default();
        if data.len() != expected {
            return Err(PgmError::Truncated {
                got: data.len(),
                expected,
            });
        }
        Ok(SimImage {
            width,
            height,
            pixels: data.to_vec(),
        })
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self) -> Result<&'a [u8], PgmError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|b| *b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PgmError::BadHeader("unexpected end of header")),
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<u32, PgmError> {
        std::str::from_utf8(self.token()?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PgmError::BadHeader("expected a decimal number"))
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
