//! Minimal floating-point image buffer with 8-bit PGM/PPM (P5/P6) I/O.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved `height x width x channels` image with samples on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: usize) -> Result<Self> {
        Self::from_data(
            width,
            height,
            channels,
            vec![0.0; width as usize * height as usize * channels],
        )
    }

    pub fn from_data(width: u32, height: u32, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::param("image dimensions must be positive"));
        }
        if data.len() != width as usize * height as usize * channels {
            return Err(Error::param(format!(
                "image buffer of {} samples does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Grayscale image from a function of the pixel index `(x, y)`.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_data(width, height, 1, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: u32, y: u32, c: usize) -> f32 {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels + c]
    }

    pub fn set(&mut self, x: u32, y: u32, c: usize, v: f32) {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels + c;
        self.data[idx] = v;
    }

    /// Samples quantized to 8 bits (round half away from zero, clamped).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_u8(width: u32, height: u32, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_data(width, height, channels, bytes.iter().map(|&b| b as f32).collect())
    }

    /// Luma of a color image; grayscale images are returned unchanged.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| {
                if self.channels >= 3 {
                    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
                } else {
                    px.iter().sum::<f32>() / px.len() as f32
                }
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::decode_pnm(BufReader::new(file))
    }

    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.encode_pnm(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn encode_pnm(&self, out: &mut impl Write) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Format(format!("cannot encode {c}-channel image as PNM"))),
        };
        write!(out, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_u8())?;
        Ok(())
    }

    pub fn decode_pnm(mut input: impl BufRead) -> Result<Self> {
        let magic = pnm_token(&mut input)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::Format(format!("unsupported PNM magic {m:?} (need P5 or P6)"))),
        };
        let width: u32 = parse_token(&mut input, "width")?;
        let height: u32 = parse_token(&mut input, "height")?;
        let maxval: u32 = parse_token(&mut input, "maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PNM supported (maxval {maxval})")));
        }
        let mut bytes = vec![0u8; width as usize * height as usize * channels];
        input
            .read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated PNM raster: {e}")))?;
        Self::from_u8(width, height, channels, &bytes)
    }
}

/// Reads one whitespace-delimited header token, skipping `#` comments. Consumes
/// exactly one trailing whitespace byte, as the format requires before the raster.
fn pnm_token(input: &mut impl BufRead) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            return Err(Error::Format("unexpected end of PNM header".into()));
        }
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut skip = Vec::new();
            input.read_until(b'\n', &mut skip)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(b as char);
    }
}

fn parse_token<T: std::str::FromStr>(input: &mut impl BufRead, what: &str) -> Result<T> {
    let tok = pnm_token(input)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("bad PNM {what}: {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip_gray_and_color() {
        let g = Image::from_fn(7, 5, |x, y| ((x * 31 + y * 17) % 256) as f32).unwrap();
        let mut buf = Vec::new();
        g.encode_pnm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n7 5\n255\n"));
        assert_eq!(Image::decode_pnm(&buf[..]).unwrap(), g);

        let data: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let c = Image::from_u8(4, 3, 3, &data).unwrap();
        let mut buf = Vec::new();
        c.encode_pnm(&mut buf).unwrap();
        assert_eq!(Image::decode_pnm(&buf[..]).unwrap(), c);
    }

    #[test]
    fn pnm_header_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1 # trailing\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 200]);
        let img = Image::decode_pnm(&bytes[..]).unwrap();
        assert_eq!(img.data(), &[10.0, 200.0]);
    }

    #[test]
    fn pnm_rejects_truncation_and_16bit() {
        assert!(Image::decode_pnm(&b"P5\n2 2\n255\n\x01"[..]).is_err());
        assert!(Image::decode_pnm(&b"P5\n1 1\n65535\n\x00\x00"[..]).is_err());
        assert!(Image::decode_pnm(&b"P3\n1 1\n255\n0 0 0"[..]).is_err());
    }
}
