//! Float images with binary PPM (P6) and PGM (P5) I/O.

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Row-major, channel-interleaved float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let n = width * height * channels;
        if data.len() != n {
            return Err(Error::Dimension { expected: n, got: data.len() });
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, o: &Image) -> Result<()> {
        if (self.width, self.height, self.channels) != (o.width, o.height, o.channels) {
            return Err(Error::Input(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, o.width, o.height, o.channels
            )));
        }
        Ok(())
    }

    /// 8-bit binary PPM for 3 channels or PGM for 1; values clamped to `[0, 1]`.
    pub fn to_netpbm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Input(format!("netpbm needs 1 or 3 channels, got {c}"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        Ok(out)
    }

    pub fn write_netpbm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path.as_ref())?;
        f.write_all(&self.to_netpbm()?)?;
        Ok(())
    }

    pub fn read_netpbm(path: impl AsRef<Path>) -> Result<Image> {
        parse_netpbm(&std::fs::read(path.as_ref())?)
    }
}

/// Parse binary P5/P6 with maxval ≤ 255 into `[0, 1]` floats.
pub fn parse_netpbm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated netpbm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Parse(format!("unsupported netpbm magic {m:?}"))),
    };
    let num = |s: String| s.parse::<usize>().map_err(|e| Error::Parse(format!("netpbm header: {e}")));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let n = width * height * channels;
    if bytes.len() < start + n {
        return Err(Error::Parse("truncated netpbm raster".into()));
    }
    let data = bytes[start..start + n].iter().map(|&b| b as f64 / maxval as f64).collect();
    Image::from_data(width, height, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(3, 2, 3);
        img.pixel_mut(1, 0).copy_from_slice(&[1.0, 0.5, 0.0]);
        img.pixel_mut(2, 1).copy_from_slice(&[2.0, -1.0, 0.2]);
        let bytes = img.to_netpbm().unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let back = parse_netpbm(&bytes).unwrap();
        assert_eq!(back.pixel(1, 0), &[1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(back.pixel(2, 1), &[1.0, 0.0, 51.0 / 255.0]);
    }

    #[test]
    fn pgm_with_comment() {
        let mut bytes = b"P5\n# opacity\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = parse_netpbm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 1));
        assert_eq!(img.data, vec![0.0, 1.0]);
    }

    #[test]
    fn netpbm_errors() {
        assert!(parse_netpbm(b"P3\n1 1\n255\n").is_err());
        assert!(parse_netpbm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Image::new(1, 1, 2).to_netpbm().is_err());
    }
}
