//! Monochrome / 3-channel float image container and its two on-disk formats.
//!
//! Linear images (nonnegative irradiance) serialize as 16-bit binary PGM
//! with the float scale recorded in a header comment; `[-1, 1]` images
//! serialize as raw little-endian f32 with a small binary header.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

/// Magic for the raw float32 format.
pub const F32_MAGIC: &[u8; 8] = b"NLOSIMG1";

/// Value-range tag carried by every image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Range {
    /// Nonnegative linear irradiance, unbounded above.
    Linear,
    /// Values in `[-1, 1]`.
    Unit,
    /// Signed intermediate (e.g. background-subtracted); finite only.
    Signed,
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image dimensions {width}x{height}x{channels}")]
    BadDimensions {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("non-finite pixel value at index {0}")]
    NonFinite(usize),
    #[error("negative value {value} in Linear image at index {index}")]
    NegativeLinear { index: usize, value: f32 },
    #[error("value {value} outside [-1,1] in Unit image at index {index}")]
    OutOfUnitRange { index: usize, value: f32 },
    #[error("pixel count {got} does not match {width}x{height}x{channels}")]
    DataLength {
        got: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("malformed {format} file: {reason}")]
    Malformed {
        format: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// W x H monochrome (or 3-channel) float image with explicit range metadata.
///
/// Pixels are stored channel-planar, row-major within each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    range: Range,
    data: Vec<f32>,
}

impl ImageGrid {
    /// Build an image from raw data, validating the range invariants.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        range: Range,
        data: Vec<f32>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::BadDimensions {
                width,
                height,
                channels,
            });
        }
        if data.len() != width * height * channels {
            return Err(ImageError::DataLength {
                got: data.len(),
                width,
                height,
                channels,
            });
        }
        let img = Self {
            width,
            height,
            channels,
            range,
            data,
        };
        img.validate()?;
        Ok(img)
    }

    /// All-zero image.
    pub fn zeros(width: usize, height: usize, channels: usize, range: Range) -> Self {
        Self {
            width,
            height,
            channels,
            range,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> Range {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f32) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    /// Check the range invariants. `Linear` forbids negatives, `Unit`
    /// values outside `[-1, 1]`; NaN/inf are rejected for both.
    pub fn validate(&self) -> Result<(), ImageError> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite(i));
            }
            match self.range {
                Range::Linear => {
                    if v < 0.0 {
                        return Err(ImageError::NegativeLinear { index: i, value: v });
                    }
                }
                Range::Unit => {
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(ImageError::OutOfUnitRange { index: i, value: v });
                    }
                }
                Range::Signed => {}
            }
        }
        Ok(())
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Replicate a single channel into `n` identical planes.
    pub fn replicate_channels(&self, n: usize) -> Result<Self, ImageError> {
        if self.channels != 1 || !(n == 1 || n == 3) {
            return Err(ImageError::BadDimensions {
                width: self.width,
                height: self.height,
                channels: n,
            });
        }
        let mut data = Vec::with_capacity(self.data.len() * n);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Self::new(self.width, self.height, n, self.range, data)
    }

    /// Write as binary PGM (P5, maxval 65535, big-endian samples). The
    /// float scale that maps 65535 back to the original maximum is stored
    /// in a `# scale=` header comment. Multi-channel planes are stacked
    /// vertically so the format stays plain PGM.
    pub fn write_pgm16(&self, path: &Path) -> Result<(), ImageError> {
        let max = self.max_value().max(0.0);
        let scale = if max > 0.0 { max as f64 } else { 1.0 };
        let rows = self.height * self.channels;
        let mut out = Vec::with_capacity(64 + self.data.len() * 2);
        out.extend_from_slice(
            format!("P5\n# scale={scale:e}\n{} {}\n65535\n", self.width, rows).as_bytes(),
        );
        for &v in &self.data {
            let q = ((v as f64 / scale) * 65535.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Read a PGM written by [`write_pgm16`]. `channels` tells how many
    /// vertically stacked planes the file holds.
    pub fn read_pgm16(path: &Path, channels: usize) -> Result<Self, ImageError> {
        let bytes = fs::read(path)?;
        let bad = |reason: &str| ImageError::Malformed {
            format: "pgm",
            reason: reason.to_string(),
        };
        let mut pos = 0;
        let mut token = |bytes: &[u8]| -> Result<String, ImageError> {
            while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                let start = pos;
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                return Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
            }
            let start = pos;
            while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
                pos += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };

        if token(&bytes)? != "P5" {
            return Err(bad("missing P5 magic"));
        }
        let mut scale = 1.0f64;
        let mut fields = Vec::new();
        while fields.len() < 3 {
            let t = token(&bytes)?;
            if t.is_empty() {
                return Err(bad("truncated header"));
            }
            if let Some(rest) = t.strip_prefix('#') {
                if let Some(s) = rest.trim().strip_prefix("scale=") {
                    scale = s
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| bad("unparseable scale"))?;
                }
                continue;
            }
            fields.push(t.parse::<usize>().map_err(|_| bad("non-numeric header"))?);
        }
        let (width, rows, maxval) = (fields[0], fields[1], fields[2]);
        if maxval != 65535 {
            return Err(bad("expected maxval 65535"));
        }
        if channels == 0 || rows % channels != 0 {
            return Err(bad("row count not divisible by channel count"));
        }
        let height = rows / channels;
        pos += 1; // single whitespace byte after maxval
        let need = width * rows * 2;
        if bytes.len() < pos + need {
            return Err(bad("truncated pixel data"));
        }
        let mut data = Vec::with_capacity(width * rows);
        for i in 0..width * rows {
            let hi = bytes[pos + 2 * i] as u16;
            let lo = bytes[pos + 2 * i + 1] as u16;
            let q = (hi << 8) | lo;
            data.push(((q as f64 / 65535.0) * scale) as f32);
        }
        Self::new(width, height, channels, Range::Linear, data)
    }

    /// Write as raw little-endian f32: 8-byte magic, then width, height,
    /// channels as u32 LE, then the plane data.
    pub fn write_f32raw(&self, path: &Path) -> Result<(), ImageError> {
        let mut f = fs::File::create(path)?;
        f.write_all(F32_MAGIC)?;
        f.write_all(&(self.width as u32).to_le_bytes())?;
        f.write_all(&(self.height as u32).to_le_bytes())?;
        f.write_all(&(self.channels as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    }

    /// Read a file written by [`write_f32raw`] and tag it with `range`.
    pub fn read_f32raw(path: &Path, range: Range) -> Result<Self, ImageError> {
        let mut f = fs::File::open(path)?;
        let mut header = [0u8; 20];
        f.read_exact(&mut header).map_err(|_| ImageError::Malformed {
            format: "f32raw",
            reason: "truncated header".into(),
        })?;
        if &header[0..8] != F32_MAGIC {
            return Err(ImageError::Malformed {
                format: "f32raw",
                reason: "bad magic".into(),
            });
        }
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let channels = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        if buf.len() != width * height * channels * 4 {
            return Err(ImageError::Malformed {
                format: "f32raw",
                reason: "pixel data length mismatch".into(),
            });
        }
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(width, height, channels, range, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_linear_and_out_of_unit() {
        assert!(ImageGrid::new(2, 1, 1, Range::Linear, vec![0.5, -0.1]).is_err());
        assert!(ImageGrid::new(2, 1, 1, Range::Unit, vec![0.5, 1.5]).is_err());
        assert!(ImageGrid::new(2, 1, 1, Range::Unit, vec![f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn pgm_round_trip_preserves_values_to_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img =
            ImageGrid::new(3, 2, 1, Range::Linear, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        img.write_pgm16(&path).unwrap();
        let back = ImageGrid::read_pgm16(&path, 1).unwrap();
        assert_eq!(back.width(), 3);
        assert_eq!(back.height(), 2);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 5.0 * 5.0 / 65535.0);
        }
    }

    #[test]
    fn pgm_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pgm");
        let p2 = dir.path().join("b.pgm");
        let img = ImageGrid::new(2, 2, 1, Range::Linear, vec![0.1, 0.7, 0.3, 0.9]).unwrap();
        img.write_pgm16(&p1).unwrap();
        img.write_pgm16(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn f32raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32");
        let img = ImageGrid::new(2, 2, 3, Range::Unit, vec![-1.0; 12]).unwrap();
        img.write_f32raw(&path).unwrap();
        let back = ImageGrid::read_f32raw(&path, Range::Unit).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn replicate_channels_stacks_planes() {
        let img = ImageGrid::new(2, 1, 1, Range::Unit, vec![0.25, -0.5]).unwrap();
        let rgb = img.replicate_channels(3).unwrap();
        assert_eq!(rgb.channels(), 3);
        assert_eq!(rgb.get(2, 0, 1), -0.5);
    }
}
