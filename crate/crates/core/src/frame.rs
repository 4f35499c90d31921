//! Images in `[0, 1]` and their file formats.
//!
//! 8-bit PNG / PGM / PPM files go through the `image` crate. Raw float images
//! (`.f32`) are a JSON header line `{"magic":"WSI1","width":W,"height":H,"channels":C}`
//! followed by `W·H·C` little-endian `f32`, row-major with interleaved channels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const IMAGE_MAGIC: &str = "WSI1";

/// Row-major image with 1 or 3 interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    /// Values are clamped into `[0, 1]`; NaN is rejected.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("frame dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("frames have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{channels} frame needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(invalid("frame contains NaN"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel `c`, or channel 0 of a single-channel frame.
    #[inline]
    pub fn get_broadcast(&self, x: usize, y: usize, c: usize) -> f64 {
        self.get(x, y, if self.channels == 1 { 0 } else { c })
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_shape(&self, other: &Frame) -> Result<()> {
        if !self.same_size(other) || self.channels != other.channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> Frame {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Frame {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn to_mask(&self) -> MaskFrame {
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect();
        MaskFrame {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_raw(path) {
            return read_raw(BufReader::new(File::open(path)?));
        }
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let channels = if img.color().has_color() { 3 } else { 1 };
        let data: Vec<f64> = if channels == 3 {
            img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        } else {
            img.to_luma8()
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 255.0)
                .collect()
        };
        Self::new(w, h, channels, data)
    }

    /// Writes raw `.f32` losslessly (to f32 precision); other extensions are
    /// quantized to 8 bits.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_raw(path) {
            let mut w = BufWriter::new(File::create(path)?);
            write_raw(self, &mut w)?;
            w.flush()?;
            return Ok(());
        }
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let img = if self.channels == 3 {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size"))
        } else {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size"))
        };
        img.save(path)?;
        Ok(())
    }
}

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("f32"))
}

#[derive(Serialize, Deserialize)]
struct RawHeader {
    magic: String,
    width: usize,
    height: usize,
    channels: usize,
}

pub fn write_raw(frame: &Frame, mut out: impl Write) -> Result<()> {
    let header = RawHeader {
        magic: IMAGE_MAGIC.into(),
        width: frame.width,
        height: frame.height,
        channels: frame.channels,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(frame.data.len() * 4);
    for v in &frame.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_raw(mut r: impl BufRead) -> Result<Frame> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: RawHeader = serde_json::from_slice(&line).map_err(|e| Error::Header(format!("image header: {e}")))?;
    if header.magic != IMAGE_MAGIC {
        return Err(Error::Version {
            expected: IMAGE_MAGIC,
            found: header.magic,
        });
    }
    let n = header.width * header.height * header.channels;
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| Error::Truncated {
        frame: 0,
        detail: format!("image needs {n} f32 values"),
    })?;
    let data = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Frame::new(header.width, header.height, header.channels, data)
}

/// Single-channel soft mask in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl MaskFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("mask values must lie in [0, 1]"));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Frame::load(path)?.to_mask())
    }
}
