//! Float image buffers and PNG interchange.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major float image with 1, 2 or 3 interleaved channels.
///
/// RGB data is normalized to `[0, 1]`; single-channel buffers hold depth or alpha and
/// two-channel buffers hold optical flow in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u32) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: u32, height: u32, channels: u32, value: f32) -> Self {
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![value; (width * height * channels) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != (width * height * channels) as usize {
            return Err(Error::Shape(format!(
                "image data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        ((y * self.width + x) * self.channels) as usize
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels as usize]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let i = self.index(x, y);
        let c = self.channels as usize;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Per-pixel mean over channels.
    pub fn luma(&self) -> Vec<f64> {
        let c = self.channels as usize;
        self.data
            .chunks_exact(c)
            .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
            .collect()
    }

    /// Loads an 8- or 16-bit PNG as normalized RGB.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("cannot read image {}: {e}", path.display())))?
            .into_rgb32f();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ImageBuffer::from_data(w, h, 3, data)
    }

    /// Writes an RGB buffer (or a single channel as gray) as an 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let rgb: Vec<u8> = match self.channels {
            3 => self.data.iter().map(|&v| to_u8(v)).collect(),
            1 => self.data.iter().flat_map(|&v| [to_u8(v); 3]).collect(),
            c => {
                return Err(Error::Shape(format!(
                    "cannot save {c}-channel image as png"
                )))
            }
        };
        image::save_buffer(path, &rgb, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
    }

    /// Quantizes to 8 bits and back, matching a PNG round trip.
    pub fn quantized(&self) -> ImageBuffer {
        let data = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        ImageBuffer { data, ..*self }
    }
}
