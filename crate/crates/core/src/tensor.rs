//! Image tensors as seen by the engine: `[0, 1]` reals, row-major, channel-interleaved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(height, width, channels)`; serializes as `[H, W, C]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<[usize; 3]> for Shape {
    fn from(v: [usize; 3]) -> Self {
        Shape::new(v[0], v[1], v[2])
    }
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        [s.height, s.width, s.channels]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    pixels: Vec<f32>,
}

impl ImageTensor {
    /// Builds a tensor, rejecting mismatched lengths, empty shapes and pixels outside `[0, 1]`.
    pub fn new(shape: Shape, pixels: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Input(format!(
                "image shape {shape} has a zero dimension"
            )));
        }
        if pixels.len() != shape.len() {
            return Err(Error::Input(format!(
                "pixel count {} does not match shape {shape} ({})",
                pixels.len(),
                shape.len()
            )));
        }
        if let Some((i, p)) = pixels
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::Input(format!("pixel {i} = {p} outside [0, 1]")));
        }
        Ok(ImageTensor { shape, pixels })
    }

    pub fn zeros(shape: Shape) -> Self {
        ImageTensor {
            shape,
            pixels: vec![0.0; shape.len()],
        }
    }

    /// Clamps every value into `[0, 1]`; NaN becomes 0.
    pub(crate) fn from_unclamped(shape: Shape, mut pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), shape.len());
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        ImageTensor { shape, pixels }
    }

    pub fn from_u8(shape: Shape, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != shape.len() {
            return Err(Error::Input(format!(
                "byte count {} does not match shape {shape}",
                bytes.len()
            )));
        }
        Ok(ImageTensor {
            shape,
            pixels: bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.shape.width + col) * self.shape.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.pixels[self.index(row, col, ch)]
    }

    /// 8-bit quantization: `round(p * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Snaps every pixel onto the 8-bit grid `{0, 1/255, ..., 1}`.
    ///
    /// Idempotent; after this, PNG storage and oracle input agree exactly.
    pub fn quantized(&self) -> Self {
        let bytes = self.to_u8();
        ImageTensor {
            shape: self.shape,
            pixels: bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        self.pixels
            .iter()
            .all(|&p| f32::from((p * 255.0).round() as u8) / 255.0 == p)
    }

    /// Little-endian f32 bytes, the wire encoding.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != shape.len() * 4 {
            return Err(Error::Input(format!(
                "{} payload bytes cannot hold a {shape} f32 image",
                bytes.len()
            )));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        ImageTensor::new(shape, pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_length() {
        let s = Shape::new(2, 2, 1);
        assert!(ImageTensor::new(s, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(s, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(ImageTensor::new(Shape::new(0, 2, 1), vec![]).is_err());
        assert!(ImageTensor::new(s, vec![0.0, 0.5, 1.0, 0.25]).is_ok());
    }

    #[test]
    fn quantization_is_idempotent_and_matches_bytes() {
        let img = ImageTensor::new(Shape::new(1, 3, 1), vec![0.1234, 0.5, 0.9999]).unwrap();
        let q = img.quantized();
        assert!(q.is_quantized());
        assert_eq!(q.quantized(), q);
        assert_eq!(ImageTensor::from_u8(q.shape(), &q.to_u8()).unwrap(), q);
    }

    #[test]
    fn wire_bytes_round_trip() {
        let img = ImageTensor::new(Shape::new(1, 2, 2), vec![0.0, 0.25, 0.75, 1.0]).unwrap();
        let back = ImageTensor::from_le_bytes(img.shape(), &img.to_le_bytes()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn shape_serializes_as_array() {
        let s = Shape::new(28, 28, 1);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[28,28,1]");
    }
}
