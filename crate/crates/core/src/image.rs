//! Fixed-size model input images.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 150;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;

/// A `150 x 150 x 3` HWC image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
}

impl ImageTensor {
    /// Scales interleaved RGB bytes of a `150 x 150` image by `1/255`.
    pub fn from_rgb8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        if width != IMAGE_SIDE || height != IMAGE_SIDE || pixels.len() != IMAGE_LEN {
            return Err(Error::InvalidImage(format!(
                "expected {IMAGE_SIDE}x{IMAGE_SIDE} RGB, got {width}x{height} with {} bytes",
                pixels.len()
            )));
        }
        Ok(Self {
            data: pixels.iter().map(|v| *v as f32 / 255.0).collect(),
        })
    }

    pub fn from_values(data: Vec<f32>) -> Result<Self> {
        if data.len() != IMAGE_LEN {
            return Err(Error::InvalidImage(format!(
                "expected {IMAGE_LEN} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    pub fn shape(&self) -> [usize; 3] {
        [IMAGE_SIDE, IMAGE_SIDE, IMAGE_CHANNELS]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * IMAGE_SIDE + x) * IMAGE_CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Stacks images into an `(n, 150, 150, 3)` batch tensor.
pub fn stack(images: &[&ImageTensor]) -> Tensor {
    let mut data = Vec::with_capacity(images.len() * IMAGE_LEN);
    for img in images {
        data.extend_from_slice(&img.data);
    }
    Tensor::new(&[images.len(), IMAGE_SIDE, IMAGE_SIDE, IMAGE_CHANNELS], data)
}
