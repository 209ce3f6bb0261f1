//! Dense NHWC float batches plus their labels.

use crate::error::ShapeError;

/// `n` images of `height` x `width` x `channels` f32 values, row-major NHWC,
/// with one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBatch {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
}

impl TensorBatch {
    pub fn empty(height: usize, width: usize, channels: usize) -> Self {
        TensorBatch { n: 0, height, width, channels, data: Vec::new(), labels: Vec::new() }
    }

    pub fn new(
        n: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self, ShapeError> {
        let expected = n * height * width * channels;
        if data.len() != expected {
            return Err(ShapeError::new(format!(
                "data length {} does not match ({n},{height},{width},{channels})",
                data.len()
            )));
        }
        if labels.len() != n {
            return Err(ShapeError::new(format!("{} labels for {n} images", labels.len())));
        }
        Ok(TensorBatch { n, height, width, channels, data, labels })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.height, self.width, self.channels)
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Copy out the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TensorBatch {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        TensorBatch { n: indices.len(), height: self.height, width: self.width, channels: self.channels, data, labels }
    }

    pub fn push(&mut self, image: &[f32], label: u8) -> Result<(), ShapeError> {
        if image.len() != self.image_len() {
            return Err(ShapeError::new(format!(
                "image of {} values pushed into batch of {}x{}x{}",
                image.len(),
                self.height,
                self.width,
                self.channels
            )));
        }
        self.data.extend_from_slice(image);
        self.labels.push(label);
        self.n += 1;
        Ok(())
    }
}
