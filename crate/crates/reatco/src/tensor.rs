//! Video tensors and timestep-tagged latent states.

use ndarray::{Array3, Array4};

use crate::{Error, Result};

/// F frames x C channels x H x W, values nominally in [0,1] for clean video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor(pub Array4<f64>);

impl VideoTensor {
    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        VideoTensor(Array4::zeros((frames, channels, height, width)))
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn frame(&self, i: usize) -> Array3<f64> {
        self.0.index_axis(ndarray::Axis(0), i).to_owned()
    }

    /// Clamp all values into [0,1].
    pub fn clamp_unit(&mut self) {
        self.0.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    pub fn same_shape(&self, other: &VideoTensor) -> bool {
        self.0.shape() == other.0.shape()
    }
}

/// A `VideoTensor`-shaped sample tagged with the timestep it lives at.
///
/// Timestep indexing follows the cumulative-alpha table: `t = 0` is clean
/// data, `t = T` is (near) pure noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub data: Array4<f64>,
    pub timestep: usize,
}

impl LatentState {
    pub fn new(data: Array4<f64>, timestep: usize) -> Self {
        LatentState { data, timestep }
    }

    pub fn from_video(video: &VideoTensor) -> Self {
        LatentState {
            data: video.0.clone(),
            timestep: 0,
        }
    }

    pub fn into_video(self) -> VideoTensor {
        VideoTensor(self.data)
    }

    pub fn check_shape(&self, other: &Array4<f64>) -> Result<()> {
        if self.data.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "latent {:?} vs {:?}",
                self.data.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
