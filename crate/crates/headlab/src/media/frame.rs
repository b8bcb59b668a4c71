//! Raster frames and timed frame sequences.

use crate::error::{Error, Result};

/// A single raster image with intensities in `[0, 1]`, stored row-major
/// as `height x width x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Vec<f32>,
    height: usize,
    width: usize,
    channels: usize,
    /// Position of this frame within its sequence.
    pub index: usize,
}

impl Frame {
    pub fn new(
        pixels: Vec<f32>,
        height: usize,
        width: usize,
        channels: usize,
        index: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Input(format!(
                "frame dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!(
                "frame must have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Input(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                height * width * channels
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            height,
            width,
            channels,
            index,
        })
    }

    /// All-zero (black) frame.
    pub fn zeros(height: usize, width: usize, channels: usize, index: usize) -> Self {
        Self::new(vec![0.0; height * width * channels], height, width, channels, index)
            .expect("zero frame is always valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Timestamp in seconds for the given frame rate.
    pub fn timestamp(&self, fps: u32) -> f64 {
        self.index as f64 / fps as f64
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Replace the sequence index, keeping pixels untouched.
    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}

/// An ordered run of frames at a fixed frame rate. Indices are consecutive
/// from zero and all frames share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    fps: u32,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: u32) -> Result<Self> {
        if fps == 0 {
            return Err(Error::Input("fps must be positive".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.index != i {
                return Err(Error::Input(format!(
                    "frame indices must be consecutive from 0; frame {i} has index {}",
                    f.index
                )));
            }
        }
        if let Some(first) = frames.first() {
            if let Some(bad) = frames.iter().find(|f| !f.same_shape(first)) {
                return Err(Error::Input(format!(
                    "all frames must share dimensions; frame {} is {}x{}x{}",
                    bad.index,
                    bad.height(),
                    bad.width(),
                    bad.channels()
                )));
            }
        }
        Ok(Self { frames, fps })
    }

    /// Build a sequence from raw frames, renumbering them consecutively.
    pub fn from_frames(frames: Vec<Frame>, fps: u32) -> Result<Self> {
        let renumbered = frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.with_index(i))
            .collect();
        Self::new(renumbered, fps)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps as f64
    }
}
