//! Audio clips and frame-aligned sample windows.

use crate::error::{Error, Result};

/// Mono audio: samples in `[-1, 1]` at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return Err(Error::Input("audio samples must lie in [-1, 1]".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Samples per video frame, requiring the frame rate to divide the sample
/// rate evenly (no resampling happens anywhere in the pipeline).
pub fn samples_per_frame(sample_rate: u32, fps: u32) -> Result<usize> {
    if fps == 0 {
        return Err(Error::Config("fps must be positive".into()));
    }
    if sample_rate % fps != 0 {
        return Err(Error::Config(format!(
            "fps {fps} must divide sample rate {sample_rate} evenly"
        )));
    }
    Ok((sample_rate / fps) as usize)
}

/// The contiguous sample span covering video frames `i+1 ..= i+n`, i.e.
/// samples `[(i+1)/fps, (i+1+n)/fps)` scaled by the sample rate.
pub fn audio_window(audio: &AudioClip, frame_index: usize, n: usize, fps: u32) -> Result<AudioClip> {
    let spf = samples_per_frame(audio.sample_rate(), fps)?;
    if n == 0 {
        return Err(Error::Input("window length n must be at least 1".into()));
    }
    let start = (frame_index + 1) * spf;
    let end = start + n * spf;
    if end > audio.len() {
        return Err(Error::OutOfRange(format!(
            "window for frames {}..={} needs samples {}..{} but clip has {}",
            frame_index + 1,
            frame_index + n,
            start,
            end,
            audio.len()
        )));
    }
    AudioClip::new(audio.samples()[start..end].to_vec(), audio.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(len: usize) -> AudioClip {
        AudioClip::new(vec![0.0; len], 16_000).unwrap()
    }

    #[test]
    fn window_arithmetic_matches_contract() {
        // i=0, n=5 at 25 fps, 16 kHz: 3200 samples starting at sample 640.
        let audio = AudioClip::new(
            (0..16_000).map(|i| (i as f32 / 16_000.0) * 0.5).collect(),
            16_000,
        )
        .unwrap();
        let w = audio_window(&audio, 0, 5, 25).unwrap();
        assert_eq!(w.len(), 3200);
        assert_eq!(w.samples()[0], audio.samples()[640]);
    }

    #[test]
    fn single_frame_window_is_640_samples() {
        let w = audio_window(&clip(16_000), 0, 1, 25).unwrap();
        assert_eq!(w.len(), 640);
    }

    #[test]
    fn window_past_end_is_out_of_range() {
        // 1 s at 25 fps has frames 0..24; a 5-frame window after the last
        // frame runs off the clip.
        let err = audio_window(&clip(16_000), 24, 5, 25);
        assert!(matches!(err, Err(Error::OutOfRange(_))));
    }

    #[test]
    fn adjacent_windows_are_disjoint_and_contiguous() {
        let audio = clip(32_000);
        let a = audio_window(&audio, 0, 5, 25).unwrap();
        let b = audio_window(&audio, 5, 5, 25).unwrap();
        assert_eq!(a.len() + b.len(), 6400);
        // Window b starts exactly where window a ends: frame 6 boundary.
        assert_eq!((0 + 1) * 640 + a.len(), (5 + 1) * 640);
        let _ = b;
    }

    #[test]
    fn uneven_rate_is_a_config_error() {
        let audio = AudioClip::new(vec![0.0; 44_100], 44_100).unwrap();
        assert!(matches!(
            audio_window(&audio, 0, 1, 24),
            Err(Error::Config(_))
        ));
    }
}
