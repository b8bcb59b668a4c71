//! 32-bit float PCM WAV persistence for mono clips.

use std::path::Path;

use super::audio::AudioClip;
use crate::error::{Error, Result};

pub fn write_wav(path: &Path, audio: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::format(path, format!("cannot create wav: {e}")))?;
    for &s in audio.samples() {
        writer
            .write_sample(s)
            .map_err(|e| Error::format(path, format!("cannot write sample: {e}")))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::format(path, format!("cannot finalize wav: {e}")))
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::format(path, format!("cannot open wav: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
        return Err(Error::format(path, "expected 32-bit float PCM"));
    }
    let samples: std::result::Result<Vec<f32>, _> = reader.samples::<f32>().collect();
    let samples = samples.map_err(|e| Error::format(path, format!("bad sample data: {e}")))?;
    AudioClip::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_samples_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let samples: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.37).sin() * 0.9).collect();
        let clip = AudioClip::new(samples, 16_000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, clip);
    }
}
