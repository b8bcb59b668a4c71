//! Chunked two-stage inference: every chunk starts from a fresh edited frame
//! (never from generated output) and regenerates the following `n` frames
//! from audio and pose.

use super::model::{generate_n, ThgModel};
use crate::error::{Error, Result};
use crate::fem::AnnotatedFrame;
use crate::media::{
    compute_mel, mel_col_start, mel_cols_for_span, mel_window, AudioClip, FrameSequence,
    MelSpectrogram,
};

/// Regenerate a video from its edited frames and audio. Output frame 0 is the
/// first edited frame; chunk `k` uses the edited frame at index `k*n` as its
/// reference and contributes frames `k*n+1 ..= k*n+n`, with the trailing
/// chunk truncated at the video length. Returns the output sequence and the
/// reference index used by each chunk.
pub fn infer_video(
    model: &ThgModel,
    fem_frames: &[AnnotatedFrame],
    audio: &AudioClip,
    n: usize,
) -> Result<(FrameSequence, Vec<usize>)> {
    if fem_frames.is_empty() {
        return Err(Error::Input("no frames to regenerate".into()));
    }
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    let len = fem_frames.len();
    let fps = model.cfg.fps;
    let spf = (model.cfg.mel.sample_rate / fps) as usize;
    if audio.sample_rate() != model.cfg.mel.sample_rate {
        return Err(Error::Config(format!(
            "audio at {} Hz does not match the model's {} Hz",
            audio.sample_rate(),
            model.cfg.mel.sample_rate
        )));
    }
    if audio.len() < len * spf {
        return Err(Error::Input(format!(
            "audio covers {} samples but the video needs {}",
            audio.len(),
            len * spf
        )));
    }

    let mel = compute_mel(audio, &model.cfg.mel)?;
    // The trailing chunk may reach past the video end; extend the mel with
    // silence columns so its full window exists (the overhanging frames are
    // discarded anyway).
    let width = mel_cols_for_span(&model.cfg.mel, n, fps)?;
    let last_ref = ((len.saturating_sub(2)) / n) * n;
    let needed = mel_col_start(&model.cfg.mel, last_ref + 1, fps)? + width;
    let mel = if needed > mel.n_cols() {
        let mut data = ndarray::Array2::from_elem(
            (mel.n_mels(), needed),
            model.cfg.mel.db_floor,
        );
        data.slice_mut(ndarray::s![.., 0..mel.n_cols()])
            .assign(mel.data());
        MelSpectrogram::from_parts(data, model.cfg.mel.clone())
    } else {
        mel
    };

    let mut out = vec![fem_frames[0].frame.clone().with_index(0)];
    let mut refs_log = Vec::new();
    let mut k = 0usize;
    loop {
        let r = k * n;
        if r >= len - 1 {
            break;
        }
        refs_log.push(r);
        let win = mel_window(&mel, r, n, fps)?;
        let poses: Vec<_> = (1..=n)
            .map(|j| {
                let idx = (r + j).min(len - 1);
                fem_frames[idx].params().map(|p| p.pose)
            })
            .collect::<Result<_>>()?;
        let gen = generate_n(model, &fem_frames[r].frame, &win, &poses, n)?;
        for (j, frame) in gen.frames().iter().enumerate() {
            let pos = r + 1 + j;
            if pos < len {
                out.push(frame.clone().with_index(pos));
            }
        }
        k += 1;
    }
    let seq = FrameSequence::new(out, fps)?;
    debug_assert_eq!(seq.len(), len);
    Ok((seq, refs_log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_utterance, Emotion, UtteranceConfig};
    use crate::thg::model::ThgConfig;

    fn annotated_video(seed: u64, duration: f64) -> (Vec<AnnotatedFrame>, AudioClip) {
        let ucfg = UtteranceConfig {
            duration_s: duration,
            ..Default::default()
        };
        let u = synth_utterance(&ucfg, Emotion::Neutral, seed).unwrap();
        let frames: Vec<AnnotatedFrame> = u
            .video
            .frames()
            .iter()
            .zip(&u.params_track)
            .map(|(f, p)| AnnotatedFrame::new(f.clone(), *p))
            .collect();
        (frames, u.audio)
    }

    #[test]
    fn output_length_equals_input_length() {
        let model = ThgModel::new(ThgConfig::default()).unwrap();
        for (duration, expect) in [(2.04, 51), (2.0, 50), (1.0, 25)] {
            let (frames, audio) = annotated_video(400, duration);
            assert_eq!(frames.len(), expect);
            let (seq, _) = infer_video(&model, &frames, &audio, 5).unwrap();
            assert_eq!(seq.len(), expect);
        }
    }

    #[test]
    fn fifty_one_frames_with_n5_use_ten_chunks() {
        let model = ThgModel::new(ThgConfig::default()).unwrap();
        let (frames, audio) = annotated_video(401, 2.04);
        assert_eq!(frames.len(), 51);
        let (seq, refs) = infer_video(&model, &frames, &audio, 5).unwrap();
        assert_eq!(seq.len(), 51);
        assert_eq!(refs, vec![0, 5, 10, 15, 20, 25, 30, 35, 40, 45]);
    }

    #[test]
    fn chunk_references_are_multiples_of_n() {
        let model = ThgModel::new(ThgConfig::default()).unwrap();
        let (frames, audio) = annotated_video(402, 2.0);
        let (_, refs) = infer_video(&model, &frames, &audio, 7).unwrap();
        for (k, &r) in refs.iter().enumerate() {
            assert_eq!(r, k * 7);
        }
    }

    #[test]
    fn single_chunk_when_n_is_video_length_minus_one() {
        let model = ThgModel::new(ThgConfig::default()).unwrap();
        let (frames, audio) = annotated_video(403, 1.0);
        let (seq, refs) = infer_video(&model, &frames, &audio, frames.len() - 1).unwrap();
        assert_eq!(refs.len(), 1);
        assert_eq!(seq.len(), frames.len());
    }

    #[test]
    fn short_audio_is_an_input_error() {
        let model = ThgModel::new(ThgConfig::default()).unwrap();
        let (frames, audio) = annotated_video(404, 2.0);
        let short = AudioClip::new(audio.samples()[..10_000].to_vec(), 16_000).unwrap();
        assert!(matches!(
            infer_video(&model, &frames, &short, 5),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn frame_zero_is_the_edited_frame_itself() {
        let model = ThgModel::new(ThgConfig::default()).unwrap();
        let (frames, audio) = annotated_video(405, 1.0);
        let (seq, _) = infer_video(&model, &frames, &audio, 5).unwrap();
        assert_eq!(seq.frames()[0].pixels(), frames[0].frame.pixels());
    }
}
