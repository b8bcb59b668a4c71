//! Core media types: raster frames, audio clips, mel spectrograms, and the
//! audio/mel windowing used to pair video frames with their sound.

mod audio;
mod frame;
mod fseq;
mod mel;
mod wav;

pub use audio::{audio_window, AudioClip};
pub use frame::{Frame, FrameSequence};
pub use fseq::{read_frame_sequence, write_frame_png, write_frame_sequence};
pub use mel::{
    compute_mel, mel_cols_for_span, mel_col_start, mel_window, mel_window_span, MelConfig,
    MelSpectrogram,
};
pub use wav::{read_wav, write_wav};
