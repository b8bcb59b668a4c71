//! Desk-scale talking-head lab.
//!
//! The pipeline edits the expression of a source talking-head frame and then
//! regenerates the following frames with audio-synchronized lips:
//!
//! 1. [`synth`] builds a fully synthetic corpus with known ground truth:
//!    parametric faces, tone audio whose envelope follows mouth openness, and
//!    paired utterances related by a known time warp.
//! 2. [`align`] matches paired utterances with mel-spectrogram DTW and turns
//!    the alignment into frame-level supervision windows.
//! 3. [`fem`] provides the expression-editing stage, including a lossy
//!    variant that corrupts the mouth on purpose.
//! 4. [`thg`] is the audio-driven generator trained to predict the next `n`
//!    frames from one reference frame plus per-frame audio and pose.
//! 5. [`losses`] and [`metrics`] supply the training objective and the
//!    evaluation suite (Fréchet distance, expression similarity, lip-sync
//!    distance).
//! 6. [`pipeline`] wires everything into reproducible CLI runs.

pub mod align;
pub mod error;
pub mod fem;
pub mod losses;
pub mod media;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod thg;

pub use error::{Error, Result};
