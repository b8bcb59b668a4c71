//! Conversions between media types and f64 network tensors.

use ndarray::{Array2, Array4};

use crate::error::{Error, Result};
use crate::media::{Frame, MelSpectrogram};
use crate::synth::{mouth_crop_rect, Pose};

/// Mel dB values are mapped to roughly `[-1, 1]`: the floor (-100 dB) lands
/// on -1 and 0 dB on +1.
pub const MEL_DB_CENTER: f64 = -50.0;
pub const MEL_DB_HALF_RANGE: f64 = 50.0;
/// Network-space value of a silent mel cell, used to pad ragged windows.
pub const MEL_SILENCE: f64 = -1.0;

pub fn normalize_db(db: f64) -> f64 {
    (db - MEL_DB_CENTER) / MEL_DB_HALF_RANGE
}

/// Pose components scaled to comparable magnitudes.
pub fn pose_to_input(p: &Pose) -> [f64; 3] {
    [p.dx as f64 / 4.0, p.dy as f64 / 4.0, p.rot as f64 * 10.0]
}

/// Stack grayscale frames into an `(N, 1, H, W)` tensor.
pub fn frames_to_tensor<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> Result<Array4<f64>> {
    let frames: Vec<&Frame> = frames.into_iter().collect();
    let first = frames
        .first()
        .ok_or_else(|| Error::Input("cannot build a tensor from zero frames".into()))?;
    if first.channels() != 1 {
        return Err(Error::Input("the generator works on grayscale frames".into()));
    }
    let (h, w) = (first.height(), first.width());
    let mut t = Array4::zeros((frames.len(), 1, h, w));
    for (i, f) in frames.iter().enumerate() {
        if f.height() != h || f.width() != w || f.channels() != 1 {
            return Err(Error::Input("frames in a batch must share shape".into()));
        }
        for y in 0..h {
            for x in 0..w {
                t[[i, 0, y, x]] = f.get(y, x, 0) as f64;
            }
        }
    }
    Ok(t)
}

/// Convert network output back to frames, clamping to `[0, 1]`.
pub fn tensor_to_frames(t: &Array4<f64>, first_index: usize) -> Vec<Frame> {
    let s = t.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    (0..n)
        .map(|i| {
            let pixels: Vec<f32> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .map(|(y, x)| (t[[i, 0, y, x]] as f32).clamp(0.0, 1.0))
                .collect();
            Frame::new(pixels, h, w, 1, first_index + i).expect("clamped pixels are valid")
        })
        .collect()
}

/// Normalized mel window as a `(1, 1, n_mels, cols)` image tensor.
pub fn mel_to_tensor(mel: &MelSpectrogram) -> Array4<f64> {
    let (rows, cols) = (mel.n_mels(), mel.n_cols());
    let mut t = Array4::zeros((1, 1, rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            t[[0, 0, r, c]] = normalize_db(mel.data()[[r, c]]);
        }
    }
    t
}

/// Split an n-frame mel window into one fixed-width patch per output frame.
/// Frame `k`'s patch starts at column `floor(k * W / n)` and is padded with
/// silence where it overruns the window.
pub fn mel_window_to_patches(mel: &MelSpectrogram, n: usize, patch_cols: usize) -> Array2<f64> {
    let rows = mel.n_mels();
    let w = mel.n_cols();
    let mut patches = Array2::from_elem((n, rows * patch_cols), MEL_SILENCE);
    for k in 0..n {
        let start = k * w / n;
        for r in 0..rows {
            for c in 0..patch_cols {
                if start + c < w {
                    patches[[k, r * patch_cols + c]] = normalize_db(mel.data()[[r, start + c]]);
                }
            }
        }
    }
    patches
}

/// Mouth crops of a frame batch, stacked as channels: input `(N, 1, H, W)`
/// grouped in runs of `group` frames gives `(N/group, group, crop_h, W)`.
pub fn mouth_crop_groups(frames: &Array4<f64>, group: usize) -> Array4<f64> {
    let s = frames.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    assert!(n % group == 0, "batch not divisible into crop groups");
    let (row0, rows, col0, cols) = mouth_crop_rect(h, w);
    let mut out = Array4::zeros((n / group, group, rows, cols));
    for g in 0..n / group {
        for k in 0..group {
            for y in 0..rows {
                for x in 0..cols {
                    out[[g, k, y, x]] = frames[[g * group + k, 0, row0 + y, col0 + x]];
                }
            }
        }
    }
    out
}

/// Scatter crop-group gradients back into the frame batch layout.
pub fn mouth_crop_groups_backward(
    grad_crops: &Array4<f64>,
    frame_shape: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (n, c, h, w) = frame_shape;
    let s = grad_crops.shape();
    let group = s[1];
    let (row0, rows, col0, cols) = mouth_crop_rect(h, w);
    let mut out = Array4::zeros((n, c, h, w));
    for g in 0..s[0] {
        for k in 0..group {
            for y in 0..rows {
                for x in 0..cols {
                    out[[g * group + k, 0, row0 + y, col0 + x]] += grad_crops[[g, k, y, x]];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_tensor_roundtrip() {
        let pixels: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let f = Frame::new(pixels, 4, 4, 1, 3).unwrap();
        let t = frames_to_tensor([&f]).unwrap();
        let back = tensor_to_frames(&t, 3);
        assert_eq!(back[0].pixels(), f.pixels());
        assert_eq!(back[0].index, 3);
    }

    #[test]
    fn patches_cover_the_window() {
        use crate::media::{MelConfig, MelSpectrogram};
        let data = ndarray::Array2::from_shape_fn((4, 16), |(r, c)| -(r as f64) - c as f64);
        let mel = MelSpectrogram::from_parts(data, MelConfig::default());
        let p = mel_window_to_patches(&mel, 5, 4);
        assert_eq!(p.shape(), &[5, 16]);
        // Frame 0 starts at column 0, frame 4 at column 12.
        assert_eq!(p[[0, 0]], normalize_db(0.0));
        assert_eq!(p[[4, 0]], normalize_db(-12.0));
    }

    #[test]
    fn crop_groups_roundtrip_gradients() {
        let frames = Array4::from_shape_fn((4, 1, 8, 8), |(n, _, y, x)| (n * 64 + y * 8 + x) as f64);
        let crops = mouth_crop_groups(&frames, 2);
        assert_eq!(crops.shape(), &[2, 2, 4, 8]);
        assert_eq!(crops[[0, 0, 0, 0]], frames[[0, 0, 4, 0]]);
        let g = mouth_crop_groups_backward(&crops, (4, 1, 8, 8));
        // Upper half receives nothing, lower half the crop values.
        assert_eq!(g[[0, 0, 0, 0]], 0.0);
        assert_eq!(g[[0, 0, 4, 0]], crops[[0, 0, 0, 0]]);
    }
}
