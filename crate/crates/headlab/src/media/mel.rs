//! Log-power mel spectrograms and frame-aligned column windows.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::audio::{samples_per_frame, AudioClip};
use crate::error::{Error, Result};

/// Offset added to power before taking the log; 10*log10 of it equals the
/// default floor of -100 dB.
const POWER_FLOOR: f64 = 1e-10;

/// Snap tolerance so exact silence lands on `db_floor` despite rounding.
const FLOOR_SNAP: f64 = 1e-9;

/// Mel extraction settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub db_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 800,
            hop: 200,
            n_mels: 80,
            fmin: 55.0,
            fmax: 7600.0,
            db_floor: -100.0,
        }
    }
}

impl MelConfig {
    /// Settings used for cross-utterance alignment: shorter window and a hop
    /// that gives an integral number of columns per 25 fps video frame
    /// (16000 / (160 * 25) = 4).
    pub fn alignment() -> Self {
        Self {
            n_fft: 400,
            hop: 160,
            n_mels: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if self.hop == 0 || self.n_fft == 0 {
            return Err(Error::Config("hop and n_fft must be positive".into()));
        }
        if self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "hop {} must not exceed n_fft {}",
                self.hop, self.n_fft
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }
}

/// Log-power mel features, `n_mels x columns`, every value at or above the
/// configured floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Array2<f64>,
    config: MelConfig,
}

impl MelSpectrogram {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn n_mels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, t: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.column(t)
    }

    /// Owned copy of a contiguous column range.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<MelSpectrogram> {
        if start + width > self.n_cols() {
            return Err(Error::OutOfRange(format!(
                "columns {start}..{} requested from spectrogram of width {}",
                start + width,
                self.n_cols()
            )));
        }
        Ok(MelSpectrogram {
            data: self.data.slice(ndarray::s![.., start..start + width]).to_owned(),
            config: self.config.clone(),
        })
    }

    /// Used by tests and checkpoints; callers must uphold the invariants.
    pub fn from_parts(data: Array2<f64>, config: MelConfig) -> Self {
        Self { data, config }
    }
}

/// Frequency in Hz to mel (HTK formula).
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Mel back to Hz (HTK formula).
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filterbank, `n_mels x (n_fft/2 + 1)`, peak weight 1.
fn filterbank(cfg: &MelConfig) -> Array2<f64> {
    let n_freqs = cfg.n_fft / 2 + 1;
    let df = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    // n_mels + 2 break points: left edge, centers, right edge.
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let mut fb = Array2::zeros((cfg.n_mels, n_freqs));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..n_freqs {
            let f = k as f64 * df;
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            let w = rising.min(falling).max(0.0);
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Log-power mel spectrogram of a clip. Column `t` covers samples
/// `[t*hop, t*hop + n_fft)`, zero-padded past the clip end, so the column
/// count is `ceil(len / hop)`. Pure: identical inputs give identical output.
pub fn compute_mel(audio: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if audio.sample_rate() != cfg.sample_rate {
        return Err(Error::Config(format!(
            "clip sample rate {} does not match config {}",
            audio.sample_rate(),
            cfg.sample_rate
        )));
    }
    if audio.len() < cfg.n_fft {
        return Err(Error::Input(format!(
            "clip of {} samples is shorter than one {}-sample window",
            audio.len(),
            cfg.n_fft
        )));
    }

    let samples = audio.samples();
    let n_cols = samples.len().div_ceil(cfg.hop);
    let n_freqs = cfg.n_fft / 2 + 1;

    // Periodic Hann window.
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.n_fft as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let fb = filterbank(cfg);

    let mut data = Array2::zeros((cfg.n_mels, n_cols));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0f64; n_freqs];
    for t in 0..n_cols {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = samples.get(start + i).copied().unwrap_or(0.0) as f64;
            *slot = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let mel_power: f64 = (0..n_freqs).map(|k| fb[[m, k]] * power[k]).sum();
            let db = 10.0 * (mel_power + POWER_FLOOR).log10();
            data[[m, t]] = if db <= cfg.db_floor + FLOOR_SNAP {
                cfg.db_floor
            } else {
                db
            };
        }
    }

    Ok(MelSpectrogram {
        data,
        config: cfg.clone(),
    })
}

/// First mel column covering video frame `first_frame`.
pub fn mel_col_start(cfg: &MelConfig, first_frame: usize, fps: u32) -> Result<usize> {
    let spf = samples_per_frame(cfg.sample_rate, fps)?;
    Ok(first_frame * spf / cfg.hop)
}

/// Column count for an `n`-frame span: `ceil(n * samples_per_frame / hop)`,
/// a fixed width independent of the span's position.
pub fn mel_cols_for_span(cfg: &MelConfig, n: usize, fps: u32) -> Result<usize> {
    let spf = samples_per_frame(cfg.sample_rate, fps)?;
    Ok((n * spf).div_ceil(cfg.hop))
}

/// Columns covering video frames `first_frame .. first_frame + n`.
pub fn mel_window_span(
    mel: &MelSpectrogram,
    first_frame: usize,
    n: usize,
    fps: u32,
) -> Result<MelSpectrogram> {
    if n == 0 {
        return Err(Error::Input("window length n must be at least 1".into()));
    }
    let start = mel_col_start(mel.config(), first_frame, fps)?;
    let width = mel_cols_for_span(mel.config(), n, fps)?;
    if start + width > mel.n_cols() {
        return Err(Error::OutOfRange(format!(
            "mel window for frames {first_frame}..{} needs columns {start}..{} but spectrogram has {}",
            first_frame + n,
            start + width,
            mel.n_cols()
        )));
    }
    mel.slice_cols(start, width)
}

/// Columns covering the same span as `audio_window`: video frames
/// `i+1 ..= i+n`. Start rounds down to a column boundary; the width is fixed.
pub fn mel_window(
    mel: &MelSpectrogram,
    frame_index: usize,
    n: usize,
    fps: u32,
) -> Result<MelSpectrogram> {
    mel_window_span(mel, frame_index + 1, n, fps)
}
