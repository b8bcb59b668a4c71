//! Procedural utterances: seeded mouth tracks, harmonic-tone audio driven by
//! the mouth envelope, and paired emotional re-timings with a known warp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::face::{render_face, FaceParams, Pose};
use crate::error::{Error, Result};
use crate::media::{AudioClip, Frame, FrameSequence};

/// The seven emotion labels carried by every utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Angry,
    Disgusted,
    Fear,
    Happy,
    Sad,
    Surprised,
}

impl Emotion {
    pub const ALL: [Emotion; 7] = [
        Emotion::Neutral,
        Emotion::Angry,
        Emotion::Disgusted,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Surprised,
    ];

    /// Canonical expression vector: brow raise, mouth-corner curvature,
    /// eye openness.
    pub fn expression(&self) -> [f32; 3] {
        match self {
            Emotion::Neutral => [0.0, 0.0, 0.0],
            Emotion::Angry => [-1.0, -0.6, -0.2],
            Emotion::Disgusted => [-0.7, -0.3, -0.5],
            Emotion::Fear => [0.7, -0.4, 0.6],
            Emotion::Happy => [0.3, 1.0, 0.0],
            Emotion::Sad => [-0.5, -0.8, -0.3],
            Emotion::Surprised => [1.0, 0.2, 0.8],
        }
    }

    /// Base pitch of the harmonic tone for this emotion.
    pub fn base_pitch(&self) -> f64 {
        match self {
            Emotion::Neutral => 220.0,
            Emotion::Angry => 196.0,
            Emotion::Disgusted => 247.0,
            Emotion::Fear => 294.0,
            Emotion::Happy => 262.0,
            Emotion::Sad => 175.0,
            Emotion::Surprised => 330.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Angry => "angry",
            Emotion::Disgusted => "disgusted",
            Emotion::Fear => "fear",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Surprised => "surprised",
        }
    }
}

impl std::str::FromStr for Emotion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Emotion::ALL
            .iter()
            .find(|e| e.name() == s)
            .copied()
            .ok_or_else(|| Error::Input(format!("unknown emotion '{s}'")))
    }
}

impl std::fmt::Display for Emotion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape of every generated utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtteranceConfig {
    pub duration_s: f64,
    pub resolution: usize,
    pub fps: u32,
    pub sample_rate: u32,
}

impl Default for UtteranceConfig {
    fn default() -> Self {
        Self {
            duration_s: 2.0,
            resolution: 32,
            fps: 25,
            sample_rate: 16_000,
        }
    }
}

impl UtteranceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s < 0.5 {
            return Err(Error::Input(format!(
                "duration must be at least 0.5 s, got {}",
                self.duration_s
            )));
        }
        if self.sample_rate % self.fps != 0 {
            return Err(Error::Config(format!(
                "fps {} must divide sample rate {}",
                self.fps, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn samples_per_frame(&self) -> usize {
        (self.sample_rate / self.fps) as usize
    }
}

/// One synthetic clip: audio, video, and the per-frame ground truth behind
/// the pixels.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub audio: AudioClip,
    pub video: FrameSequence,
    pub params_track: Vec<FaceParams>,
    pub emotion: Emotion,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.video.len()
    }
}

/// A neutral source and an emotional re-timing of the same content, plus the
/// exact frame correspondence induced by the warp.
#[derive(Debug, Clone)]
pub struct PairedUtterance {
    pub source: Utterance,
    pub target: Utterance,
    pub true_correspondence: Vec<usize>,
}

/// Monotone piecewise-linear time warp from source seconds to target seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warp {
    knots: Vec<(f64, f64)>,
}

impl Warp {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Input("warp needs at least two knots".into()));
        }
        if knots[0] != (0.0, 0.0) {
            return Err(Error::Input("warp must start at (0, 0)".into()));
        }
        for pair in knots.windows(2) {
            if pair[1].0 <= pair[0].0 || pair[1].1 <= pair[0].1 {
                return Err(Error::Input(format!(
                    "warp knots must be strictly increasing, got {:?} then {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self { knots })
    }

    pub fn identity(duration: f64) -> Self {
        Self {
            knots: vec![(0.0, 0.0), (duration, duration)],
        }
    }

    pub fn source_duration(&self) -> f64 {
        self.knots.last().unwrap().0
    }

    pub fn target_duration(&self) -> f64 {
        self.knots.last().unwrap().1
    }

    pub fn eval(&self, t: f64) -> f64 {
        piecewise(&self.knots, t, |k| (k.0, k.1))
    }

    pub fn eval_inverse(&self, t: f64) -> f64 {
        piecewise(&self.knots, t, |k| (k.1, k.0))
    }
}

fn piecewise(knots: &[(f64, f64)], t: f64, axes: impl Fn(&(f64, f64)) -> (f64, f64)) -> f64 {
    let (first_x, first_y) = axes(&knots[0]);
    let (last_x, last_y) = axes(knots.last().unwrap());
    if t <= first_x {
        return first_y;
    }
    if t >= last_x {
        return last_y;
    }
    for pair in knots.windows(2) {
        let (x0, y0) = axes(&pair[0]);
        let (x1, y1) = axes(&pair[1]);
        if t <= x1 {
            return y0 + (y1 - y0) * (t - x0) / (x1 - x0);
        }
    }
    last_y
}

/// Baseline amplitude so quiet stretches stay above the mel floor.
const ENV_FLOOR: f32 = 0.08;
/// Relative harmonic amplitudes of the tone (sum 1).
const HARMONICS: [f64; 3] = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
/// Mouth-track knot spacing in frames.
const KNOT_SPACING: usize = 5;

/// Linear interpolation over a per-frame track at fractional frame position.
fn track_at(track: &[f32], pos: f64) -> f32 {
    if track.is_empty() {
        return 0.0;
    }
    let last = (track.len() - 1) as f64;
    let p = pos.clamp(0.0, last);
    let i = p.floor() as usize;
    let frac = (p - i as f64) as f32;
    if i + 1 < track.len() {
        track[i] * (1.0 - frac) + track[i + 1] * frac
    } else {
        track[i]
    }
}

/// Catmull-Rom spline through seeded knots, clamped to `[0, 1]`.
fn smooth_track(rng: &mut ChaCha8Rng, n_frames: usize) -> Vec<f32> {
    let n_knots = n_frames.div_ceil(KNOT_SPACING) + 2;
    let knots: Vec<f32> = (0..n_knots).map(|_| rng.random_range(0.05..0.95)).collect();
    let at = |i: isize| knots[i.clamp(0, n_knots as isize - 1) as usize];
    (0..n_frames)
        .map(|f| {
            let j = (f / KNOT_SPACING) as isize;
            let t = (f % KNOT_SPACING) as f32 / KNOT_SPACING as f32;
            let (p0, p1, p2, p3) = (at(j - 1), at(j), at(j + 1), at(j + 2));
            let v = 0.5
                * (2.0 * p1
                    + (-p0 + p2) * t
                    + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                    + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
            v.clamp(0.0, 1.0)
        })
        .collect()
}

/// Harmonic tone whose amplitude envelope follows the per-frame track.
fn synth_audio(track: &[f32], cfg: &UtteranceConfig, pitch: f64) -> AudioClip {
    let spf = cfg.samples_per_frame();
    let n_samples = track.len() * spf;
    let sr = cfg.sample_rate as f64;
    let samples: Vec<f32> = (0..n_samples)
        .map(|s| {
            let env = ENV_FLOOR + (1.0 - ENV_FLOOR) * track_at(track, s as f64 / spf as f64);
            let t = s as f64 / sr;
            let tone: f64 = HARMONICS
                .iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * std::f64::consts::PI * pitch * (k + 1) as f64 * t).sin())
                .sum();
            (env as f64 * tone) as f32
        })
        .collect();
    AudioClip::new(samples, cfg.sample_rate).expect("tone stays within [-1, 1]")
}

fn jitter3(rng: &mut ChaCha8Rng, base: [f32; 3]) -> [f32; 3] {
    let mut out = base;
    for v in &mut out {
        *v = (*v + rng.random_range(-0.05f32..0.05)).clamp(-1.0, 1.0);
    }
    out
}

struct PoseDrift {
    amp: [f32; 3],
    freq: [f64; 3],
    phase: [f64; 3],
}

impl PoseDrift {
    fn seeded(rng: &mut ChaCha8Rng) -> Self {
        let mut amp = [0.0f32; 3];
        let mut freq = [0.0f64; 3];
        let mut phase = [0.0f64; 3];
        for axis in 0..3 {
            amp[axis] = if axis < 2 {
                rng.random_range(0.5f32..2.0)
            } else {
                rng.random_range(0.01f32..0.04)
            };
            freq[axis] = rng.random_range(0.15f64..0.4);
            phase[axis] = rng.random_range(0.0f64..std::f64::consts::TAU);
        }
        Self { amp, freq, phase }
    }

    fn at(&self, t: f64) -> Pose {
        let v = |axis: usize| {
            self.amp[axis] as f64 * (std::f64::consts::TAU * self.freq[axis] * t + self.phase[axis]).sin()
        };
        Pose::new(v(0) as f32, v(1) as f32, v(2) as f32)
    }
}

fn build_utterance(
    cfg: &UtteranceConfig,
    emotion: Emotion,
    identity: [f32; 4],
    expression: [f32; 3],
    mouth_track: Vec<f32>,
    poses: Vec<Pose>,
    pitch: f64,
) -> Result<Utterance> {
    let params_track: Vec<FaceParams> = mouth_track
        .iter()
        .zip(&poses)
        .map(|(&mouth_open, &pose)| FaceParams {
            identity,
            expression,
            mouth_open,
            pose,
        })
        .collect();
    let frames: Vec<Frame> = params_track
        .iter()
        .enumerate()
        .map(|(i, p)| render_face(p, cfg.resolution).map(|f| f.with_index(i)))
        .collect::<Result<_>>()?;
    let video = FrameSequence::new(frames, cfg.fps)?;
    let audio = synth_audio(&mouth_track, cfg, pitch);
    Ok(Utterance {
        audio,
        video,
        params_track,
        emotion,
    })
}

/// Generate one utterance. Identical arguments (including seed) give an
/// identical result.
pub fn synth_utterance(cfg: &UtteranceConfig, emotion: Emotion, seed: u64) -> Result<Utterance> {
    synth_utterance_with_identity(cfg, emotion, seed, None)
}

/// As [`synth_utterance`], with the identity vector supplied by the caller
/// instead of drawn from the seed (used when several utterances must share
/// a speaker).
pub fn synth_utterance_with_identity(
    cfg: &UtteranceConfig,
    emotion: Emotion,
    seed: u64,
    identity: Option<[f32; 4]>,
) -> Result<Utterance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity = identity.unwrap_or_else(|| {
        let mut id = [0.0f32; 4];
        for v in &mut id {
            *v = rng.random_range(0.0f32..1.0);
        }
        id
    });
    let expression = jitter3(&mut rng, emotion.expression());
    let pitch = emotion.base_pitch() * rng.random_range(0.97f64..1.03);
    let n_frames = (cfg.duration_s * cfg.fps as f64).round() as usize;
    let mouth_track = smooth_track(&mut rng, n_frames);
    let drift = PoseDrift::seeded(&mut rng);
    let poses: Vec<Pose> = (0..n_frames)
        .map(|i| drift.at(i as f64 / cfg.fps as f64))
        .collect();
    build_utterance(cfg, emotion, identity, expression, mouth_track, poses, pitch)
}

/// Re-time a neutral source through `warp` and re-render it with the target
/// emotion: same mouth content and head motion on a warped clock, new
/// expression and pitch.
pub fn make_paired(
    source: &Utterance,
    emotion: Emotion,
    warp: &Warp,
    seed: u64,
    cfg: &UtteranceConfig,
) -> Result<PairedUtterance> {
    cfg.validate()?;
    let src_frames = source.num_frames();
    let src_duration = src_frames as f64 / cfg.fps as f64;
    if (warp.source_duration() - src_duration).abs() > 0.5 / cfg.fps as f64 {
        return Err(Error::Input(format!(
            "warp covers {:.3} s but the source lasts {src_duration:.3} s",
            warp.source_duration()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expression = jitter3(&mut rng, emotion.expression());
    let pitch = emotion.base_pitch() * rng.random_range(0.97f64..1.03);

    let src_track: Vec<f32> = source.params_track.iter().map(|p| p.mouth_open).collect();
    let src_poses: Vec<Pose> = source.params_track.iter().map(|p| p.pose).collect();
    let identity = source
        .params_track
        .first()
        .map(|p| p.identity)
        .ok_or_else(|| Error::Input("source utterance has no frames".into()))?;

    let n_tgt = (warp.target_duration() * cfg.fps as f64).round() as usize;
    let fps = cfg.fps as f64;
    let mut tgt_track = Vec::with_capacity(n_tgt);
    let mut tgt_poses = Vec::with_capacity(n_tgt);
    for j in 0..n_tgt {
        let src_pos = warp.eval_inverse(j as f64 / fps) * fps;
        tgt_track.push(track_at(&src_track, src_pos));
        let i = src_pos.clamp(0.0, (src_frames - 1) as f64);
        let (i0, frac) = (i.floor() as usize, i.fract() as f32);
        let p0 = src_poses[i0];
        let p1 = src_poses[(i0 + 1).min(src_frames - 1)];
        tgt_poses.push(Pose::new(
            p0.dx + (p1.dx - p0.dx) * frac,
            p0.dy + (p1.dy - p0.dy) * frac,
            p0.rot + (p1.rot - p0.rot) * frac,
        ));
    }

    let target = build_utterance(cfg, emotion, identity, expression, tgt_track, tgt_poses, pitch)?;
    let true_correspondence: Vec<usize> = (0..src_frames)
        .map(|i| {
            let t = warp.eval(i as f64 / fps);
            ((t * fps).round() as usize).min(n_tgt.saturating_sub(1))
        })
        .collect();

    Ok(PairedUtterance {
        source: source.clone(),
        target,
        true_correspondence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> UtteranceConfig {
        UtteranceConfig::default()
    }

    #[test]
    fn same_seed_gives_identical_utterances() {
        let a = synth_utterance(&cfg(), Emotion::Happy, 7).unwrap();
        let b = synth_utterance(&cfg(), Emotion::Happy, 7).unwrap();
        assert_eq!(a.audio, b.audio);
        assert_eq!(a.video, b.video);
    }

    #[test]
    fn neutral_expression_is_zero_plus_bounded_jitter() {
        let u = synth_utterance(&cfg(), Emotion::Neutral, 3).unwrap();
        for p in &u.params_track {
            for v in p.expression {
                assert!(v.abs() <= 0.05, "jitter {v} exceeds bound");
            }
        }
    }

    #[test]
    fn audio_rms_follows_mouth_track() {
        let u = synth_utterance(&cfg(), Emotion::Neutral, 11).unwrap();
        let spf = cfg().samples_per_frame();
        let rms: Vec<f32> = (0..u.num_frames())
            .map(|i| {
                let s = &u.audio.samples()[i * spf..(i + 1) * spf];
                (s.iter().map(|x| x * x).sum::<f32>() / spf as f32).sqrt()
            })
            .collect();
        let track: Vec<f32> = u.params_track.iter().map(|p| p.mouth_open).collect();

        let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        let (mr, mt) = (mean(&rms), mean(&track));
        let cov: f32 = rms.iter().zip(&track).map(|(r, t)| (r - mr) * (t - mt)).sum();
        let vr: f32 = rms.iter().map(|r| (r - mr).powi(2)).sum();
        let vt: f32 = track.iter().map(|t| (t - mt).powi(2)).sum();
        let pearson = cov / (vr * vt).sqrt().max(1e-12);
        assert!(pearson > 0.9, "RMS/mouth correlation too weak: {pearson}");

        // Loud frames are the open-mouth frames.
        let loud: Vec<f32> = rms
            .iter()
            .zip(&track)
            .filter(|(_, &t)| t > 0.5)
            .map(|(&r, _)| r)
            .collect();
        let quiet: Vec<f32> = rms
            .iter()
            .zip(&track)
            .filter(|(_, &t)| t <= 0.5)
            .map(|(&r, _)| r)
            .collect();
        if !loud.is_empty() && !quiet.is_empty() {
            assert!(mean(&loud) > mean(&quiet));
        }
    }

    #[test]
    fn ground_truth_round_trip_reproduces_frames_bit_exactly() {
        let u = synth_utterance(&cfg(), Emotion::Sad, 21).unwrap();
        for (i, p) in u.params_track.iter().enumerate() {
            let re = render_face(p, cfg().resolution).unwrap();
            assert_eq!(re.pixels(), u.video.frames()[i].pixels(), "frame {i}");
        }
    }

    #[test]
    fn identity_warp_maps_every_frame_to_itself() {
        let u = synth_utterance(&cfg(), Emotion::Neutral, 5).unwrap();
        let warp = Warp::identity(2.0);
        let pair = make_paired(&u, Emotion::Angry, &warp, 6, &cfg()).unwrap();
        for (i, &j) in pair.true_correspondence.iter().enumerate() {
            assert_eq!(i, j);
        }
    }

    #[test]
    fn uniform_slowdown_doubles_indices() {
        let u = synth_utterance(&cfg(), Emotion::Neutral, 5).unwrap();
        let warp = Warp::new(vec![(0.0, 0.0), (2.0, 4.0)]).unwrap();
        let pair = make_paired(&u, Emotion::Happy, &warp, 6, &cfg()).unwrap();
        assert_eq!(pair.target.num_frames(), 100);
        for (i, &j) in pair.true_correspondence.iter().enumerate() {
            assert_eq!(j, (2 * i).min(99));
        }
    }

    #[test]
    fn piecewise_warp_matches_analytic_evaluation() {
        let u = synth_utterance(&cfg(), Emotion::Neutral, 9).unwrap();
        let warp = Warp::new(vec![(0.0, 0.0), (0.8, 1.2), (1.5, 1.6), (2.0, 2.4)]).unwrap();
        let pair = make_paired(&u, Emotion::Fear, &warp, 10, &cfg()).unwrap();
        let n_tgt = pair.target.num_frames();
        for (i, &j) in pair.true_correspondence.iter().enumerate() {
            let t = i as f64 / 25.0;
            // Evaluate the piecewise-linear warp directly.
            let expected = if t <= 0.8 {
                t * 1.2 / 0.8
            } else if t <= 1.5 {
                1.2 + (t - 0.8) * (1.6 - 1.2) / (1.5 - 0.8)
            } else {
                1.6 + (t - 1.5) * (2.4 - 1.6) / (2.0 - 1.5)
            };
            let expected = ((expected * 25.0).round() as usize).min(n_tgt - 1);
            assert_eq!(j, expected, "frame {i}");
        }
    }

    #[test]
    fn warped_track_composes_with_the_warp() {
        let u = synth_utterance(&cfg(), Emotion::Neutral, 13).unwrap();
        let warp = Warp::new(vec![(0.0, 0.0), (1.0, 1.4), (2.0, 2.7)]).unwrap();
        let pair = make_paired(&u, Emotion::Surprised, &warp, 14, &cfg()).unwrap();
        let tgt_track: Vec<f32> = pair.target.params_track.iter().map(|p| p.mouth_open).collect();
        for (i, p) in pair.source.params_track.iter().enumerate() {
            let warped_pos = warp.eval(i as f64 / 25.0) * 25.0;
            let got = track_at(&tgt_track, warped_pos);
            assert!(
                (got - p.mouth_open).abs() < 0.02,
                "frame {i}: target track {got} vs source {}",
                p.mouth_open
            );
        }
    }

    #[test]
    fn non_monotone_warp_is_rejected() {
        assert!(Warp::new(vec![(0.0, 0.0), (1.0, 1.5), (2.0, 1.2)]).is_err());
        assert!(Warp::new(vec![(0.0, 0.1), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn correspondence_is_monotone_and_total() {
        let u = synth_utterance(&cfg(), Emotion::Neutral, 17).unwrap();
        let warp = Warp::new(vec![(0.0, 0.0), (0.5, 0.4), (1.3, 1.7), (2.0, 2.2)]).unwrap();
        let pair = make_paired(&u, Emotion::Disgusted, &warp, 18, &cfg()).unwrap();
        assert_eq!(pair.true_correspondence.len(), u.num_frames());
        for w in pair.true_correspondence.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let n_tgt = pair.target.num_frames();
        assert!(pair.true_correspondence.iter().all(|&j| j < n_tgt));
    }
}
