//! Two-tower lip-sync expert: a mouth-crop video encoder and a mel audio
//! encoder trained contrastively so in-sync pairs embed close together.
//! Frozen after training, it provides both the sync loss and the lip-sync
//! distance metric.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{frames_to_tensor, mel_to_tensor, mouth_crop_groups};
use crate::error::{Error, Result};
use crate::losses::{negative_sync_loss_with_grad, sync_loss_with_grad, SyncEpsilon};
use crate::media::{compute_mel, mel_cols_for_span, mel_window_span, MelConfig, MelSpectrogram};
use crate::nn::{
    clip_global_norm, l2_normalize, l2_normalize_backward, leaky_relu, leaky_relu_backward, Adam,
    Conv2d, ConvCache, Dense, ParamSlot,
};
use crate::synth::{mouth_crop_rect, Split, Utterance};

const LRELU: f64 = 0.2;
const EMBED_DIM: usize = 64;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncExpertConfig {
    /// Window length in frames; both towers are built for this span.
    pub expert_n: usize,
    pub resolution: usize,
    pub fps: u32,
    pub width: usize,
    pub seed: u64,
    pub mel: MelConfig,
}

impl Default for SyncExpertConfig {
    fn default() -> Self {
        Self {
            expert_n: 5,
            resolution: 32,
            fps: 25,
            width: 16,
            seed: 0,
            mel: MelConfig::default(),
        }
    }
}

impl SyncExpertConfig {
    pub fn mel_window_cols(&self) -> Result<usize> {
        mel_cols_for_span(&self.mel, self.expert_n, self.fps)
    }
}

/// One tower: three stride-2 convs, a dense projection, L2 normalization.
struct Tower {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    d: Dense,
}

pub(crate) struct TowerCache {
    z1: Array4<f64>,
    k1: ConvCache,
    z2: Array4<f64>,
    k2: ConvCache,
    z3: Array4<f64>,
    k3: ConvCache,
    flat: Array2<f64>,
    pub(crate) y: Array2<f64>,
    norms: Array1<f64>,
}

impl Tower {
    fn new(rng: &mut ChaCha8Rng, in_c: usize, width: usize, in_h: usize, in_w: usize) -> Self {
        let c1 = Conv2d::new(rng, in_c, width, 3, 2, 1);
        let c2 = Conv2d::new(rng, width, 2 * width, 3, 2, 1);
        let c3 = Conv2d::new(rng, 2 * width, 4 * width, 3, 2, 1);
        let (h1, w1) = c1.out_dims(in_h, in_w);
        let (h2, w2) = c2.out_dims(h1, w1);
        let (h3, w3) = c3.out_dims(h2, w2);
        let d = Dense::new(rng, 4 * width * h3 * w3, EMBED_DIM);
        Self { c1, c2, c3, d }
    }

    fn forward(&self, x: &Array4<f64>) -> TowerCache {
        let (z1, k1) = self.c1.forward(x);
        let a1 = leaky_relu(&z1, LRELU);
        let (z2, k2) = self.c2.forward(&a1);
        let a2 = leaky_relu(&z2, LRELU);
        let (z3, k3) = self.c3.forward(&a2);
        let a3 = leaky_relu(&z3, LRELU);
        let nb = a3.shape()[0];
        let flat = a3
            .as_standard_layout()
            .into_shape_with_order((nb, a3.len() / nb))
            .unwrap()
            .to_owned();
        let raw = self.d.forward(&flat);
        let (y, norms) = l2_normalize(&raw, NORM_EPS);
        TowerCache {
            z1,
            k1,
            z2,
            k2,
            z3,
            k3,
            flat,
            y,
            norms,
        }
    }

    fn backward_train(&mut self, cache: &TowerCache, g_emb: &Array2<f64>) -> Array4<f64> {
        let graw = l2_normalize_backward(&cache.y, &cache.norms, g_emb);
        let gflat = self.d.backward(&cache.flat, &graw);
        let ga3 = gflat
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(cache.z3.raw_dim())
            .unwrap();
        let gz3 = leaky_relu_backward(&cache.z3, &ga3, LRELU);
        let ga2 = self.c3.backward(&cache.k3, &gz3);
        let gz2 = leaky_relu_backward(&cache.z2, &ga2, LRELU);
        let ga1 = self.c2.backward(&cache.k2, &gz2);
        let gz1 = leaky_relu_backward(&cache.z1, &ga1, LRELU);
        self.c1.backward(&cache.k1, &gz1)
    }

    fn backward_frozen(&self, cache: &TowerCache, g_emb: &Array2<f64>) -> Array4<f64> {
        let graw = l2_normalize_backward(&cache.y, &cache.norms, g_emb);
        let gflat = self.d.backward_data(&graw);
        let ga3 = gflat
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(cache.z3.raw_dim())
            .unwrap();
        let gz3 = leaky_relu_backward(&cache.z3, &ga3, LRELU);
        let ga2 = self.c3.backward_data(&cache.k3, &gz3);
        let gz2 = leaky_relu_backward(&cache.z2, &ga2, LRELU);
        let ga1 = self.c2.backward_data(&cache.k2, &gz2);
        let gz1 = leaky_relu_backward(&cache.z1, &ga1, LRELU);
        self.c1.backward_data(&cache.k1, &gz1)
    }

    fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut v = Vec::new();
        v.extend(self.c1.slots());
        v.extend(self.c2.slots());
        v.extend(self.c3.slots());
        v.extend(self.d.slots());
        v
    }

    fn zero_grad(&mut self) {
        self.c1.zero_grad();
        self.c2.zero_grad();
        self.c3.zero_grad();
        self.d.zero_grad();
    }

    fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count() + self.c3.param_count() + self.d.param_count()
    }
}

/// The trained expert. Embeddings from both towers are unit-norm.
pub struct SyncExpert {
    pub cfg: SyncExpertConfig,
    video: Tower,
    audio: Tower,
    pub eps: SyncEpsilon,
}

impl SyncExpert {
    pub fn new(cfg: SyncExpertConfig) -> Result<Self> {
        if cfg.expert_n == 0 {
            return Err(Error::Config("expert_n must be at least 1".into()));
        }
        cfg.mel.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (_, crop_h, _, crop_w) = {
            let (r0, rs, c0, cs) = mouth_crop_rect(cfg.resolution, cfg.resolution);
            (r0, rs, c0, cs)
        };
        let video = Tower::new(&mut rng, cfg.expert_n, cfg.width, crop_h, crop_w);
        let mel_cols = cfg.mel_window_cols()?;
        let audio = Tower::new(&mut rng, 1, cfg.width, cfg.mel.n_mels, mel_cols);
        Ok(Self {
            cfg,
            video,
            audio,
            eps: SyncEpsilon::default(),
        })
    }

    /// Embed mouth-crop windows `(B, expert_n, crop_h, crop_w)`.
    pub fn embed_video(&self, crops: &Array4<f64>) -> Array2<f64> {
        self.video.forward(crops).y
    }

    pub(crate) fn embed_video_cached(&self, crops: &Array4<f64>) -> TowerCache {
        self.video.forward(crops)
    }

    /// Embed mel windows `(B, 1, n_mels, cols)`.
    pub fn embed_audio(&self, mels: &Array4<f64>) -> Array2<f64> {
        self.audio.forward(mels).y
    }

    /// Gradient through the frozen video tower.
    pub(crate) fn video_backward_data(
        &self,
        cache: &TowerCache,
        g_emb: &Array2<f64>,
    ) -> Array4<f64> {
        self.video.backward_frozen(cache, g_emb)
    }

    pub fn param_count(&self) -> usize {
        self.video.param_count() + self.audio.param_count()
    }

    pub(crate) fn conv_fields(&self) -> Vec<(String, &Conv2d)> {
        let mut v = Vec::new();
        for (name, t) in [("video", &self.video), ("audio", &self.audio)] {
            v.push((format!("{name}.c1"), &t.c1));
            v.push((format!("{name}.c2"), &t.c2));
            v.push((format!("{name}.c3"), &t.c3));
        }
        v
    }

    pub(crate) fn conv_fields_mut(&mut self) -> Vec<(String, &mut Conv2d)> {
        let mut v = Vec::new();
        for (name, t) in [("video", &mut self.video), ("audio", &mut self.audio)] {
            v.push((format!("{name}.c1"), &mut t.c1));
            v.push((format!("{name}.c2"), &mut t.c2));
            v.push((format!("{name}.c3"), &mut t.c3));
        }
        v
    }

    pub(crate) fn dense_fields(&self) -> Vec<(String, &Dense)> {
        vec![
            ("video.d".to_string(), &self.video.d),
            ("audio.d".to_string(), &self.audio.d),
        ]
    }

    pub(crate) fn dense_fields_mut(&mut self) -> Vec<(String, &mut Dense)> {
        vec![
            ("video.d".to_string(), &mut self.video.d),
            ("audio.d".to_string(), &mut self.audio.d),
        ]
    }
}

/// One indexed training window: utterance, start frame, and a shifted start
/// for the negative mel.
struct WindowIndex {
    utt: usize,
    start: usize,
}

/// Precomputed per-utterance data for expert training.
struct PreparedUtterance {
    crops: Array4<f64>,
    mel: MelSpectrogram,
    valid_starts: usize,
}

fn prepare(utt: &Utterance, cfg: &SyncExpertConfig) -> Result<Option<PreparedUtterance>> {
    let frames: Vec<&crate::media::Frame> = utt.video.frames().iter().collect();
    if frames.is_empty() {
        return Ok(None);
    }
    let tensor = frames_to_tensor(frames.clone())?;
    let crops = mouth_crop_groups(&tensor, 1);
    let mel = compute_mel(&utt.audio, &cfg.mel)?;
    let width = cfg.mel_window_cols()?;
    let spf = (cfg.mel.sample_rate / cfg.fps) as usize;
    let mut valid = 0usize;
    for i in 0..utt.video.len().saturating_sub(cfg.expert_n - 1) {
        let start = i * spf / cfg.mel.hop;
        if start + width <= mel.n_cols() {
            valid = i + 1;
        } else {
            break;
        }
    }
    if valid == 0 {
        return Ok(None);
    }
    Ok(Some(PreparedUtterance {
        crops,
        mel,
        valid_starts: valid,
    }))
}

fn window_tensors(
    p: &PreparedUtterance,
    start: usize,
    cfg: &SyncExpertConfig,
) -> Result<(Array4<f64>, Array4<f64>)> {
    let e = cfg.expert_n;
    let crop_h = p.crops.shape()[2];
    let crop_w = p.crops.shape()[3];
    let mut crops = Array4::zeros((1, e, crop_h, crop_w));
    for k in 0..e {
        crops
            .slice_mut(ndarray::s![0, k, .., ..])
            .assign(&p.crops.slice(ndarray::s![start + k, 0, .., ..]));
    }
    let mel = mel_window_span(&p.mel, start, e, cfg.fps)?;
    Ok((crops, mel_to_tensor(&mel)))
}

/// Training settings for the expert.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for SyncTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch: 16,
            lr: 1e-3,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

/// Train the expert contrastively on real utterances: positives pair a mouth
/// window with its own mel window, negatives with a mel window shifted by at
/// least `expert_n` frames.
pub fn train_sync_expert(
    utterances: &[Utterance],
    cfg: SyncExpertConfig,
    train: &SyncTrainConfig,
) -> Result<(SyncExpert, Vec<f64>)> {
    let mut expert = SyncExpert::new(cfg)?;
    let prepared: Vec<PreparedUtterance> = utterances
        .iter()
        .map(|u| prepare(u, &expert.cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut windows = Vec::new();
    for (ui, p) in prepared.iter().enumerate() {
        for start in 0..p.valid_starts {
            windows.push(WindowIndex { utt: ui, start });
        }
    }
    if windows.len() < 2 * train.batch {
        return Err(Error::Input(format!(
            "sync-expert training needs at least {} windows, found {}",
            2 * train.batch,
            windows.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut opt = Adam::new(train.lr);
    let mut history = Vec::new();
    let e = expert.cfg.expert_n;

    for _epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(train.batch) {
            if chunk.len() < train.batch {
                continue;
            }
            // Assemble the batch: crops, positive mels, shifted negative mels.
            let mut crop_list = Vec::with_capacity(chunk.len());
            let mut pos_list = Vec::with_capacity(chunk.len());
            let mut neg_list = Vec::with_capacity(chunk.len());
            for &wi in chunk {
                let w = &windows[wi];
                let p = &prepared[w.utt];
                let (crops, pos) = window_tensors(p, w.start, &expert.cfg)?;
                // Negative: a start at least expert_n frames away.
                let neg_start = loop {
                    let cand = rng.random_range(0..p.valid_starts);
                    if cand.abs_diff(w.start) >= e {
                        break cand;
                    }
                    // Clips too short for a disjoint shift fall back to the
                    // farthest end.
                    if p.valid_starts <= 2 * e {
                        break if w.start < p.valid_starts / 2 {
                            p.valid_starts - 1
                        } else {
                            0
                        };
                    }
                };
                let (_, neg) = window_tensors(p, neg_start, &expert.cfg)?;
                crop_list.push(crops);
                pos_list.push(pos);
                neg_list.push(neg);
            }
            let crops = concat_batches(&crop_list);
            let pos = concat_batches(&pos_list);
            let neg = concat_batches(&neg_list);

            let vc = expert.video.forward(&crops);
            let pc = expert.audio.forward(&pos);
            let nc = expert.audio.forward(&neg);

            let b = chunk.len() as f64;
            let mut g_v = Array2::zeros((chunk.len(), EMBED_DIM));
            let mut g_pos = Array2::zeros((chunk.len(), EMBED_DIM));
            let mut g_neg = Array2::zeros((chunk.len(), EMBED_DIM));
            let mut loss_sum = 0.0;
            for i in 0..chunk.len() {
                let v = vc.y.row(i).to_owned();
                let sp = pc.y.row(i).to_owned();
                let sn = nc.y.row(i).to_owned();
                let (lp, gvp, gsp) = sync_loss_with_grad(&v, &sp, &expert.eps)?;
                let (ln_, gvn, gsn) = negative_sync_loss_with_grad(&v, &sn, &expert.eps)?;
                loss_sum += lp + ln_;
                for j in 0..EMBED_DIM {
                    g_v[[i, j]] += (gvp[j] + gvn[j]) / b;
                    g_pos[[i, j]] += gsp[j] / b;
                    g_neg[[i, j]] += gsn[j] / b;
                }
            }
            history.push(loss_sum / b);

            expert.video.zero_grad();
            expert.audio.zero_grad();
            let _ = expert.video.backward_train(&vc, &g_v);
            let _ = expert.audio.backward_train(&pc, &g_pos);
            let _ = expert.audio.backward_train(&nc, &g_neg);
            let mut slots = expert.video.slots();
            slots.extend(expert.audio.slots());
            clip_global_norm(&mut slots, train.grad_clip);
            opt.step(slots);
        }
    }
    Ok((expert, history))
}

fn concat_batches(list: &[Array4<f64>]) -> Array4<f64> {
    let views: Vec<_> = list.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("uniform shapes")
}

/// Mean cosine of positive and negative pairs over a set of utterances,
/// using deterministic negatives (windows shifted by `expert_n`).
pub fn separation(
    expert: &SyncExpert,
    utterances: &[Utterance],
) -> Result<(f64, f64)> {
    let e = expert.cfg.expert_n;
    let mut pos_sum = 0.0;
    let mut neg_sum = 0.0;
    let mut count = 0usize;
    for utt in utterances {
        let p = match prepare(utt, &expert.cfg)? {
            Some(p) => p,
            None => continue,
        };
        if p.valid_starts <= e {
            continue;
        }
        for start in 0..p.valid_starts {
            let (crops, pos_mel) = window_tensors(&p, start, &expert.cfg)?;
            let neg_start = if start + e < p.valid_starts {
                start + e
            } else {
                start - e
            };
            let (_, neg_mel) = window_tensors(&p, neg_start, &expert.cfg)?;
            let v = expert.embed_video(&crops);
            let sp = expert.embed_audio(&pos_mel);
            let sn = expert.embed_audio(&neg_mel);
            pos_sum += v.row(0).dot(&sp.row(0));
            neg_sum += v.row(0).dot(&sn.row(0));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Input("no valid windows for separation eval".into()));
    }
    Ok((pos_sum / count as f64, neg_sum / count as f64))
}

/// Load only the utterances of one split from a corpus.
pub fn load_split(corpus: &crate::synth::Corpus, split: Split) -> Result<Vec<Utterance>> {
    corpus
        .records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| corpus.load_utterance(r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_unit_norm() {
        let expert = SyncExpert::new(SyncExpertConfig::default()).unwrap();
        let crops = Array4::from_elem((3, 5, 16, 32), 0.4);
        let emb = expert.embed_video(&crops);
        for row in emb.axis_iter(Axis(0)) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        let mels = Array4::from_elem((2, 1, 80, 16), -0.5);
        let emb = expert.embed_audio(&mels);
        for row in emb.axis_iter(Axis(0)) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        use crate::synth::{synth_utterance, Emotion, UtteranceConfig};
        let ucfg = UtteranceConfig {
            duration_s: 1.0,
            ..Default::default()
        };
        let utts: Vec<Utterance> = (0..3)
            .map(|i| synth_utterance(&ucfg, Emotion::Neutral, 100 + i).unwrap())
            .collect();
        let tcfg = SyncTrainConfig {
            epochs: 1,
            batch: 8,
            ..Default::default()
        };
        let (ea, ha) = train_sync_expert(&utts, SyncExpertConfig::default(), &tcfg).unwrap();
        let (eb, hb) = train_sync_expert(&utts, SyncExpertConfig::default(), &tcfg).unwrap();
        assert_eq!(ha, hb);
        let crops = Array4::from_elem((1, 5, 16, 32), 0.3);
        assert_eq!(ea.embed_video(&crops), eb.embed_video(&crops));
    }

    #[test]
    fn too_little_data_is_an_input_error() {
        use crate::synth::{synth_utterance, Emotion, UtteranceConfig};
        let ucfg = UtteranceConfig {
            duration_s: 0.5,
            ..Default::default()
        };
        let utts = vec![synth_utterance(&ucfg, Emotion::Neutral, 1).unwrap()];
        let tcfg = SyncTrainConfig {
            epochs: 1,
            batch: 64,
            ..Default::default()
        };
        assert!(matches!(
            train_sync_expert(&utts, SyncExpertConfig::default(), &tcfg),
            Err(Error::Input(_))
        ));
    }
}
