//! Adjacent-frame training: alternating discriminator/generator updates with
//! the four-term objective against aligned target frames.

use ndarray::{Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Discriminator, ThgModel};
use super::sync_expert::SyncExpert;
use super::tensor::{
    frames_to_tensor, mel_to_tensor, mel_window_to_patches, mouth_crop_groups,
    mouth_crop_groups_backward, pose_to_input,
};
use crate::align::{PairedDataset, PairedSample};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_with_grad, generator_adv_loss_with_grad, perceptual_loss_with_grad,
    pixel_loss_with_grad, sync_loss_with_grad, total_loss, LossBreakdown, LossWeights,
    PerceptualExtractor,
};
use crate::media::MelSpectrogram;
use crate::nn::{clip_global_norm, Adam};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThgTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for ThgTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch: 16,
            lr: 1e-4,
            grad_clip: 1.0,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

/// Per-step loss record plus the number of discriminator updates taken.
#[derive(Debug, Clone, Default)]
pub struct LossHistory {
    pub steps: Vec<LossBreakdown>,
    pub d_steps: usize,
}

impl LossHistory {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("step,sync,pixel,perceptual,adversarial,total\n");
        for (i, b) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                b.sync, b.pixel, b.perceptual, b.adversarial, b.total
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Tensors for one training batch.
struct Batch {
    refs: Array4<f64>,
    patches: Array2<f64>,
    poses: Array2<f64>,
    targets: Array4<f64>,
    mel_windows: Vec<MelSpectrogram>,
}

fn assemble(samples: &[&PairedSample], n: usize, patch_cols: usize) -> Result<Batch> {
    let refs = frames_to_tensor(samples.iter().map(|s| &s.input))?;
    let targets = frames_to_tensor(samples.iter().flat_map(|s| s.targets.iter()))?;
    let b = samples.len();
    let audio_dim = samples[0].mel_window.n_mels() * patch_cols;
    let mut patches = Array2::zeros((b * n, audio_dim));
    let mut poses = Array2::zeros((b * n, 3));
    for (bi, s) in samples.iter().enumerate() {
        if s.n != n || s.targets.len() != n || s.poses.len() != n {
            return Err(Error::Input("sample window length differs from dataset n".into()));
        }
        let p = mel_window_to_patches(&s.mel_window, n, patch_cols);
        for k in 0..n {
            for j in 0..audio_dim {
                patches[[bi * n + k, j]] = p[[k, j]];
            }
            let pv = pose_to_input(&s.poses[k]);
            for j in 0..3 {
                poses[[bi * n + k, j]] = pv[j];
            }
        }
    }
    Ok(Batch {
        refs,
        patches,
        poses,
        targets,
        mel_windows: samples.iter().map(|s| s.mel_window.clone()).collect(),
    })
}

/// Sync-loss windows of one batch: which (sample, chunk) pairs exist and the
/// corresponding mel column offsets inside each sample window.
fn sync_chunks(n: usize, expert_n: usize, spf: usize, hop: usize, mel_cols: usize, width: usize) -> Vec<(usize, usize)> {
    // (chunk start frame, relative mel column)
    let mut chunks = Vec::new();
    if n < expert_n {
        return chunks;
    }
    for c in 0..n / expert_n {
        let frame0 = c * expert_n;
        let col = frame0 * spf / hop;
        if col + width <= mel_cols {
            chunks.push((frame0, col));
        }
    }
    chunks
}

/// Train the generator (and discriminator) on a paired dataset with a frozen
/// sync expert and perceptual extractor. Single-threaded and deterministic
/// for a fixed seed.
pub fn train_adjacent(
    model: &mut ThgModel,
    discriminator: &mut Discriminator,
    dataset: &PairedDataset,
    expert: &SyncExpert,
    perceptual: &PerceptualExtractor,
    cfg: &ThgTrainConfig,
) -> Result<LossHistory> {
    cfg.weights.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Input("dataset has no samples".into()));
    }
    let n = dataset.n;
    let patch_cols = model.cfg.patch_cols();
    let spf = (model.cfg.mel.sample_rate / model.cfg.fps) as usize;
    let expert_width = expert.cfg.mel_window_cols()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_g = Adam::new(cfg.lr);
    let mut opt_d = Adam::new(cfg.lr);
    let mut history = LossHistory::default();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(cfg.batch) {
            let samples: Vec<&PairedSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let batch = assemble(&samples, n, patch_cols)?;
            let b = samples.len();

            // Generator forward (shared by the D step and the G step; the D
            // update does not change these activations).
            let cache = model.forward_batch(&batch.refs, &batch.patches, &batch.poses, n)?;
            let out = cache.out.clone();

            // Discriminator update on real targets vs generated frames.
            if cfg.weights.adv > 0.0 {
                let real_cache = discriminator.forward(&batch.targets);
                let fake_cache = discriminator.forward(&out);
                let (_, g_real, g_fake) =
                    discriminator_loss_with_grad(&real_cache.probs, &fake_cache.probs)?;
                discriminator.zero_grad();
                discriminator.backward(&real_cache, &g_real);
                discriminator.backward(&fake_cache, &g_fake);
                let mut slots = discriminator.slots();
                clip_global_norm(&mut slots, cfg.grad_clip);
                opt_d.step(slots);
                history.d_steps += 1;
            }

            // Generator losses and their gradients on the output frames.
            let (loss_px, g_px) = pixel_loss_with_grad(&out, &batch.targets)?;
            let (loss_pc, g_pc) = perceptual_loss_with_grad(&out, &batch.targets, perceptual)?;

            // Sync term over disjoint expert-length windows.
            let mel_cols = batch.mel_windows[0].n_cols();
            let chunks = sync_chunks(n, expert.cfg.expert_n, spf, model.cfg.mel.hop, mel_cols, expert_width);
            let (loss_sync, g_sync) = if chunks.is_empty() {
                (0.0, Array4::zeros(out.raw_dim()))
            } else {
                let e = expert.cfg.expert_n;
                let m = b * chunks.len();
                // Gather generated frames for every (sample, chunk) window.
                let mut rows = Vec::with_capacity(m * e);
                for bi in 0..b {
                    for (f0, _) in &chunks {
                        for k in 0..e {
                            rows.push(bi * n + f0 + k);
                        }
                    }
                }
                let mut gen_frames = Array4::zeros((m * e, 1, out.shape()[2], out.shape()[3]));
                for (ri, &row) in rows.iter().enumerate() {
                    gen_frames
                        .slice_mut(ndarray::s![ri, .., .., ..])
                        .assign(&out.slice(ndarray::s![row, .., .., ..]));
                }
                let crops = mouth_crop_groups(&gen_frames, e);
                let vcache = expert.embed_video_cached(&crops);

                // Audio embeddings from each sample's stored mel window.
                let mut mel_batch =
                    Array4::zeros((m, 1, batch.mel_windows[0].n_mels(), expert_width));
                let mut mi = 0;
                for bi in 0..b {
                    for (_, col) in &chunks {
                        let slice = batch.mel_windows[bi].slice_cols(*col, expert_width)?;
                        mel_batch
                            .slice_mut(ndarray::s![mi, .., .., ..])
                            .assign(&mel_to_tensor(&slice).index_axis(Axis(0), 0));
                        mi += 1;
                    }
                }
                let s_emb = expert.embed_audio(&mel_batch);

                let mut g_v = Array2::zeros((m, vcache.y.ncols()));
                let mut loss_sum = 0.0;
                for i in 0..m {
                    let v = vcache.y.row(i).to_owned();
                    let s = s_emb.row(i).to_owned();
                    let (l, gv, _gs) = sync_loss_with_grad(&v, &s, &expert.eps)?;
                    loss_sum += l;
                    for j in 0..gv.len() {
                        g_v[[i, j]] = gv[j] / m as f64;
                    }
                }
                let g_crops = expert.video_backward_data(&vcache, &g_v);
                let g_gen = mouth_crop_groups_backward(&g_crops, (m * e, 1, out.shape()[2], out.shape()[3]));
                // Scatter window gradients back onto the full frame batch.
                let mut g_full = Array4::zeros(out.raw_dim());
                for (ri, &row) in rows.iter().enumerate() {
                    let mut dst = g_full.slice_mut(ndarray::s![row, .., .., ..]);
                    dst += &g_gen.slice(ndarray::s![ri, .., .., ..]);
                }
                (loss_sum / m as f64, g_full)
            };

            // Adversarial term through the (frozen-for-this-step) critic.
            let (loss_adv, g_adv) = if cfg.weights.adv > 0.0 {
                let fake_cache = discriminator.forward(&out);
                let (l, g_probs) = generator_adv_loss_with_grad(&fake_cache.probs)?;
                (l, discriminator.backward_data(&fake_cache, &g_probs))
            } else {
                (0.0, Array4::zeros(out.raw_dim()))
            };

            let breakdown = total_loss(loss_sync, loss_px, loss_pc, loss_adv, &cfg.weights)
                .map_err(|e| {
                    Error::Diverged(format!("step {}: {e}", history.steps.len()))
                })?;

            let w = &cfg.weights;
            let mut g_total = g_px.mapv(|g| g * w.pixel);
            g_total += &g_pc.mapv(|g| g * w.lpips);
            g_total += &g_sync.mapv(|g| g * w.sync);
            g_total += &g_adv.mapv(|g| g * w.adv);

            model.zero_grad();
            model.backward(&cache, &g_total);
            let mut slots = model.slots();
            clip_global_norm(&mut slots, cfg.grad_clip);
            opt_g.step(slots);

            history.steps.push(breakdown);
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{build_pairs_from, DatasetConfig};
    use crate::fem::OracleFem;
    use crate::media::MelConfig;
    use crate::synth::{make_paired, synth_utterance, Emotion, UtteranceConfig, Warp};
    use crate::thg::model::ThgConfig;
    use crate::thg::sync_expert::SyncExpertConfig;

    fn tiny_setup() -> (ThgModel, Discriminator, PairedDataset, SyncExpert, PerceptualExtractor) {
        let ucfg = UtteranceConfig {
            duration_s: 1.0,
            resolution: 16,
            ..Default::default()
        };
        let mel = MelConfig::default();
        let pairs: Vec<_> = (0..2)
            .map(|i| {
                let src = synth_utterance(&ucfg, Emotion::Neutral, 200 + i).unwrap();
                make_paired(&src, Emotion::Happy, &Warp::identity(1.0), 300 + i, &ucfg).unwrap()
            })
            .collect();
        let dcfg = DatasetConfig {
            n: 2,
            ..Default::default()
        };
        let dataset = build_pairs_from(&pairs, &OracleFem, &dcfg).unwrap();
        let model = ThgModel::new(ThgConfig {
            resolution: 16,
            n: 2,
            width: 4,
            mel: mel.clone(),
            ..Default::default()
        })
        .unwrap();
        let disc = Discriminator::new(16, 4, 9).unwrap();
        let expert = SyncExpert::new(SyncExpertConfig {
            expert_n: 2,
            resolution: 16,
            width: 4,
            mel,
            ..Default::default()
        })
        .unwrap();
        let ext = PerceptualExtractor::new(7);
        (model, disc, dataset, expert, ext)
    }

    #[test]
    fn history_length_matches_steps_and_losses_are_finite() {
        let (mut model, mut disc, dataset, expert, ext) = tiny_setup();
        let cfg = ThgTrainConfig {
            epochs: 1,
            batch: 8,
            ..Default::default()
        };
        let expected_steps = dataset.samples.len().div_ceil(8);
        let h = train_adjacent(&mut model, &mut disc, &dataset, &expert, &ext, &cfg).unwrap();
        assert_eq!(h.steps.len(), expected_steps);
        assert!(h.steps.iter().all(|b| b.total.is_finite()));
    }

    #[test]
    fn zero_adversarial_weight_never_updates_the_discriminator() {
        let (mut model, mut disc, dataset, expert, ext) = tiny_setup();
        let cfg = ThgTrainConfig {
            epochs: 1,
            batch: 8,
            weights: LossWeights {
                adv: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let h = train_adjacent(&mut model, &mut disc, &dataset, &expert, &ext, &cfg).unwrap();
        assert_eq!(h.d_steps, 0);
    }

    #[test]
    fn fixed_seed_reproduces_the_loss_history() {
        let cfg = ThgTrainConfig {
            epochs: 1,
            batch: 8,
            seed: 5,
            ..Default::default()
        };
        let run = || {
            let (mut model, mut disc, dataset, expert, ext) = tiny_setup();
            train_adjacent(&mut model, &mut disc, &dataset, &expert, &ext, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.steps.len(), b.steps.len());
        for (x, y) in a.steps.iter().zip(b.steps.iter()) {
            assert_eq!(x.total, y.total);
        }
    }

    #[test]
    fn pixel_loss_falls_when_overfitting_a_tiny_set() {
        let (mut model, mut disc, dataset, expert, ext) = tiny_setup();
        let cfg = ThgTrainConfig {
            epochs: 25,
            batch: 16,
            lr: 3e-4,
            ..Default::default()
        };
        let h = train_adjacent(&mut model, &mut disc, &dataset, &expert, &ext, &cfg).unwrap();
        assert!(h.steps.len() >= 20);
        let first: f64 = h.steps[..5].iter().map(|b| b.pixel).sum::<f64>() / 5.0;
        let last: f64 = h.steps[h.steps.len() - 5..]
            .iter()
            .map(|b| b.pixel)
            .sum::<f64>()
            / 5.0;
        assert!(
            last < first,
            "pixel loss did not decrease: first {first:.4} last {last:.4}"
        );
    }

    #[test]
    fn loss_history_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let mut h = LossHistory::default();
        h.steps.push(LossBreakdown {
            sync: 1.0,
            pixel: 2.0,
            perceptual: 3.0,
            adversarial: 4.0,
            total: 10.0,
        });
        h.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,sync,pixel,perceptual,adversarial,total\n"));
        assert!(text.contains("0,1,2,3,4,10"));
    }
}
