//! The adjacent-frame generator and its discriminator.
//!
//! One reference frame supplies identity features; each of the `n` output
//! frames gets its own audio patch and pose vector. The decoder runs once per
//! output frame on the concatenated feature block, so the architecture is the
//! same for any `n`.

use ndarray::{s, Array1, Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{frames_to_tensor, mel_window_to_patches, pose_to_input, tensor_to_frames};
use crate::error::{Error, Result};
use crate::media::{mel_cols_for_span, Frame, FrameSequence, MelConfig, MelSpectrogram};
use crate::nn::{
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, upsample2x, upsample2x_backward,
    Conv2d, ConvCache, Dense, ParamSlot,
};
use crate::synth::Pose;

const LRELU: f64 = 0.2;

/// Generator hyperparameters. `width` scales every channel count; the
/// decoder input is `7 * width` channels (4w identity + 2w audio + 1w pose).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThgConfig {
    pub resolution: usize,
    pub n: usize,
    pub fps: u32,
    pub width: usize,
    pub seed: u64,
    pub mel: MelConfig,
}

impl Default for ThgConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            n: 5,
            fps: 25,
            width: 16,
            seed: 0,
            mel: MelConfig::default(),
        }
    }
}

impl ThgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution % 8 != 0 || self.resolution < 8 {
            return Err(Error::Config(format!(
                "resolution must be a positive multiple of 8, got {}",
                self.resolution
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("window length n must be at least 1".into()));
        }
        if self.width < 2 || self.width % 2 != 0 {
            return Err(Error::Config("width must be an even number >= 2".into()));
        }
        self.mel.validate()
    }

    /// Columns of one per-frame audio patch.
    pub fn patch_cols(&self) -> usize {
        let spf = (self.mel.sample_rate / self.fps) as usize;
        spf.div_ceil(self.mel.hop)
    }

    pub fn audio_input_dim(&self) -> usize {
        self.mel.n_mels * self.patch_cols()
    }
}

/// Generator: image/audio/pose encoders plus a shared per-frame decoder.
pub struct ThgModel {
    pub cfg: ThgConfig,
    img1: Conv2d,
    img2: Conv2d,
    img3: Conv2d,
    aud1: Dense,
    aud2: Dense,
    pos1: Dense,
    pos2: Dense,
    dec0: Conv2d,
    dec1: Conv2d,
    dec2: Conv2d,
    dec3: Conv2d,
    dec4: Conv2d,
}

/// Everything backward needs from one training forward pass.
pub struct ThgCache {
    batch: usize,
    n: usize,
    // image encoder
    iz1: Array4<f64>,
    ik1: ConvCache,
    iz2: Array4<f64>,
    ik2: ConvCache,
    iz3: Array4<f64>,
    ik3: ConvCache,
    // audio encoder
    patches: Array2<f64>,
    az1: Array2<f64>,
    // pose encoder
    poses: Array2<f64>,
    pz1: Array2<f64>,
    // decoder
    dz0: Array4<f64>,
    dk0: ConvCache,
    dz1: Array4<f64>,
    dk1: ConvCache,
    dz2: Array4<f64>,
    dk2: ConvCache,
    dz3: Array4<f64>,
    dk3: ConvCache,
    dk4: ConvCache,
    pub out: Array4<f64>,
}

impl ThgModel {
    pub fn new(cfg: ThgConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            img1: Conv2d::new(&mut rng, 1, w, 3, 2, 1),
            img2: Conv2d::new(&mut rng, w, 2 * w, 3, 2, 1),
            img3: Conv2d::new(&mut rng, 2 * w, 4 * w, 3, 2, 1),
            aud1: Dense::new(&mut rng, cfg.audio_input_dim(), 4 * w),
            aud2: Dense::new(&mut rng, 4 * w, 2 * w),
            pos1: Dense::new(&mut rng, 3, w),
            pos2: Dense::new(&mut rng, w, w),
            dec0: Conv2d::new(&mut rng, 7 * w, 4 * w, 3, 1, 1),
            dec1: Conv2d::new(&mut rng, 4 * w, 2 * w, 3, 1, 1),
            dec2: Conv2d::new(&mut rng, 2 * w, w, 3, 1, 1),
            dec3: Conv2d::new(&mut rng, w, w / 2, 3, 1, 1),
            dec4: Conv2d::new(&mut rng, w / 2, 1, 3, 1, 1),
            cfg,
        })
    }

    /// Batched training forward. `refs` is `(B, 1, R, R)`; `patches` is
    /// `(B*n, audio_dim)`; `poses` is `(B*n, 3)`.
    pub fn forward_batch(
        &self,
        refs: &Array4<f64>,
        patches: &Array2<f64>,
        poses: &Array2<f64>,
        n: usize,
    ) -> Result<ThgCache> {
        let b = refs.shape()[0];
        let r = refs.shape()[2];
        if refs.shape()[3] != r || r % 8 != 0 {
            return Err(Error::Input("reference frames must be square, size 8k".into()));
        }
        if patches.shape() != [b * n, self.aud1.w.shape()[0]] {
            return Err(Error::Input(format!(
                "audio patches have shape {:?}, expected [{}, {}]",
                patches.shape(),
                b * n,
                self.aud1.w.shape()[0]
            )));
        }
        if poses.shape() != [b * n, 3] {
            return Err(Error::Input("pose batch must be (B*n, 3)".into()));
        }
        let w = self.cfg.width;
        let sdim = r / 8;

        // Identity features.
        let (iz1, ik1) = self.img1.forward(refs);
        let ia1 = leaky_relu(&iz1, LRELU);
        let (iz2, ik2) = self.img2.forward(&ia1);
        let ia2 = leaky_relu(&iz2, LRELU);
        let (iz3, ik3) = self.img3.forward(&ia2);
        let ia3 = leaky_relu(&iz3, LRELU);

        // Per-frame audio and pose features.
        let az1 = self.aud1.forward(patches);
        let aa1 = leaky_relu(&az1, LRELU);
        let a_feat = self.aud2.forward(&aa1);
        let pz1 = self.pos1.forward(poses);
        let pa1 = leaky_relu(&pz1, LRELU);
        let p_feat = self.pos2.forward(&pa1);

        // Assemble decoder input: identity map broadcast across the n frames,
        // audio and pose features tiled over space.
        let mut zin = Array4::zeros((b * n, 7 * w, sdim, sdim));
        for bi in 0..b {
            for k in 0..n {
                let row = bi * n + k;
                zin.slice_mut(s![row, 0..4 * w, .., ..])
                    .assign(&ia3.slice(s![bi, .., .., ..]));
                for c in 0..2 * w {
                    let v = a_feat[[row, c]];
                    zin.slice_mut(s![row, 4 * w + c, .., ..]).fill(v);
                }
                for c in 0..w {
                    let v = p_feat[[row, c]];
                    zin.slice_mut(s![row, 6 * w + c, .., ..]).fill(v);
                }
            }
        }

        // Decode.
        let (dz0, dk0) = self.dec0.forward(&zin);
        let da0 = leaky_relu(&dz0, LRELU);
        let du1 = upsample2x(&da0);
        let (dz1, dk1) = self.dec1.forward(&du1);
        let da1 = leaky_relu(&dz1, LRELU);
        let du2 = upsample2x(&da1);
        let (dz2, dk2) = self.dec2.forward(&du2);
        let da2 = leaky_relu(&dz2, LRELU);
        let du3 = upsample2x(&da2);
        let (dz3, dk3) = self.dec3.forward(&du3);
        let da3 = leaky_relu(&dz3, LRELU);
        let (logits, dk4) = self.dec4.forward(&da3);
        let out = sigmoid(&logits);

        Ok(ThgCache {
            batch: b,
            n,
            iz1,
            ik1,
            iz2,
            ik2,
            iz3,
            ik3,
            patches: patches.clone(),
            az1,
            poses: poses.clone(),
            pz1,
            dz0,
            dk0,
            dz1,
            dk1,
            dz2,
            dk2,
            dz3,
            dk3,
            dk4,
            out,
        })
    }

    /// Backpropagate a gradient on the output frames, accumulating parameter
    /// gradients in every submodule.
    pub fn backward(&mut self, cache: &ThgCache, gout: &Array4<f64>) {
        let w = self.cfg.width;
        let (b, n) = (cache.batch, cache.n);

        let glogits = sigmoid_backward(&cache.out, gout);
        let gda3 = self.dec4.backward(&cache.dk4, &glogits);
        let gdz3 = leaky_relu_backward(&cache.dz3, &gda3, LRELU);
        let gdu3 = self.dec3.backward(&cache.dk3, &gdz3);
        let gda2 = upsample2x_backward(&gdu3);
        let gdz2 = leaky_relu_backward(&cache.dz2, &gda2, LRELU);
        let gdu2 = self.dec2.backward(&cache.dk2, &gdz2);
        let gda1 = upsample2x_backward(&gdu2);
        let gdz1 = leaky_relu_backward(&cache.dz1, &gda1, LRELU);
        let gdu1 = self.dec1.backward(&cache.dk1, &gdz1);
        let gda0 = upsample2x_backward(&gdu1);
        let gdz0 = leaky_relu_backward(&cache.dz0, &gda0, LRELU);
        let gzin = self.dec0.backward(&cache.dk0, &gdz0);

        // Split the decoder-input gradient back onto the three encoders.
        let sdim = gzin.shape()[2];
        let mut g_ia3 = Array4::zeros((b, 4 * w, sdim, sdim));
        let mut g_afeat = Array2::zeros((b * n, 2 * w));
        let mut g_pfeat = Array2::zeros((b * n, w));
        for bi in 0..b {
            for k in 0..n {
                let row = bi * n + k;
                let gi = gzin.slice(s![row, 0..4 * w, .., ..]);
                let mut acc = g_ia3.slice_mut(s![bi, .., .., ..]);
                acc += &gi;
                for c in 0..2 * w {
                    g_afeat[[row, c]] = gzin.slice(s![row, 4 * w + c, .., ..]).sum();
                }
                for c in 0..w {
                    g_pfeat[[row, c]] = gzin.slice(s![row, 6 * w + c, .., ..]).sum();
                }
            }
        }

        // Image encoder.
        let g_iz3 = leaky_relu_backward(&cache.iz3, &g_ia3, LRELU);
        let g_ia2 = self.img3.backward(&cache.ik3, &g_iz3);
        let g_iz2 = leaky_relu_backward(&cache.iz2, &g_ia2, LRELU);
        let g_ia1 = self.img2.backward(&cache.ik2, &g_iz2);
        let g_iz1 = leaky_relu_backward(&cache.iz1, &g_ia1, LRELU);
        let _ = self.img1.backward(&cache.ik1, &g_iz1);

        // Audio encoder.
        let aa1 = leaky_relu(&cache.az1, LRELU);
        let g_aa1 = self.aud2.backward(&aa1, &g_afeat);
        let g_az1 = leaky_relu_backward(&cache.az1, &g_aa1, LRELU);
        let _ = self.aud1.backward(&cache.patches, &g_az1);

        // Pose encoder.
        let pa1 = leaky_relu(&cache.pz1, LRELU);
        let g_pa1 = self.pos2.backward(&pa1, &g_pfeat);
        let g_pz1 = leaky_relu_backward(&cache.pz1, &g_pa1, LRELU);
        let _ = self.pos1.backward(&cache.poses, &g_pz1);
    }

    pub fn zero_grad(&mut self) {
        for c in [
            &mut self.img1,
            &mut self.img2,
            &mut self.img3,
            &mut self.dec0,
            &mut self.dec1,
            &mut self.dec2,
            &mut self.dec3,
            &mut self.dec4,
        ] {
            c.zero_grad();
        }
        for d in [&mut self.aud1, &mut self.aud2, &mut self.pos1, &mut self.pos2] {
            d.zero_grad();
        }
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut v = Vec::new();
        v.extend(self.img1.slots());
        v.extend(self.img2.slots());
        v.extend(self.img3.slots());
        v.extend(self.aud1.slots());
        v.extend(self.aud2.slots());
        v.extend(self.pos1.slots());
        v.extend(self.pos2.slots());
        v.extend(self.dec0.slots());
        v.extend(self.dec1.slots());
        v.extend(self.dec2.slots());
        v.extend(self.dec3.slots());
        v.extend(self.dec4.slots());
        v
    }

    pub(crate) fn conv_fields(&self) -> Vec<(&'static str, &Conv2d)> {
        vec![
            ("img1", &self.img1),
            ("img2", &self.img2),
            ("img3", &self.img3),
            ("dec0", &self.dec0),
            ("dec1", &self.dec1),
            ("dec2", &self.dec2),
            ("dec3", &self.dec3),
            ("dec4", &self.dec4),
        ]
    }

    pub(crate) fn conv_fields_mut(&mut self) -> Vec<(&'static str, &mut Conv2d)> {
        vec![
            ("img1", &mut self.img1),
            ("img2", &mut self.img2),
            ("img3", &mut self.img3),
            ("dec0", &mut self.dec0),
            ("dec1", &mut self.dec1),
            ("dec2", &mut self.dec2),
            ("dec3", &mut self.dec3),
            ("dec4", &mut self.dec4),
        ]
    }

    pub(crate) fn dense_fields(&self) -> Vec<(&'static str, &Dense)> {
        vec![
            ("aud1", &self.aud1),
            ("aud2", &self.aud2),
            ("pos1", &self.pos1),
            ("pos2", &self.pos2),
        ]
    }

    pub(crate) fn dense_fields_mut(&mut self) -> Vec<(&'static str, &mut Dense)> {
        vec![
            ("aud1", &mut self.aud1),
            ("aud2", &mut self.aud2),
            ("pos1", &mut self.pos1),
            ("pos2", &mut self.pos2),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.conv_fields().iter().map(|(_, c)| c.param_count()).sum::<usize>()
            + self.dense_fields().iter().map(|(_, d)| d.param_count()).sum::<usize>()
    }

    /// Per-component parameter and multiply-accumulate counts for one
    /// `generate_n` call at the configured window length.
    pub fn component_complexity(&self) -> Vec<(String, usize, usize)> {
        let r = self.cfg.resolution;
        let n = self.cfg.n;
        let s = r / 8;
        let img_params =
            self.img1.param_count() + self.img2.param_count() + self.img3.param_count();
        let img_macs =
            self.img1.macs(r, r) + self.img2.macs(r / 2, r / 2) + self.img3.macs(r / 4, r / 4);
        let aud_params = self.aud1.param_count() + self.aud2.param_count();
        let aud_macs = n * (self.aud1.macs() + self.aud2.macs());
        let pos_params = self.pos1.param_count() + self.pos2.param_count();
        let pos_macs = n * (self.pos1.macs() + self.pos2.macs());
        let dec_params = self.dec0.param_count()
            + self.dec1.param_count()
            + self.dec2.param_count()
            + self.dec3.param_count()
            + self.dec4.param_count();
        let dec_macs = n
            * (self.dec0.macs(s, s)
                + self.dec1.macs(2 * s, 2 * s)
                + self.dec2.macs(4 * s, 4 * s)
                + self.dec3.macs(8 * s, 8 * s)
                + self.dec4.macs(8 * s, 8 * s));
        vec![
            ("image_encoder".to_string(), img_params, img_macs),
            ("audio_encoder".to_string(), aud_params, aud_macs),
            ("pose_encoder".to_string(), pos_params, pos_macs),
            ("decoder".to_string(), dec_params, dec_macs),
        ]
    }
}

/// Generate `n` frames following the reference frame from its mel window and
/// pose window. Pure and deterministic for a fixed model.
pub fn generate_n(
    model: &ThgModel,
    reference: &Frame,
    mel_win: &MelSpectrogram,
    pose_win: &[Pose],
    n: usize,
) -> Result<FrameSequence> {
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    if pose_win.len() != n {
        return Err(Error::Input(format!(
            "pose window has {} entries for n = {n}",
            pose_win.len()
        )));
    }
    if reference.height() != reference.width() || reference.height() % 8 != 0 {
        return Err(Error::Input(format!(
            "reference must be square with size a multiple of 8, got {}x{}",
            reference.height(),
            reference.width()
        )));
    }
    if mel_win.n_mels() != model.cfg.mel.n_mels {
        return Err(Error::Input(format!(
            "mel window has {} rows, model expects {}",
            mel_win.n_mels(),
            model.cfg.mel.n_mels
        )));
    }
    let expected_cols = mel_cols_for_span(&model.cfg.mel, n, model.cfg.fps)?;
    if mel_win.n_cols() != expected_cols {
        return Err(Error::Input(format!(
            "mel window has {} columns, expected {expected_cols} for n = {n}",
            mel_win.n_cols()
        )));
    }

    let refs = frames_to_tensor([reference])?;
    let patches = mel_window_to_patches(mel_win, n, model.cfg.patch_cols());
    let mut poses = Array2::zeros((n, 3));
    for (k, p) in pose_win.iter().enumerate() {
        let v = pose_to_input(p);
        for (j, value) in v.iter().enumerate() {
            poses[[k, j]] = *value;
        }
    }
    let cache = model.forward_batch(&refs, &patches, &poses, n)?;
    let frames = tensor_to_frames(&cache.out, 0);
    FrameSequence::from_frames(frames, model.cfg.fps)
}

/// Convolutional discriminator: frame to real-probability in the open
/// interval (0, 1).
pub struct Discriminator {
    pub resolution: usize,
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    d: Dense,
}

pub struct DiscCache {
    z1: Array4<f64>,
    k1: ConvCache,
    z2: Array4<f64>,
    k2: ConvCache,
    z3: Array4<f64>,
    k3: ConvCache,
    flat: Array2<f64>,
    pub probs: Array1<f64>,
}

impl Discriminator {
    pub fn new(resolution: usize, width: usize, seed: u64) -> Result<Self> {
        if resolution % 8 != 0 {
            return Err(Error::Config("resolution must be a multiple of 8".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = resolution / 8;
        Ok(Self {
            resolution,
            c1: Conv2d::new(&mut rng, 1, width, 3, 2, 1),
            c2: Conv2d::new(&mut rng, width, 2 * width, 3, 2, 1),
            c3: Conv2d::new(&mut rng, 2 * width, 4 * width, 3, 2, 1),
            d: Dense::new(&mut rng, 4 * width * s * s, 1),
        })
    }

    pub fn forward(&self, frames: &Array4<f64>) -> DiscCache {
        let (z1, k1) = self.c1.forward(frames);
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
        let logits = self.d.forward(&flat);
        let probs = sigmoid(&logits).remove_axis(Axis(1));
        DiscCache {
            z1,
            k1,
            z2,
            k2,
            z3,
            k3,
            flat,
            probs,
        }
    }

    fn grad_logits(cache: &DiscCache, g_probs: &Array1<f64>) -> Array2<f64> {
        let p = &cache.probs;
        let mut g = Array2::zeros((p.len(), 1));
        for i in 0..p.len() {
            g[[i, 0]] = g_probs[i] * p[i] * (1.0 - p[i]);
        }
        g
    }

    fn unflatten_like(&self, g: &Array2<f64>, z3: &Array4<f64>) -> Array4<f64> {
        // dot() may hand back a column-major array (single-column rhs), so
        // normalize the layout before reshaping.
        g.as_standard_layout()
            .to_owned()
            .into_shape_with_order(z3.raw_dim())
            .unwrap()
    }

    /// Training backward: accumulates parameter gradients.
    pub fn backward(&mut self, cache: &DiscCache, g_probs: &Array1<f64>) {
        let glog = Self::grad_logits(cache, g_probs);
        let gflat = self.d.backward(&cache.flat, &glog);
        let ga3 = self.unflatten_like(&gflat, &cache.z3);
        let gz3 = leaky_relu_backward(&cache.z3, &ga3, LRELU);
        let ga2 = self.c3.backward(&cache.k3, &gz3);
        let gz2 = leaky_relu_backward(&cache.z2, &ga2, LRELU);
        let ga1 = self.c2.backward(&cache.k2, &gz2);
        let gz1 = leaky_relu_backward(&cache.z1, &ga1, LRELU);
        let _ = self.c1.backward(&cache.k1, &gz1);
    }

    /// Frozen backward: gradient with respect to the input frames only.
    pub fn backward_data(&self, cache: &DiscCache, g_probs: &Array1<f64>) -> Array4<f64> {
        let glog = Self::grad_logits(cache, g_probs);
        let gflat = self.d.backward_data(&glog);
        let ga3 = self.unflatten_like(&gflat, &cache.z3);
        let gz3 = leaky_relu_backward(&cache.z3, &ga3, LRELU);
        let ga2 = self.c3.backward_data(&cache.k3, &gz3);
        let gz2 = leaky_relu_backward(&cache.z2, &ga2, LRELU);
        let ga1 = self.c2.backward_data(&cache.k2, &gz2);
        let gz1 = leaky_relu_backward(&cache.z1, &ga1, LRELU);
        self.c1.backward_data(&cache.k1, &gz1)
    }

    pub fn zero_grad(&mut self) {
        self.c1.zero_grad();
        self.c2.zero_grad();
        self.c3.zero_grad();
        self.d.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let mut v = Vec::new();
        v.extend(self.c1.slots());
        v.extend(self.c2.slots());
        v.extend(self.c3.slots());
        v.extend(self.d.slots());
        v
    }

    pub fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count() + self.c3.param_count() + self.d.param_count()
    }

    pub(crate) fn conv_fields_mut(&mut self) -> Vec<(&'static str, &mut Conv2d)> {
        vec![("c1", &mut self.c1), ("c2", &mut self.c2), ("c3", &mut self.c3)]
    }

    pub(crate) fn conv_fields(&self) -> Vec<(&'static str, &Conv2d)> {
        vec![("c1", &self.c1), ("c2", &self.c2), ("c3", &self.c3)]
    }

    pub(crate) fn dense_fields(&self) -> Vec<(&'static str, &Dense)> {
        vec![("d", &self.d)]
    }

    pub(crate) fn dense_fields_mut(&mut self) -> Vec<(&'static str, &mut Dense)> {
        vec![("d", &mut self.d)]
    }
}
