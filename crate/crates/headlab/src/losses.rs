//! The four training loss terms and their weighted combination, each with an
//! analytic gradient that survives a finite-difference check.

use ndarray::{Array1, Array4};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{tanh, tanh_backward, Conv2d};

/// Balance coefficients for the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sync: f64,
    pub pixel: f64,
    pub lpips: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sync: 0.5,
            pixel: 10.0,
            lpips: 1.0,
            adv: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.sync, self.pixel, self.lpips, self.adv]
            .iter()
            .any(|w| *w < 0.0 || !w.is_finite())
        {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Numerical guards for the cosine in the sync loss: `norm_floor` floors the
/// denominator, `ratio_floor` floors the ratio so the log stays finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncEpsilon {
    pub norm_floor: f64,
    pub ratio_floor: f64,
}

impl Default for SyncEpsilon {
    fn default() -> Self {
        Self {
            norm_floor: 1e-8,
            ratio_floor: 1e-6,
        }
    }
}

/// All four loss terms plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sync: f64,
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub total: f64,
}

/// Clamped cosine similarity and its gradients with respect to both vectors.
/// Outside the clamp interval the gradient is zero.
fn cosine_with_grad(
    v: &Array1<f64>,
    s: &Array1<f64>,
    eps: &SyncEpsilon,
) -> (f64, Array1<f64>, Array1<f64>, bool) {
    let dot: f64 = v.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ns: f64 = s.iter().map(|a| a * a).sum::<f64>().sqrt();
    let raw_denom = nv * ns;
    let denom = raw_denom.max(eps.norm_floor);
    let cos = dot / denom;
    let clamped = cos.clamp(eps.ratio_floor, 1.0);
    let active = cos > eps.ratio_floor && cos < 1.0;
    let (gv, gs) = if raw_denom > eps.norm_floor {
        // d cos / dv = s/(|v||s|) - cos * v/|v|^2
        let gv = s.mapv(|x| x / denom) - v.mapv(|x| cos * x / (nv * nv));
        let gs = v.mapv(|x| x / denom) - s.mapv(|x| cos * x / (ns * ns));
        (gv, gs)
    } else {
        // Denominator pinned at the floor: cos = dot / norm_floor.
        (s.mapv(|x| x / denom), v.mapv(|x| x / denom))
    };
    (clamped, gv, gs, active)
}

/// `-log` of the clamped cosine between a video embedding and a speech
/// embedding: zero when they agree perfectly, large when orthogonal.
pub fn sync_loss(v: &Array1<f64>, s: &Array1<f64>, eps: &SyncEpsilon) -> Result<f64> {
    Ok(sync_loss_with_grad(v, s, eps)?.0)
}

pub fn sync_loss_with_grad(
    v: &Array1<f64>,
    s: &Array1<f64>,
    eps: &SyncEpsilon,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    if v.len() != s.len() {
        return Err(Error::Input(format!(
            "embedding dimensions differ: {} vs {}",
            v.len(),
            s.len()
        )));
    }
    let (clamped, gv, gs, active) = cosine_with_grad(v, s, eps);
    let loss = -clamped.ln();
    let scale = if active { -1.0 / clamped } else { 0.0 };
    Ok((loss, gv.mapv(|g| g * scale), gs.mapv(|g| g * scale)))
}

/// Complement of the sync loss for negative pairs: `-log(1 - cos+)`.
pub fn negative_sync_loss_with_grad(
    v: &Array1<f64>,
    s: &Array1<f64>,
    eps: &SyncEpsilon,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    if v.len() != s.len() {
        return Err(Error::Input("embedding dimensions differ".into()));
    }
    let (clamped_hi, gv, gs, _) = cosine_with_grad(v, s, eps);
    // Clamp so 1 - cos stays positive.
    let c = clamped_hi.min(1.0 - eps.ratio_floor);
    let loss = -(1.0 - c).ln();
    let active = clamped_hi > eps.ratio_floor && clamped_hi < 1.0 - eps.ratio_floor;
    let scale = if active { 1.0 / (1.0 - c) } else { 0.0 };
    Ok((loss, gv.mapv(|g| g * scale), gs.mapv(|g| g * scale)))
}

/// Mean absolute difference over all pixels and frames.
pub fn pixel_loss(output: &Array4<f64>, target: &Array4<f64>) -> Result<f64> {
    Ok(pixel_loss_with_grad(output, target)?.0)
}

pub fn pixel_loss_with_grad(
    output: &Array4<f64>,
    target: &Array4<f64>,
) -> Result<(f64, Array4<f64>)> {
    if output.shape() != target.shape() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            output.shape(),
            target.shape()
        )));
    }
    let count = output.len() as f64;
    let mut grad = Array4::zeros(output.raw_dim());
    let mut sum = 0.0;
    ndarray::Zip::from(&mut grad)
        .and(output)
        .and(target)
        .for_each(|g, &o, &t| {
            let d = o - t;
            sum += d.abs();
            *g = if d > 0.0 {
                1.0 / count
            } else if d < 0.0 {
                -1.0 / count
            } else {
                0.0
            };
        });
    Ok((sum / count, grad))
}

/// Frozen, seeded three-stage convolutional feature extractor standing in for
/// a pretrained perceptual network. The stages use tanh so the distance is
/// smooth everywhere.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    pub stage_weights: [f64; 3],
}

impl PerceptualExtractor {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            c1: Conv2d::new(&mut rng, 1, 8, 3, 2, 1),
            c2: Conv2d::new(&mut rng, 8, 16, 3, 2, 1),
            c3: Conv2d::new(&mut rng, 16, 32, 3, 2, 1),
            stage_weights: [1.0, 1.0, 1.0],
        }
    }

    /// Stage activations for a batch of frames.
    fn stages(&self, x: &Array4<f64>) -> [Array4<f64>; 3] {
        let (y1, _) = self.c1.forward(x);
        let s1 = tanh(&y1);
        let (y2, _) = self.c2.forward(&s1);
        let s2 = tanh(&y2);
        let (y3, _) = self.c3.forward(&s2);
        let s3 = tanh(&y3);
        [s1, s2, s3]
    }

    pub fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count() + self.c3.param_count()
    }
}

/// Stage-weighted mean absolute distance between extractor features.
pub fn perceptual_loss(
    output: &Array4<f64>,
    target: &Array4<f64>,
    ext: &PerceptualExtractor,
) -> Result<f64> {
    Ok(perceptual_loss_with_grad(output, target, ext)?.0)
}

pub fn perceptual_loss_with_grad(
    output: &Array4<f64>,
    target: &Array4<f64>,
    ext: &PerceptualExtractor,
) -> Result<(f64, Array4<f64>)> {
    if output.shape() != target.shape() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            output.shape(),
            target.shape()
        )));
    }
    // Forward the output with caches kept for backward.
    let (y1, k1) = ext.c1.forward(output);
    let s1 = tanh(&y1);
    let (y2, k2) = ext.c2.forward(&s1);
    let s2 = tanh(&y2);
    let (y3, k3) = ext.c3.forward(&s2);
    let s3 = tanh(&y3);
    let target_stages = ext.stages(target);

    let mut loss = 0.0;
    let mut stage_grads: Vec<Array4<f64>> = Vec::with_capacity(3);
    for (w, (out_s, tgt_s)) in ext
        .stage_weights
        .iter()
        .zip([&s1, &s2, &s3].into_iter().zip(target_stages.iter()))
    {
        let count = out_s.len() as f64;
        let mut g = Array4::zeros(out_s.raw_dim());
        let mut sum = 0.0;
        ndarray::Zip::from(&mut g).and(out_s).and(tgt_s).for_each(|g, &o, &t| {
            let d = o - t;
            sum += d.abs();
            *g = w * d.signum() / count;
        });
        loss += w * sum / count;
        stage_grads.push(g);
    }

    // Backward through the frozen stack, adding each stage's contribution.
    let g3 = tanh_backward(&s3, &stage_grads[2]);
    let mut g = ext.c3.backward_data(&k3, &g3);
    g += &stage_grads[1];
    let g2 = tanh_backward(&s2, &g);
    let mut g = ext.c2.backward_data(&k2, &g2);
    g += &stage_grads[0];
    let g1 = tanh_backward(&s1, &g);
    let gx = ext.c1.backward_data(&k1, &g1);
    Ok((loss, gx))
}

const PROB_CLAMP: f64 = 1e-7;

/// Discriminator and generator objectives on clamped probabilities:
/// `d = -mean log D(real) - mean log(1 - D(fake))`, and the non-saturating
/// generator form `g = -mean log D(fake)`.
pub fn adversarial_losses(
    d_real: &Array1<f64>,
    d_fake: &Array1<f64>,
) -> Result<(f64, f64)> {
    let (d, _, _) = discriminator_loss_with_grad(d_real, d_fake)?;
    let (g, _) = generator_adv_loss_with_grad(d_fake)?;
    Ok((d, g))
}

pub fn discriminator_loss_with_grad(
    d_real: &Array1<f64>,
    d_fake: &Array1<f64>,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Input("probability batches must be non-empty".into()));
    }
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    let mut loss = 0.0;
    let mut g_real = Array1::zeros(d_real.len());
    for (g, &p) in g_real.iter_mut().zip(d_real.iter()) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= pc.ln() / nr;
        *g = if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
            -1.0 / (pc * nr)
        } else {
            0.0
        };
    }
    let mut g_fake = Array1::zeros(d_fake.len());
    for (g, &p) in g_fake.iter_mut().zip(d_fake.iter()) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= (1.0 - pc).ln() / nf;
        *g = if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
            1.0 / ((1.0 - pc) * nf)
        } else {
            0.0
        };
    }
    Ok((loss, g_real, g_fake))
}

pub fn generator_adv_loss_with_grad(d_fake: &Array1<f64>) -> Result<(f64, Array1<f64>)> {
    if d_fake.is_empty() {
        return Err(Error::Input("probability batch must be non-empty".into()));
    }
    let nf = d_fake.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(d_fake.len());
    for (g, &p) in grad.iter_mut().zip(d_fake.iter()) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= pc.ln() / nf;
        *g = if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
            -1.0 / (pc * nf)
        } else {
            0.0
        };
    }
    Ok((loss, grad))
}

/// Weighted sum of the four terms; rejects non-finite inputs.
pub fn total_loss(
    sync: f64,
    pixel: f64,
    perceptual: f64,
    adversarial: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    for (name, v) in [
        ("sync", sync),
        ("pixel", pixel),
        ("perceptual", perceptual),
        ("adversarial", adversarial),
    ] {
        if !v.is_finite() {
            return Err(Error::Diverged(format!("{name} loss is {v}")));
        }
    }
    let total = weights.sync * sync
        + weights.pixel * pixel
        + weights.lpips * perceptual
        + weights.adv * adversarial;
    Ok(LossBreakdown {
        sync,
        pixel,
        perceptual,
        adversarial,
        total,
    })
}
