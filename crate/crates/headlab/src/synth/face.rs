//! Deterministic parametric face renderer.
//!
//! Every face is an ellipse head with eyes, brows, a nose and a mouth whose
//! geometry is a fixed function of [`FaceParams`]. The same constants drive
//! both rendering and the pixel-based expression estimator, so the mapping
//! from parameters to pixels is invertible enough for oracle checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::Frame;

/// Head translation (pixels) and in-plane rotation (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub dx: f32,
    pub dy: f32,
    pub rot: f32,
}

impl Pose {
    pub fn new(dx: f32, dy: f32, rot: f32) -> Self {
        Self { dx, dy, rot }
    }

    pub fn as_vec(&self) -> [f32; 3] {
        [self.dx, self.dy, self.rot]
    }
}

/// Ground-truth description of one rendered face.
///
/// * `identity`: head aspect, eye spacing, skin tone, nose length in `[0,1]`.
/// * `expression`: brow raise, mouth-corner curvature, eye openness in `[-1,1]`.
/// * `mouth_open`: vertical mouth extent in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub identity: [f32; 4],
    pub expression: [f32; 3],
    pub mouth_open: f32,
    pub pose: Pose,
}

impl FaceParams {
    pub fn neutral() -> Self {
        Self {
            identity: [0.5; 4],
            expression: [0.0; 3],
            mouth_open: 0.0,
            pose: Pose::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.identity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("identity components must lie in [0,1]".into()));
        }
        if self.expression.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Input("expression components must lie in [-1,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.mouth_open) {
            return Err(Error::Input("mouth_open must lie in [0,1]".into()));
        }
        Ok(())
    }
}

// Geometry constants, all relative to the frame resolution. The estimator in
// `estimate.rs` inverts these, so renderer and estimator must stay in sync.
pub(crate) const BG: f32 = 0.08;
pub(crate) const INK: f32 = 0.12;
pub(crate) const HEAD_A_BASE: f32 = 0.30;
pub(crate) const HEAD_A_SPAN: f32 = 0.08;
pub(crate) const HEAD_B: f32 = 0.40;
pub(crate) const SKIN_BASE: f32 = 0.55;
pub(crate) const SKIN_SPAN: f32 = 0.35;
pub(crate) const EYE_V: f32 = -0.08;
pub(crate) const EYE_SPACING_BASE: f32 = 0.11;
pub(crate) const EYE_SPACING_SPAN: f32 = 0.05;
pub(crate) const EYE_HALF_W: f32 = 0.050;
pub(crate) const EYE_HALF_H_BASE: f32 = 0.024;
pub(crate) const EYE_HALF_H_GAIN: f32 = 0.6;
pub(crate) const BROW_OFFSET: f32 = 0.135;
pub(crate) const BROW_RAISE_SCALE: f32 = 0.05;
pub(crate) const BROW_HALF_W: f32 = 0.055;
pub(crate) const BROW_HALF_H: f32 = 0.011;
pub(crate) const NOSE_HALF_W: f32 = 0.008;
pub(crate) const NOSE_LEN_BASE: f32 = 0.03;
pub(crate) const NOSE_LEN_SPAN: f32 = 0.06;
pub(crate) const MOUTH_V: f32 = 0.21;
pub(crate) const MOUTH_HALF_W: f32 = 0.16;
pub(crate) const MOUTH_MIN_H: f32 = 0.015;
pub(crate) const MOUTH_OPEN_H: f32 = 0.075;
pub(crate) const MOUTH_CURVE: f32 = 0.055;
/// Soft edge width in pixels.
const EDGE: f32 = 1.6;

fn coverage(signed_px: f32) -> f32 {
    (0.5 + signed_px / EDGE).clamp(0.0, 1.0)
}

fn blend(dst: f32, src: f32, cov: f32) -> f32 {
    dst + (src - dst) * cov
}

/// Ellipse coverage at offset (du, dv) for semi-axes (a, b), soft-edged.
fn ellipse_cov(du: f32, dv: f32, a: f32, b: f32) -> f32 {
    let s = ((du / a).powi(2) + (dv / b).powi(2)).sqrt();
    coverage((1.0 - s) * a.min(b))
}

/// Axis-aligned soft rectangle coverage.
fn rect_cov(du: f32, dv: f32, half_w: f32, half_h: f32) -> f32 {
    let cx = coverage(half_w - du.abs());
    let cy = coverage(half_h - dv.abs());
    cx * cy
}

/// Mouth center line offset at horizontal position `u` (corner curvature).
fn mouth_center_line(u: f32, half_w: f32, curve_px: f32) -> f32 {
    curve_px * (0.5 - (u / half_w).powi(2))
}

/// Render one face. Pure: identical parameters give bit-identical pixels.
pub fn render_face(params: &FaceParams, resolution: usize) -> Result<Frame> {
    params.validate()?;
    let r = resolution as f32;
    let cx = r / 2.0 + params.pose.dx;
    let cy = r / 2.0 + params.pose.dy;
    let (sin_t, cos_t) = params.pose.rot.sin_cos();

    let head_a = r * (HEAD_A_BASE + HEAD_A_SPAN * params.identity[0]);
    let head_b = r * HEAD_B;
    let skin = SKIN_BASE + SKIN_SPAN * params.identity[2];
    let eye_sp = r * (EYE_SPACING_BASE + EYE_SPACING_SPAN * params.identity[1]);
    let eye_half_h = r * EYE_HALF_H_BASE * (1.0 + EYE_HALF_H_GAIN * params.expression[2]);
    let brow_v = r * (EYE_V - BROW_OFFSET) - r * BROW_RAISE_SCALE * params.expression[0];
    let nose_len = r * (NOSE_LEN_BASE + NOSE_LEN_SPAN * params.identity[3]);
    let mouth_half_h = r * (MOUTH_MIN_H + MOUTH_OPEN_H * params.mouth_open);
    let curve_px = r * MOUTH_CURVE * params.expression[1];
    let mouth_half_w = r * MOUTH_HALF_W;

    let mut pixels = vec![BG; resolution * resolution];
    for y in 0..resolution {
        for x in 0..resolution {
            // Inverse pose transform into canonical face coordinates.
            let px = x as f32 + 0.5 - cx;
            let py = y as f32 + 0.5 - cy;
            let u = cos_t * px + sin_t * py;
            let v = -sin_t * px + cos_t * py;

            let mut val = BG;
            val = blend(val, skin, ellipse_cov(u, v, head_a, head_b));

            // Nose: vertical bar below the eye line.
            let nose_mid = r * NOSE_LEN_BASE / 2.0 + nose_len / 2.0;
            let cov = rect_cov(u, v - nose_mid, r * NOSE_HALF_W, nose_len / 2.0);
            val = blend(val, skin - 0.18, cov);

            // Eyes.
            for side in [-1.0f32, 1.0] {
                let cov = ellipse_cov(u - side * eye_sp, v - r * EYE_V, r * EYE_HALF_W, eye_half_h);
                val = blend(val, INK, cov);
            }

            // Brows: thin bars whose height tracks expression[0].
            for side in [-1.0f32, 1.0] {
                let cov = rect_cov(u - side * eye_sp, v - brow_v, r * BROW_HALF_W, r * BROW_HALF_H);
                val = blend(val, INK, cov);
            }

            // Mouth: lens around a curved center line.
            if u.abs() < mouth_half_w {
                let yc = r * MOUTH_V + mouth_center_line(u, mouth_half_w, curve_px);
                let h = mouth_half_h * (1.0 - (u / mouth_half_w).powi(2)).max(0.0).sqrt();
                let cov = coverage(h - (v - yc).abs()) * coverage(mouth_half_w - u.abs());
                val = blend(val, INK, cov);
            }

            pixels[y * resolution + x] = val.clamp(0.0, 1.0);
        }
    }
    Frame::new(pixels, resolution, resolution, 1, 0)
}

/// Bounding box `(x0, y0, x1, y1)` (exclusive upper bounds) containing every
/// pixel the mouth can touch for this pose over all `mouth_open` and
/// curvature values. Exact for zero rotation; padded for small rotations.
pub fn mouth_bbox(params: &FaceParams, resolution: usize) -> (usize, usize, usize, usize) {
    let r = resolution as f32;
    let cx = r / 2.0 + params.pose.dx;
    let cy = r / 2.0 + params.pose.dy;
    let half_w = r * MOUTH_HALF_W + EDGE;
    let max_h = r * (MOUTH_MIN_H + MOUTH_OPEN_H) + r * MOUTH_CURVE * 0.5 + EDGE;
    let rot_pad = r * params.pose.rot.abs().min(0.5) * (MOUTH_HALF_W + MOUTH_V);
    let x0 = (cx - half_w - rot_pad).floor().max(0.0) as usize;
    let x1 = ((cx + half_w + rot_pad).ceil() as usize).min(resolution);
    let y0 = ((cy + r * MOUTH_V - max_h - rot_pad).floor().max(0.0)) as usize;
    let y1 = (((cy + r * MOUTH_V + max_h + rot_pad).ceil()) as usize).min(resolution);
    (x0, y0, x1, y1)
}

/// Lower-half crop used as the "mouth region" by the sync expert and the
/// lip-sync metric. Returns `(row_start, rows, col_start, cols)`.
pub fn mouth_crop_rect(height: usize, width: usize) -> (usize, usize, usize, usize) {
    (height / 2, height - height / 2, 0, width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let mut p = FaceParams::neutral();
        p.expression = [0.3, -0.5, 0.2];
        p.mouth_open = 0.6;
        p.pose = Pose::new(1.3, -0.8, 0.03);
        let a = render_face(&p, 32).unwrap();
        let b = render_face(&p, 32).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn mouth_open_only_touches_the_mouth_bbox() {
        let mut closed = FaceParams::neutral();
        closed.mouth_open = 0.0;
        let mut open = closed;
        open.mouth_open = 1.0;
        let a = render_face(&closed, 32).unwrap();
        let b = render_face(&open, 32).unwrap();
        let (x0, y0, x1, y1) = mouth_bbox(&closed, 32);
        let mut differing = 0;
        for y in 0..32 {
            for x in 0..32 {
                if a.get(y, x, 0) != b.get(y, x, 0) {
                    differing += 1;
                    assert!(
                        x >= x0 && x < x1 && y >= y0 && y < y1,
                        "pixel ({x},{y}) outside mouth bbox ({x0},{y0})..({x1},{y1}) changed"
                    );
                }
            }
        }
        assert!(differing > 0, "opening the mouth must change pixels");
    }

    #[test]
    fn integer_translation_shifts_pixels_exactly() {
        let base = FaceParams::neutral();
        let mut moved = base;
        moved.pose = Pose::new(2.0, 0.0, 0.0);
        let a = render_face(&base, 32).unwrap();
        let b = render_face(&moved, 32).unwrap();
        for y in 0..32 {
            for x in 2..32 {
                assert_eq!(
                    b.get(y, x, 0),
                    a.get(y, x - 2, 0),
                    "pixel ({x},{y}) is not the source pixel shifted right"
                );
            }
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = FaceParams::neutral();
        p.mouth_open = 1.5;
        assert!(render_face(&p, 32).is_err());
        p = FaceParams::neutral();
        p.expression[0] = -2.0;
        assert!(p.validate().is_err());
    }
}
