//! Expression-editing stage: extract an expression code from a reference
//! frame and re-render the source with it.
//!
//! Two implementations exist. [`OracleFem`] preserves the mouth exactly.
//! [`LossyFem`] perturbs mouth openness in proportion to the expression
//! intensity, reproducing the mouth distortion that the downstream generator
//! is supposed to repair.

use crate::error::{Error, Result};
use crate::media::Frame;
use crate::synth::{render_face, FaceParams};

/// A 3-component expression code in `[-1, 1]` per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpressionCode(pub [f32; 3]);

/// A frame optionally carrying the ground-truth parameters behind it.
#[derive(Debug, Clone)]
pub struct AnnotatedFrame {
    pub frame: Frame,
    pub params: Option<FaceParams>,
}

impl AnnotatedFrame {
    pub fn new(frame: Frame, params: FaceParams) -> Self {
        Self {
            frame,
            params: Some(params),
        }
    }

    pub fn params(&self) -> Result<&FaceParams> {
        self.params.as_ref().ok_or_else(|| {
            Error::Capability("frame carries no ground-truth face parameters".into())
        })
    }
}

/// The expression-manipulation interface: an expression extractor plus a
/// renderer, with `edit` as their composition.
pub trait FemStage {
    fn extract_expression(
        &self,
        source: &AnnotatedFrame,
        reference: &AnnotatedFrame,
    ) -> Result<ExpressionCode>;

    fn render_edited(&self, source: &AnnotatedFrame, code: &ExpressionCode)
        -> Result<AnnotatedFrame>;

    /// `edit(source, reference) = render_edited(source, extract_expression(source, reference))`.
    fn edit(&self, source: &AnnotatedFrame, reference: &AnnotatedFrame) -> Result<AnnotatedFrame> {
        let code = self.extract_expression(source, reference)?;
        self.render_edited(source, &code)
    }
}

/// Coupling between expression intensity and mouth distortion: the magnitude
/// of the mouth-corner curvature component.
pub fn mouth_distortion_gain(code: &ExpressionCode) -> f32 {
    code.0[1].abs()
}

/// Reads the reference expression from ground truth and re-renders the source
/// with it, leaving mouth openness and pose untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleFem;

impl FemStage for OracleFem {
    fn extract_expression(
        &self,
        _source: &AnnotatedFrame,
        reference: &AnnotatedFrame,
    ) -> Result<ExpressionCode> {
        Ok(ExpressionCode(reference.params()?.expression))
    }

    fn render_edited(
        &self,
        source: &AnnotatedFrame,
        code: &ExpressionCode,
    ) -> Result<AnnotatedFrame> {
        let src = source.params()?;
        let params = FaceParams {
            identity: src.identity,
            expression: code.0,
            mouth_open: src.mouth_open,
            pose: src.pose,
        };
        let resolution = source.frame.height();
        let frame = render_face(&params, resolution)?.with_index(source.frame.index);
        Ok(AnnotatedFrame::new(frame, params))
    }
}

/// Like [`OracleFem`] but shifts mouth openness by `beta * |code[1]|`,
/// clamped to `[0, 1]`: expression editing that damages the mouth.
#[derive(Debug, Clone, Copy)]
pub struct LossyFem {
    pub beta: f32,
}

impl LossyFem {
    pub fn new(beta: f32) -> Self {
        Self { beta }
    }
}

impl FemStage for LossyFem {
    fn extract_expression(
        &self,
        source: &AnnotatedFrame,
        reference: &AnnotatedFrame,
    ) -> Result<ExpressionCode> {
        OracleFem.extract_expression(source, reference)
    }

    fn render_edited(
        &self,
        source: &AnnotatedFrame,
        code: &ExpressionCode,
    ) -> Result<AnnotatedFrame> {
        let src = source.params()?;
        let mouth_open =
            (src.mouth_open + self.beta * mouth_distortion_gain(code)).clamp(0.0, 1.0);
        let params = FaceParams {
            identity: src.identity,
            expression: code.0,
            mouth_open,
            pose: src.pose,
        };
        let resolution = source.frame.height();
        let frame = render_face(&params, resolution)?.with_index(source.frame.index);
        Ok(AnnotatedFrame::new(frame, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{mouth_bbox, Emotion, Pose};

    fn annotated(params: FaceParams) -> AnnotatedFrame {
        AnnotatedFrame::new(render_face(&params, 32).unwrap(), params)
    }

    fn source() -> AnnotatedFrame {
        let mut p = FaceParams::neutral();
        p.mouth_open = 0.4;
        p.pose = Pose::new(0.5, -0.3, 0.01);
        annotated(p)
    }

    fn reference(emotion: Emotion) -> AnnotatedFrame {
        let mut p = FaceParams::neutral();
        p.expression = emotion.expression();
        p.mouth_open = 0.8;
        annotated(p)
    }

    #[test]
    fn oracle_extracts_the_reference_expression() {
        let code = OracleFem
            .extract_expression(&source(), &reference(Emotion::Happy))
            .unwrap();
        assert_eq!(code.0, Emotion::Happy.expression());
    }

    #[test]
    fn extracting_from_self_returns_own_expression() {
        let s = source();
        let code = OracleFem.extract_expression(&s, &s).unwrap();
        assert_eq!(code.0, s.params().unwrap().expression);
    }

    #[test]
    fn missing_params_is_a_capability_error() {
        let bare = AnnotatedFrame {
            frame: Frame::zeros(32, 32, 1, 0),
            params: None,
        };
        assert!(matches!(
            OracleFem.extract_expression(&source(), &bare),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn oracle_preserves_mouth_exactly() {
        let s = source();
        let edited = OracleFem.edit(&s, &reference(Emotion::Angry)).unwrap();
        let out = edited.params().unwrap();
        assert_eq!(out.mouth_open, s.params().unwrap().mouth_open);
        assert_eq!(out.expression, Emotion::Angry.expression());
    }

    #[test]
    fn oracle_edit_changes_pixels_outside_mouth_box_only_in_expression_regions() {
        // A neutral-to-happy edit re-renders with the same mouth openness:
        // the mouth interior must match a direct re-render bit for bit.
        let s = source();
        let edited = OracleFem.edit(&s, &reference(Emotion::Happy)).unwrap();
        let direct = render_face(edited.params().unwrap(), 32).unwrap();
        assert_eq!(edited.frame.pixels(), direct.pixels());
        // And outside the mouth bbox, happy vs neutral differ only at brows/
        // eyes, never below the eye line outside the box.
        let (x0, y0, x1, y1) = mouth_bbox(s.params().unwrap(), 32);
        let mouth_row_start = y0;
        for y in 0..32 {
            for x in 0..32 {
                let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
                if !inside && y >= mouth_row_start {
                    // Happy curvature only moves pixels inside the bbox.
                    let a = s.frame.get(y, x, 0);
                    let b = edited.frame.get(y, x, 0);
                    assert_eq!(a, b, "pixel ({x},{y}) outside mouth bbox changed");
                }
            }
        }
    }

    #[test]
    fn lossy_with_zero_beta_equals_oracle() {
        let s = source();
        let r = reference(Emotion::Happy);
        let a = OracleFem.edit(&s, &r).unwrap();
        let b = LossyFem::new(0.0).edit(&s, &r).unwrap();
        assert_eq!(a.frame.pixels(), b.frame.pixels());
    }

    #[test]
    fn lossy_beta_shifts_mouth_by_beta_times_gain() {
        let s = source();
        let r = reference(Emotion::Happy);
        let code = LossyFem::new(0.5).extract_expression(&s, &r).unwrap();
        // Independent evaluation of the coupling: |curvature| of happy is 1.
        let expected_gain = Emotion::Happy.expression()[1].abs();
        assert_eq!(mouth_distortion_gain(&code), expected_gain);
        let edited = LossyFem::new(0.5).edit(&s, &r).unwrap();
        let got = edited.params().unwrap().mouth_open;
        let want = (s.params().unwrap().mouth_open + 0.5 * expected_gain).clamp(0.0, 1.0);
        assert_eq!(got, want);
    }

    #[test]
    fn edit_equals_extract_then_render() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut sp = FaceParams::neutral();
            sp.mouth_open = rng.random_range(0.0f32..1.0);
            for v in &mut sp.expression {
                *v = rng.random_range(-1.0f32..1.0);
            }
            let mut rp = sp;
            for v in &mut rp.expression {
                *v = rng.random_range(-1.0f32..1.0);
            }
            let s = annotated(sp);
            let r = annotated(rp);
            let fem = LossyFem::new(0.3);
            let composed = {
                let code = fem.extract_expression(&s, &r).unwrap();
                fem.render_edited(&s, &code).unwrap()
            };
            let direct = fem.edit(&s, &r).unwrap();
            assert_eq!(composed.frame.pixels(), direct.frame.pixels());
        }
    }
}
