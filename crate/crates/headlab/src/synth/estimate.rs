//! Expression estimation from pixels.
//!
//! Inverts the renderer: locates the face, masks the head interior so the
//! dark background never pollutes the feature bands, takes raw measurements
//! (brow-band centroid, mouth center-line curvature, eye-band dark mass),
//! and maps them to expression components through calibration curves
//! measured off the renderer itself. Works on clean renders and degrades
//! gracefully on generated (blurry) frames.

use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::OnceLock;

use super::face::{render_face, FaceParams, MOUTH_HALF_W};
use crate::media::Frame;

/// Feature bands in face coordinates (units of resolution, y down).
const BROW_BAND: (f32, f32) = (-0.30, -0.147);
const EYE_BAND: (f32, f32) = (-0.140, -0.028);
const MOUTH_BAND: (f32, f32) = (0.09, 0.34);
const FEATURE_U: f32 = 0.23;
const MOUTH_U: f32 = MOUTH_HALF_W + 0.03;
const BRIGHT: f32 = 0.25;
const N_BINS: usize = 24;

#[derive(Debug, Clone, Copy, Default)]
struct RawMeasurements {
    /// Darkness-weighted mean v in the brow band.
    brow_centroid: f32,
    /// Quadratic coefficient of the mouth center line v(u).
    curve_coeff: f32,
    /// Total darkness mass in the eye band.
    eye_mass: f32,
}

fn measure(frame: &Frame) -> Option<RawMeasurements> {
    let (h, w) = (frame.height(), frame.width());
    let r = h.min(w) as f32;

    // Pass 1: bright bounding box. The box center tracks the head ellipse and
    // is insensitive to how much of the interior the dark features cover.
    // Rows/columns need at least two bright pixels to count, which drops
    // stray speckles in generated frames.
    let mut face_px: Vec<f32> = Vec::new();
    let (mut min_x, mut max_x) = (f32::MAX, f32::MIN);
    let (mut min_y, mut max_y) = (f32::MAX, f32::MIN);
    for y in 0..h {
        let mut row_min = f32::MAX;
        let mut row_max = f32::MIN;
        let mut count = 0usize;
        for x in 0..w {
            let p = frame.get(y, x, 0);
            if p > BRIGHT {
                face_px.push(p);
                let xc = x as f32 + 0.5;
                row_min = row_min.min(xc);
                row_max = row_max.max(xc);
                count += 1;
            }
        }
        if count >= 2 {
            min_x = min_x.min(row_min);
            max_x = max_x.max(row_max);
            let yc = y as f32 + 0.5;
            min_y = min_y.min(yc);
            max_y = max_y.max(yc);
        }
    }
    if face_px.len() < 16 || max_x <= min_x || max_y <= min_y {
        return None;
    }
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;
    let head_a = (max_x - min_x) / 2.0 - 1.5;
    let head_b = (max_y - min_y) / 2.0 - 1.5;
    if head_a < 2.0 || head_b < 2.0 {
        return None;
    }
    face_px.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let skin = face_px[face_px.len() / 2];
    let darkness = |p: f32| ((skin - 0.18 - p) / 0.10).clamp(0.0, 1.0);

    // Pass 3: band statistics, restricted to the head interior.
    let mut brow_v_sum = 0.0f32;
    let mut brow_mass = 0.0f32;
    let mut eye_mass = 0.0f32;
    let mut mouth_v_sum = vec![0.0f32; N_BINS];
    let mut mouth_mass = vec![0.0f32; N_BINS];
    for y in 0..h {
        for x in 0..w {
            let p = frame.get(y, x, 0);
            let up = x as f32 + 0.5 - cx;
            let vp = y as f32 + 0.5 - cy;
            if (up / head_a).powi(2) + (vp / head_b).powi(2) > 1.0 {
                continue;
            }
            let u = up / r;
            let v = vp / r;
            if u.abs() > FEATURE_U {
                continue;
            }
            // Eye openness uses the unthresholded ink integral: the renderer
            // blends linearly, so summed darkening equals the soft ellipse
            // area and stays monotone in eye height even below one pixel.
            if v >= EYE_BAND.0 && v < EYE_BAND.1 {
                eye_mass += (skin - p).max(0.0);
                continue;
            }
            let d = darkness(p);
            if d <= 0.0 {
                continue;
            }
            if v >= BROW_BAND.0 && v < BROW_BAND.1 {
                brow_v_sum += d * v;
                brow_mass += d;
            } else if v >= MOUTH_BAND.0 && v < MOUTH_BAND.1 && u.abs() <= MOUTH_U {
                let bin = (((u / MOUTH_U) + 1.0) / 2.0 * N_BINS as f32)
                    .floor()
                    .clamp(0.0, N_BINS as f32 - 1.0) as usize;
                mouth_v_sum[bin] += d * v;
                mouth_mass[bin] += d;
            }
        }
    }

    let brow_centroid = if brow_mass > 0.5 {
        brow_v_sum / brow_mass
    } else {
        BROW_BAND.1
    };

    // Weighted quadratic fit of the mouth center line.
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    let max_mass = mouth_mass.iter().cloned().fold(0.0f32, f32::max);
    let mut used = 0usize;
    for bin in 0..N_BINS {
        if max_mass <= 0.0 || mouth_mass[bin] < 0.10 * max_mass {
            continue;
        }
        used += 1;
        let m = mouth_mass[bin] as f64;
        let u = (((bin as f32 + 0.5) / N_BINS as f32) * 2.0 - 1.0) * MOUTH_U;
        let v = (mouth_v_sum[bin] / mouth_mass[bin]) as f64;
        let u = u as f64;
        let powers = [1.0, u, u * u, u * u * u, u * u * u * u];
        for (k, p) in powers.iter().enumerate() {
            s[k] += m * p;
        }
        for k in 0..3 {
            t[k] += m * v * powers[k];
        }
    }
    let curve_coeff = if used >= 4 {
        solve_quadratic_fit(&s, &t).unwrap_or(0.0) as f32
    } else {
        0.0
    };

    Some(RawMeasurements {
        brow_centroid,
        curve_coeff,
        eye_mass: eye_mass / (r * r),
    })
}

/// Solve the 3x3 normal equations of a weighted quadratic least-squares fit,
/// returning the quadratic coefficient.
fn solve_quadratic_fit(s: &[f64; 5], t: &[f64; 3]) -> Option<f64> {
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&m);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut ma = m;
    for row in 0..3 {
        ma[row][2] = t[row];
    }
    Some(det3(&ma) / d)
}

/// Response curves measured off the renderer at nominal identity: raw
/// measurement as a function of each expression component at -1, 0, +1.
#[derive(Debug, Clone)]
struct Calibration {
    brow: [(f32, f32); 3],
    curve: [(f32, f32); 3],
    eye: [(f32, f32); 3],
}

fn calibrate(resolution: usize) -> Calibration {
    let probe = |expr: [f32; 3]| -> RawMeasurements {
        let mut p = FaceParams::neutral();
        p.expression = expr;
        p.mouth_open = 0.4;
        let frame = render_face(&p, resolution).expect("calibration render");
        measure(&frame).unwrap_or_default()
    };
    let levels = [-1.0f32, 0.0, 1.0];
    let mut brow = [(0.0, 0.0); 3];
    let mut curve = [(0.0, 0.0); 3];
    let mut eye = [(0.0, 0.0); 3];
    for (k, &e) in levels.iter().enumerate() {
        brow[k] = (probe([e, 0.0, 0.0]).brow_centroid, e);
        curve[k] = (probe([0.0, e, 0.0]).curve_coeff, e);
        eye[k] = (probe([0.0, 0.0, e]).eye_mass, e);
    }
    Calibration { brow, curve, eye }
}

fn calibration_for(resolution: usize) -> Calibration {
    static CACHE: OnceLock<Mutex<HashMap<usize, Calibration>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("calibration cache poisoned");
    map.entry(resolution).or_insert_with(|| calibrate(resolution)).clone()
}

/// Piecewise-linear inversion of a monotone three-point response curve.
fn invert(points: &[(f32, f32); 3], raw: f32) -> f32 {
    let mut pts = *points;
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let span = pts[2].0 - pts[0].0;
    if span.abs() < 1e-9 {
        return 0.0;
    }
    let seg = |a: (f32, f32), b: (f32, f32), x: f32| {
        if (b.0 - a.0).abs() < 1e-9 {
            a.1
        } else {
            a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
        }
    };
    let v = if raw <= pts[1].0 {
        seg(pts[0], pts[1], raw)
    } else {
        seg(pts[1], pts[2], raw)
    };
    v.clamp(-1.2, 1.2)
}

/// Estimated `[brow_raise, mouth_corner_curvature, eye_openness]`, each
/// clamped to `[-1.2, 1.2]`.
pub fn estimate_expression(frame: &Frame) -> [f32; 3] {
    let raw = match measure(frame) {
        Some(r) => r,
        None => return [0.0; 3],
    };
    let calib = calibration_for(frame.height().min(frame.width()));
    [
        invert(&calib.brow, raw.brow_centroid),
        invert(&calib.curve, raw.curve_coeff),
        invert(&calib.eye, raw.eye_mass),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::face::Pose;

    fn estimate_for(expression: [f32; 3], mouth_open: f32, pose: Pose) -> [f32; 3] {
        let mut p = FaceParams::neutral();
        p.expression = expression;
        p.mouth_open = mouth_open;
        p.pose = pose;
        estimate_expression(&render_face(&p, 32).unwrap())
    }

    fn cosine(a: &[f32], b: &[f32]) -> f32 {
        let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
        dot / (na * nb).max(1e-12)
    }

    #[test]
    fn estimates_track_expression_direction() {
        for expr in [
            [0.3f32, 1.0, 0.0],
            [-1.0, -0.6, -0.2],
            [1.0, 0.2, 0.8],
            [-0.5, -0.8, -0.3],
        ] {
            let est = estimate_for(expr, 0.3, Pose::default());
            let c = cosine(&est, &expr);
            assert!(
                c > 0.85,
                "estimate {est:?} poorly aligned with truth {expr:?} (cos={c:.3})"
            );
        }
    }

    #[test]
    fn same_expression_different_mouth_gives_matching_estimates() {
        let expr = [0.3f32, 1.0, 0.0];
        let a = estimate_for(expr, 0.1, Pose::new(0.8, -0.5, 0.02));
        let b = estimate_for(expr, 0.9, Pose::new(0.6, -0.4, 0.02));
        assert!(
            cosine(&a, &b) > 0.97,
            "mouth openness leaked into expression estimates: {a:?} vs {b:?}"
        );
    }

    #[test]
    fn calibration_points_invert_to_themselves() {
        for e in [-1.0f32, 0.0, 1.0] {
            let est = estimate_for([e, 0.0, 0.0], 0.4, Pose::default());
            assert!((est[0] - e).abs() < 0.15, "brow {e}: {est:?}");
            let est = estimate_for([0.0, e, 0.0], 0.4, Pose::default());
            assert!((est[1] - e).abs() < 0.15, "curve {e}: {est:?}");
            let est = estimate_for([0.0, 0.0, e], 0.4, Pose::default());
            assert!((est[2] - e).abs() < 0.30, "eye {e}: {est:?}");
        }
    }

    #[test]
    fn blank_frame_estimates_zero() {
        let f = Frame::zeros(32, 32, 1, 0);
        assert_eq!(estimate_expression(&f), [0.0; 3]);
    }
}
