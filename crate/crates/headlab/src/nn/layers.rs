//! Minimal layer zoo with explicit forward/backward passes.
//!
//! Everything runs in `f64` so finite-difference gradient checks are clean.
//! Convolutions go through im2col and a single matrix multiply; each layer
//! accumulates parameter gradients into its own `g*` buffers.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Mutable view of one parameter tensor and its gradient, used by the
/// optimizer and by gradient clipping.
pub struct ParamSlot<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// 2-D convolution, NCHW, square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
}

/// Cached im2col matrix plus the input geometry needed for backward.
pub struct ConvCache {
    cols: Array2<f64>,
    n: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Conv2d {
    /// He-uniform initialization.
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let w = Array4::from_shape_fn((out_c, in_c, k, k), |_| rng.random_range(-limit..limit));
        Self {
            gw: Array4::zeros(w.raw_dim()),
            w,
            b: Array1::zeros(out_c),
            gb: Array1::zeros(out_c),
            stride,
            pad,
        }
    }

    pub fn out_dims(&self, in_h: usize, in_w: usize) -> (usize, usize) {
        let k = self.w.shape()[2];
        (
            (in_h + 2 * self.pad - k) / self.stride + 1,
            (in_w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array4<f64>) -> ConvCache {
        let (n, c, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        let k = self.w.shape()[2];
        let (oh, ow) = self.out_dims(h, w);
        let mut cols = Array2::zeros((c * k * k, n * oh * ow));
        for img in 0..n {
            for ch in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ch * k + ky) * k + kx;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                cols[[row, (img * oh + oy) * ow + ox]] =
                                    x[[img, ch, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        ConvCache {
            cols,
            n,
            in_h: h,
            in_w: w,
            out_h: oh,
            out_w: ow,
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, ConvCache) {
        let cache = self.im2col(x);
        let out_c = self.w.shape()[0];
        let ckk = self.w.len() / out_c;
        let w2 = self.w.view().into_shape_with_order((out_c, ckk)).unwrap();
        let mut out2 = w2.dot(&cache.cols);
        for (mut row, &b) in out2.axis_iter_mut(Axis(0)).zip(self.b.iter()) {
            row += b;
        }
        let (n, oh, ow) = (cache.n, cache.out_h, cache.out_w);
        let out = out2
            .into_shape_with_order((out_c, n, oh, ow))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        (out, cache)
    }

    fn gout_matrix(&self, cache: &ConvCache, gout: &Array4<f64>) -> Array2<f64> {
        let out_c = self.w.shape()[0];
        gout.view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_shape_with_order((out_c, cache.n * cache.out_h * cache.out_w))
            .unwrap()
            .to_owned()
    }

    /// col2im: scatter column gradients back to input positions.
    fn cols_to_input(&self, cache: &ConvCache, gcols: &Array2<f64>) -> Array4<f64> {
        let (c, k) = (self.w.shape()[1], self.w.shape()[2]);
        let (n, oh, ow) = (cache.n, cache.out_h, cache.out_w);
        let (h, w) = (cache.in_h, cache.in_w);
        let mut gx = Array4::zeros((n, c, h, w));
        for img in 0..n {
            for ch in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ch * k + ky) * k + kx;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gx[[img, ch, iy as usize, ix as usize]] +=
                                    gcols[[row, (img * oh + oy) * ow + ox]];
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache, gout: &Array4<f64>) -> Array4<f64> {
        let g2 = self.gout_matrix(cache, gout);
        let gw2 = g2.dot(&cache.cols.t());
        self.gw += &gw2.into_shape_with_order(self.w.raw_dim()).unwrap();
        self.gb += &g2.sum_axis(Axis(1));
        self.backward_data(cache, gout)
    }

    /// Input gradient only, leaving parameter gradients untouched. Used when
    /// gradients flow through a frozen network.
    pub fn backward_data(&self, cache: &ConvCache, gout: &Array4<f64>) -> Array4<f64> {
        let out_c = self.w.shape()[0];
        let ckk = self.w.len() / out_c;
        let g2 = self.gout_matrix(cache, gout);
        let w2 = self.w.view().into_shape_with_order((out_c, ckk)).unwrap();
        let gcols = w2.t().dot(&g2);
        self.cols_to_input(cache, &gcols)
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        vec![
            ParamSlot {
                value: self.w.as_slice_mut().unwrap(),
                grad: self.gw.as_slice_mut().unwrap(),
            },
            ParamSlot {
                value: self.b.as_slice_mut().unwrap(),
                grad: self.gb.as_slice_mut().unwrap(),
            },
        ]
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Multiply-accumulate count for one forward pass at the given input size.
    pub fn macs(&self, in_h: usize, in_w: usize) -> usize {
        let (oh, ow) = self.out_dims(in_h, in_w);
        let (out_c, in_c, k, _) = {
            let s = self.w.shape();
            (s[0], s[1], s[2], s[3])
        };
        out_c * in_c * k * k * oh * ow
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Dense {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        let limit = (6.0 / d_in as f64).sqrt();
        let w = Array2::from_shape_fn((d_in, d_out), |_| rng.random_range(-limit..limit));
        Self {
            gw: Array2::zeros(w.raw_dim()),
            w,
            b: Array1::zeros(d_out),
            gb: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.w);
        out += &self.b;
        out
    }

    pub fn backward(&mut self, x: &Array2<f64>, gout: &Array2<f64>) -> Array2<f64> {
        self.gw += &x.t().dot(gout);
        self.gb += &gout.sum_axis(Axis(0));
        gout.dot(&self.w.t())
    }

    /// Input gradient only; parameter gradients stay untouched.
    pub fn backward_data(&self, gout: &Array2<f64>) -> Array2<f64> {
        gout.dot(&self.w.t())
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        vec![
            ParamSlot {
                value: self.w.as_slice_mut().unwrap(),
                grad: self.gw.as_slice_mut().unwrap(),
            },
            ParamSlot {
                value: self.b.as_slice_mut().unwrap(),
                grad: self.gb.as_slice_mut().unwrap(),
            },
        ]
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn macs(&self) -> usize {
        self.w.len()
    }
}

// Elementwise activations. Callers cache what backward needs (input for
// leaky relu, output for tanh/sigmoid).

pub fn leaky_relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>, a: f64) -> ndarray::Array<f64, D> {
    x.mapv(|v| if v >= 0.0 { v } else { a * v })
}

pub fn leaky_relu_backward<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    gout: &ndarray::Array<f64, D>,
    a: f64,
) -> ndarray::Array<f64, D> {
    let mut g = gout.clone();
    ndarray::Zip::from(&mut g).and(x).for_each(|g, &v| {
        if v < 0.0 {
            *g *= a;
        }
    });
    g
}

pub fn tanh<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(f64::tanh)
}

/// `y` is the forward output.
pub fn tanh_backward<D: ndarray::Dimension>(
    y: &ndarray::Array<f64, D>,
    gout: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut g = gout.clone();
    ndarray::Zip::from(&mut g).and(y).for_each(|g, &v| *g *= 1.0 - v * v);
    g
}

pub fn sigmoid<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// `y` is the forward output.
pub fn sigmoid_backward<D: ndarray::Dimension>(
    y: &ndarray::Array<f64, D>,
    gout: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut g = gout.clone();
    ndarray::Zip::from(&mut g).and(y).for_each(|g, &v| *g *= v * (1.0 - v));
    g
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x(x: &Array4<f64>) -> Array4<f64> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(i, ch, y, xx)| x[[i, ch, y / 2, xx / 2]])
}

pub fn upsample2x_backward(gout: &Array4<f64>) -> Array4<f64> {
    let s = gout.shape();
    let (n, c, h2, w2) = (s[0], s[1], s[2], s[3]);
    let mut gx = Array4::zeros((n, c, h2 / 2, w2 / 2));
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h2 {
                for x in 0..w2 {
                    gx[[i, ch, y / 2, x / 2]] += gout[[i, ch, y, x]];
                }
            }
        }
    }
    gx
}

/// Row-wise L2 normalization of a batch of vectors, with the forward inputs
/// and norms kept by the caller for backward.
pub fn l2_normalize(x: &Array2<f64>, eps: f64) -> (Array2<f64>, Array1<f64>) {
    let norms: Array1<f64> = x
        .axis_iter(Axis(0))
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps))
        .collect();
    let mut y = x.clone();
    for (mut row, &n) in y.axis_iter_mut(Axis(0)).zip(norms.iter()) {
        row /= n;
    }
    (y, norms)
}

pub fn l2_normalize_backward(
    y: &Array2<f64>,
    norms: &Array1<f64>,
    gout: &Array2<f64>,
) -> Array2<f64> {
    let mut gx = gout.clone();
    for ((mut grow, yrow), &n) in gx
        .axis_iter_mut(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(norms.iter())
    {
        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
        ndarray::Zip::from(&mut grow).and(&yrow).for_each(|g, &y| {
            *g = (*g - y * dot) / n;
        });
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Central-difference gradient check helper for layer tests.
    fn check_grad(
        mut f: impl FnMut(&Array4<f64>) -> f64,
        x: &Array4<f64>,
        analytic: &Array4<f64>,
        samples: usize,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        for _ in 0..samples {
            let idx: Vec<usize> = x.shape().iter().map(|&s| rng.random_range(0..s)).collect();
            let idx = [idx[0], idx[1], idx[2], idx[3]];
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h);
            let ana = analytic[idx];
            let denom = num.abs().max(ana.abs()).max(1e-6);
            assert!(
                (num - ana).abs() / denom < 1e-4,
                "grad mismatch at {idx:?}: numeric {num} analytic {ana}"
            );
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut conv = Conv2d::new(&mut rng, 2, 3, 3, 2, 1);
        let x = Array4::from_shape_fn((2, 2, 6, 6), |_| rng.random_range(-1.0..1.0));
        // Loss: sum of outputs weighted by a fixed random tensor.
        let (y0, cache) = conv.forward(&x);
        let wgt = Array4::from_shape_fn(y0.raw_dim(), |_| rng.random_range(-1.0..1.0));
        let gx = conv.backward(&cache, &wgt);
        let conv2 = conv.clone();
        check_grad(
            move |xx| (&conv2.forward(xx).0 * &wgt).sum(),
            &x,
            &gx,
            40,
            11,
        );
    }

    #[test]
    fn conv_weight_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut conv = Conv2d::new(&mut rng, 1, 2, 3, 1, 1);
        let x = Array4::from_shape_fn((1, 1, 5, 5), |_| rng.random_range(-1.0..1.0));
        let (y0, cache) = conv.forward(&x);
        let wgt = Array4::from_shape_fn(y0.raw_dim(), |_| rng.random_range(-1.0..1.0));
        conv.zero_grad();
        let _ = conv.backward(&cache, &wgt);
        let h = 1e-5;
        for _ in 0..30 {
            let idx = [
                rng.random_range(0..2),
                0,
                rng.random_range(0..3),
                rng.random_range(0..3),
            ];
            let mut cp = conv.clone();
            cp.w[idx] += h;
            let fp = (&cp.forward(&x).0 * &wgt).sum();
            cp.w[idx] -= 2.0 * h;
            let fm = (&cp.forward(&x).0 * &wgt).sum();
            let num = (fp - fm) / (2.0 * h);
            let ana = conv.gw[idx];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6) < 1e-4,
                "weight grad mismatch at {idx:?}: {num} vs {ana}"
            );
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut dense = Dense::new(&mut rng, 7, 4);
        let x = Array2::from_shape_fn((3, 7), |_| rng.random_range(-1.0..1.0));
        let wgt = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let gx = dense.backward(&x, &wgt);
        let h = 1e-5;
        for _ in 0..30 {
            let idx = [rng.random_range(0..3), rng.random_range(0..7)];
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = ((&dense.forward(&xp) * &wgt).sum() - (&dense.forward(&xm) * &wgt).sum())
                / (2.0 * h);
            let ana = gx[idx];
            assert!((num - ana).abs() < 1e-6, "{num} vs {ana}");
        }
    }

    #[test]
    fn normalize_produces_unit_rows_and_correct_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Array2::from_shape_fn((4, 6), |_| rng.random_range(-2.0..2.0));
        let (y, norms) = l2_normalize(&x, 1e-12);
        for row in y.axis_iter(Axis(0)) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        let wgt = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
        let gx = l2_normalize_backward(&y, &norms, &wgt);
        let h = 1e-6;
        for _ in 0..30 {
            let idx = [rng.random_range(0..4), rng.random_range(0..6)];
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = ((&l2_normalize(&xp, 1e-12).0 * &wgt).sum()
                - (&l2_normalize(&xm, 1e-12).0 * &wgt).sum())
                / (2.0 * h);
            assert!((num - gx[idx]).abs() < 1e-5, "{num} vs {}", gx[idx]);
        }
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, y, xx)| (y * 2 + xx) as f64);
        let up = upsample2x(&x);
        assert_eq!(up[[0, 0, 3, 3]], 3.0);
        assert_eq!(up[[0, 0, 0, 1]], 0.0);
        let g = Array4::ones((1, 1, 4, 4));
        let gx = upsample2x_backward(&g);
        assert!(gx.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn activations_roundtrip_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = Array2::from_shape_fn((3, 5), |_| rng.random_range(-2.0..2.0) + 0.001);
        let wgt = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let h = 1e-6;

        let y = tanh(&x);
        let g = tanh_backward(&y, &wgt);
        let s = sigmoid(&x);
        let gs = sigmoid_backward(&s, &wgt);
        let gl = leaky_relu_backward(&x, &wgt, 0.2);
        for _ in 0..20 {
            let idx = [rng.random_range(0..3), rng.random_range(0..5)];
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let dt = ((&tanh(&xp) * &wgt).sum() - (&tanh(&xm) * &wgt).sum()) / (2.0 * h);
            assert!((dt - g[idx]).abs() < 1e-5);
            let ds = ((&sigmoid(&xp) * &wgt).sum() - (&sigmoid(&xm) * &wgt).sum()) / (2.0 * h);
            assert!((ds - gs[idx]).abs() < 1e-5);
            if x[idx].abs() > 1e-3 {
                let dl = ((&leaky_relu(&xp, 0.2) * &wgt).sum()
                    - (&leaky_relu(&xm, 0.2) * &wgt).sum())
                    / (2.0 * h);
                assert!((dl - gl[idx]).abs() < 1e-5);
            }
        }
    }
}
