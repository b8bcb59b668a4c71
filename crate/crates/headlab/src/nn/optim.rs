//! Adam with optional global-norm gradient clipping.

use super::layers::ParamSlot;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over the given parameters; the slot ordering must be stable
    /// across calls. Gradients are consumed (zeroed) afterwards.
    pub fn step(&mut self, mut slots: Vec<ParamSlot<'_>>) {
        if self.m.is_empty() {
            for s in &slots {
                self.m.push(vec![0.0; s.value.len()]);
                self.v.push(vec![0.0; s.value.len()]);
            }
        }
        assert_eq!(self.m.len(), slots.len(), "parameter set changed size");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, slot) in slots.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..slot.value.len() {
                let g = slot.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                slot.value[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                slot.grad[i] = 0.0;
            }
        }
    }
}

/// Scale gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(slots: &mut [ParamSlot<'_>], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for s in slots.iter() {
        for &g in s.grad.iter() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for s in slots.iter_mut() {
            for g in s.grad.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![5.0f64, -3.0];
        let mut g = vec![0.0f64; 2];
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            for i in 0..2 {
                g[i] = 2.0 * x[i];
            }
            opt.step(vec![ParamSlot {
                value: &mut x,
                grad: &mut g,
            }]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "x = {x:?}");
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut v = vec![0.0f64; 3];
        let mut g = vec![3.0f64, 4.0, 0.0];
        let norm = clip_global_norm(
            &mut [ParamSlot {
                value: &mut v,
                grad: &mut g,
            }],
            1.0,
        );
        assert!((norm - 5.0).abs() < 1e-12);
        let after: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
