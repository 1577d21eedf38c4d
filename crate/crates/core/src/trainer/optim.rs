//! Adam with decoupled weight decay.

use crate::nn::Real;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(shapes: &[usize], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `p ← p − lr·(m̂ / (√v̂ + ε) + λ·p)`.
    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &[Vec<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.step += 1;
        let t = self.step as i32;
        let c = |v: f64| T::from_f64_lossy(v);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let (lr, eps, wd) = (c(self.lr), c(self.eps), c(self.weight_decay));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "gradient shape");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps) + wd * p[i];
                p[i] = p[i] - lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::<f64>::new(&[2], 0.1, 0.0);
        let mut p = vec![1.0, -2.0];
        opt.step(vec![&mut p[..]], &[vec![0.5, -4.0]]);
        // With bias correction the first update is lr·g/(|g| + ε).
        assert!((p[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut opt = AdamW::<f64>::new(&[1], 0.01, 0.5);
        let mut p = vec![2.0];
        opt.step(vec![&mut p[..]], &[vec![0.0]]);
        assert!((p[0] - (2.0 - 0.01 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::<f32>::new(&[1], 0.05, 0.0);
        let mut p = vec![3.0f32];
        for _ in 0..500 {
            let g = vec![2.0 * (p[0] - 1.0)];
            opt.step(vec![&mut p[..]], &[g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
        assert_eq!(opt.steps(), 500);
    }
}
