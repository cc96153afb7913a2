use super::tensor::Tensor;
use crate::{Error, Result};

/// Global L2 norm over a set of gradients.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_squared).sum::<f64>().sqrt()
}

/// Rescales all gradients by `threshold / norm` when the global norm exceeds
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradient_norm(grads: &mut [Tensor], threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = global_norm(grads);
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape { op: "adam", lhs: vec![params.len()], rhs: vec![grads.len()] });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape { op: "adam", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
            return Err(Error::Shape { op: "adam state", lhs: vec![self.m.len()], rhs: vec![params.len()] });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once the monitored value has not
/// improved on its best for more than `patience` consecutive observations.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad: usize,
    decays: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        assert!(factor > 0.0 && factor < 1.0);
        Self { factor, patience, best: f64::INFINITY, bad: 0, decays: 0 }
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    /// Records one observation and returns the (possibly reduced) rate.
    pub fn observe(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best {
            self.best = value;
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad > self.patience {
            self.bad = 0;
            self.decays += 1;
            return lr * self.factor;
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_examples() {
        let mut g = vec![Tensor::row(vec![1200.0, 1600.0])];
        let norm = clip_gradient_norm(&mut g, 1000.0);
        assert_eq!(norm, 2000.0);
        assert_eq!(g[0].data(), &[600.0, 800.0]);

        let mut g = vec![Tensor::row(vec![6.0, 8.0])];
        clip_gradient_norm(&mut g, 1000.0);
        assert_eq!(g[0].data(), &[6.0, 8.0]);

        let mut g = vec![Tensor::zeros([3])];
        clip_gradient_norm(&mut g, 1000.0);
        assert_eq!(g[0].data(), &[0.0; 3]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![Tensor::row(vec![1.0, 1.0, 1.0])];
        let g = vec![Tensor::row(vec![3.0, -0.5, 1e-3])];
        let mut opt = Adam::new(0.01);
        opt.step(&mut p, &g).unwrap();
        for (x, gi) in p[0].data().iter().zip(g[0].data()) {
            let delta = x - 1.0;
            assert!((delta + 0.01 * gi.signum()).abs() < 1e-6 * 0.01 / gi.abs() + 1e-12, "{delta}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![Tensor::row(vec![0.3, -0.7])];
        let g = vec![Tensor::zeros([1, 2])];
        let mut opt = Adam::new(0.1);
        for _ in 0..10 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p[0].data(), &[0.3, -0.7]);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = vec![Tensor::row(vec![0.3, -0.7])];
        let g = vec![Tensor::zeros([2, 1])];
        assert!(Adam::new(0.1).step(&mut p, &g).is_err());
    }

    #[test]
    fn plateau_decays_after_patience() {
        let mut s = PlateauScheduler::new(0.5, 2);
        let mut lr = 1.0;
        lr = s.observe(1.0, lr);
        for _ in 0..2 {
            lr = s.observe(1.0, lr);
        }
        assert_eq!(lr, 1.0);
        lr = s.observe(1.0, lr);
        assert_eq!(lr, 0.5);
        lr = s.observe(0.5, lr);
        assert_eq!(lr, 0.5);
        assert_eq!(s.decays(), 1);
    }
}
