use ndarray::NdFloat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: NdFloat> AdamMoments<F> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
        }
    }
}

/// One bias-corrected Adam update of `params` in place. `t` counts steps from 1.
pub fn adam_step<F: NdFloat>(params: &mut [F], grads: &[F], moments: &mut AdamMoments<F>, t: u64, cfg: &AdamConfig) {
    assert!(t >= 1, "adam step counter starts at 1");
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.m.len());
    let b1 = F::from(cfg.beta1).unwrap();
    let b2 = F::from(cfg.beta2).unwrap();
    let one = F::one();
    let lr = F::from(cfg.lr).unwrap();
    let eps = F::from(cfg.eps).unwrap();
    let c1 = one - b1.powi(t as i32);
    let c2 = one - b2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<AdamMoments<F>>,
}

impl<F: NdFloat> Adam<F> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            moments: shapes.iter().map(|&n| AdamMoments::zeros(n)).collect(),
        }
    }

    pub fn apply(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>) {
        assert_eq!(params.len(), self.moments.len());
        assert_eq!(grads.len(), self.moments.len());
        self.step += 1;
        for ((p, g), m) in params.into_iter().zip(grads).zip(self.moments.iter_mut()) {
            adam_step(p, g, m, self.step, &self.config);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0];
        let mut m = AdamMoments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m, 1, &AdamConfig::with_lr(1e-3));
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.37f64, -5.0, 1e-3] {
            let mut p = vec![0.0f64];
            let mut m = AdamMoments::zeros(1);
            let cfg = AdamConfig::with_lr(3e-4);
            adam_step(&mut p, &[g], &mut m, 1, &cfg);
            // m̂ = g, v̂ = g², update = lr·g/(|g| + eps)
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-18);
            assert!(((p[0].abs() - cfg.lr) / cfg.lr).abs() < 1e-5);
        }
    }

    #[test]
    fn two_steps_match_hand_computation() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = vec![1.0f64];
        let mut m = AdamMoments::zeros(1);
        adam_step(&mut p, &[2.0], &mut m, 1, &cfg);
        adam_step(&mut p, &[-1.0], &mut m, 2, &cfg);
        // step 1: m=0.2, v=0.004, m̂=2, v̂=4 → p = 1 − 0.1·2/(2+1e-8)
        let p1: f64 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        // step 2: m=0.18−0.1=0.08, v=0.003996+0.001=0.004996
        let m2: f64 = 0.9 * 0.2 + 0.1 * -1.0;
        let v2: f64 = 0.999 * 0.004 + 0.001 * 1.0;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.998001);
        let p2 = p1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - p2).abs() < 1e-12);
    }
}
