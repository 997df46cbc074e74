use super::Tensor;
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
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
    /// Optimiser for parameters shaped like `params`, with the usual
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// state is touched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != self.m.len()
            || params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .any(|((p, g), m)| p.shape() != m.shape() || g.shape() != m.shape())
        {
            return Err(Error::Config("adam: parameter/gradient shapes disagree".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "adam: gradient of parameter {i} at element {j}"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(1e-3, &params);
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = 1, v_hat = 1 -> -lr * 1 / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let mut params = vec![Tensor::filled(&[3], 0.4)];
        let mut adam = Adam::new(1e-3, &params);
        adam.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(params[0].data(), &[0.4; 3]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(1e-3, &params);
        adam.step(&mut params, &[Tensor::scalar(2.0)]).unwrap();
        let (m0, v0) = (adam.first_moments()[0].data()[0], adam.second_moments()[0].data()[0]);
        adam.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        assert!((adam.first_moments()[0].data()[0] - 0.9 * m0).abs() < 1e-15);
        assert!((adam.second_moments()[0].data()[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn identical_state_gives_identical_update() {
        let params = vec![Tensor::new(vec![2], vec![0.3, -0.2]).unwrap()];
        let grads = vec![Tensor::new(vec![2], vec![0.7, 1.3]).unwrap()];
        let adam = Adam::new(1e-4, &params);
        let (mut a, mut b) = (adam.clone(), adam);
        let (mut pa, mut pb) = (params.clone(), params);
        a.step(&mut pa, &grads).unwrap();
        b.step(&mut pb, &grads).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(1e-3, &params);
        let err = adam.step(&mut params, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(adam.steps(), 0);
        assert_eq!(params[0].data()[0], 1.0);
    }
}
