//! Adam optimizer with bias correction.

use super::model::{CnnGrads, CnnModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    /// Standard defaults: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(model: &CnnModel<S>, lr: f64) -> Self {
        let shapes: Vec<Vec<S>> = model
            .param_vecs()
            .iter()
            .map(|(_, v)| vec![S::zero(); v.len()])
            .collect();
        Adam {
            lr: S::from_f64_lossy(lr),
            beta1: S::from_f64_lossy(0.9),
            beta2: S::from_f64_lossy(0.999),
            eps: S::from_f64_lossy(1e-8),
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One update from averaged batch gradients.
    pub fn step(&mut self, model: &mut CnnModel<S>, grads: &CnnGrads<S>) {
        self.t += 1;
        let one = S::one();
        // 1 - beta^t via f64 so large t stays accurate.
        let b1 = self.beta1.to_f64().expect("beta fits f64");
        let b2 = self.beta2.to_f64().expect("beta fits f64");
        let corr1 = S::from_f64_lossy(1.0 - b1.powi(self.t as i32));
        let corr2 = S::from_f64_lossy(1.0 - b2.powi(self.t as i32));
        let params = model.param_vecs_mut();
        let gvecs = grads.param_vecs();
        assert_eq!(params.len(), gvecs.len(), "gradient layout mismatch");
        for ((param, (_, grad)), (m, v)) in params
            .into_iter()
            .zip(gvecs)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(param.len(), grad.len(), "gradient length mismatch");
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
