//! Adaptive gradient descent with decoupled weight decay.

use crate::tensor::Array;

/// AdamW: first/second moment estimates with bias correction, weight decay
/// applied directly to the parameters rather than through the gradient.
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    moments: Vec<(Array, Array)>,
}

impl AdamW {
    pub fn new(learning_rate: f64) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` must be parallel slices in a
    /// fixed order across steps (moment state is positional).
    pub fn step(&mut self, params: &mut [(String, &mut Array)], grads: &[Array]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| (Array::zeros(p.shape().to_vec()), Array::zeros(p.shape().to_vec())))
                .collect();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((_, param), grad), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            let pdata = param.data_mut();
            for i in 0..pdata.len() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                pdata[i] -= self.learning_rate
                    * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * pdata[i]);
            }
        }
    }
}
