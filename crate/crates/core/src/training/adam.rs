use serde::{Deserialize, Serialize};

use crate::numerics::{Gradients, ParameterStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments mirroring the parameter store, plus the step
/// count used for bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, a)| vec![0.0; a.len()]).collect();
        Self {
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Whether the moment shapes mirror `store`.
    pub fn matches(&self, store: &ParameterStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .iter()
                .all(|(id, _, a)| self.m[id.0].len() == a.len() && self.v[id.0].len() == a.len())
    }

    /// One update on `grads + weight_decay * theta`, the gradient of the
    /// objective plus `0.5 * weight_decay * |theta|^2`.
    pub fn update(&mut self, store: &mut ParameterStore, grads: &Gradients, learning_rate: f64, weight_decay: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let grad = grads.get(id);
            let theta = store.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for i in 0..theta.len() {
                let g = grad.map_or(0.0, |g| g[i]) + weight_decay * theta[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Array;

    #[test]
    fn zero_gradients_fix_parameters() {
        let mut store = ParameterStore::new();
        store.insert("a", Array::vector(vec![1.5, -2.0]).unwrap());
        let before = store.clone();
        let mut adam = AdamState::new(&store);
        let grads = Gradients::for_store(&store);
        for _ in 0..5 {
            adam.update(&mut store, &grads, 0.1, 0.0);
        }
        assert_eq!(store, before);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParameterStore::new();
        let id = store.insert("theta", Array::scalar(0.0));
        let mut adam = AdamState::new(&store);
        let mut grads = Gradients::for_store(&store);
        // d/dθ (θ - 5)^2 at 0
        grads.add_to(id, &[-10.0]);
        adam.update(&mut store, &grads, 0.01, 0.0);
        let moved = store.get(id).data()[0];
        assert!((moved - 0.01).abs() < 1e-9, "{moved}");
        assert!(adam.matches(&store));
    }
}
