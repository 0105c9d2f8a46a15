use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adam with bias-corrected moments over a fixed group of tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    group: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, group: Vec<ParamId>, lr: f64) -> Self {
        let m: Vec<Vec<f64>> = group
            .iter()
            .map(|&id| vec![0.0; store.tensor(id).len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
            group,
        }
    }

    pub fn for_all(store: &ParamStore, lr: f64) -> Self {
        Self::new(store, store.ids().collect(), lr)
    }

    pub fn group(&self) -> &[ParamId] {
        &self.group
    }

    /// Applies one update from the `grad` buffers; rejects non-finite grads
    /// before touching any value.
    pub fn update(&mut self, store: &mut ParamStore) -> Result<()> {
        for &id in &self.group {
            let t = store.tensor(id);
            if let Some(i) = t.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    tensor: t.name.clone(),
                    what: format!("gradient entry {i} = {}", t.grad[i]),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (k, &id) in self.group.iter().enumerate() {
            let tensor = store.tensor_mut(id);
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..tensor.values.len() {
                let g = tensor.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", vec![1], vec![value]).unwrap();
        s.tensor_mut(id).grad[0] = grad;
        (s, id)
    }

    #[test]
    fn zero_grad_leaves_values() {
        let (mut s, id) = one_param(3.0, 0.0);
        let mut adam = AdamState::for_all(&s, 0.01);
        adam.update(&mut s).unwrap();
        assert_eq!(s.tensor(id).values[0], 3.0);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 after bias correction, so delta = -lr / (1 + eps).
        let (mut s, id) = one_param(0.0, 1.0);
        let mut adam = AdamState::for_all(&s, 0.001);
        adam.update(&mut s).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((s.tensor(id).values[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn repeated_updates_follow_negative_grad() {
        let (mut s, id) = one_param(1.0, 2.0);
        let mut adam = AdamState::for_all(&s, 0.01);
        adam.update(&mut s).unwrap();
        let after_one = s.tensor(id).values[0];
        adam.update(&mut s).unwrap();
        let after_two = s.tensor(id).values[0];
        assert!(after_one < 1.0 && after_two < after_one);
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn nan_grad_names_tensor() {
        let (mut s, _) = one_param(1.0, f64::NAN);
        let mut adam = AdamState::for_all(&s, 0.01);
        match adam.update(&mut s) {
            Err(Error::NonFinite { tensor, .. }) => assert_eq!(tensor, "p"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
        assert_eq!(adam.step, 0);
    }
}
