use super::{ParamId, ParamStore, Tensor};
use crate::error::{ApanError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are allocated lazily per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter in `ids` from its accumulated gradient and
    /// clears all gradients in the store.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            if store.grad(id).is_none() {
                return Err(ApanError::MissingGradient(store.get(id).name.clone()));
            }
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for &id in ids {
            let i = id.index();
            let param = store.get_mut(id);
            let grad = param.grad.take().expect("checked above");
            let m = self.first[i].get_or_insert_with(|| grad.zeros_like());
            let v = self.second[i].get_or_insert_with(|| grad.zeros_like());
            for (((w, g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0));
        store.accumulate_grad(x, &Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &[x]).unwrap();
        let moved = 1.0 - store.value(x).data()[0];
        assert!((moved - 1e-4).abs() < 1e-9, "{moved}");
        assert!(store.grad(x).is_none());
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.3));
        store.accumulate_grad(x, &Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &[x]).unwrap();
        assert_eq!(store.value(x).data()[0], 0.3);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.3));
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(
            adam.step(&mut store, &[x]),
            Err(ApanError::MissingGradient(name)) if name == "x"
        ));
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..100 {
            let mut tape = Tape::new();
            let xv = tape.param(&store, x);
            let sq = tape.mul(xv, xv).unwrap();
            tape.backward(sq, &mut store).unwrap();
            adam.step(&mut store, &[x]).unwrap();
        }
        assert!(store.value(x).data()[0].abs() < 0.1);
    }
}
