//! Adam optimizer over a [`ParamStore`].

use std::collections::HashMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    /// First/second moment buffers keyed by parameter name, so late-defined
    /// parameters (none today, but cheap to allow) start at zero state.
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    /// One update over all trainable parameters that accumulated a gradient.
    /// A trainable parameter with no gradient this step is an error: it means
    /// the caller forgot to absorb a backward pass.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = match &p.grad {
                Some(g) => g,
                None => return Err(Error::Config(format!("adam step without gradient for {}", p.name))),
            };
            let n = p.value.data().len();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let data = p.value.data_mut();
            for i in 0..n {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::params::Init;

    fn quad_store() -> ParamStore {
        let mut s = ParamStore::new(0);
        s.def("x", &[1], Init::Const(1.0)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = quad_store();
        s.get_mut("x").unwrap().grad = Some(vec![0.0]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("x").unwrap().value.data()[0], 1.0);
    }

    #[test]
    fn single_step_descends_on_square() {
        // f(x) = x^2 at x=1: gradient 2, Adam must move x down.
        let mut s = quad_store();
        s.get_mut("x").unwrap().grad = Some(vec![2.0]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut s).unwrap();
        assert!(s.get("x").unwrap().value.data()[0] < 1.0);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        // 500 steps on f(x) = (x-3)^2 from x=1 at lr 0.05.
        let mut s = quad_store();
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            let x = s.get("x").unwrap().value.data()[0];
            s.get_mut("x").unwrap().grad = Some(vec![2.0 * (x - 3.0)]);
            opt.step(&mut s).unwrap();
        }
        let x = s.get("x").unwrap().value.data()[0];
        assert!((x - 3.0).abs() < 1e-3, "ended at {x}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = quad_store();
        let mut opt = Adam::new(0.1);
        assert!(opt.step(&mut s).is_err());
    }

    #[test]
    fn non_trainable_buffers_are_skipped() {
        let mut s = ParamStore::new(0);
        s.def("w", &[1], Init::Const(2.0)).unwrap();
        s.def_buffer("stat", &[1], vec![5.0]).unwrap();
        s.get_mut("w").unwrap().grad = Some(vec![1.0]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("stat").unwrap().value.data()[0], 5.0);
        assert!(s.get("w").unwrap().value.data()[0] < 2.0);
    }
}
