//! Adam with bias correction, over a [`ParamStore`].

use super::{NnError, ParamStore, Scalar};
use std::collections::BTreeMap;

/// Adam optimizer state: hyper-parameters plus per-parameter moments.
#[derive(Clone, Debug)]
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed step count; bias correction uses `t + 1` on the next step.
    t: u64,
    m: BTreeMap<String, Vec<S>>,
    v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter, in sorted-name order. Every
    /// parameter must carry a gradient; a missing one aborts before any
    /// state is touched.
    pub fn step(&mut self, params: &mut ParamStore<S>) -> Result<(), NnError> {
        for (name, tensor) in params.iter() {
            if tensor.grad().is_none() {
                return Err(NnError::MissingGrad(name.clone()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let corr1 = S::from_f64(1.0 - self.beta1.powi(t));
        let corr2 = S::from_f64(1.0 - self.beta2.powi(t));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);
        for (name, tensor) in params.iter_mut() {
            let n = tensor.values().len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            let grad = tensor.grad().expect("checked above").to_vec();
            let w = tensor.values_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / corr1;
                let vhat = v[i] / corr2;
                w[i] = w[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment snapshot for checkpointing: (t, first moments, second moments).
    pub fn snapshot(&self) -> (u64, &BTreeMap<String, Vec<S>>, &BTreeMap<String, Vec<S>>) {
        (self.t, &self.m, &self.v)
    }

    /// Restores moments saved by [`Adam::snapshot`].
    pub fn restore(&mut self, t: u64, m: BTreeMap<String, Vec<S>>, v: BTreeMap<String, Vec<S>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
