//! Adam optimizer over a flat list of parameter tensors.

use super::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update step. `params` and `grads` must line up tensor by tensor
    /// across calls.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        }
        self.t += 1;
        let b1 = T::from_f64_c(self.beta1);
        let b2 = T::from_f64_c(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64_c(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = T::from_f64_c(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::from_f64_c(self.lr);
        let eps = T::from_f64_c(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / corr1;
                let vhat = v[i] / corr2;
                p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
