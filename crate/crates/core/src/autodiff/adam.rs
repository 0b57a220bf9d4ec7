use super::{ParamStore, Tensor};

/// Adam optimiser state for one [`ParamStore`].
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
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Frozen parameters are skipped entirely.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        debug_assert_eq!(grads.len(), store.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let param = store.get_mut(id);
            if !param.trainable {
                continue;
            }
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in param.value.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn quadratic_step(store: &mut ParamStore, opt: &mut Adam) -> f64 {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = bound.var(store.ids().next().unwrap());
        let loss = tape.dot(x, x).unwrap();
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).unwrap();
        let g = store.gradients(&bound, &grads);
        opt.step(store, &g);
        value
    }

    #[test]
    fn one_step_descends() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0]), true);
        let mut opt = Adam::new(&store, 0.1);
        quadratic_step(&mut store, &mut opt);
        assert!(store.value(id).data()[0].abs() < 1.0);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![0.7, -0.2]), true);
        let mut opt = Adam::new(&store, 0.1);
        opt.step(&mut store, &[Tensor::zeros(&[2])]);
        assert_eq!(store.value(id).data(), &[0.7, -0.2]);
    }

    #[test]
    fn frozen_untouched() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![0.7]), false);
        let mut opt = Adam::new(&store, 0.1);
        opt.step(&mut store, &[Tensor::vector(vec![5.0])]);
        assert_eq!(store.value(id).data()[0].to_bits(), 0.7f64.to_bits());
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(vec![1.0, -0.5, 0.25]), true);
        let mut opt = Adam::new(&store, 0.1);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            last = quadratic_step(&mut store, &mut opt);
        }
        let final_loss = {
            let x = store.value(store.ids().next().unwrap());
            x.data().iter().map(|v| v * v).sum::<f64>()
        };
        assert!(final_loss < 1e-6, "loss {final_loss} (previous {last})");
    }
}
