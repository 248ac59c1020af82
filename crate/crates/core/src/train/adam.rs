use crate::error::{invalid, Result};
use crate::model::ParamStore;
use crate::tensor::{Element, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments for every parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Element = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()).expect("valid shape"))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return invalid(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for ((p, m), v) in store
            .params_mut()
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let value = p.value.data_mut();
            for (((w, &g), mi), vi) in value
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g.as_f64();
                let mn = BETA1 * mi.as_f64() + (1.0 - BETA1) * g;
                let vn = BETA2 * vi.as_f64() + (1.0 - BETA2) * g * g;
                *mi = T::from_f64(mn);
                *vi = T::from_f64(vn);
                let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + ADAM_EPS);
                *w = T::from_f64(w.as_f64() - update);
            }
        }
        Ok(())
    }
}
