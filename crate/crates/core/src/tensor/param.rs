use super::{Element, Tensor};
use crate::error::{shape_err, Result};

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Element = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape()).expect("value shape is valid");
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape() != self.value.shape() {
            return shape_err("accumulate_grad", self.value.shape(), g.shape());
        }
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a = *a + b;
        }
        Ok(())
    }
}
