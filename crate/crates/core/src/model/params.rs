use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::tensor::{Element, Gradients, Graph, Param, Tensor, Var};

/// Weight groups used by one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageGroups {
    /// Key of the encoder weights, derived from the encoder-input resolution.
    pub encoder: String,
    /// Key of the rescale weights, or `None` for a unit factor.
    pub rescale: Option<String>,
}

/// Named parameters plus the stage-to-group share map.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Element = f32> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
    pub share_map: Vec<StageGroups>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
            share_map: Vec::new(),
        }
    }
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name:?} is not bound"),
        }
    }

    /// Points `name` at another node, e.g. a leaf under a gradient check.
    pub fn replace(&mut self, name: &str, v: Var) -> Result<()> {
        match self.index.get(name) {
            Some(&i) => {
                self.vars[i] = v;
                Ok(())
            }
            None => invalid(format!("unknown parameter {name:?}")),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return invalid(format!("duplicate parameter name {name:?}"));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param::new(name, value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    /// Parameters in insertion order.
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `g` once, as a differentiable leaf when
    /// `trainable`, otherwise as a constant.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.leaf(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Adds the gradients of all bound parameters into their slots.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients<T>) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(gr) = grads.get(v) {
                p.accumulate_grad(gr)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            index: self.index.clone(),
            share_map: self.share_map.clone(),
        }
    }
}
