use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Learning-rate group. Modules that would be initialized from pretrained
/// weights at full scale train at the lower rate even when randomly
/// initialized here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    NewInit,
    PretrainedInit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub group: ParamGroup,
    pub frozen: bool,
}

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            group,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    /// Truncated-normal weight.
    pub fn weight(&mut self, name: impl Into<String>, shape: &[usize], group: ParamGroup, rng: &mut Rng) -> ParamId {
        let t = Tensor::from_fn(shape, |_| rng.trunc_normal(INIT_STD));
        self.add(name, t, group)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize], group: ParamGroup) -> ParamId {
        self.add(name, Tensor::zeros(shape), group)
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize], group: ParamGroup) -> ParamId {
        self.add(name, Tensor::full(shape, 1.0), group)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.params[id.0].value.shape(), "set_value shape");
        self.params[id.0].value = value;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every parameter bound in `graph`.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) {
        for (id, var) in graph.bound_params() {
            if let Some(g) = grads.get(var) {
                self.params[id.0].grad.add_assign(g);
            }
        }
    }

    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrites values by name. Every named tensor must exist with the same
    /// shape; parameters absent from `values` keep their current value.
    pub fn load(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in values {
            let id = self
                .find(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("unknown parameter {name}")))?;
            if self.params[id.0].value.shape() != t.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {name}: stored shape {:?}, expected {:?}",
                    t.shape(),
                    self.params[id.0].value.shape()
                )));
            }
            self.params[id.0].value = t.clone();
        }
        Ok(())
    }
}
