use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named parameter array stored outside any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Wraps parameters as graph leaves for one forward/backward pass.
///
/// Parameters whose name starts with one of the trainable prefixes become
/// gradient-tracking leaves; everything else enters as a constant. A
/// parameter used several times in one pass maps to a single leaf, so its
/// gradient sums over all uses.
pub struct Binder {
    trainable: Vec<String>,
    leaves: RefCell<HashMap<String, Tensor>>,
}

impl Binder {
    pub fn frozen() -> Self {
        Self::trainable(&[])
    }

    pub fn trainable(prefixes: &[&str]) -> Self {
        Self {
            trainable: prefixes.iter().map(|s| s.to_string()).collect(),
            leaves: RefCell::new(HashMap::new()),
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.iter().any(|p| name.starts_with(p.as_str()))
    }

    pub fn bind(&self, p: &Param) -> Result<Tensor> {
        if let Some(t) = self.leaves.borrow().get(&p.name) {
            return Ok(t.clone());
        }
        let t = if self.is_trainable(&p.name) {
            Tensor::variable(p.data.clone(), &p.shape)?
        } else {
            Tensor::from_vec(p.data.clone(), &p.shape)?
        };
        self.leaves.borrow_mut().insert(p.name.clone(), t.clone());
        Ok(t)
    }

    /// Gradients of every trainable leaf touched since construction. Leaves
    /// that took no part in the loss report zeros.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.leaves
            .borrow()
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(k, t)| (k.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.numel()])))
            .collect()
    }
}

pub(crate) fn check_param_shape(p: &Param, shape: &[usize]) -> Result<()> {
    if p.shape != shape || p.data.len() != shape.iter().product::<usize>() {
        return Err(Error::Shape(format!(
            "parameter {} has shape {:?}, expected {:?}",
            p.name, p.shape, shape
        )));
    }
    Ok(())
}
