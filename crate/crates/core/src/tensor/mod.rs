//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Every tensor produced by an op whose inputs require gradients records its
//! parents and a backward closure. Node ids grow monotonically, so the tape is
//! recovered at [`Tensor::backward`] time by collecting the reachable nodes
//! and walking them in decreasing id order. Each node is visited exactly once.
//!
//! Tensors are reference counted and confined to one thread. Model parameters
//! live outside the graph as plain vectors and are wrapped as leaves per step.

mod gradcheck;
mod ops;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use gradcheck::grad_check;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Returns gradients w.r.t. each parent given `(out_value, out_grad, parents)`.
/// Entries for parents that do not require grad may be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>>>;

struct Recorded {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<Recorded>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Recorded>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A leaf that accumulates gradients.
    pub fn variable(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(Self::build(t.shape().to_vec(), t.0.data.clone(), true, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::build(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    /// Result of an op: records the backward closure only when needed.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: &[&Tensor],
        backward: impl Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = requires_grad.then(|| Recorded {
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Rows and columns when viewed as a matrix: `[] → 1×1`, `[n] → 1×n`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        dims2(self.shape())
    }

    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Propagates `d self / d leaf` into every reachable leaf that requires
    /// grad. Gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Collect the reachable sub-tape.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            if let Some(op) = &t.0.op {
                for p in &op.parents {
                    if p.requires_grad() && !seen.contains(&p.0.id) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        for node in &order {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            match &node.0.op {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(op) => {
                    let parent_grads = (op.backward)(&node.0.data, &g, &op.parents);
                    for (p, pg) in op.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn dims2(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        0 => Ok((1, 1)),
        1 => Ok((1, shape[0])),
        2 => Ok((shape[0], shape[1])),
        _ => Err(Error::shape(format!(
            "rank {} tensors are not supported here",
            shape.len()
        ))),
    }
}

#[cfg(test)]
mod tests;
