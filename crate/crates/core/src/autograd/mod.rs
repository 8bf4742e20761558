//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with a closure that maps the gradient of that value onto the gradients of
//! its parents. [`Graph::backward`] walks the tape in reverse.

mod ops;

pub(crate) use ops::{check_bsc, sigmoid};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&mut BackwardCtx<'_, T>, &[T])>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    params: HashMap<usize, Var>,
}

/// View handed to backward closures: parent values plus the gradient
/// buffers they accumulate into.
pub struct BackwardCtx<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Scalar> BackwardCtx<'a, T> {
    pub fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient buffer of `v`, zero-filled on first access.
    pub fn grad_mut(&mut self, v: Var) -> &mut [T] {
        let n = self.nodes[v.0].value.len();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn accumulate(&mut self, v: Var, g: &[T]) {
        if !self.wants(v) {
            return;
        }
        let buf = self.grad_mut(v);
        buf.iter_mut().zip(g).for_each(|(b, &x)| *b = *b + x);
    }

    /// Gradient buffer plus a parent value, for closures that need both at
    /// once.
    pub fn grad_and_value(&mut self, grad_of: Var, value_of: Var) -> (&mut [T], &'a Tensor<T>) {
        let n = self.nodes[grad_of.0].value.len();
        let buf = self.grads[grad_of.0].get_or_insert_with(|| vec![T::zero(); n]);
        (buf.as_mut_slice(), &self.nodes[value_of.0].value)
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            params: HashMap::new(),
        }
    }

    /// A graph that records values only; no backward closures are kept.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf value that does not receive gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Leaf value that receives gradients (when gradients are enabled).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    fn leaf(&mut self, mut t: Tensor<T>, requires_grad: bool) -> Var {
        t.set_requires_grad(false);
        self.nodes.push(Node {
            value: t,
            requires_grad: requires_grad && self.grad_enabled,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter of `store` as a leaf. Repeated calls for the
    /// same name return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let p = store.get_index(idx);
        let v = self.leaf(p.tensor.clone(), p.trainable);
        self.params.insert(idx, v);
        Ok(v)
    }

    /// Parameter-store index for each bound parameter.
    pub fn bound_params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().map(|(&i, &v)| (i, v))
    }

    /// Records a derived value. `backward` is dropped when no parent needs a
    /// gradient or gradients are disabled.
    pub(crate) fn push(&mut self, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let requires = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad: requires,
            backward: if requires { Some(backward) } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass seeded with `d(output)/d(root) = 1` for every element of
    /// `root`, i.e. the gradient of `sum(root)`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let Some(back) = self.nodes[i].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let mut ctx = BackwardCtx {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            back(&mut ctx, &g);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}
