//! N-dimensional f64 tensors with taped reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a graph node holding row-major
//! f64 data. Every operation computes its result eagerly and, when any input
//! participates in differentiation, records a backward closure linking the
//! output to its inputs. [`Tensor::backward`] replays those closures in
//! reverse topological order, accumulating gradients into every tensor
//! reachable from the loss.
//!
//! Design points:
//! * 64-bit floats throughout; gradient tolerances in the test-suite assume it.
//! * Dynamic graphs: each forward pass records a fresh tape, so per-frame
//!   control flow (memory bypass on the first frame, variable bank sizes)
//!   needs no special casing.
//! * Graphs are single-threaded; handles are not `Send`. Distinct graphs are
//!   fully independent.

mod gradcheck;
mod ops;
#[cfg(test)]
mod op_tests;
mod serialize;

pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use serialize::{read_tensor, write_tensor, DTYPE_F64, TENSOR_MAGIC};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::rng::Rng;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward closure: receives (parents, output data, output gradient) and
/// accumulates into each parent's gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&[Tensor], &[f64], &[f64])>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    backward_ran: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Handle to one node of a differentiation graph.
pub struct Tensor {
    inner: Rc<RefCell<Node>>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape {
            op: "new",
            shape: shape.to_vec(),
            detail: "dimensions must be positive".into(),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::InvalidShape {
            op: "new",
            shape: shape.to_vec(),
            detail: format!("shape implies {numel} elements, data has {len}"),
        });
    }
    Ok(())
}

impl Tensor {
    // ── Constructors ──────────────────────────────────────────────────

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![value; numel], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![value], false)
    }

    /// Uniform values in [lo, hi) drawn from the seeded generator.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
        let numel = shape.iter().product();
        let mut data = vec![0.0; numel];
        rng.fill_uniform(&mut data, lo, hi);
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Leaf that accumulates gradient during backward.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), data, true))
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                id: fresh_id(),
                shape,
                data,
                grad: None,
                requires_grad,
                backward_ran: false,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Record the result of an op. The backward closure is kept only when at
    /// least one parent takes part in differentiation.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                id: fresh_id(),
                shape,
                data,
                grad: None,
                requires_grad,
                backward_ran: false,
                parents,
                backward,
            })),
        }
    }

    // ── Accessors ─────────────────────────────────────────────────────

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Copy of the underlying values, row-major.
    pub fn data(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let n = self.inner.borrow();
        assert_eq!(n.data.len(), 1, "item() on tensor of shape {:?}", n.shape);
        n.data[0]
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Mark a leaf as trainable (or not). No effect on recorded results.
    pub fn set_requires_grad(&self, value: bool) {
        let mut n = self.inner.borrow_mut();
        if n.parents.is_empty() {
            n.requires_grad = value;
        }
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Leaf copy of the values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        let n = self.inner.borrow();
        Tensor::leaf(n.shape.clone(), n.data.clone(), false)
    }

    /// Overwrite the values of a leaf in place (optimizer steps, gradient
    /// checking). Panics on recorded results: their data documents the op
    /// that produced them.
    pub fn set_data(&self, data: &[f64]) {
        let mut n = self.inner.borrow_mut();
        assert!(n.parents.is_empty(), "set_data on a non-leaf tensor");
        assert_eq!(n.data.len(), data.len());
        n.data.copy_from_slice(data);
    }

    /// Overwrite one coordinate of a leaf (finite-difference probing).
    pub(crate) fn poke_data(&self, idx: usize, value: f64) {
        let mut n = self.inner.borrow_mut();
        assert!(n.parents.is_empty(), "poke_data on a non-leaf tensor");
        n.data[idx] = value;
    }

    /// In-place update with access to data and gradient (both leaf-owned).
    pub fn apply_update(&self, f: impl FnOnce(&mut [f64], &[f64])) {
        let mut n = self.inner.borrow_mut();
        assert!(n.parents.is_empty(), "apply_update on a non-leaf tensor");
        let Node { data, grad, .. } = &mut *n;
        if let Some(g) = grad {
            f(data, g);
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub(crate) fn data_ref(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |n| n.data.as_slice())
    }

    pub(crate) fn accum_grad(&self, delta: &[f64]) {
        let mut n = self.inner.borrow_mut();
        debug_assert_eq!(n.data.len(), delta.len());
        match &mut n.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => n.grad = Some(delta.to_vec()),
        }
    }

    /// True when both handles point at the same graph node.
    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    // ── Backward ──────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Every tensor reachable through
    /// recorded ops receives its accumulated gradient. A second call on the
    /// same loss is an error; rebuild the graph (and zero parameter
    /// gradients) for the next step.
    pub fn backward(&self) -> Result<()> {
        {
            let mut n = self.inner.borrow_mut();
            if n.data.len() != 1 {
                return Err(Error::NonScalarLoss {
                    shape: n.shape.clone(),
                });
            }
            if !n.requires_grad {
                return Err(Error::DetachedGraph);
            }
            if n.backward_ran {
                return Err(Error::BackwardAlreadyRan);
            }
            n.backward_ran = true;
            n.grad = Some(vec![1.0]);
        }

        let order = self.topo_postorder();
        for t in order.iter().rev() {
            let n = t.inner.borrow();
            let (Some(f), Some(g)) = (n.backward.as_ref(), n.grad.as_ref()) else {
                continue;
            };
            // Parents are distinct nodes, so accumulating into them while this
            // node stays borrowed cannot alias.
            f(&n.parents, &n.data, g);
        }
        Ok(())
    }

    /// Parents-before-children ordering over the grad-requiring subgraph.
    fn topo_postorder(&self) -> Vec<Tensor> {
        enum Visit {
            Enter(Tensor),
            Exit(Tensor),
        }
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack = vec![Visit::Enter(self.clone())];
        while let Some(v) = stack.pop() {
            match v {
                Visit::Enter(t) => {
                    if !visited.insert(t.id()) {
                        continue;
                    }
                    stack.push(Visit::Exit(t.clone()));
                    let n = t.inner.borrow();
                    for p in &n.parents {
                        if p.requires_grad() && !visited.contains(&p.id()) {
                            stack.push(Visit::Enter(p.clone()));
                        }
                    }
                }
                Visit::Exit(t) => order.push(t),
            }
        }
        order
    }
}
