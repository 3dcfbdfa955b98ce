//! Dense 64-bit tensors with tape-free reverse-mode differentiation.
//!
//! Every [`DiffTensor`] is a reference-counted graph node. Operations on
//! tensors that require gradients record their parents; [`DiffTensor::backward`]
//! walks the reachable subgraph in reverse creation order (creation ids are
//! monotonic, so this is a valid reverse topological order) and accumulates
//! gradients additively into each node's gradient slot.
//!
//! Graphs are single-threaded (`Rc`). Gradient accumulation is never reset
//! implicitly: call [`DiffTensor::zero_grad`] between optimizer steps.

pub mod gradcheck;
mod ops;

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use ops::layer_norm;
use ops::Op;

/// Additive mask value for excluded attention logits. Finite so that softmax
/// inputs stay finite; `exp` of it underflows to exactly zero.
pub const MASK_VALUE: f64 = -1.0e30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{len} values do not fill shape {shape:?}")]
    Length { len: usize, shape: Vec<usize> },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("index {index} out of range for extent {extent}")]
    Index { index: usize, extent: usize },
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph edges. Used for inference paths.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    op: Op,
}

/// A dense row-major array of `f64` with an optional gradient slot.
#[derive(Clone)]
pub struct DiffTensor(Rc<Node>);

impl fmt::Debug for DiffTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffTensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad.get())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl DiffTensor {
    fn from_parts(values: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Self {
        debug_assert_eq!(values.len(), numel(&shape));
        DiffTensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            values: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            op,
        }))
    }

    /// Creates the result of an operation, recording `op` only when some
    /// parent participates in differentiation.
    fn from_op(values: Vec<f64>, shape: Vec<usize>, op: Op) -> Self {
        let track = grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        if track {
            Self::from_parts(values, shape, true, op)
        } else {
            Self::from_parts(values, shape, false, Op::Leaf)
        }
    }

    /// A constant leaf.
    pub fn new(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if values.len() != numel(shape) {
            return Err(TensorError::Length {
                len: values.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(values, shape.to_vec(), false, Op::Leaf))
    }

    /// A trainable leaf (`requires_grad` set).
    pub fn parameter(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(values, shape)?;
        t.0.requires_grad.set(true);
        Ok(t)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![value], Vec::new(), false, Op::Leaf)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(vec![0.0; numel(shape)], shape.to_vec(), false, Op::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.0.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.values.borrow().clone()
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        self.0.values.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Toggles gradient tracking on a leaf. Has no effect on recorded
    /// operation results.
    pub fn set_requires_grad(&self, flag: bool) {
        if matches!(self.0.op, Op::Leaf) {
            self.0.requires_grad.set(flag);
            if !flag {
                self.0.grad.replace(None);
            }
        }
    }

    pub fn zero_grad(&self) {
        self.0.grad.replace(None);
    }

    /// Mutates leaf values in place (optimizer updates, checkpoint loads).
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        debug_assert!(matches!(self.0.op, Op::Leaf), "in-place update of a recorded op");
        f(&mut self.0.values.borrow_mut());
    }

    pub fn ptr_eq(&self, other: &DiffTensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Detached copy with fresh storage.
    pub fn detach(&self) -> DiffTensor {
        Self::from_parts(self.to_vec(), self.0.shape.clone(), false, Op::Leaf)
    }

    /// Accumulates d(self)/d(leaf) into every reachable tensor that requires
    /// gradients. Repeated calls add to existing gradients.
    pub fn backward(&self) -> Result<()> {
        if !self.0.shape.is_empty() {
            return Err(TensorError::NotScalar(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.0.id);
        while let Some(t) = stack.pop() {
            for p in t.0.op.parents() {
                if p.requires_grad() && seen.insert(p.0.id) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for t in &order {
            let Some(g) = pending.remove(&t.0.id) else {
                continue;
            };
            t.0.op.backprop(t, &g, &mut |parent: &DiffTensor, pg: Vec<f64>| {
                if !parent.requires_grad() {
                    return;
                }
                match pending.get_mut(&parent.0.id) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(parent.0.id, pg);
                    }
                }
            });
            let mut slot = t.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
