//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! The engine is a define-by-run tape: every operation appends a node holding
//! its forward value and, when any input requires gradients, a backward
//! closure computing vector-Jacobian products. Gradients of intermediate
//! nodes are dropped as soon as they have been propagated; leaf gradients
//! survive until collected.
//!
//! All reductions accumulate sequentially so results are bit-reproducible
//! across runs and thread counts.

mod conv;
mod gradcheck;
mod ops;
mod pool;
mod warp;

pub use conv::{conv2d_eager, PadMode};
pub use gradcheck::check_gradient;
pub use warp::warp_eager;

use ndarray::{ArrayD, IxDyn};

use crate::elem::Elem;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tid(pub(crate) usize);

/// Gradient accumulator used inside backward closures.
pub struct GradStore<F: Elem> {
    slots: Vec<Option<ArrayD<F>>>,
}

impl<F: Elem> GradStore<F> {
    fn new(len: usize) -> Self {
        GradStore { slots: (0..len).map(|_| None).collect() }
    }

    /// Adds `delta` into the gradient slot for `id`.
    pub fn accumulate(&mut self, id: Tid, delta: ArrayD<F>) {
        match &mut self.slots[id.0] {
            Some(g) => *g = &*g + &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn take(&mut self, id: Tid) -> Option<ArrayD<F>> {
        self.slots[id.0].take()
    }
}

type BackFn<F> = Box<dyn Fn(&[ArrayD<F>], &ArrayD<F>, &mut GradStore<F>)>;

/// A computation tape. Create leaves with [`Graph::constant`] /
/// [`Graph::param`], build the computation with the op methods, then call
/// [`Graph::backward`] on a scalar node.
pub struct Graph<F: Elem> {
    values: Vec<ArrayD<F>>,
    grad_flags: Vec<bool>,
    backops: Vec<Option<BackFn<F>>>,
}

impl<F: Elem> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Elem> Graph<F> {
    pub fn new() -> Self {
        Graph { values: Vec::new(), grad_flags: Vec::new(), backops: Vec::new() }
    }

    /// Inserts a leaf that does not require gradients (inputs, frozen weights).
    pub fn constant(&mut self, value: ArrayD<F>) -> Tid {
        self.push(value, false, None)
    }

    /// Inserts a leaf whose gradient will be retained by [`Graph::backward`].
    pub fn param(&mut self, value: ArrayD<F>) -> Tid {
        self.push(value, true, None)
    }

    /// Inserts a scalar constant.
    pub fn scalar_const(&mut self, x: F) -> Tid {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), x))
    }

    pub fn value(&self, id: Tid) -> &ArrayD<F> {
        &self.values[id.0]
    }

    /// Forward value of a scalar (single-element) node.
    pub fn scalar(&self, id: Tid) -> F {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v.iter().next().copied().unwrap()
    }

    pub fn needs_grad(&self, id: Tid) -> bool {
        self.grad_flags[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: ArrayD<F>, needs_grad: bool, backward: Option<BackFn<F>>) -> Tid {
        self.values.push(value);
        self.grad_flags.push(needs_grad);
        self.backops.push(backward);
        Tid(self.values.len() - 1)
    }

    /// Appends an op node; gradient tracking is inherited from the parents.
    /// The backward closure is only kept when some parent needs gradients.
    pub(crate) fn push_op<B>(&mut self, value: ArrayD<F>, parents: &[Tid], backward: B) -> Tid
    where
        B: Fn(&[ArrayD<F>], &ArrayD<F>, &mut GradStore<F>) + 'static,
    {
        let needs = parents.iter().any(|p| self.grad_flags[p.0]);
        self.push(value, needs, if needs { Some(Box::new(backward)) } else { None })
    }

    /// Runs reverse-mode accumulation from the single-element node `root` and
    /// returns the leaf gradients.
    pub fn backward(&self, root: Tid) -> Gradients<F> {
        assert_eq!(self.values[root.0].len(), 1, "backward root must be a single-element node");
        let mut store = GradStore::new(self.values.len());
        store.slots[root.0] =
            Some(ArrayD::from_elem(self.values[root.0].raw_dim(), F::one()));
        for idx in (0..=root.0).rev() {
            if !self.grad_flags[idx] {
                continue;
            }
            match &self.backops[idx] {
                Some(back) => {
                    let Some(grad_out) = store.take(Tid(idx)) else { continue };
                    back(&self.values, &grad_out, &mut store);
                }
                None => {} // leaf: gradient stays in the store for collection
            }
        }
        Gradients { slots: store.slots }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<F: Elem> {
    slots: Vec<Option<ArrayD<F>>>,
}

impl<F: Elem> Gradients<F> {
    pub fn get(&self, id: Tid) -> Option<&ArrayD<F>> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, id: Tid) -> Option<ArrayD<F>> {
        self.slots.get_mut(id.0).and_then(|s| s.take())
    }
}
