//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to a value plus, when it was
//! produced by a differentiable op while gradients were enabled, the node
//! that knows how to push an output gradient back to its inputs. Calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse topological
//! order and accumulates (`+=`) into the `grad` slot of every reachable tensor
//! that requires a gradient.
//!
//! Element-wise kernels are single threaded. Matrix products may use
//! several threads (see [`set_gemm_threads`]), but those split the output
//! into blocks and never the inner dimension, so every dot product is summed
//! in the same order and results are bitwise reproducible run to run.

mod conv;
mod float;
mod norm;
mod ops;

use std::cell::Cell;
use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

pub use conv::{conv1d, conv2d_kx1, conv_transpose1d, ConvParams};
pub use float::{gemm, set_gemm_threads, Float};
pub use norm::{spectral_norm_apply, weight_norm_reparam};
pub use ops::{avg_pool1d, l1_distance, squared_error};

use crate::error::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph nodes on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Gradient of one op with respect to each parent (`None` when the parent
/// does not require a gradient).
pub(crate) type ParentGrads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = dyn Fn(&[T], &[Tensor<T>]) -> ParentGrads<T> + Send + Sync;

struct GradNode<T: Float> {
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: Box<BackwardFn<T>>,
}

struct Inner<T: Float> {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: AtomicBool,
    node: Option<GradNode<T>>,
}

/// N-dimensional real array with optional gradient and graph linkage.
pub struct Tensor<T: Float = f64> {
    inner: Arc<Inner<T>>,
}

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.inner.shape)
            .field("requires_grad", &self.requires_grad());
        if let Some(node) = &self.inner.node {
            s.field("op", &node.op);
        }
        if self.numel() <= 16 {
            s.field("data", &*self.data());
        }
        s.finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return crate::error::shape_err("tensor", format!("zero-sized dimension in {shape:?}"));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return crate::error::shape_err(
            "tensor",
            format!("shape {shape:?} holds {n} elements but data has {len}"),
        );
    }
    Ok(())
}

impl<T: Float> Tensor<T> {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        node: Option<GradNode<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad: AtomicBool::new(requires_grad),
                node,
            }),
        }
    }

    /// A constant (no gradient) tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// A leaf that requires a gradient.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_parts(shape.to_vec(), data, true, None))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&x| T::of(x)).collect(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![T::of(value)], false, None)
    }

    /// Result of a differentiable op. A graph node is attached only when
    /// gradients are enabled and some parent requires one.
    pub(crate) fn from_op<F>(
        shape: Vec<usize>,
        data: Vec<T>,
        op: &'static str,
        parents: Vec<Tensor<T>>,
        backward: F,
    ) -> Self
    where
        F: Fn(&[T], &[Tensor<T>]) -> ParentGrads<T> + Send + Sync + 'static,
    {
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        let node = track.then(|| GradNode {
            op,
            parents,
            backward: Box::new(backward),
        });
        Self::from_parts(shape, data, track, node)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access for in-place parameter updates. Never call while a
    /// graph that reads this tensor is still awaiting `backward`.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<T>> {
        self.inner.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|x| x.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.data()[0].as_f64()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.load(Ordering::Relaxed)
    }

    /// Freezes or unfreezes a leaf. Has no effect on op outputs.
    pub fn set_requires_grad(&self, on: bool) {
        if self.inner.node.is_none() {
            self.inner.requires_grad.store(on, Ordering::Relaxed);
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// Converts to another element type as a constant.
    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.inner.shape.clone(),
            self.data().iter().map(|x| U::of(x.as_f64())).collect(),
            false,
            None,
        )
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
            None => *slot = Some(g),
        }
    }

    /// Back-propagates from this scalar, accumulating into every reachable
    /// tensor that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(vec![T::one()]);
        for t in order.iter().rev() {
            let Some(node) = &t.inner.node else { continue };
            let grad_out = match t.inner.grad.lock().expect("grad lock poisoned").as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            let grads = (node.backward)(&grad_out, &node.parents);
            debug_assert_eq!(grads.len(), node.parents.len(), "op {}", node.op);
            for (parent, g) in node.parents.iter().zip(grads) {
                if let Some(g) = g {
                    if parent.requires_grad() {
                        debug_assert_eq!(g.len(), parent.numel(), "grad size from op {}", node.op);
                        parent.accumulate_grad(g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over graph nodes reachable from `self` (parents first).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            let parents: Vec<Tensor<T>> = t
                .inner
                .node
                .as_ref()
                .map(|n| {
                    n.parents
                        .iter()
                        .filter(|p| p.requires_grad())
                        .cloned()
                        .collect()
                })
                .unwrap_or_default();
            stack.push((t, true));
            for p in parents {
                if !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates_shape() {
        assert!(Tensor::<f64>::new(vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::<f64>::new(vec![], &[0]).is_err());
        let t = Tensor::<f64>::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.rank(), 2);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(t.backward(), Err(Error::NotScalar(_))));
    }

    #[test]
    fn sum_of_products_gives_input_as_gradient() {
        let w = Tensor::<f64>::param(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let x = Tensor::<f64>::new(vec![3.0, 4.0, 5.0], &[3]).unwrap();
        w.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, 4.0, 5.0]);
        assert!(x.grad().is_none());
    }

    #[test]
    fn reused_parameter_accumulates() {
        let w = Tensor::<f64>::param(vec![2.0], &[1]).unwrap();
        // loss = w*w + w  -> dw = 2w + 1
        let loss = w.mul(&w).unwrap().add(&w).unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![5.0]);
        // a second backward adds on top
        let loss = w.scale(3.0).sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![8.0]);
    }

    #[test]
    fn intermediate_nodes_get_gradients() {
        let w = Tensor::<f64>::param(vec![1.0, -2.0], &[2]).unwrap();
        let h = w.scale(2.0);
        h.sum().backward().unwrap();
        assert_eq!(h.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let w = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| w.scale(2.0));
        assert!(y.is_leaf());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let w = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let x = Tensor::<f64>::param(vec![3.0], &[1]).unwrap();
        w.set_requires_grad(false);
        w.mul(&x).unwrap().backward().unwrap();
        assert!(w.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn detach_cuts_graph() {
        let w = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let d = w.scale(2.0).detach();
        assert!(!d.requires_grad());
        assert_eq!(d.to_vec(), vec![2.0]);
    }
}
