//! Dense real/complex tensors with reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tensor`] records a node in a dynamically built
//! graph when gradient mode is on and at least one input is tracked. Node
//! ids are handed out from a monotone counter, so sorting reachable nodes by
//! id reproduces forward execution order; [`backward`] walks that order in
//! reverse.
//!
//! Backward rules are themselves written in terms of tensor operations. With
//! `create_graph` set they are recorded like any forward computation, which
//! yields gradients that can be differentiated once more (used by the
//! gradient penalty of the critic).
//!
//! Complex tensors store interleaved `(re, im)` pairs. Only the Fourier
//! transform, the real/imag split and join, addition and scaling accept them;
//! everything else works on real data. Gradients of complex tensors treat the
//! real and imaginary parts as independent real variables.

mod autograd;
pub mod gradcheck;
pub mod fft;
mod kernels;
mod ops;

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use autograd::{backward, grad, Gradients};
pub(crate) use kernels::pairwise_sum;
pub(crate) use ops::Op;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real,
    Complex,
}

impl DType {
    /// Number of `f64` words per logical element.
    pub fn width(self) -> usize {
        match self {
            DType::Real => 1,
            DType::Complex => 2,
        }
    }
}

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);
static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Process-wide accounting of tensor buffer bytes.
pub mod memory {
    use super::*;

    pub fn live_bytes() -> usize {
        LIVE_BYTES.load(Ordering::Relaxed)
    }

    pub fn peak_bytes() -> usize {
        PEAK_BYTES.load(Ordering::Relaxed)
    }

    /// Resets the high-water mark to the current live byte count.
    pub fn reset_peak() {
        PEAK_BYTES.store(LIVE_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
    }
}

pub(crate) struct Buffer(Vec<f64>);

impl Buffer {
    fn new(data: Vec<f64>) -> Self {
        let bytes = data.len() * std::mem::size_of::<f64>();
        let live = LIVE_BYTES.fetch_add(bytes, Ordering::Relaxed) + bytes;
        PEAK_BYTES.fetch_max(live, Ordering::Relaxed);
        Buffer(data)
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        let bytes = self.0.len() * std::mem::size_of::<f64>();
        LIVE_BYTES.fetch_sub(bytes, Ordering::Relaxed);
    }
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    shape: Vec<usize>,
    dtype: DType,
    data: Arc<Buffer>,
    node: Option<Node>,
}

/// Immutable n-dimensional array, optionally attached to a computation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct GradModeGuard(bool);

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

fn set_grad_mode(enabled: bool) -> GradModeGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    GradModeGuard(prev)
}

/// Runs `f` without recording any graph nodes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = set_grad_mode(false);
    f()
}

pub(crate) fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    let _guard = set_grad_mode(enabled);
    f()
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub(crate) fn from_parts(data: Vec<f64>, shape: Vec<usize>, dtype: DType, node: Option<Node>) -> Self {
        debug_assert_eq!(data.len(), numel_of(&shape) * dtype.width());
        Tensor {
            inner: Arc::new(Inner {
                shape,
                dtype,
                data: Arc::new(Buffer::new(data)),
                node,
            }),
        }
    }

    fn share_buffer(&self, shape: Vec<usize>, node: Option<Node>) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                shape,
                dtype: self.inner.dtype,
                data: Arc::clone(&self.inner.data),
                node,
            }),
        }
    }

    /// Builds the result of an op, attaching a graph node when required.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, dtype: DType, op: Op, inputs: &[&Tensor]) -> Self {
        let node = Self::make_node(op, inputs);
        Self::from_parts(data, shape, dtype, node)
    }

    pub(crate) fn make_node(op: Op, inputs: &[&Tensor]) -> Option<Node> {
        if is_grad_enabled() && inputs.iter().any(|t| t.is_tracked()) {
            Some(Node {
                id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
                op,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            })
        } else {
            None
        }
    }

    /// Constant real tensor. Fails when `data.len()` disagrees with `shape`.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel_of(shape) {
            return Err(Error::shape("from_vec", &[data.len()], shape));
        }
        Ok(Self::from_parts(data, shape.to_vec(), DType::Real, None))
    }

    /// Constant complex tensor from interleaved `(re, im)` words.
    pub fn from_interleaved(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != 2 * numel_of(shape) {
            return Err(Error::shape("from_interleaved", &[data.len()], shape));
        }
        Ok(Self::from_parts(data, shape.to_vec(), DType::Complex, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![v], vec![], DType::Real, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_parts(vec![v; numel_of(shape)], shape.to_vec(), DType::Real, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn complex_zeros(shape: &[usize]) -> Self {
        Self::from_parts(vec![0.0; 2 * numel_of(shape)], shape.to_vec(), DType::Complex, None)
    }

    pub fn zeros_like(&self) -> Self {
        match self.dtype() {
            DType::Real => Self::zeros(self.shape()),
            DType::Complex => Self::complex_zeros(self.shape()),
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(data, vec![n, n], DType::Real, None)
    }

    /// Standard-normal samples scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel_of(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::from_parts(data, shape.to_vec(), DType::Real, None)
    }

    /// Uniform samples on `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel_of(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Self::from_parts(data, shape.to_vec(), DType::Real, None)
    }

    /// A fresh graph leaf that gradients can be requested for.
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(t.into_leaf())
    }

    /// Re-wraps this tensor's values as a new tracked leaf.
    pub fn into_leaf(self) -> Self {
        let node = Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            op: Op::Leaf,
            inputs: Vec::new(),
        };
        self.share_buffer(self.inner.shape.clone(), Some(node))
    }

    /// Same values, no graph history.
    pub fn detach(&self) -> Self {
        self.share_buffer(self.inner.shape.clone(), None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    pub fn is_complex(&self) -> bool {
        self.inner.dtype == DType::Complex
    }

    /// Raw element words (interleaved for complex tensors).
    pub fn data(&self) -> &[f64] {
        &self.inner.data.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().to_vec()
    }

    /// The single value of a one-element real tensor.
    pub fn item(&self) -> f64 {
        assert!(
            self.numel() == 1 && !self.is_complex(),
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.data()[0]
    }

    /// True when the tensor participates in a graph (leaf or op output).
    pub fn is_tracked(&self) -> bool {
        self.inner.node.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.node, Some(Node { op: Op::Leaf, .. }))
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.inner.node.as_ref()
    }

    /// Graph node id, if tracked.
    pub fn id(&self) -> Option<u64> {
        self.inner.node.as_ref().map(|n| n.id)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data()
            .iter()
            .zip(other.data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Real-valued element at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert!(!self.is_complex());
        self.data()[flat_index(self.shape(), index)]
    }
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank");
    let mut flat = 0;
    for (d, (&i, &n)) in index.iter().zip(shape).enumerate() {
        assert!(i < n, "index {i} out of bounds for axis {d} of size {n}");
        flat = flat * n + i;
    }
    flat
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("dtype", &self.dtype())
            .field("tracked", &self.is_tracked())
            .field("data", &preview)
            .finish()
    }
}
