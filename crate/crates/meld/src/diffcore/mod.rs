//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive applications in topological order; values
//! live on the tape and are addressed by [`TensorRef`]. Calling
//! [`Tape::backward`] on a scalar root walks the record once in reverse and
//! accumulates exact analytic gradients for every `requires_grad` leaf.
//!
//! Training runs in f32 (every primitive's outputs are rounded to f32
//! precision after computation), correctness tests in f64. Broadcasting is
//! restricted to leading-axis expansion: a shape may be combined with any
//! shape it is a suffix of; anything else needs an explicit reshape.

mod gradcheck;
mod ops;

pub use gradcheck::{gradcheck, GradcheckReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("gumbel-softmax temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("numerical error: NaN produced by {0}")]
    Numerical(&'static str),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward root does not participate in any gradient path")]
    DetachedRoot,
    #[error("backward was already called on this tape")]
    BackwardTwice,
}

pub type DiffResult<T> = Result<T, DiffError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    #[inline]
    fn round(self, v: f64) -> f64 {
        match self {
            Dtype::F64 => v,
            Dtype::F32 => v as f32 as f64,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);

/// A shaped numeric buffer. Buffers are row-major; `values.len()` always
/// equals the product of `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape/buffer length mismatch"
        );
        Tensor { shape, values }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) enum Op {
    Leaf,
    Add(TensorRef, TensorRef),
    Sub(TensorRef, TensorRef),
    Mul(TensorRef, TensorRef),
    Div(TensorRef, TensorRef),
    Matmul(TensorRef, TensorRef),
    Exp(TensorRef),
    Log(TensorRef),
    PowerConst(TensorRef, f64),
    Softplus(TensorRef),
    Silu(TensorRef),
    Softmax(TensorRef, usize),
    LogSoftmax(TensorRef, usize),
    LayerNorm {
        x: TensorRef,
        scale: TensorRef,
        shift: TensorRef,
        axis: usize,
        /// Saved (normalized values, inverse std per group).
        saved: (Vec<f64>, Vec<f64>),
    },
    EmbeddingLookup {
        table: TensorRef,
        indices: Vec<usize>,
    },
    Concat {
        parts: Vec<TensorRef>,
        axis: usize,
    },
    Slice {
        x: TensorRef,
        axis: usize,
        start: usize,
    },
    Transpose {
        x: TensorRef,
        perm: Vec<usize>,
    },
    Sum {
        x: TensorRef,
        axis: Option<usize>,
    },
    Mean {
        x: TensorRef,
        axis: Option<usize>,
    },
    MaskedFill {
        x: TensorRef,
        mask: Vec<f64>,
    },
    ScaleRows {
        x: TensorRef,
        s: TensorRef,
    },
    Reshape(TensorRef),
}

pub(crate) struct Node {
    pub tensor: Tensor,
    pub requires_grad: bool,
    pub op: Op,
}

/// Ordered record of primitive applications.
///
/// A tape is single-threaded; distinct tapes may run concurrently. Backward
/// may be called once per tape.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    dtype: Dtype,
    debug_nan: bool,
    backward_done: bool,
}

impl Tape {
    pub fn new(dtype: Dtype) -> Self {
        Tape {
            nodes: Vec::new(),
            dtype,
            debug_nan: false,
            backward_done: false,
        }
    }

    /// Enable NaN detection: any primitive producing a NaN raises
    /// [`DiffError::Numerical`].
    pub fn with_nan_check(mut self, enabled: bool) -> Self {
        self.debug_nan = enabled;
        self
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a gradient-tracked leaf.
    pub fn leaf(&mut self, t: Tensor) -> TensorRef {
        self.push_leaf(t, true)
    }

    /// Insert a constant (no gradient participation).
    pub fn constant(&mut self, t: Tensor) -> TensorRef {
        self.push_leaf(t, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> TensorRef {
        self.constant(Tensor::scalar(v))
    }

    fn push_leaf(&mut self, mut t: Tensor, requires_grad: bool) -> TensorRef {
        for v in t.values.iter_mut() {
            *v = self.dtype.round(*v);
        }
        self.nodes.push(Node {
            tensor: t,
            requires_grad,
            op: Op::Leaf,
        });
        TensorRef(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, op: &'static str, node: Node) -> DiffResult<TensorRef> {
        let mut node = node;
        for v in node.tensor.values.iter_mut() {
            *v = self.dtype.round(*v);
        }
        if self.debug_nan && node.tensor.values.iter().any(|v| v.is_nan()) {
            return Err(DiffError::Numerical(op));
        }
        self.nodes.push(node);
        Ok(TensorRef(self.nodes.len() - 1))
    }

    pub fn shape(&self, r: TensorRef) -> &[usize] {
        &self.nodes[r.0].tensor.shape
    }

    pub fn values(&self, r: TensorRef) -> &[f64] {
        &self.nodes[r.0].tensor.values
    }

    pub fn value_scalar(&self, r: TensorRef) -> f64 {
        debug_assert_eq!(self.nodes[r.0].tensor.len(), 1);
        self.nodes[r.0].tensor.values[0]
    }

    pub fn tensor(&self, r: TensorRef) -> &Tensor {
        &self.nodes[r.0].tensor
    }

    pub(crate) fn requires_grad(&self, r: TensorRef) -> bool {
        self.nodes[r.0].requires_grad
    }

    /// Reverse sweep from a scalar root. Returns gradients for every
    /// `requires_grad` node; query leaves through [`Gradients::get`].
    pub fn backward(&mut self, root: TensorRef) -> DiffResult<Gradients> {
        if self.backward_done {
            return Err(DiffError::BackwardTwice);
        }
        let root_node = &self.nodes[root.0];
        if !root_node.tensor.shape.is_empty() && root_node.tensor.len() != 1 {
            return Err(DiffError::NotScalar(root_node.tensor.shape.clone()));
        }
        if !root_node.requires_grad {
            return Err(DiffError::DetachedRoot);
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let grad = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &grad, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(grad);
            }
        }

        let dtype = self.dtype;
        let grads = grads
            .into_iter()
            .map(|g| {
                g.map(|mut v| {
                    for x in v.iter_mut() {
                        *x = dtype.round(*x);
                    }
                    v
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradient map produced by [`Tape::backward`]. Leaves that do not
/// participate in the root's computation yield all-zero gradients.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, r: TensorRef) -> Option<&[f64]> {
        self.grads.get(r.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a leaf, materializing zeros when it never participated.
    pub fn get_or_zeros(&self, tape: &Tape, r: TensorRef) -> Vec<f64> {
        match self.get(r) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.tensor(r).len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let s = tape.sum(x, None).unwrap();
        assert_eq!(tape.value_scalar(s), 6.0);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq, None).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_rejected() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y), Err(DiffError::BackwardTwice));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(DiffError::NotScalar(_))));
    }

    #[test]
    fn detached_root_rejected() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.constant(Tensor::scalar(2.0));
        let y = tape.mul(x, x);
        // Products of constants do not require grad.
        let y = y.unwrap();
        assert_eq!(tape.backward(y), Err(DiffError::DetachedRoot));
    }

    #[test]
    fn non_participating_leaf_gets_zeros() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::new(vec![2], vec![5.0, 6.0]));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get_or_zeros(&tape, unused), vec![0.0, 0.0]);
    }

    #[test]
    fn f32_mode_rounds_forward_values() {
        let mut tape = Tape::new(Dtype::F32);
        let x = tape.leaf(Tensor::scalar(0.1));
        let y = tape.mul(x, x).unwrap();
        let v = tape.value_scalar(y);
        assert_eq!(v, (0.1f32 * 0.1f32) as f64);
    }
}
