//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every tensor created during one forward recording: leaves
//! (inputs and parameters) and op outputs. Each differentiable primitive
//! appends an op record; [`Graph::backward`] replays the records in reverse
//! and accumulates gradients in a fixed order, so results are bitwise
//! reproducible for identical inputs.
//!
//! The element type is generic: `f64` for oracle and gradient-check paths,
//! `f32` for training throughput. A graph and its tensors are confined to a
//! single thread between record and backward; independent graphs may run on
//! different threads.

mod conv;
mod elementwise;
mod layout;
mod stft;

pub use conv::PadMode;
pub use stft::MAGNITUDE_EPS;

use std::fmt;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Element type supported by the engine.
pub trait Scalar:
    Float + FromPrimitive + rustfft::FftNum + fmt::Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for converting literal constants into the element type.
pub(crate) fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("constant representable in scalar type")
}

/// Handle to a tensor stored in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

struct Node<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    /// True if this node participates in differentiation (leaf flag for
    /// leaves, derived for op outputs).
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

/// Context handed to an op's backward rule.
pub(crate) struct OpCtx<'a, S> {
    pub inputs: &'a [&'a [S]],
    pub output: &'a [S],
    pub grad_out: &'a [S],
    /// Which inputs need a gradient; rules may skip work for `false` slots.
    pub needs: &'a [bool],
}

/// One recorded primitive. Forward results are computed eagerly; the record
/// only has to produce vector-Jacobian products.
pub(crate) trait Op<S: Scalar>: fmt::Debug {
    /// Gradient contribution per input (`None` where `needs` is false).
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>>;
}

struct OpEntry<S: Scalar> {
    op: Box<dyn Op<S>>,
    inputs: Vec<TensorId>,
    output: TensorId,
}

/// Recording of one forward pass plus the tensors it produced.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    ops: Vec<OpEntry<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            ops: Vec::new(),
            consumed: false,
        }
    }

    /// Create a leaf tensor. Rejects shape/length mismatches and non-finite
    /// values: NaN and Inf are an error surface here, never silent state.
    pub fn leaf(
        &mut self,
        data: Vec<S>,
        shape: Vec<usize>,
        requires_grad: bool,
    ) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(Error::ShapeMismatch {
                context: "leaf",
                detail: format!("shape {:?} does not hold {} elements", shape, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "leaf" });
        }
        Ok(self.push_node(data, shape, requires_grad))
    }

    /// Leaf that never takes gradients.
    pub fn constant(&mut self, data: Vec<S>, shape: Vec<usize>) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    /// Scalar constant, shape `[1]`.
    pub fn scalar(&mut self, value: S) -> Result<TensorId> {
        self.leaf(vec![value], vec![1], false)
    }

    fn push_node(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            grad: None,
        });
        id
    }

    /// Record an op output. The op entry is only kept when some input needs a
    /// gradient; pure-inference paths cost no tape space.
    pub(crate) fn push_op(
        &mut self,
        op: Box<dyn Op<S>>,
        inputs: Vec<TensorId>,
        data: Vec<S>,
        shape: Vec<usize>,
    ) -> TensorId {
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        let out = self.push_node(data, shape, requires_grad);
        if requires_grad {
            self.ops.push(OpEntry { op, inputs, output: out });
        }
        out
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].data
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient buffer populated by [`Graph::backward`].
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Number of recorded (differentiable) ops.
    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every tensor
    /// with `requires_grad`, zero-filled where no gradient flowed. A graph
    /// records one forward pass and supports exactly one backward sweep.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let numel = self.numel(loss);
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut bufs: Vec<Option<Vec<S>>> = (0..n).map(|_| None).collect();
        bufs[loss.0] = Some(vec![S::one()]);

        for entry in self.ops.iter().rev() {
            // Each node has exactly one producer, so the output gradient is
            // final once its producing op is reached in the reverse sweep.
            let Some(grad_out) = bufs[entry.output.0].take() else {
                continue;
            };
            let needs: Vec<bool> = entry
                .inputs
                .iter()
                .map(|id| self.nodes[id.0].requires_grad)
                .collect();
            let input_data: Vec<&[S]> = entry
                .inputs
                .iter()
                .map(|id| self.nodes[id.0].data.as_slice())
                .collect();
            let ctx = OpCtx {
                inputs: &input_data,
                output: &self.nodes[entry.output.0].data,
                grad_out: &grad_out,
                needs: &needs,
            };
            let contributions = entry.op.backward(ctx);
            debug_assert_eq!(contributions.len(), entry.inputs.len());
            for (id, contrib) in entry.inputs.iter().zip(contributions) {
                let Some(g) = contrib else { continue };
                debug_assert_eq!(g.len(), self.nodes[id.0].data.len());
                match &mut bufs[id.0] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a = *a + *v;
                        }
                    }
                    None => bufs[id.0] = Some(g),
                }
            }
            self.nodes[entry.output.0].grad = Some(grad_out);
        }

        for (idx, buf) in bufs.into_iter().enumerate() {
            if self.nodes[idx].requires_grad && self.nodes[idx].grad.is_none() {
                self.nodes[idx].grad =
                    Some(buf.unwrap_or_else(|| vec![S::zero(); self.nodes[idx].data.len()]));
            }
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(
        &self,
        a: TensorId,
        b: TensorId,
        context: &'static str,
    ) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                context,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_rejects_shape_mismatch_and_nonfinite() {
        let mut g = Graph::<f64>::new();
        assert!(g.leaf(vec![1.0, 2.0], vec![3], true).is_err());
        assert!(g.leaf(vec![f64::NAN], vec![1], true).is_err());
        assert!(g.leaf(vec![f64::INFINITY], vec![1], false).is_err());
        assert!(g.leaf(vec![1.0, 2.0], vec![2], true).is_ok());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
        assert!(matches!(
            g.backward(x),
            Err(Error::NonScalarLoss { numel: 2 })
        ));
    }

    #[test]
    fn sum_of_squares_gradient() {
        // loss = sum(x*x) -> grad = 2x
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, -2.0, 3.0], vec![3], true).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn disconnected_tensor_gets_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![2.0], vec![1], true).unwrap();
        let y = g.leaf(vec![5.0, 5.0], vec![2], true).unwrap();
        let loss = g.mul(x, x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
        assert_eq!(g.grad(y).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn double_backward_without_rerecord_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0], vec![1], true).unwrap();
        let loss = g.mul(x, x).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
    }

    #[test]
    fn inference_path_records_no_ops() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0], vec![2], false).unwrap();
        let y = g.mul(x, x).unwrap();
        let _ = g.sum(y).unwrap();
        assert_eq!(g.op_count(), 0);
    }
}
