//! Elementwise and reduction primitives with their backward rules.

use super::{sc, Graph, Op, OpCtx, Scalar, TensorId};
use crate::error::{Error, Result};

fn map_grad<S: Scalar>(grad: &[S], f: impl Fn(S, usize) -> S) -> Vec<S> {
    grad.iter().enumerate().map(|(i, &g)| f(g, i)).collect()
}

#[derive(Debug)]
struct AddOp;

impl<S: Scalar> Op<S> for AddOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let g = ctx.grad_out;
        vec![
            ctx.needs[0].then(|| g.to_vec()),
            ctx.needs[1].then(|| g.to_vec()),
        ]
    }
}

#[derive(Debug)]
struct SubOp;

impl<S: Scalar> Op<S> for SubOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let g = ctx.grad_out;
        vec![
            ctx.needs[0].then(|| g.to_vec()),
            ctx.needs[1].then(|| map_grad(g, |v, _| -v)),
        ]
    }
}

#[derive(Debug)]
struct MulOp;

impl<S: Scalar> Op<S> for MulOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let g = ctx.grad_out;
        vec![
            ctx.needs[0].then(|| map_grad(g, |v, i| v * b[i])),
            ctx.needs[1].then(|| map_grad(g, |v, i| v * a[i])),
        ]
    }
}

#[derive(Debug)]
struct DivOp;

impl<S: Scalar> Op<S> for DivOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let g = ctx.grad_out;
        vec![
            ctx.needs[0].then(|| map_grad(g, |v, i| v / b[i])),
            ctx.needs[1].then(|| map_grad(g, |v, i| -v * a[i] / (b[i] * b[i]))),
        ]
    }
}

/// y = mul * x + add, elementwise with constant coefficients.
#[derive(Debug)]
struct AffineOp<S> {
    mul: S,
}

impl<S: Scalar> Op<S> for AffineOp<S> {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        vec![ctx.needs[0].then(|| map_grad(ctx.grad_out, |v, _| v * self.mul))]
    }
}

#[derive(Debug)]
struct SqrtOp;

impl<S: Scalar> Op<S> for SqrtOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        // dy/dx = 1/(2 sqrt(x)); subgradient 0 at x == 0.
        let y = ctx.output;
        vec![ctx.needs[0].then(|| {
            map_grad(ctx.grad_out, |v, i| {
                if y[i] > S::zero() {
                    v / (sc::<S>(2.0) * y[i])
                } else {
                    S::zero()
                }
            })
        })]
    }
}

/// y = ln(max(x, eps)); gradient is zero in the clamped region.
#[derive(Debug)]
struct LogClampedOp<S> {
    eps: S,
}

impl<S: Scalar> Op<S> for LogClampedOp<S> {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let x = ctx.inputs[0];
        let eps = self.eps;
        vec![ctx.needs[0].then(|| {
            map_grad(ctx.grad_out, |v, i| {
                if x[i] > eps {
                    v / x[i]
                } else {
                    S::zero()
                }
            })
        })]
    }
}

#[derive(Debug)]
struct AbsOp;

impl<S: Scalar> Op<S> for AbsOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let x = ctx.inputs[0];
        vec![ctx.needs[0].then(|| {
            map_grad(ctx.grad_out, |v, i| {
                if x[i] > S::zero() {
                    v
                } else if x[i] < S::zero() {
                    -v
                } else {
                    S::zero()
                }
            })
        })]
    }
}

#[derive(Debug)]
struct SumOp {
    n: usize,
}

impl<S: Scalar> Op<S> for SumOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let g = ctx.grad_out[0];
        vec![ctx.needs[0].then(|| vec![g; self.n])]
    }
}

#[derive(Debug)]
struct MeanOp {
    n: usize,
}

impl<S: Scalar> Op<S> for MeanOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let g = ctx.grad_out[0] / sc::<S>(self.n as f64);
        vec![ctx.needs[0].then(|| vec![g; self.n])]
    }
}

#[derive(Debug)]
struct LeakyReluOp<S> {
    slope: S,
}

impl<S: Scalar> Op<S> for LeakyReluOp<S> {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let x = ctx.inputs[0];
        let slope = self.slope;
        vec![ctx.needs[0].then(|| {
            map_grad(ctx.grad_out, |v, i| {
                if x[i] >= S::zero() {
                    v
                } else {
                    v * slope
                }
            })
        })]
    }
}

/// y = tanh(a) * sigmoid(b). Both nonlinearities are saved at record time so
/// backward avoids recomputing exponentials.
#[derive(Debug)]
struct GatedActivationOp<S> {
    tanh_a: Vec<S>,
    sig_b: Vec<S>,
}

impl<S: Scalar> Op<S> for GatedActivationOp<S> {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let (ta, sb) = (&self.tanh_a, &self.sig_b);
        let one = S::one();
        vec![
            ctx.needs[0].then(|| {
                map_grad(ctx.grad_out, |v, i| v * (one - ta[i] * ta[i]) * sb[i])
            }),
            ctx.needs[1].then(|| {
                map_grad(ctx.grad_out, |v, i| v * ta[i] * sb[i] * (one - sb[i]))
            }),
        ]
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    // Split by sign so the exponential never overflows.
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> Graph<S> {
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "add")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(Box::new(AddOp), vec![a, b], data, shape))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "sub")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(Box::new(SubOp), vec![a, b], data, shape))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "mul")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(Box::new(MulOp), vec![a, b], data, shape))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "div")?;
        if self.data(b).iter().any(|v| *v == S::zero()) {
            return Err(Error::InvalidArgument {
                context: "div",
                detail: "division by zero".into(),
            });
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x / y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(Box::new(DivOp), vec![a, b], data, shape))
    }

    /// Elementwise `mul * x + add` with constant coefficients.
    pub fn affine(&mut self, x: TensorId, mul: S, add: S) -> Result<TensorId> {
        let data = self.data(x).iter().map(|&v| mul * v + add).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(Box::new(AffineOp { mul }), vec![x], data, shape))
    }

    pub fn neg(&mut self, x: TensorId) -> Result<TensorId> {
        self.affine(x, -S::one(), S::zero())
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId> {
        if self.data(x).iter().any(|v| *v < S::zero()) {
            return Err(Error::InvalidArgument {
                context: "sqrt",
                detail: "negative input".into(),
            });
        }
        let data = self.data(x).iter().map(|v| v.sqrt()).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(Box::new(SqrtOp), vec![x], data, shape))
    }

    /// `ln(max(x, eps))` elementwise.
    pub fn log_clamped(&mut self, x: TensorId, eps: S) -> Result<TensorId> {
        if eps <= S::zero() {
            return Err(Error::InvalidArgument {
                context: "log_clamped",
                detail: "eps must be positive".into(),
            });
        }
        let data = self.data(x).iter().map(|&v| v.max(eps).ln()).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(Box::new(LogClampedOp { eps }), vec![x], data, shape))
    }

    pub fn abs(&mut self, x: TensorId) -> Result<TensorId> {
        let data = self.data(x).iter().map(|v| v.abs()).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(Box::new(AbsOp), vec![x], data, shape))
    }

    /// Reduce to a scalar sum, shape `[1]`.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.numel(x);
        let total = self.data(x).iter().fold(S::zero(), |acc, &v| acc + v);
        Ok(self.push_op(Box::new(SumOp { n }), vec![x], vec![total], vec![1]))
    }

    /// Reduce to a scalar mean, shape `[1]`.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.numel(x);
        if n == 0 {
            return Err(Error::InvalidArgument {
                context: "mean",
                detail: "empty tensor".into(),
            });
        }
        let total = self.data(x).iter().fold(S::zero(), |acc, &v| acc + v);
        let m = total / sc::<S>(n as f64);
        Ok(self.push_op(Box::new(MeanOp { n }), vec![x], vec![m], vec![1]))
    }

    /// x for x >= 0, slope * x otherwise. Requires `0 <= slope < 1`.
    pub fn leaky_relu(&mut self, x: TensorId, slope: S) -> Result<TensorId> {
        if slope < S::zero() || slope >= S::one() {
            return Err(Error::InvalidArgument {
                context: "leaky_relu",
                detail: format!("slope {slope} outside [0, 1)"),
            });
        }
        let data = self
            .data(x)
            .iter()
            .map(|&v| if v >= S::zero() { v } else { v * slope })
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(Box::new(LeakyReluOp { slope }), vec![x], data, shape))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        self.leaky_relu(x, S::zero())
    }

    /// tanh(a) * sigmoid(b), the WaveNet-style gate.
    pub fn gated_activation(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "gated_activation")?;
        let tanh_a: Vec<S> = self.data(a).iter().map(|v| v.tanh()).collect();
        let sig_b: Vec<S> = self.data(b).iter().map(|&v| sigmoid(v)).collect();
        let data = tanh_a.iter().zip(&sig_b).map(|(&t, &s)| t * s).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(
            Box::new(GatedActivationOp { tanh_a, sig_b }),
            vec![a, b],
            data,
            shape,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gated_activation_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(vec![0.0; 4], vec![4], false).unwrap();
        let b = g.leaf(vec![0.0; 4], vec![4], false).unwrap();
        let y = g.gated_activation(a, b).unwrap();
        assert!(g.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gated_activation_saturates_to_one() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(vec![50.0], vec![1], false).unwrap();
        let b = g.leaf(vec![50.0], vec![1], false).unwrap();
        let y = g.gated_activation(a, b).unwrap();
        assert!((g.data(y)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![2.0, -1.0], vec![2], false).unwrap();
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.data(y), &[2.0, -0.2]);
        assert!(g.leaky_relu(x, 1.0).is_err());
        assert!(g.leaky_relu(x, -0.1).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(vec![1.0, 2.0], vec![2], false).unwrap();
        let b = g.leaf(vec![1.0], vec![1], false).unwrap();
        assert!(g.add(a, b).is_err());
        assert!(g.gated_activation(a, b).is_err());
    }

    #[test]
    fn log_clamped_floor() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![0.0, 1.0], vec![2], false).unwrap();
        let y = g.log_clamped(x, 1e-7).unwrap();
        assert!((g.data(y)[0] - (1e-7f64).ln()).abs() < 1e-12);
        assert_eq!(g.data(y)[1], 0.0);
    }

    #[test]
    fn mean_and_sum_reduce() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 6.0], vec![4], true).unwrap();
        let s = g.sum(x).unwrap();
        let m = g.mean(x).unwrap();
        assert_eq!(g.data(s), &[12.0]);
        assert_eq!(g.data(m), &[3.0]);
    }
}
