//! Dilated 1-D convolution, weight normalization, and average pooling.
//!
//! Convolution uses cross-correlation semantics (no kernel flip). The inner
//! loops are shifted-slice zips over the time axis so they vectorize, and the
//! channel loops are parallelized with disjoint output rows, keeping results
//! bitwise deterministic regardless of thread count.

use rayon::prelude::*;

use super::{Graph, Op, OpCtx, Scalar, TensorId};
use crate::error::{Error, Result};
use crate::util::pool;

/// Zero-padding strategy for [`Graph::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Symmetric zero padding; output length equals input length. Kernel must
    /// be odd.
    NonCausalSame,
    /// Left-only padding; output sample t depends on inputs at <= t.
    Causal,
    /// No padding; output shrinks by (K - 1) * dilation.
    None,
}

struct ConvDims {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    t_in: usize,
    t_out: usize,
    dilation: usize,
    /// Index offset: output t reads input at `t + k*dilation + offset`.
    offset: isize,
}

/// Valid output range `[t0, t1)` for kernel tap k: input index stays in
/// `[0, t_in)`.
fn tap_range(d: &ConvDims, k: usize) -> (usize, usize, isize) {
    let shift = (k * d.dilation) as isize + d.offset;
    let t0 = (-shift).max(0) as usize;
    let t1 = (d.t_in as isize - shift).clamp(0, d.t_out as isize) as usize;
    (t0, t1.max(t0), shift)
}

fn conv_forward<S: Scalar>(x: &[S], w: &[S], bias: Option<&[S]>, d: &ConvDims) -> Vec<S> {
    let mut out = vec![S::zero(); d.c_out * d.t_out];
    pool().install(|| {
        out.par_chunks_mut(d.t_out).enumerate().for_each(|(co, row)| {
            if let Some(b) = bias {
                row.fill(b[co]);
            }
            for ci in 0..d.c_in {
                let xrow = &x[ci * d.t_in..(ci + 1) * d.t_in];
                for k in 0..d.kernel {
                    let wv = w[(co * d.c_in + ci) * d.kernel + k];
                    let (t0, t1, shift) = tap_range(d, k);
                    if t1 <= t0 {
                        continue;
                    }
                    let src = &xrow[(t0 as isize + shift) as usize
                        ..(t1 as isize + shift) as usize];
                    for (o, &xv) in row[t0..t1].iter_mut().zip(src) {
                        *o = *o + wv * xv;
                    }
                }
            }
        });
    });
    out
}

fn conv_backward_input<S: Scalar>(grad_out: &[S], w: &[S], d: &ConvDims) -> Vec<S> {
    let mut gx = vec![S::zero(); d.c_in * d.t_in];
    pool().install(|| {
        gx.par_chunks_mut(d.t_in).enumerate().for_each(|(ci, row)| {
            for co in 0..d.c_out {
                let gy = &grad_out[co * d.t_out..(co + 1) * d.t_out];
                for k in 0..d.kernel {
                    let wv = w[(co * d.c_in + ci) * d.kernel + k];
                    let (t0, t1, shift) = tap_range(d, k);
                    if t1 <= t0 {
                        continue;
                    }
                    let dst = &mut row[(t0 as isize + shift) as usize
                        ..(t1 as isize + shift) as usize];
                    for (xg, &gv) in dst.iter_mut().zip(&gy[t0..t1]) {
                        *xg = *xg + wv * gv;
                    }
                }
            }
        });
    });
    gx
}

fn conv_backward_weight<S: Scalar>(grad_out: &[S], x: &[S], d: &ConvDims) -> Vec<S> {
    let mut gw = vec![S::zero(); d.c_out * d.c_in * d.kernel];
    pool().install(|| {
        gw.par_chunks_mut(d.c_in * d.kernel)
            .enumerate()
            .for_each(|(co, wrow)| {
                let gy = &grad_out[co * d.t_out..(co + 1) * d.t_out];
                for ci in 0..d.c_in {
                    let xrow = &x[ci * d.t_in..(ci + 1) * d.t_in];
                    for k in 0..d.kernel {
                        let (t0, t1, shift) = tap_range(d, k);
                        if t1 <= t0 {
                            continue;
                        }
                        let src = &xrow[(t0 as isize + shift) as usize
                            ..(t1 as isize + shift) as usize];
                        let mut acc = S::zero();
                        for (&gv, &xv) in gy[t0..t1].iter().zip(src) {
                            acc = acc + gv * xv;
                        }
                        wrow[ci * d.kernel + k] = acc;
                    }
                }
            });
    });
    gw
}

#[derive(Debug)]
struct Conv1dOp {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    t_in: usize,
    t_out: usize,
    dilation: usize,
    offset: isize,
    has_bias: bool,
}

impl Conv1dOp {
    fn dims(&self) -> ConvDims {
        ConvDims {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: self.kernel,
            t_in: self.t_in,
            t_out: self.t_out,
            dilation: self.dilation,
            offset: self.offset,
        }
    }
}

impl<S: Scalar> Op<S> for Conv1dOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let d = self.dims();
        let x = ctx.inputs[0];
        let w = ctx.inputs[1];
        let gx = ctx.needs[0].then(|| conv_backward_input(ctx.grad_out, w, &d));
        let gw = ctx.needs[1].then(|| conv_backward_weight(ctx.grad_out, x, &d));
        let mut grads = vec![gx, gw];
        if self.has_bias {
            grads.push(ctx.needs[2].then(|| {
                (0..d.c_out)
                    .map(|co| {
                        ctx.grad_out[co * d.t_out..(co + 1) * d.t_out]
                            .iter()
                            .fold(S::zero(), |a, &g| a + g)
                    })
                    .collect()
            }));
        }
        grads
    }
}

/// w = g * v / ||v||, norm taken per output channel (first axis of v).
#[derive(Debug)]
struct WeightNormOp<S> {
    c_out: usize,
    per_channel: usize,
    norms: Vec<S>,
}

impl<S: Scalar> Op<S> for WeightNormOp<S> {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let v = ctx.inputs[0];
        let g = ctx.inputs[1];
        let m = self.per_channel;
        let mut gv = ctx.needs[0].then(|| vec![S::zero(); v.len()]);
        let mut gg = ctx.needs[1].then(|| vec![S::zero(); self.c_out]);
        for c in 0..self.c_out {
            let n = self.norms[c];
            let vs = &v[c * m..(c + 1) * m];
            let gys = &ctx.grad_out[c * m..(c + 1) * m];
            let dot = vs
                .iter()
                .zip(gys)
                .fold(S::zero(), |acc, (&vv, &gy)| acc + vv * gy);
            if let Some(gv) = gv.as_mut() {
                let scale = g[c] / n;
                let corr = dot / (n * n);
                for j in 0..m {
                    gv[c * m + j] = scale * (gys[j] - vs[j] * corr);
                }
            }
            if let Some(gg) = gg.as_mut() {
                gg[c] = dot / n;
            }
        }
        vec![gv, gg]
    }
}

#[derive(Debug)]
struct AvgPool1dOp {
    c: usize,
    k: usize,
    t_in: usize,
    t_out: usize,
}

impl<S: Scalar> Op<S> for AvgPool1dOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let inv = S::one() / super::sc::<S>(self.k as f64);
        vec![ctx.needs[0].then(|| {
            let mut gx = vec![S::zero(); self.c * self.t_in];
            for c in 0..self.c {
                for j in 0..self.t_out {
                    let g = ctx.grad_out[c * self.t_out + j] * inv;
                    let base = c * self.t_in + j * self.k;
                    for r in 0..self.k {
                        gx[base + r] = g;
                    }
                }
            }
            gx
        })]
    }
}

impl<S: Scalar> Graph<S> {
    /// Dilated 1-D convolution of `input [C_in, T]` with
    /// `weight [C_out, C_in, K]` and optional `bias [C_out]`.
    ///
    /// out[c, t] = bias[c] + sum_{i, k} w[c, i, k] * x[i, t + (k - off) * d]
    /// with zero padding per `pad`.
    pub fn conv1d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        dilation: usize,
        pad: PadMode,
    ) -> Result<TensorId> {
        if dilation < 1 {
            return Err(Error::InvalidArgument {
                context: "conv1d",
                detail: "dilation must be >= 1".into(),
            });
        }
        let (c_in, t_in) = match self.shape(input) {
            [c, t] => (*c, *t),
            other => {
                return Err(Error::ShapeMismatch {
                    context: "conv1d input",
                    detail: format!("expected [C, T], got {other:?}"),
                })
            }
        };
        let (c_out, w_cin, kernel) = match self.shape(weight) {
            [o, i, k] => (*o, *i, *k),
            other => {
                return Err(Error::ShapeMismatch {
                    context: "conv1d weight",
                    detail: format!("expected [C_out, C_in, K], got {other:?}"),
                })
            }
        };
        if w_cin != c_in {
            return Err(Error::ShapeMismatch {
                context: "conv1d",
                detail: format!("input channels {c_in} vs weight {w_cin}"),
            });
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::ShapeMismatch {
                    context: "conv1d bias",
                    detail: format!("expected [{c_out}], got {:?}", self.shape(b)),
                });
            }
        }
        let span = (kernel - 1) * dilation;
        let (offset, t_out) = match pad {
            PadMode::NonCausalSame => {
                if kernel % 2 == 0 {
                    return Err(Error::InvalidArgument {
                        context: "conv1d",
                        detail: "even kernel with non-causal same padding".into(),
                    });
                }
                (-(((kernel / 2) * dilation) as isize), t_in)
            }
            PadMode::Causal => (-(span as isize), t_in),
            PadMode::None => {
                if t_in <= span {
                    return Err(Error::InvalidArgument {
                        context: "conv1d",
                        detail: format!("input length {t_in} too short for span {span}"),
                    });
                }
                (0, t_in - span)
            }
        };
        let op = Conv1dOp {
            c_in,
            c_out,
            kernel,
            t_in,
            t_out,
            dilation,
            offset,
            has_bias: bias.is_some(),
        };
        let data = conv_forward(
            self.data(input),
            self.data(weight),
            bias.map(|b| self.data(b).to_vec()).as_deref(),
            &op.dims(),
        );
        let mut inputs = vec![input, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.push_op(Box::new(op), inputs, data, vec![c_out, t_out]))
    }

    /// Weight normalization: w = g * v / ||v||2 per output channel. `v` may
    /// have any rank; the first axis indexes output channels.
    pub fn weight_norm(&mut self, v: TensorId, g: TensorId) -> Result<TensorId> {
        let vshape = self.shape(v).to_vec();
        let c_out = vshape[0];
        if self.shape(g) != [c_out] {
            return Err(Error::ShapeMismatch {
                context: "weight_norm",
                detail: format!("g shape {:?}, expected [{c_out}]", self.shape(g)),
            });
        }
        let per_channel = self.numel(v) / c_out;
        let vd = self.data(v);
        let mut norms = Vec::with_capacity(c_out);
        for c in 0..c_out {
            let n = vd[c * per_channel..(c + 1) * per_channel]
                .iter()
                .fold(S::zero(), |acc, &x| acc + x * x)
                .sqrt();
            if n == S::zero() {
                return Err(Error::InvalidArgument {
                    context: "weight_norm",
                    detail: format!("zero-norm output channel {c}"),
                });
            }
            norms.push(n);
        }
        let gd = self.data(g);
        let mut data = Vec::with_capacity(vd.len());
        for c in 0..c_out {
            let scale = gd[c] / norms[c];
            data.extend(
                vd[c * per_channel..(c + 1) * per_channel]
                    .iter()
                    .map(|&x| x * scale),
            );
        }
        Ok(self.push_op(
            Box::new(WeightNormOp {
                c_out,
                per_channel,
                norms,
            }),
            vec![v, g],
            data,
            vshape,
        ))
    }

    /// Non-overlapping mean pooling with stride k; trailing samples that do
    /// not fill a window are dropped.
    pub fn avg_pool1d(&mut self, x: TensorId, k: usize) -> Result<TensorId> {
        if k < 1 {
            return Err(Error::InvalidArgument {
                context: "avg_pool1d",
                detail: "k must be >= 1".into(),
            });
        }
        let (c, t_in) = match self.shape(x) {
            [c, t] => (*c, *t),
            other => {
                return Err(Error::ShapeMismatch {
                    context: "avg_pool1d",
                    detail: format!("expected [C, T], got {other:?}"),
                })
            }
        };
        let t_out = t_in / k;
        if t_out == 0 {
            return Err(Error::InvalidArgument {
                context: "avg_pool1d",
                detail: format!("input length {t_in} shorter than window {k}"),
            });
        }
        let xd = self.data(x);
        let inv = S::one() / super::sc::<S>(k as f64);
        let mut data = Vec::with_capacity(c * t_out);
        for ci in 0..c {
            let row = &xd[ci * t_in..(ci + 1) * t_in];
            for j in 0..t_out {
                let s = row[j * k..(j + 1) * k]
                    .iter()
                    .fold(S::zero(), |a, &v| a + v);
                data.push(s * inv);
            }
        }
        Ok(self.push_op(
            Box::new(AvgPool1dOp { c, k, t_in, t_out }),
            vec![x],
            data,
            vec![c, t_out],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_same(x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let xi = g.leaf(x.to_vec(), vec![1, x.len()], false).unwrap();
        let wi = g.leaf(w.to_vec(), vec![1, 1, w.len()], false).unwrap();
        let y = g.conv1d(xi, wi, None, 1, PadMode::NonCausalSame).unwrap();
        g.data(y).to_vec()
    }

    #[test]
    fn same_padding_hand_case() {
        assert_eq!(conv_same(&[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0]), vec![-2.0, -2.0, 2.0]);
    }

    #[test]
    fn identity_kernel_no_padding() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![5.0, 7.0, 9.0], vec![1, 3], false).unwrap();
        let w = g.leaf(vec![1.0], vec![1, 1, 1], false).unwrap();
        let y = g.conv1d(x, w, None, 1, PadMode::None).unwrap();
        assert_eq!(g.data(y), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn causal_output_ignores_future() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0, 4.0, 8.0], vec![1, 4], false).unwrap();
        let w = g.leaf(vec![1.0, 1.0], vec![1, 1, 2], false).unwrap();
        let y = g.conv1d(x, w, None, 1, PadMode::Causal).unwrap();
        // out[t] = x[t-1] + x[t] with left zero pad
        assert_eq!(g.data(y), &[1.0, 3.0, 6.0, 12.0]);
    }

    #[test]
    fn even_kernel_same_padding_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![0.0; 4], vec![1, 4], false).unwrap();
        let w = g.leaf(vec![1.0, 1.0], vec![1, 1, 2], false).unwrap();
        assert!(g.conv1d(x, w, None, 1, PadMode::NonCausalSame).is_err());
        assert!(g.conv1d(x, w, None, 0, PadMode::Causal).is_err());
    }

    #[test]
    fn weight_norm_three_four_five() {
        let mut g = Graph::<f64>::new();
        let v = g.leaf(vec![3.0, 4.0], vec![1, 2], false).unwrap();
        let gn = g.leaf(vec![10.0], vec![1], false).unwrap();
        let w = g.weight_norm(v, gn).unwrap();
        assert!((g.data(w)[0] - 6.0).abs() < 1e-12);
        assert!((g.data(w)[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn weight_norm_identity_on_unit_vector() {
        let mut g = Graph::<f64>::new();
        let v = g.leaf(vec![0.6, 0.8], vec![1, 2], false).unwrap();
        let gn = g.leaf(vec![1.0], vec![1], false).unwrap();
        let w = g.weight_norm(v, gn).unwrap();
        assert!((g.data(w)[0] - 0.6).abs() < 1e-12);
        assert!((g.data(w)[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn weight_norm_rejects_zero_channel() {
        let mut g = Graph::<f64>::new();
        let v = g.leaf(vec![0.0, 0.0], vec![1, 2], false).unwrap();
        let gn = g.leaf(vec![1.0], vec![1], false).unwrap();
        assert!(g.weight_norm(v, gn).is_err());
    }

    #[test]
    fn avg_pool_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 3.0, 5.0, 7.0], vec![1, 4], false).unwrap();
        let y = g.avg_pool1d(x, 2).unwrap();
        assert_eq!(g.data(y), &[2.0, 6.0]);
        let idy = g.avg_pool1d(x, 1).unwrap();
        assert_eq!(g.data(idy), &[1.0, 3.0, 5.0, 7.0]);

        // T=7, k=3: tail sample dropped.
        let x7 = g
            .leaf((1..=7).map(f64::from).collect(), vec![1, 7], false)
            .unwrap();
        let y7 = g.avg_pool1d(x7, 3).unwrap();
        assert_eq!(g.shape(y7), &[1, 2]);
        assert_eq!(g.data(y7), &[2.0, 5.0]);
    }

    #[test]
    fn conv_grads_flow_to_all_inputs() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0, 3.0], vec![1, 3], true).unwrap();
        let w = g.leaf(vec![0.5, -0.25, 1.0], vec![1, 1, 3], true).unwrap();
        let b = g.leaf(vec![0.1], vec![1], true).unwrap();
        let y = g.conv1d(x, w, Some(b), 1, PadMode::NonCausalSame).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_some());
        assert!(g.grad(w).is_some());
        assert_eq!(g.grad(b).unwrap(), &[3.0]);
    }
}
