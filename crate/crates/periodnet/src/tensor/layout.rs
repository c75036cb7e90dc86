//! Channel layout primitives for `[C, T]` tensors: concat, slice, reshape.

use super::{Graph, Op, OpCtx, Scalar, TensorId};
use crate::error::{Error, Result};

#[derive(Debug)]
struct ConcatChannelsOp {
    /// Channel count per input.
    sections: Vec<usize>,
    t: usize,
}

impl<S: Scalar> Op<S> for ConcatChannelsOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        let mut offset = 0;
        self.sections
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let len = c * self.t;
                let slice = &ctx.grad_out[offset..offset + len];
                offset += len;
                ctx.needs[i].then(|| slice.to_vec())
            })
            .collect()
    }
}

#[derive(Debug)]
struct SliceChannelsOp {
    lo: usize,
    hi: usize,
    c_in: usize,
    t: usize,
}

impl<S: Scalar> Op<S> for SliceChannelsOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        vec![ctx.needs[0].then(|| {
            let mut g = vec![S::zero(); self.c_in * self.t];
            g[self.lo * self.t..self.hi * self.t].copy_from_slice(ctx.grad_out);
            g
        })]
    }
}

#[derive(Debug)]
struct ReshapeOp;

impl<S: Scalar> Op<S> for ReshapeOp {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        vec![ctx.needs[0].then(|| ctx.grad_out.to_vec())]
    }
}

impl<S: Scalar> Graph<S> {
    fn rows_cols(&self, id: TensorId, context: &'static str) -> Result<(usize, usize)> {
        match self.shape(id) {
            [c, t] => Ok((*c, *t)),
            other => Err(Error::ShapeMismatch {
                context,
                detail: format!("expected [C, T], got {other:?}"),
            }),
        }
    }

    /// Stack `[C_i, T]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                context: "concat_channels",
                detail: "no inputs".into(),
            });
        }
        let (_, t) = self.rows_cols(parts[0], "concat_channels")?;
        let mut sections = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let (c, tp) = self.rows_cols(p, "concat_channels")?;
            if tp != t {
                return Err(Error::ShapeMismatch {
                    context: "concat_channels",
                    detail: format!("length {tp} vs {t}"),
                });
            }
            sections.push(c);
            data.extend_from_slice(self.data(p));
        }
        let c_total: usize = sections.iter().sum();
        Ok(self.push_op(
            Box::new(ConcatChannelsOp { sections, t }),
            parts.to_vec(),
            data,
            vec![c_total, t],
        ))
    }

    /// Take channels `lo..hi` of a `[C, T]` tensor.
    pub fn slice_channels(&mut self, x: TensorId, lo: usize, hi: usize) -> Result<TensorId> {
        let (c, t) = self.rows_cols(x, "slice_channels")?;
        if lo >= hi || hi > c {
            return Err(Error::InvalidArgument {
                context: "slice_channels",
                detail: format!("range {lo}..{hi} outside 0..{c}"),
            });
        }
        let data = self.data(x)[lo * t..hi * t].to_vec();
        Ok(self.push_op(
            Box::new(SliceChannelsOp { lo, hi, c_in: c, t }),
            vec![x],
            data,
            vec![hi - lo, t],
        ))
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.numel(x) || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape(x)),
            });
        }
        let data = self.data(x).to_vec();
        Ok(self.push_op(Box::new(ReshapeOp), vec![x], data, shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_round_trips() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(vec![1.0, 2.0, 3.0], vec![1, 3], true).unwrap();
        let b = g.leaf(vec![4.0, 5.0, 6.0], vec![1, 3], true).unwrap();
        let cat = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(cat), &[2, 3]);
        let back = g.slice_channels(cat, 1, 2).unwrap();
        assert_eq!(g.data(back), &[4.0, 5.0, 6.0]);

        let s = g.sum(back).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn reshape_preserves_data_and_grads() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], true).unwrap();
        let y = g.reshape(x, vec![4]).unwrap();
        assert_eq!(g.data(y), g.data(x));
        assert!(g.reshape(x, vec![3]).is_err());
    }

    #[test]
    fn concat_rejects_length_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(vec![1.0, 2.0], vec![1, 2], false).unwrap();
        let b = g.leaf(vec![1.0, 2.0, 3.0], vec![1, 3], false).unwrap();
        assert!(g.concat_channels(&[a, b]).is_err());
    }
}
