//! Arithmetic and channel plumbing.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Backward, BackwardCtx, Tape, Var};
use crate::tensor::{Shape, Tensor};

fn same_shape<T: Scalar>(tape: &Tape<T>, a: Var, b: Var) -> Result<Shape> {
    let (sa, sb) = (tape.try_value(a)?.shape(), tape.try_value(b)?.shape());
    if sa != sb {
        return Err(Error::Shape(format!("elementwise op on {sa} and {sb}")));
    }
    Ok(sa)
}

struct AddRule;

impl<T: Scalar> Backward<T> for AddRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        ctx.needs
            .iter()
            .map(|&n| n.then(|| ctx.grad_out.to_vec()))
            .collect()
    }
}

pub fn add<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let shape = same_shape(tape, a, b)?;
    let data = tape
        .value(a)
        .data()
        .iter()
        .zip(tape.value(b).data())
        .map(|(&x, &y)| x + y)
        .collect();
    tape.record(Tensor::from_vec(shape, data)?, &[a, b], AddRule)
}

struct ScaleRule<T>(T);

impl<T: Scalar> Backward<T> for ScaleRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(ctx.grad_out.iter().map(|&g| g * self.0).collect())]
    }
}

pub fn scale<T: Scalar>(tape: &mut Tape<T>, a: Var, factor: T) -> Result<Var> {
    let out = tape.try_value(a)?.map(|v| v * factor);
    tape.record(out, &[a], ScaleRule(factor))
}

struct MulRule;

impl<T: Scalar> Backward<T> for MulRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let g = ctx.grad_out;
        vec![
            ctx.needs[0].then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
            ctx.needs[1].then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
        ]
    }
}

/// Elementwise product of equally shaped tensors.
pub fn mul<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let shape = same_shape(tape, a, b)?;
    let data = tape
        .value(a)
        .data()
        .iter()
        .zip(tape.value(b).data())
        .map(|(&x, &y)| x * y)
        .collect();
    tape.record(Tensor::from_vec(shape, data)?, &[a, b], MulRule)
}

struct SumRule;

impl<T: Scalar> Backward<T> for SumRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![ctx.grad_out[0]; ctx.inputs[0].shape().numel()])]
    }
}

/// Sum of all elements as a `1×1×1×1` tensor.
pub fn sum<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let total = tape.try_value(a)?.data().iter().copied().sum();
    tape.record(Tensor::scalar(total), &[a], SumRule)
}

struct ConcatRule {
    channels: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let s = ctx.output.shape();
        let plane = s.plane();
        let mut out: Vec<Option<Vec<T>>> = ctx
            .needs
            .iter()
            .zip(&self.channels)
            .map(|(&need, &c)| need.then(|| Vec::with_capacity(s.n * c * plane)))
            .collect();
        for n in 0..s.n {
            let mut offset = n * s.c * plane;
            for (slot, &c) in out.iter_mut().zip(&self.channels) {
                if let Some(g) = slot {
                    g.extend_from_slice(&ctx.grad_out[offset..offset + c * plane]);
                }
                offset += c * plane;
            }
        }
        out
    }
}

/// Channel-axis stacking in argument order.
pub fn concat_channels<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let values: Vec<&Tensor<T>> = parts
        .iter()
        .map(|&v| tape.try_value(v))
        .collect::<Result<_>>()?;
    let out = Tensor::concat_channels(&values)?;
    let channels = values.iter().map(|t| t.shape().c).collect();
    tape.record(out, parts, ConcatRule { channels })
}

struct SliceRule {
    start: usize,
}

impl<T: Scalar> Backward<T> for SliceRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let s_in = ctx.inputs[0].shape();
        let s_out = ctx.output.shape();
        let plane = s_in.plane();
        let mut g = vec![T::zero(); s_in.numel()];
        for n in 0..s_in.n {
            let dst = (n * s_in.c + self.start) * plane;
            let src = n * s_out.c * plane;
            g[dst..dst + s_out.c * plane]
                .copy_from_slice(&ctx.grad_out[src..src + s_out.c * plane]);
        }
        vec![Some(g)]
    }
}

/// Channels `start..start + len` of `x`.
pub fn slice_channels<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    start: usize,
    len: usize,
) -> Result<Var> {
    let input = tape.try_value(x)?;
    let s = input.shape();
    if start + len > s.c || len == 0 {
        return Err(Error::Shape(format!(
            "channel slice {start}..{} of {s}",
            start + len
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let from = input.index(n, start, 0, 0);
        data.extend_from_slice(&input.data()[from..from + len * plane]);
    }
    let out = Tensor::from_vec(s.with_c(len), data)?;
    tape.record(out, &[x], SliceRule { start })
}

pub fn split_channels<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    sizes: &[usize],
) -> Result<Vec<Var>> {
    let c = tape.try_value(x)?.shape().c;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::Shape(format!(
            "channel split {sizes:?} does not cover {c} channels"
        )));
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for &len in sizes {
        out.push(slice_channels(tape, x, start, len)?);
        start += len;
    }
    Ok(out)
}
