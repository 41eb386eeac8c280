//! Dense 2-D convolution with dilation (atrous rate), lowered to a matrix
//! product through im2col.

use crate::error::{Error, Result};
use crate::scalar::{strides, Scalar};
use crate::tape::{Backward, BackwardCtx, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Kernel geometry. `dilation` is the atrous rate; 1 is ordinary convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvParams {
    /// Square kernel, stride 1, no padding, dilation 1.
    pub const fn square(kernel: usize) -> Self {
        ConvParams {
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    pub const fn with_stride(self, stride: usize) -> Self {
        ConvParams { stride, ..self }
    }

    pub const fn with_padding(self, padding: usize) -> Self {
        ConvParams { padding, ..self }
    }

    pub const fn with_dilation(self, dilation: usize) -> Self {
        ConvParams { dilation, ..self }
    }

    /// Number of kernel taps.
    pub const fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::Geometry(format!(
                "kernel, stride and dilation must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn axis(&self, input: usize, kernel: usize) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::Geometry(format!(
                "input extent {input} with padding {} is smaller than dilated kernel extent {span}",
                self.padding
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// `⌊(in + 2·pad − dilation·(k−1) − 1)/stride⌋ + 1` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((self.axis(h, self.kernel_h)?, self.axis(w, self.kernel_w)?))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    /// Input coordinate sampled by output position `o` and tap `k`, may be
    /// outside `0..extent`.
    #[inline]
    pub(crate) fn source(&self, o: usize, k: usize) -> isize {
        (o * self.stride + k * self.dilation) as isize - self.padding as isize
    }
}

/// Lays out the receptive fields of one `C×H×W` item as a
/// `(C·kh·kw) × (oh·ow)` matrix; out-of-range taps read zero.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    p: &ConvParams,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let out_plane = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..p.kernel_h {
            for kj in 0..p.kernel_w {
                let row = (ci * p.kernel_h + ki) * p.kernel_w + kj;
                let dst = &mut cols[row * out_plane..(row + 1) * out_plane];
                for oy in 0..oh {
                    let iy = p.source(oy, ki);
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy as usize >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = p.source(ox, kj);
                        *v = if ix < 0 || ix as usize >= w {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    p: &ConvParams,
    (oh, ow): (usize, usize),
    dx: &mut [T],
) {
    let out_plane = oh * ow;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..p.kernel_h {
            for kj in 0..p.kernel_w {
                let row = (ci * p.kernel_h + ki) * p.kernel_w + kj;
                let src = &cols[row * out_plane..(row + 1) * out_plane];
                for oy in 0..oh {
                    let iy = p.source(oy, ki);
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = p.source(ox, kj);
                        if ix >= 0 && (ix as usize) < w {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn check_weight(x: Shape, w: Shape, p: &ConvParams) -> Result<()> {
    if w.c != x.c {
        return Err(Error::Shape(format!(
            "weight {w} expects {} input channels, input has {}",
            w.c, x.c
        )));
    }
    if (w.h, w.w) != (p.kernel_h, p.kernel_w) {
        return Err(Error::Shape(format!(
            "weight {w} does not match a {}x{} kernel",
            p.kernel_h, p.kernel_w
        )));
    }
    Ok(())
}

struct Conv2dRule<T> {
    params: ConvParams,
    /// im2col matrices of every batch item, kept only when the weight
    /// needs a gradient and the kernel is not pointwise.
    cols: Option<Vec<T>>,
    has_bias: bool,
}

impl<T: Scalar> Backward<T> for Conv2dRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.inputs[0];
        let w = ctx.inputs[1];
        let (xs, ws, ys) = (x.shape(), w.shape(), ctx.output.shape());
        let p = &self.params;
        let out_plane = ys.plane();
        let ckk = ws.c * ws.h * ws.w;
        let cout = ws.n;

        let mut dx = ctx.needs[0].then(|| vec![T::zero(); xs.numel()]);
        let mut dw = ctx.needs[1].then(|| vec![T::zero(); ws.numel()]);
        let mut dcols = vec![T::zero(); if p.is_pointwise() { 0 } else { ckk * out_plane }];

        for n in 0..xs.n {
            let dy = &ctx.grad_out[n * cout * out_plane..(n + 1) * cout * out_plane];
            if let Some(dw) = &mut dw {
                let cols = if p.is_pointwise() {
                    x.item(n)
                } else {
                    let all = self.cols.as_ref().expect("im2col saved for weight gradient");
                    &all[n * ckk * out_plane..(n + 1) * ckk * out_plane]
                };
                T::gemm(
                    cout,
                    out_plane,
                    ckk,
                    dy,
                    strides(cout, out_plane, false),
                    cols,
                    strides(out_plane, ckk, true),
                    T::one(),
                    dw,
                    strides(cout, ckk, false),
                );
            }
            if let Some(dx) = &mut dx {
                let item = &mut dx[n * xs.item()..(n + 1) * xs.item()];
                let target: &mut [T] = if p.is_pointwise() { item } else { &mut dcols };
                T::gemm(
                    ckk,
                    cout,
                    out_plane,
                    w.data(),
                    strides(ckk, cout, true),
                    dy,
                    strides(cout, out_plane, false),
                    T::zero(),
                    target,
                    strides(ckk, out_plane, false),
                );
                if !p.is_pointwise() {
                    col2im(
                        &dcols,
                        xs.c,
                        xs.h,
                        xs.w,
                        p,
                        (ys.h, ys.w),
                        &mut dx[n * xs.item()..(n + 1) * xs.item()],
                    );
                }
            }
        }

        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(ctx.needs[2].then(|| {
                let mut db = vec![T::zero(); cout];
                for n in 0..ys.n {
                    for (co, acc) in db.iter_mut().enumerate() {
                        let start = (n * cout + co) * out_plane;
                        *acc += ctx.grad_out[start..start + out_plane].iter().copied().sum();
                    }
                }
                db
            }));
        }
        out
    }
}

/// `y[i] = Σ_k x[i + r·k] · w[k] (+ b)` with zero padding.
///
/// `x` is `N×C_in×H×W`, `w` is `C_out×C_in×kh×kw`, `b` holds `C_out` values.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    params: ConvParams,
) -> Result<Var> {
    let xt = tape.try_value(x)?;
    let wt = tape.try_value(w)?;
    let (xs, ws) = (xt.shape(), wt.shape());
    check_weight(xs, ws, &params)?;
    let (oh, ow) = params.output_size(xs.h, xs.w)?;
    let bias = match b {
        Some(b) => {
            let bt = tape.try_value(b)?;
            if bt.shape().numel() != ws.n {
                return Err(Error::Shape(format!(
                    "bias of {} values for {} output channels",
                    bt.shape().numel(),
                    ws.n
                )));
            }
            Some(bt.data())
        }
        None => None,
    };

    let out_shape = Shape::new(xs.n, ws.n, oh, ow);
    let out_plane = oh * ow;
    let ckk = ws.c * ws.h * ws.w;
    let keep_cols = !params.is_pointwise() && tape.requires_grad(w);
    let mut saved = if keep_cols {
        Vec::with_capacity(xs.n * ckk * out_plane)
    } else {
        Vec::new()
    };
    let mut scratch = vec![T::zero(); if params.is_pointwise() { 0 } else { ckk * out_plane }];
    let mut y = vec![T::zero(); out_shape.numel()];

    for n in 0..xs.n {
        let cols: &[T] = if params.is_pointwise() {
            xt.item(n)
        } else {
            im2col(xt.item(n), xs.c, xs.h, xs.w, &params, (oh, ow), &mut scratch);
            &scratch
        };
        let yn = &mut y[n * ws.n * out_plane..(n + 1) * ws.n * out_plane];
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                yn[co * out_plane..(co + 1) * out_plane].fill(bv);
            }
        }
        T::gemm(
            ws.n,
            ckk,
            out_plane,
            wt.data(),
            strides(ws.n, ckk, false),
            cols,
            strides(ckk, out_plane, false),
            if bias.is_some() { T::one() } else { T::zero() },
            yn,
            strides(ws.n, out_plane, false),
        );
        if keep_cols {
            saved.extend_from_slice(&scratch);
        }
    }

    let out = Tensor::from_vec(out_shape, y)?;
    let rule = Conv2dRule {
        params,
        cols: keep_cols.then_some(saved),
        has_bias: b.is_some(),
    };
    match b {
        Some(b) => tape.record(out, &[x, w, b], rule),
        None => tape.record(out, &[x, w], rule),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct summation over taps, independent of the im2col path.
    fn conv_direct(x: &Tensor<f64>, w: &Tensor<f64>, p: &ConvParams) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let (oh, ow) = p.output_size(xs.h, xs.w).unwrap();
        let mut y = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
        let mut out = Vec::new();
        for n in 0..xs.n {
            for co in 0..ws.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..xs.c {
                            for ki in 0..ws.h {
                                for kj in 0..ws.w {
                                    let iy = p.source(oy, ki);
                                    let ix = p.source(ox, kj);
                                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                        acc += x.at(n, ci, iy as usize, ix as usize) * w.at(co, ci, ki, kj);
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        y.data_mut().copy_from_slice(&out);
        y
    }

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, p: ConvParams) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let y = conv2d(&mut tape, xv, wv, None, p).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn three_by_three_sum_is_45() {
        let x = Tensor::from_f64(Shape::new(1, 1, 3, 3), &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let w = Tensor::ones(Shape::new(1, 1, 3, 3));
        let y = run(&x, &w, ConvParams::square(3));
        assert_eq!(y.shape(), Shape::SCALAR);
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn dilated_ones_sum_to_nine() {
        let x = Tensor::ones(Shape::new(1, 1, 5, 5));
        let w = Tensor::ones(Shape::new(1, 1, 3, 3));
        let y = run(&x, &w, ConvParams::square(3).with_dilation(2));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(Shape::new(2, 1, 4, 3), -1.0, 1.0, &mut rng);
        let w = Tensor::ones(Shape::new(1, 1, 1, 1));
        assert_eq!(run(&x, &w, ConvParams::square(1)).data(), x.data());
    }

    #[test]
    fn matches_direct_summation_with_stride_padding_dilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, s, pad, d) in [(3, 1, 1, 1), (3, 2, 1, 1), (3, 1, 2, 2), (1, 1, 0, 1), (2, 2, 0, 3)] {
            let p = ConvParams::square(k).with_stride(s).with_padding(pad).with_dilation(d);
            let x = Tensor::uniform(Shape::new(2, 3, 9, 8), -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(Shape::new(4, 3, k, k), -1.0, 1.0, &mut rng);
            let fast = run(&x, &w, p);
            let slow = conv_direct(&x, &w, &p);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn bias_is_added_per_channel() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let w = tape.constant(Tensor::ones(Shape::new(2, 1, 1, 1)));
        let b = tape.constant(Tensor::channel_vector(vec![1.5, -2.0]));
        let y = conv2d(&mut tape, x, w, Some(b), ConvParams::square(1)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 1.5, 1.5, 1.5, -2.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn shape_and_geometry_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(Shape::new(1, 2, 3, 3)));
        let w_bad = tape.constant(Tensor::zeros(Shape::new(1, 3, 3, 3)));
        assert!(matches!(
            conv2d(&mut tape, x, w_bad, None, ConvParams::square(3)),
            Err(Error::Shape(_))
        ));
        let w = tape.constant(Tensor::zeros(Shape::new(1, 2, 3, 3)));
        assert!(matches!(
            conv2d(&mut tape, x, w, None, ConvParams::square(3).with_dilation(2)),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn output_size_formula() {
        let p = ConvParams::square(3).with_padding(6).with_dilation(6);
        assert_eq!(p.output_size(8, 8).unwrap(), (8, 8));
        let p = ConvParams::square(3).with_stride(2).with_padding(1);
        assert_eq!(p.output_size(64, 63).unwrap(), (32, 32));
    }
}
