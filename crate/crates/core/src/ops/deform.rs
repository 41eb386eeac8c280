//! Deformable convolution, with and without modulation, and the bilinear
//! sampler it is built on.
//!
//! Coordinate convention: tap `k = ki·kw + kj` of output pixel `(oy, ox)`
//! reads the input at
//!
//! ```text
//! row = oy·stride − pad + ki·dilation + Δrow
//! col = ox·stride − pad + kj·dilation + Δcol
//! ```
//!
//! where `(Δrow, Δcol)` are offset channels `2k` and `2k + 1`. Samples are
//! bilinear; any neighbour outside the plane reads zero.

use crate::error::{Error, Result};
use crate::ops::activation::sigmoid;
use crate::ops::conv::{check_weight, conv2d, ConvParams};
use crate::ops::elementwise::slice_channels;
use crate::scalar::{strides, Scalar};
use crate::tape::{Backward, BackwardCtx, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// The four integer neighbours of a fractional position and their weights.
#[derive(Clone, Copy, Debug)]
struct Corners<T> {
    /// Flat plane index per corner (top-left, top-right, bottom-left,
    /// bottom-right), `None` when outside the plane.
    index: [Option<usize>; 4],
    frac_row: T,
    frac_col: T,
}

impl<T: Scalar> Corners<T> {
    #[inline]
    fn locate(h: usize, w: usize, row: T, col: T) -> Option<Self> {
        let (hf, wf) = (T::from_usize(h)?, T::from_usize(w)?);
        if !(row > -T::one() && row < hf && col > -T::one() && col < wf) {
            return None;
        }
        let r0 = row.floor();
        let c0 = col.floor();
        let (ri, ci) = (r0.to_isize()?, c0.to_isize()?);
        let at = |r: isize, c: isize| -> Option<usize> {
            (r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w)
                .then(|| r as usize * w + c as usize)
        };
        Some(Corners {
            index: [at(ri, ci), at(ri, ci + 1), at(ri + 1, ci), at(ri + 1, ci + 1)],
            frac_row: row - r0,
            frac_col: col - c0,
        })
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let (fr, fc) = (self.frac_row, self.frac_col);
        let (gr, gc) = (T::one() - fr, T::one() - fc);
        [gr * gc, gr * fc, fr * gc, fr * fc]
    }

    #[inline]
    fn values(&self, plane: &[T]) -> [T; 4] {
        self.index.map(|i| i.map_or(T::zero(), |i| plane[i]))
    }

    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        let v = self.values(plane);
        let wt = self.weights();
        wt[0] * v[0] + wt[1] * v[1] + wt[2] * v[2] + wt[3] * v[3]
    }

    /// `(∂v/∂row, ∂v/∂col)`.
    #[inline]
    fn position_grad(&self, plane: &[T]) -> (T, T) {
        let [v00, v01, v10, v11] = self.values(plane);
        let (fr, fc) = (self.frac_row, self.frac_col);
        let d_row = (T::one() - fc) * (v10 - v00) + fc * (v11 - v01);
        let d_col = (T::one() - fr) * (v01 - v00) + fr * (v11 - v10);
        (d_row, d_col)
    }

    #[inline]
    fn scatter(&self, plane: &mut [T], g: T) {
        let wt = self.weights();
        for (idx, wv) in self.index.iter().zip(wt) {
            if let Some(i) = idx {
                plane[*i] += g * wv;
            }
        }
    }
}

/// Bilinear interpolation of an `h×w` row-major plane at a fractional
/// position. Neighbours outside the plane contribute zero.
pub fn bilinear_sample<T: Scalar>(plane: &[T], h: usize, w: usize, row: T, col: T) -> T {
    Corners::locate(h, w, row, col).map_or(T::zero(), |c| c.sample(plane))
}

/// Partial derivatives of [`bilinear_sample`]: `(∂v/∂plane, ∂v/∂row, ∂v/∂col)`.
pub fn bilinear_sample_grad<T: Scalar>(
    plane: &[T],
    h: usize,
    w: usize,
    row: T,
    col: T,
) -> (Vec<T>, T, T) {
    let mut d_plane = vec![T::zero(); h * w];
    match Corners::locate(h, w, row, col) {
        Some(c) => {
            c.scatter(&mut d_plane, T::one());
            let (dr, dc) = c.position_grad(plane);
            (d_plane, dr, dc)
        }
        None => (d_plane, T::zero(), T::zero()),
    }
}

struct GridSampleRule;

impl<T: Scalar> Backward<T> for GridSampleRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (x, grid) = (ctx.inputs[0], ctx.inputs[1]);
        let (xs, gs) = (x.shape(), grid.shape());
        let out_plane = gs.plane();
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); xs.numel()]);
        let mut dgrid = ctx.needs[1].then(|| vec![T::zero(); gs.numel()]);
        for n in 0..xs.n {
            let rows = grid.plane(n, 0);
            let cols = grid.plane(n, 1);
            for c in 0..xs.c {
                let plane = x.plane(n, c);
                let g = &ctx.grad_out[(n * xs.c + c) * out_plane..(n * xs.c + c + 1) * out_plane];
                for p in 0..out_plane {
                    let Some(corners) = Corners::locate(xs.h, xs.w, rows[p], cols[p]) else {
                        continue;
                    };
                    if let Some(dx) = &mut dx {
                        let start = (n * xs.c + c) * xs.plane();
                        corners.scatter(&mut dx[start..start + xs.plane()], g[p]);
                    }
                    if let Some(dgrid) = &mut dgrid {
                        let (dr, dc) = corners.position_grad(plane);
                        dgrid[(n * 2) * out_plane + p] += g[p] * dr;
                        dgrid[(n * 2 + 1) * out_plane + p] += g[p] * dc;
                    }
                }
            }
        }
        vec![dx, dgrid]
    }
}

/// Samples every channel of `x` (`N×C×H×W`) at the positions in `grid`
/// (`N×2×Ho×Wo`, channel 0 = row, channel 1 = col). Differentiable with
/// respect to both the values and the positions.
pub fn grid_sample<T: Scalar>(tape: &mut Tape<T>, x: Var, grid: Var) -> Result<Var> {
    let (xt, gt) = (tape.try_value(x)?, tape.try_value(grid)?);
    let (xs, gs) = (xt.shape(), gt.shape());
    if gs.n != xs.n || gs.c != 2 {
        return Err(Error::Shape(format!(
            "sampling grid {gs} does not match input {xs}"
        )));
    }
    let out_shape = Shape::new(xs.n, xs.c, gs.h, gs.w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..xs.n {
        let (rows, cols) = (gt.plane(n, 0), gt.plane(n, 1));
        for c in 0..xs.c {
            let plane = xt.plane(n, c);
            out.extend(
                rows.iter()
                    .zip(cols)
                    .map(|(&r, &q)| bilinear_sample(plane, xs.h, xs.w, r, q)),
            );
        }
    }
    let out = Tensor::from_vec(out_shape, out)?;
    tape.record(out, &[x, grid], GridSampleRule)
}

/// Learned sampling displacement and modulation for a deformable layer.
///
/// `offsets` is `N×2K×Ho×Wo` holding `(Δrow, Δcol)` per tap; `modulation`
/// is `N×K×Ho×Wo` with values in `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct OffsetField {
    pub offsets: Var,
    pub modulation: Option<Var>,
}

impl OffsetField {
    pub fn unmodulated(offsets: Var) -> Self {
        OffsetField {
            offsets,
            modulation: None,
        }
    }

    pub fn modulated(offsets: Var, modulation: Var) -> Self {
        OffsetField {
            offsets,
            modulation: Some(modulation),
        }
    }
}

/// Predicts an [`OffsetField`] with a standard convolution over `x`.
///
/// The convolution must produce `3K` channels: the first `2K` are raw
/// offsets, the last `K` pass through a sigmoid and become the modulation.
pub fn offset_predictor<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w_off: Var,
    b_off: Var,
    taps: usize,
    params: ConvParams,
) -> Result<OffsetField> {
    let out_channels = tape.try_value(w_off)?.shape().n;
    if out_channels != 3 * taps {
        return Err(Error::Shape(format!(
            "offset predictor emits {out_channels} channels, expected 3·{taps}"
        )));
    }
    let raw = conv2d(tape, x, w_off, Some(b_off), params)?;
    let offsets = slice_channels(tape, raw, 0, 2 * taps)?;
    let logits = slice_channels(tape, raw, 2 * taps, taps)?;
    let modulation = sigmoid(tape, logits)?;
    Ok(OffsetField::modulated(offsets, modulation))
}

struct DeformRule<T> {
    params: ConvParams,
    /// Unmodulated bilinear samples, `N × (C·K) × P`.
    sampled: Vec<T>,
    modulated: bool,
}

impl<T: Scalar> DeformRule<T> {
    fn positions(&self, oy: usize, ox: usize, ki: usize, kj: usize, dr: T, dc: T) -> (T, T) {
        let p = &self.params;
        (
            T::from_isize(p.source(oy, ki)).unwrap() + dr,
            T::from_isize(p.source(ox, kj)).unwrap() + dc,
        )
    }
}

impl<T: Scalar> Backward<T> for DeformRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.inputs[0];
        let w = ctx.inputs[1];
        let off = ctx.inputs[2];
        let mask = self.modulated.then(|| ctx.inputs[3]);
        let (xs, ws, ys) = (x.shape(), w.shape(), ctx.output.shape());
        let p = &self.params;
        let taps = p.taps();
        let out_plane = ys.plane();
        let ck = xs.c * taps;
        let cout = ws.n;

        let mut dx = ctx.needs[0].then(|| vec![T::zero(); xs.numel()]);
        let mut dw = ctx.needs[1].then(|| vec![T::zero(); ws.numel()]);
        let mut doff = ctx.needs[2].then(|| vec![T::zero(); off.shape().numel()]);
        let mut dmask = mask
            .filter(|_| ctx.needs[3])
            .map(|m| vec![T::zero(); m.shape().numel()]);
        let mut cols = vec![T::zero(); ck * out_plane];
        let mut dcols = vec![T::zero(); ck * out_plane];

        for n in 0..xs.n {
            let dy = &ctx.grad_out[n * cout * out_plane..(n + 1) * cout * out_plane];
            let sampled = &self.sampled[n * ck * out_plane..(n + 1) * ck * out_plane];
            let mask_n = mask.map(|m| m.item(n));

            if let Some(dw) = &mut dw {
                cols.copy_from_slice(sampled);
                if let Some(m) = mask_n {
                    for row in 0..ck {
                        let k = row % taps;
                        let mk = &m[k * out_plane..(k + 1) * out_plane];
                        cols[row * out_plane..(row + 1) * out_plane]
                            .iter_mut()
                            .zip(mk)
                            .for_each(|(v, &mv)| *v *= mv);
                    }
                }
                T::gemm(
                    cout,
                    out_plane,
                    ck,
                    dy,
                    strides(cout, out_plane, false),
                    &cols,
                    strides(out_plane, ck, true),
                    T::one(),
                    dw,
                    strides(cout, ck, false),
                );
            }

            let need_cols_grad = dx.is_some() || doff.is_some() || dmask.is_some();
            if !need_cols_grad {
                continue;
            }
            // Gradient with respect to the modulated columns.
            T::gemm(
                ck,
                cout,
                out_plane,
                w.data(),
                strides(ck, cout, true),
                dy,
                strides(cout, out_plane, false),
                T::zero(),
                &mut dcols,
                strides(ck, out_plane, false),
            );

            let off_n = off.item(n);
            for ci in 0..xs.c {
                let plane = x.plane(n, ci);
                for ki in 0..p.kernel_h {
                    for kj in 0..p.kernel_w {
                        let k = ki * p.kernel_w + kj;
                        let row = ci * taps + k;
                        for oy in 0..ys.h {
                            for ox in 0..ys.w {
                                let q = oy * ys.w + ox;
                                let g = dcols[row * out_plane + q];
                                if let (Some(dm), Some(_)) = (&mut dmask, mask_n) {
                                    dm[(n * taps + k) * out_plane + q] +=
                                        g * sampled[row * out_plane + q];
                                }
                                let gm = match mask_n {
                                    Some(m) => g * m[k * out_plane + q],
                                    None => g,
                                };
                                let dr = off_n[(2 * k) * out_plane + q];
                                let dc = off_n[(2 * k + 1) * out_plane + q];
                                let (r, c) = self.positions(oy, ox, ki, kj, dr, dc);
                                let Some(corners) = Corners::locate(xs.h, xs.w, r, c) else {
                                    continue;
                                };
                                if let Some(dx) = &mut dx {
                                    let start = (n * xs.c + ci) * xs.plane();
                                    corners.scatter(&mut dx[start..start + xs.plane()], gm);
                                }
                                if let Some(doff) = &mut doff {
                                    let (gr, gc) = corners.position_grad(plane);
                                    let base = n * 2 * taps * out_plane;
                                    doff[base + (2 * k) * out_plane + q] += gm * gr;
                                    doff[base + (2 * k + 1) * out_plane + q] += gm * gc;
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut out = vec![dx, dw, doff];
        if self.modulated {
            out.push(dmask);
        }
        out
    }
}

fn deform_conv<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    offsets: Var,
    modulation: Option<Var>,
    params: ConvParams,
) -> Result<Var> {
    let xt = tape.try_value(x)?;
    let wt = tape.try_value(w)?;
    let ot = tape.try_value(offsets)?;
    let (xs, ws, os) = (xt.shape(), wt.shape(), ot.shape());
    check_weight(xs, ws, &params)?;
    let (oh, ow) = params.output_size(xs.h, xs.w)?;
    let taps = params.taps();
    if os.c != 2 * taps {
        return Err(Error::Shape(format!(
            "offset field has {} channels, expected 2·{taps}",
            os.c
        )));
    }
    if (os.n, os.h, os.w) != (xs.n, oh, ow) {
        return Err(Error::Shape(format!(
            "offset field {os} does not match output {}x{oh}x{ow}",
            xs.n
        )));
    }
    let mt = match modulation {
        Some(m) => {
            let mt = tape.try_value(m)?;
            let ms = mt.shape();
            if ms.c != taps {
                return Err(Error::Shape(format!(
                    "modulation has {} channels, expected {taps}",
                    ms.c
                )));
            }
            if (ms.n, ms.h, ms.w) != (xs.n, oh, ow) {
                return Err(Error::Shape(format!(
                    "modulation {ms} does not match output {}x{oh}x{ow}",
                    xs.n
                )));
            }
            Some(mt)
        }
        None => None,
    };

    let out_shape = Shape::new(xs.n, ws.n, oh, ow);
    let out_plane = oh * ow;
    let ck = xs.c * taps;
    let mut sampled = vec![T::zero(); xs.n * ck * out_plane];
    let mut cols = vec![T::zero(); ck * out_plane];
    let mut y = vec![T::zero(); out_shape.numel()];

    for n in 0..xs.n {
        let off_n = ot.item(n);
        let samp_n = &mut sampled[n * ck * out_plane..(n + 1) * ck * out_plane];
        for ci in 0..xs.c {
            let plane = xt.plane(n, ci);
            for ki in 0..params.kernel_h {
                for kj in 0..params.kernel_w {
                    let k = ki * params.kernel_w + kj;
                    let row = ci * taps + k;
                    for oy in 0..oh {
                        let base_r = T::from_isize(params.source(oy, ki)).unwrap();
                        for ox in 0..ow {
                            let q = oy * ow + ox;
                            let base_c = T::from_isize(params.source(ox, kj)).unwrap();
                            let r = base_r + off_n[(2 * k) * out_plane + q];
                            let c = base_c + off_n[(2 * k + 1) * out_plane + q];
                            let v = bilinear_sample(plane, xs.h, xs.w, r, c);
                            samp_n[row * out_plane + q] = v;
                            cols[row * out_plane + q] = match mt {
                                Some(m) => v * m.data()[(n * taps + k) * out_plane + q],
                                None => v,
                            };
                        }
                    }
                }
            }
        }
        T::gemm(
            ws.n,
            ck,
            out_plane,
            wt.data(),
            strides(ws.n, ck, false),
            &cols,
            strides(ck, out_plane, false),
            T::zero(),
            &mut y[n * ws.n * out_plane..(n + 1) * ws.n * out_plane],
            strides(ws.n, out_plane, false),
        );
    }

    let out = Tensor::from_vec(out_shape, y)?;
    let rule = DeformRule {
        params,
        sampled,
        modulated: modulation.is_some(),
    };
    match modulation {
        Some(m) => tape.record(out, &[x, w, offsets, m], rule),
        None => tape.record(out, &[x, w, offsets], rule),
    }
}

/// `y[i] = Σ_k x[i + k + Δk] · w[k]`. Any modulation in `field` is ignored.
pub fn deform_conv_v1<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    field: &OffsetField,
    params: ConvParams,
) -> Result<Var> {
    deform_conv(tape, x, w, field.offsets, None, params)
}

/// `y[i] = Σ_k x[i + k + Δk] · w[k] · Δm_k`.
pub fn deform_conv_v2<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    field: &OffsetField,
    params: ConvParams,
) -> Result<Var> {
    let m = field
        .modulation
        .ok_or_else(|| Error::Shape("modulated deformable convolution needs a modulation map".into()))?;
    deform_conv(tape, x, w, field.offsets, Some(m), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::elementwise::scale;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plane() -> [f64; 4] {
        [1.0, 2.0, 3.0, 4.0]
    }

    #[test]
    fn bilinear_midpoint() {
        assert_eq!(bilinear_sample(&plane(), 2, 2, 0.5, 0.5), 2.5);
    }

    #[test]
    fn bilinear_on_grid_is_exact() {
        assert_eq!(bilinear_sample(&plane(), 2, 2, 1.0, 0.0), 3.0);
    }

    #[test]
    fn bilinear_outside_is_zero() {
        assert_eq!(bilinear_sample(&plane(), 2, 2, -1.0, -1.0), 0.0);
        assert_eq!(bilinear_sample(&plane(), 2, 2, 7.3, 0.2), 0.0);
        // Half a pixel past the border blends with the zero padding.
        assert_eq!(bilinear_sample(&plane(), 2, 2, 1.0, 1.5), 2.0);
    }

    #[test]
    fn bilinear_position_gradient_matches_slopes() {
        let (d_plane, dr, dc) = bilinear_sample_grad(&plane(), 2, 2, 0.25, 0.75);
        // Plane is affine (v = 1 + 2·row + col) inside the support.
        assert!((dr - 2.0).abs() < 1e-12);
        assert!((dc - 1.0).abs() < 1e-12);
        assert!((d_plane.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn shifted(offsets: (f64, f64)) -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(Shape::new(1, 1, 1, 4), &[1., 2., 3., 4.]).unwrap());
        let w = tape.constant(Tensor::ones(Shape::new(1, 1, 1, 1)));
        let mut off = Vec::new();
        off.extend([offsets.0; 4]);
        off.extend([offsets.1; 4]);
        let off = tape.constant(Tensor::from_f64(Shape::new(1, 2, 1, 4), &off).unwrap());
        let y = deform_conv_v1(&mut tape, x, w, &OffsetField::unmodulated(off), ConvParams::square(1)).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn integer_shift_reads_neighbour_with_zero_border() {
        assert_eq!(shifted((0.0, 1.0)), vec![2.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn half_shift_interpolates_neighbours() {
        assert_eq!(shifted((0.0, 0.5)), vec![1.5, 2.5, 3.5, 2.0]);
    }

    struct Case {
        tape: Tape<f64>,
        x: Var,
        w: Var,
        p: ConvParams,
        shape: Shape,
    }

    fn case(seed: u64) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let p = ConvParams::square(3).with_padding(1);
        let x = tape.constant(Tensor::uniform(Shape::new(2, 3, 6, 5), -1.0, 1.0, &mut rng));
        let w = tape.constant(Tensor::uniform(Shape::new(4, 3, 3, 3), -1.0, 1.0, &mut rng));
        Case { tape, x, w, p, shape: Shape::new(2, 9, 6, 5) }
    }

    #[test]
    fn zero_field_reduces_to_conv() {
        let Case { mut tape, x, w, p, shape } = case(5);
        let off = tape.constant(Tensor::zeros(shape.with_c(18)));
        let ones = tape.constant(Tensor::ones(shape));
        let reference = conv2d(&mut tape, x, w, None, p).unwrap();
        let v1 = deform_conv_v1(&mut tape, x, w, &OffsetField::unmodulated(off), p).unwrap();
        let v2 = deform_conv_v2(&mut tape, x, w, &OffsetField::modulated(off, ones), p).unwrap();
        assert!(tape.value(v1).max_abs_diff(tape.value(reference)) < 1e-12);
        assert!(tape.value(v2).max_abs_diff(tape.value(reference)) < 1e-12);
    }

    #[test]
    fn zero_modulation_annihilates_and_half_scales() {
        let Case { mut tape, x, w, p, shape } = case(6);
        let off = tape.constant(Tensor::zeros(shape.with_c(18)));
        let zeros = tape.constant(Tensor::zeros(shape));
        let halves = tape.constant(Tensor::full(shape, 0.5));
        let y0 = deform_conv_v2(&mut tape, x, w, &OffsetField::modulated(off, zeros), p).unwrap();
        assert!(tape.value(y0).data().iter().all(|&v| v == 0.0));
        let yh = deform_conv_v2(&mut tape, x, w, &OffsetField::modulated(off, halves), p).unwrap();
        let reference = conv2d(&mut tape, x, w, None, p).unwrap();
        let half_ref = scale(&mut tape, reference, 0.5).unwrap();
        assert!(tape.value(yh).max_abs_diff(tape.value(half_ref)) < 1e-12);
    }

    #[test]
    fn channel_count_errors() {
        let Case { mut tape, x, w, p, shape } = case(7);
        let bad_off = tape.constant(Tensor::zeros(shape.with_c(17)));
        let off = tape.constant(Tensor::zeros(shape.with_c(18)));
        let bad_mask = tape.constant(Tensor::zeros(shape.with_c(8)));
        assert!(matches!(
            deform_conv_v1(&mut tape, x, w, &OffsetField::unmodulated(bad_off), p),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            deform_conv_v2(&mut tape, x, w, &OffsetField::modulated(off, bad_mask), p),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            deform_conv_v2(&mut tape, x, w, &OffsetField::unmodulated(off), p),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_predictor_gives_zero_offsets_and_half_modulation() {
        let mut tape = Tape::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::uniform(Shape::new(1, 4, 5, 5), -3.0, 3.0, &mut rng));
        let w = tape.constant(Tensor::zeros(Shape::new(27, 4, 3, 3)));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 27, 1, 1)));
        let p = ConvParams::square(3).with_padding(1);
        let field = offset_predictor(&mut tape, x, w, b, 9, p).unwrap();
        assert!(tape.value(field.offsets).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(field.modulation.unwrap()).data().iter().all(|&v| v == 0.5));
        assert_eq!(tape.shape(field.offsets), Shape::new(1, 18, 5, 5));
    }

    #[test]
    fn saturated_predictor_bias_gives_unit_modulation() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(Shape::new(1, 2, 3, 3)));
        let w = tape.constant(Tensor::zeros(Shape::new(27, 2, 3, 3)));
        let mut bias = vec![0.0; 27];
        bias[18..].fill(1e4);
        let b = tape.constant(Tensor::channel_vector(bias));
        let field = offset_predictor(&mut tape, x, w, b, 9, ConvParams::square(3).with_padding(1)).unwrap();
        assert!(tape.value(field.modulation.unwrap()).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn predictor_channel_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(Shape::new(1, 2, 3, 3)));
        let w = tape.constant(Tensor::zeros(Shape::new(26, 2, 3, 3)));
        let b = tape.constant(Tensor::channel_vector(vec![0.0; 26]));
        assert!(matches!(
            offset_predictor(&mut tape, x, w, b, 9, ConvParams::square(3).with_padding(1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn grid_sample_matches_pointwise_sampler() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(Shape::new(1, 1, 2, 2), &plane()).unwrap());
        let grid = tape.constant(
            Tensor::from_f64(Shape::new(1, 2, 1, 3), &[0.5, 1.0, -1.0, 0.5, 0.0, -1.0]).unwrap(),
        );
        let y = grid_sample(&mut tape, x, grid).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5, 3.0, 0.0]);
    }
}
