//! Spatial pooling and resizing.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Backward, BackwardCtx, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Bin `j` of `bins` over an axis of `size` covers `[⌊j·size/bins⌋, ⌊(j+1)·size/bins⌋)`.
fn bin_edges(size: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|j| (j * size / bins, (j + 1) * size / bins))
        .collect()
}

struct PoolRule {
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

impl<T: Scalar> Backward<T> for PoolRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let s = ctx.inputs[0].shape();
        let (bh, bw) = (self.rows.len(), self.cols.len());
        let mut dx = vec![T::zero(); s.numel()];
        for nc in 0..s.n * s.c {
            let plane = &mut dx[nc * s.plane()..(nc + 1) * s.plane()];
            for (i, &(r0, r1)) in self.rows.iter().enumerate() {
                for (j, &(c0, c1)) in self.cols.iter().enumerate() {
                    let area = T::from_usize((r1 - r0) * (c1 - c0)).unwrap();
                    let g = ctx.grad_out[nc * bh * bw + i * bw + j] / area;
                    for r in r0..r1 {
                        plane[r * s.w + c0..r * s.w + c1]
                            .iter_mut()
                            .for_each(|v| *v += g);
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Mean over each cell of a `bins_h × bins_w` partition of the plane.
pub fn adaptive_avg_pool<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    bins_h: usize,
    bins_w: usize,
) -> Result<Var> {
    let xt = tape.try_value(x)?;
    let s = xt.shape();
    if bins_h == 0 || bins_w == 0 || bins_h > s.h || bins_w > s.w {
        return Err(Error::Geometry(format!(
            "cannot pool a {}x{} plane into {bins_h}x{bins_w} bins",
            s.h, s.w
        )));
    }
    let rows = bin_edges(s.h, bins_h);
    let cols = bin_edges(s.w, bins_w);
    let out_shape = Shape::new(s.n, s.c, bins_h, bins_w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = xt.plane(n, c);
            for &(r0, r1) in &rows {
                for &(c0, c1) in &cols {
                    let mut acc = T::zero();
                    for r in r0..r1 {
                        acc += plane[r * s.w + c0..r * s.w + c1].iter().copied().sum::<T>();
                    }
                    out.push(acc / T::from_usize((r1 - r0) * (c1 - c0)).unwrap());
                }
            }
        }
    }
    let out = Tensor::from_vec(out_shape, out)?;
    tape.record(out, &[x], PoolRule { rows, cols })
}

/// Source neighbours and blend weight for each output index along one axis
/// under the align-corners convention.
#[derive(Clone, Debug)]
struct AxisMap<T> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<T>,
}

impl<T: Scalar> AxisMap<T> {
    fn new(input: usize, output: usize) -> Self {
        let mut map = AxisMap {
            lo: Vec::with_capacity(output),
            hi: Vec::with_capacity(output),
            frac: Vec::with_capacity(output),
        };
        for i in 0..output {
            if input == 1 || output == 1 {
                map.lo.push(0);
                map.hi.push(0);
                map.frac.push(T::zero());
                continue;
            }
            let num = i * (input - 1);
            let den = output - 1;
            let lo = num / den;
            let frac = T::from_usize(num % den).unwrap() / T::from_usize(den).unwrap();
            map.lo.push(lo);
            map.hi.push((lo + 1).min(input - 1));
            map.frac.push(frac);
        }
        map
    }
}

fn resize_plane<T: Scalar>(
    src: &[T],
    w_in: usize,
    rows: &AxisMap<T>,
    cols: &AxisMap<T>,
    dst: &mut [T],
) {
    let w_out = cols.lo.len();
    for (i, ((&r0, &r1), &fr)) in rows.lo.iter().zip(&rows.hi).zip(&rows.frac).enumerate() {
        let top = &src[r0 * w_in..(r0 + 1) * w_in];
        let bottom = &src[r1 * w_in..(r1 + 1) * w_in];
        let line = &mut dst[i * w_out..(i + 1) * w_out];
        for (j, v) in line.iter_mut().enumerate() {
            let (c0, c1, fc) = (cols.lo[j], cols.hi[j], cols.frac[j]);
            let t = top[c0] + (top[c1] - top[c0]) * fc;
            let b = bottom[c0] + (bottom[c1] - bottom[c0]) * fc;
            *v = t + (b - t) * fr;
        }
    }
}

/// Bilinear resize of every plane with `align_corners = true`, outside any
/// tape. Resizing to the same size is the identity.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let s = x.shape();
    let rows = AxisMap::new(s.h, out_h);
    let cols = AxisMap::new(s.w, out_w);
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = vec![T::zero(); out_shape.numel()];
    for nc in 0..s.n * s.c {
        resize_plane(
            &x.data()[nc * s.plane()..(nc + 1) * s.plane()],
            s.w,
            &rows,
            &cols,
            &mut out[nc * out_h * out_w..(nc + 1) * out_h * out_w],
        );
    }
    Tensor::from_vec(out_shape, out).expect("resize output sized from its shape")
}

struct UpsampleRule<T> {
    rows: AxisMap<T>,
    cols: AxisMap<T>,
}

impl<T: Scalar> Backward<T> for UpsampleRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let s = ctx.inputs[0].shape();
        let (oh, ow) = (self.rows.lo.len(), self.cols.lo.len());
        let mut dx = vec![T::zero(); s.numel()];
        for nc in 0..s.n * s.c {
            let plane = &mut dx[nc * s.plane()..(nc + 1) * s.plane()];
            let g = &ctx.grad_out[nc * oh * ow..(nc + 1) * oh * ow];
            for i in 0..oh {
                let (r0, r1, fr) = (self.rows.lo[i], self.rows.hi[i], self.rows.frac[i]);
                for j in 0..ow {
                    let (c0, c1, fc) = (self.cols.lo[j], self.cols.hi[j], self.cols.frac[j]);
                    let v = g[i * ow + j];
                    let top = v * (T::one() - fr);
                    let bottom = v * fr;
                    plane[r0 * s.w + c0] += top * (T::one() - fc);
                    plane[r0 * s.w + c1] += top * fc;
                    plane[r1 * s.w + c0] += bottom * (T::one() - fc);
                    plane[r1 * s.w + c1] += bottom * fc;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Bilinear upsampling with `align_corners = true`.
pub fn upsample_bilinear<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let xt = tape.try_value(x)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Geometry("cannot resize to an empty plane".into()));
    }
    let s = xt.shape();
    let out = resize_bilinear(xt, out_h, out_w);
    let rule = UpsampleRule {
        rows: AxisMap::new(s.h, out_h),
        cols: AxisMap::new(s.w, out_w),
    };
    tape.record(out, &[x], rule)
}

struct BroadcastRule;

impl<T: Scalar> Backward<T> for BroadcastRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let plane = ctx.output.shape().plane();
        vec![Some(
            ctx.grad_out
                .chunks(plane)
                .map(|c| c.iter().copied().sum())
                .collect(),
        )]
    }
}

/// Repeats a `N×C×1×1` tensor over an `h×w` plane.
pub fn broadcast_spatial<T: Scalar>(tape: &mut Tape<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let xt = tape.try_value(x)?;
    let s = xt.shape();
    if (s.h, s.w) != (1, 1) {
        return Err(Error::Shape(format!("broadcast needs a 1x1 plane, got {s}")));
    }
    let out_shape = Shape::new(s.n, s.c, h, w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for &v in xt.data() {
        out.extend(std::iter::repeat_n(v, h * w));
    }
    let out = Tensor::from_vec(out_shape, out)?;
    tape.record(out, &[x], BroadcastRule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_block_means() {
        let mut tape = Tape::<f64>::new();
        let values: Vec<f64> = (1..=16).map(f64::from).collect();
        let x = tape.constant(Tensor::from_f64(Shape::new(1, 1, 4, 4), &values).unwrap());
        let y = adaptive_avg_pool(&mut tape, x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn single_bin_is_global_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = Tensor::<f64>::uniform(Shape::new(2, 3, 5, 7), -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let y = adaptive_avg_pool(&mut tape, x, 1, 1).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mean = t.plane(n, c).iter().sum::<f64>() / 35.0;
                assert!((tape.value(y).at(n, c, 0, 0) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uneven_bins_partition_the_plane() {
        assert_eq!(bin_edges(8, 3), vec![(0, 2), (2, 5), (5, 8)]);
        assert_eq!(bin_edges(8, 6), vec![(0, 1), (1, 2), (2, 4), (4, 5), (5, 6), (6, 8)]);
    }

    #[test]
    fn too_many_bins_is_a_geometry_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(Shape::new(1, 1, 4, 4)));
        assert!(matches!(adaptive_avg_pool(&mut tape, x, 6, 6), Err(Error::Geometry(_))));
    }

    #[test]
    fn align_corners_row_interpolation() {
        let x = Tensor::<f64>::from_f64(Shape::new(1, 1, 1, 2), &[1.0, 3.0]).unwrap();
        let y = resize_bilinear(&x, 1, 4);
        let expected = [1.0, 5.0 / 3.0, 7.0 / 3.0, 3.0];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_size_resize_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::uniform(Shape::new(1, 2, 6, 5), -1.0, 1.0, &mut rng);
        assert_eq!(resize_bilinear(&x, 6, 5).data(), x.data());
    }

    #[test]
    fn broadcast_fills_plane() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::channel_vector(vec![2.0, -1.0]));
        let y = broadcast_spatial(&mut tape, x, 2, 3).unwrap();
        assert_eq!(tape.value(y).plane(0, 1), &[-1.0; 6]);
    }
}
