use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Backward, BackwardCtx, Tape, Var};
use crate::tensor::{Labels, Tensor};

struct CrossEntropyRule<T> {
    /// Softmax probabilities, laid out like the logits.
    probs: Vec<T>,
    labels: Vec<u8>,
    ignore_index: u8,
    count: usize,
}

impl<T: Scalar> Backward<T> for CrossEntropyRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let s = ctx.inputs[0].shape();
        let plane = s.plane();
        let g = ctx.grad_out[0] / T::from_usize(self.count).unwrap();
        let mut dx = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            for p in 0..plane {
                let label = self.labels[n * plane + p];
                if label == self.ignore_index {
                    continue;
                }
                for k in 0..s.c {
                    let i = (n * s.c + k) * plane + p;
                    let target = if k == label as usize { T::one() } else { T::zero() };
                    dx[i] = g * (self.probs[i] - target);
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Channel softmax of `N×K×H×W` logits, outside any tape.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let s = logits.shape();
    let plane = s.plane();
    let x = logits.data();
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for p in 0..plane {
            let at = |k: usize| (n * s.c + k) * plane + p;
            let max = (0..s.c).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for k in 0..s.c {
                let e = (x[at(k)] - max).exp();
                out[at(k)] = e;
                denom += e;
            }
            for k in 0..s.c {
                out[at(k)] /= denom;
            }
        }
    }
    Tensor::from_vec(s, out).expect("softmax keeps shape")
}

/// Mean of `−log softmax(logits)[label]` over pixels whose label is not
/// `ignore_index`. Ignored pixels receive zero gradient.
pub fn softmax_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &Labels,
    ignore_index: u8,
) -> Result<Var> {
    let lt = tape.try_value(logits)?;
    let s = lt.shape();
    if (labels.n, labels.h, labels.w) != (s.n, s.h, s.w) {
        return Err(Error::Shape(format!(
            "labels {}x{}x{} do not match logits {s}",
            labels.n, labels.h, labels.w
        )));
    }
    let plane = s.plane();
    let x = lt.data();
    let mut total = T::zero();
    let mut count = 0usize;
    for n in 0..s.n {
        for p in 0..plane {
            let label = labels.data[n * plane + p];
            if label == ignore_index {
                continue;
            }
            if label as usize >= s.c {
                return Err(Error::LabelRange {
                    label,
                    classes: s.c,
                });
            }
            let at = |k: usize| x[(n * s.c + k) * plane + p];
            let max = (0..s.c).map(at).fold(T::neg_infinity(), T::max);
            let lse = max + (0..s.c).map(|k| (at(k) - max).exp()).sum::<T>().ln();
            total += lse - at(label as usize);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    let loss = total / T::from_usize(count).unwrap();
    let probs = softmax_channels(lt).into_data();
    tape.record(
        Tensor::scalar(loss),
        &[logits],
        CrossEntropyRule {
            probs,
            labels: labels.data.clone(),
            ignore_index,
            count,
        },
    )
}
