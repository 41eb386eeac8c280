use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Backward, BackwardCtx, Tape, Var};

struct ReluRule;

impl<T: Scalar> Backward<T> for ReluRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.inputs[0].data();
        vec![Some(
            ctx.grad_out
                .iter()
                .zip(x)
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect(),
        )]
    }
}

pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let out = tape.try_value(x)?.map(|v| v.max(T::zero()));
    tape.record(out, &[x], ReluRule)
}

struct SigmoidRule;

impl<T: Scalar> Backward<T> for SigmoidRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let y = ctx.output.data();
        vec![Some(
            ctx.grad_out
                .iter()
                .zip(y)
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect(),
        )]
    }
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let out = tape.try_value(x)?.map(sigmoid_scalar);
    tape.record(out, &[x], SigmoidRule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn sigmoid_range_and_midpoint() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(
            Tensor::from_f64(Shape::new(1, 1, 1, 5), &[-1e4, -3.0, 0.0, 3.0, 1e4]).unwrap(),
        );
        let y = sigmoid(&mut tape, x).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[2], 0.5);
        assert_eq!(v[4], 1.0);
        assert!(v.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(Shape::new(1, 1, 1, 3), &[-1.0, 0.0, 2.5]).unwrap());
        let y = relu(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.5]);
    }
}
