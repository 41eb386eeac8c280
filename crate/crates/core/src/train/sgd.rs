use crate::error::{Error, Result};
use crate::nn::Params;
use crate::scalar::Scalar;

/// One velocity buffer per learnable parameter, zero at start.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    /// Indexed like the parameter entries; `None` for running statistics.
    pub velocity: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &Params<T>) -> Self {
        OptimizerState {
            velocity: params
                .entries()
                .iter()
                .map(|e| e.role.learnable().then(|| vec![T::zero(); e.value.shape().numel()]))
                .collect(),
        }
    }
}

/// `g' = g + wd·p` (batch-norm affine parameters skip the decay term),
/// `v = momentum·v + g'`, `p = p − lr·v`.
///
/// `grads` is indexed like the parameter entries. Nothing is modified if
/// any learnable parameter lacks a gradient.
pub fn sgd_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &[Option<&[T]>],
    state: &mut OptimizerState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} parameters, {} gradients, {} velocity slots",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (e, g) in params.entries().iter().zip(grads) {
        if e.role.learnable() && g.is_none_or(|g| g.len() != e.value.shape().numel()) {
            return Err(Error::UnpopulatedGradient(e.name.clone()));
        }
    }
    let (lr, momentum, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for ((e, g), v) in params
        .entries_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.velocity.iter_mut())
    {
        let (Some(g), Some(v)) = (g, v) else { continue };
        let decay = if e.role.decays() { wd } else { T::zero() };
        for ((p, &g), v) in e.value.data_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = momentum * *v + g + decay * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Role;
    use crate::tensor::{Shape, Tensor};

    fn single(role: Role, value: f64) -> Params<f64> {
        let mut p = Params::new();
        p.insert("p", role, Tensor::full(Shape::SCALAR, value)).unwrap();
        p
    }

    fn value(p: &Params<f64>) -> f64 {
        p.entries()[0].value.data()[0]
    }

    #[test]
    fn vanilla_descent() {
        let mut p = single(Role::Weight, 3.0);
        let mut s = OptimizerState::new(&p);
        sgd_step(&mut p, &[Some(&[2.0])], &mut s, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(value(&p), 2.0);
    }

    #[test]
    fn coupled_weight_decay() {
        let mut p = single(Role::Weight, 1.0);
        let mut s = OptimizerState::new(&p);
        sgd_step(&mut p, &[Some(&[1.0])], &mut s, 0.1, 0.0, 0.0001).unwrap();
        assert!((value(&p) - 0.89999).abs() < 1e-12);
    }

    #[test]
    fn momentum_recursion() {
        let mut p = single(Role::Weight, 0.0);
        let mut s = OptimizerState::new(&p);
        for _ in 0..2 {
            sgd_step(&mut p, &[Some(&[1.0])], &mut s, 1.0, 0.9, 0.0).unwrap();
        }
        assert!((value(&p) + 2.9).abs() < 1e-12);
    }

    #[test]
    fn norm_scale_is_not_decayed() {
        let mut p = Params::new();
        p.insert("w", Role::Weight, Tensor::full(Shape::SCALAR, 2.0)).unwrap();
        p.insert("g", Role::NormScale, Tensor::full(Shape::SCALAR, 2.0)).unwrap();
        let mut s = OptimizerState::new(&p);
        for _ in 0..3 {
            sgd_step(&mut p, &[Some(&[0.0]), Some(&[0.0])], &mut s, 0.1, 0.9, 0.01).unwrap();
        }
        assert!(p.entries()[0].value.data()[0] < 2.0);
        assert_eq!(p.entries()[1].value.data()[0], 2.0);
    }

    #[test]
    fn missing_gradient_changes_nothing() {
        let mut p = Params::new();
        p.insert("a", Role::Weight, Tensor::full(Shape::SCALAR, 1.0)).unwrap();
        p.insert("b", Role::Bias, Tensor::full(Shape::SCALAR, 1.0)).unwrap();
        p.insert("rm", Role::RunningMean, Tensor::full(Shape::SCALAR, 1.0)).unwrap();
        let mut s = OptimizerState::new(&p);
        let err = sgd_step(&mut p, &[Some(&[1.0]), None, None], &mut s, 1.0, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::UnpopulatedGradient(ref n) if n == "b"));
        assert_eq!(p.entries()[0].value.data()[0], 1.0);
        sgd_step(&mut p, &[Some(&[1.0]), Some(&[1.0]), None], &mut s, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(p.entries()[2].value.data()[0], 1.0);
    }
}
