use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Backward, BackwardCtx, Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }
}

struct BnRule<T> {
    /// Normalized input `x̂`, same layout as `x`.
    normalized: Vec<T>,
    inv_std: Vec<T>,
    /// Batch statistics were used (train mode), so `x` feeds the mean and
    /// variance as well as the output.
    batch_stats: bool,
}

impl<T: Scalar> Backward<T> for BnRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let s = ctx.inputs[0].shape();
        let gamma = ctx.inputs[1].data();
        let plane = s.plane();
        let count = T::from_usize(s.n * plane).unwrap();
        let dy = ctx.grad_out;
        let xhat = &self.normalized;

        let mut dgamma = vec![T::zero(); s.c];
        let mut dbeta = vec![T::zero(); s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let start = (n * s.c + c) * plane;
                for i in start..start + plane {
                    dbeta[c] += dy[i];
                    dgamma[c] += dy[i] * xhat[i];
                }
            }
        }

        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![T::zero(); s.numel()];
            for c in 0..s.c {
                let k = gamma[c] * self.inv_std[c];
                let (mean_dy, mean_dy_xhat) = if self.batch_stats {
                    (dbeta[c] / count, dgamma[c] / count)
                } else {
                    (T::zero(), T::zero())
                };
                for n in 0..s.n {
                    let start = (n * s.c + c) * plane;
                    for i in start..start + plane {
                        dx[i] = k * (dy[i] - mean_dy - xhat[i] * mean_dy_xhat);
                    }
                }
            }
            dx
        });
        vec![
            dx,
            ctx.needs[1].then_some(dgamma),
            ctx.needs[2].then_some(dbeta),
        ]
    }
}

/// Per-channel batch normalization with `ε = 1e-5`.
///
/// In [`Mode::Train`] the batch statistics normalize the input and the
/// running statistics move toward them with momentum 0.1 (the running
/// variance uses the unbiased estimate). In [`Mode::Eval`] the running
/// statistics are used unchanged.
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BnState<T>,
    mode: Mode,
) -> Result<Var> {
    let xt = tape.try_value(x)?;
    let s = xt.shape();
    let g = tape.try_value(gamma)?.data();
    let b = tape.try_value(beta)?.data();
    if g.len() != s.c || b.len() != s.c || state.running_mean.len() != s.c {
        return Err(Error::Shape(format!(
            "batch norm over {} channels given {} scales, {} shifts and {} running entries",
            s.c,
            g.len(),
            b.len(),
            state.running_mean.len()
        )));
    }
    let plane = s.plane();
    let count = s.n * plane;
    let eps = T::lit(BN_EPSILON);

    let (mean, var) = match mode {
        Mode::Train => {
            if count <= 1 {
                return Err(Error::DegenerateVariance);
            }
            let mut mean = vec![T::zero(); s.c];
            let mut var = vec![T::zero(); s.c];
            let inv_count = T::one() / T::from_usize(count).unwrap();
            for c in 0..s.c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    acc += xt.plane(n, c).iter().copied().sum::<T>();
                }
                mean[c] = acc * inv_count;
                let mut sq = T::zero();
                for n in 0..s.n {
                    sq += xt.plane(n, c).iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<T>();
                }
                var[c] = sq * inv_count;
            }
            (mean, var)
        }
        Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = vec![T::zero(); s.numel()];
    let mut y = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * plane;
            for i in start..start + plane {
                let xh = (xt.data()[i] - mean[c]) * inv_std[c];
                normalized[i] = xh;
                y[i] = g[c] * xh + b[c];
            }
        }
    }

    if mode == Mode::Train {
        let momentum = T::lit(BN_MOMENTUM);
        let keep = T::one() - momentum;
        let unbias = T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap();
        for c in 0..s.c {
            state.running_mean[c] = keep * state.running_mean[c] + momentum * mean[c];
            state.running_var[c] = keep * state.running_var[c] + momentum * var[c] * unbias;
        }
    }

    let out = Tensor::from_vec(s, y)?;
    tape.record(
        out,
        &[x, gamma, beta],
        BnRule {
            normalized,
            inv_std,
            batch_stats: mode == Mode::Train,
        },
    )
}
