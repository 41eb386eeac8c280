//! Named parameter storage and the small layer building blocks shared by
//! the backbone and the heads.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{self, BnState, ConvParams, Mode};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// What a stored tensor is for; decides learnability and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl Role {
    pub fn learnable(self) -> bool {
        !matches!(self, Role::RunningMean | Role::RunningVar)
    }

    /// Batch-norm affine parameters are exempt from weight decay.
    pub fn decays(self) -> bool {
        matches!(self, Role::Weight | Role::Bias)
    }
}

#[derive(Clone, Debug)]
pub struct Entry<T> {
    pub name: String,
    pub role: Role,
    pub value: Tensor<T>,
}

/// Ordered, name-addressed collection of every tensor a model owns.
#[derive(Clone, Debug, Default)]
pub struct Params<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, role: Role, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.push(Entry {
            name: name.clone(),
            role,
            value,
        });
        self.index.insert(name, self.entries.len() - 1);
        Ok(self.entries.len() - 1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Entry<T>> {
        self.position(name).map(|i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Entry<T>> {
        self.position(name).map(|i| &mut self.entries[i])
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.position(name)
            .ok_or_else(|| Error::IncompatibleModel(format!("missing parameter {name}")))
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Learnable scalar count of entries whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role.learnable() && e.name.starts_with(prefix))
            .map(|e| e.value.shape().numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    role: e.role,
                    value: e.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Seeded parameter initialization.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-uniform over fan-in: `U(−√(6/fan_in), √(6/fan_in))`.
    pub fn he_uniform<T: Scalar>(&mut self, shape: Shape) -> Tensor<T> {
        let fan_in = (shape.c * shape.h * shape.w).max(1) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Tensor::uniform(shape, -bound, bound, &mut self.rng)
    }
}

/// One forward pass: binds stored parameters onto a tape on first use and
/// tracks which variable each parameter became.
pub struct Forward<'a, T> {
    pub tape: &'a mut Tape<T>,
    params: &'a mut Params<T>,
    bound: Vec<Option<Var>>,
    pub mode: Mode,
    track_grads: bool,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a mut Params<T>, mode: Mode, track_grads: bool) -> Self {
        let bound = vec![None; params.len()];
        Forward {
            tape,
            params,
            bound,
            mode,
            track_grads,
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let i = self.params.require(name)?;
        if let Some(v) = self.bound[i] {
            return Ok(v);
        }
        let value = self.params.entries[i].value.clone();
        let v = if self.track_grads && self.params.entries[i].role.learnable() {
            self.tape.param(value)
        } else {
            self.tape.constant(value)
        };
        self.bound[i] = Some(v);
        Ok(v)
    }

    fn stat(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.params.entries[self.params.require(name)?].value.data().to_vec())
    }

    fn set_stat(&mut self, name: &str, values: &[T]) -> Result<()> {
        let i = self.params.require(name)?;
        self.params.entries[i].value.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn into_bindings(self) -> Bindings {
        Bindings { vars: self.bound }
    }
}

/// Parameter index → tape variable for a finished forward pass.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Option<Var>>,
}

impl Bindings {
    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars.get(index).copied().flatten()
    }
}

/// Convolution with an optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: String,
    pub bias: Option<String>,
    pub geom: ConvParams,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvInit {
    HeUniform,
    Zero,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        params: &mut Params<T>,
        init: &mut Initializer,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvParams,
        bias: bool,
        how: ConvInit,
    ) -> Result<Self> {
        let shape = Shape::new(out_channels, in_channels, geom.kernel_h, geom.kernel_w);
        let w = match how {
            ConvInit::HeUniform => init.he_uniform(shape),
            ConvInit::Zero => Tensor::zeros(shape),
        };
        let weight = format!("{name}.weight");
        params.insert(weight.clone(), Role::Weight, w)?;
        let bias = if bias {
            let b = format!("{name}.bias");
            params.insert(b.clone(), Role::Bias, Tensor::zeros(Shape::new(1, out_channels, 1, 1)))?;
            Some(b)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = fwd.param(&self.weight)?;
        let b = match &self.bias {
            Some(name) => Some(fwd.param(name)?),
            None => None,
        };
        ops::conv2d(fwd.tape, x, w, b, self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub prefix: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn register<T: Scalar>(params: &mut Params<T>, name: &str, channels: usize) -> Result<Self> {
        let v = |x: f64| Tensor::full(Shape::new(1, channels, 1, 1), T::lit(x));
        params.insert(format!("{name}.gamma"), Role::NormScale, v(1.0))?;
        params.insert(format!("{name}.beta"), Role::NormShift, v(0.0))?;
        params.insert(format!("{name}.running_mean"), Role::RunningMean, v(0.0))?;
        params.insert(format!("{name}.running_var"), Role::RunningVar, v(1.0))?;
        Ok(BatchNorm {
            prefix: name.to_string(),
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let gamma = fwd.param(&format!("{}.gamma", self.prefix))?;
        let beta = fwd.param(&format!("{}.beta", self.prefix))?;
        let mean_name = format!("{}.running_mean", self.prefix);
        let var_name = format!("{}.running_var", self.prefix);
        let mut state = BnState {
            running_mean: fwd.stat(&mean_name)?,
            running_var: fwd.stat(&var_name)?,
        };
        let mode = fwd.mode;
        let y = ops::batch_norm(fwd.tape, x, gamma, beta, &mut state, mode)?;
        if mode == Mode::Train {
            fwd.set_stat(&mean_name, &state.running_mean)?;
            fwd.set_stat(&var_name, &state.running_var)?;
        }
        Ok(y)
    }
}

/// Bias-free convolution → batch norm → ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn register<T: Scalar>(
        params: &mut Params<T>,
        init: &mut Initializer,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvParams,
    ) -> Result<Self> {
        let conv = Conv::register(
            params,
            init,
            &format!("{name}.conv"),
            in_channels,
            out_channels,
            geom,
            false,
            ConvInit::HeUniform,
        )?;
        let bn = BatchNorm::register(params, &format!("{name}.bn"), out_channels)?;
        Ok(ConvBnRelu { conv, bn })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(fwd, x)?;
        let y = self.bn.forward(fwd, y)?;
        ops::relu(fwd.tape, y)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }
}
