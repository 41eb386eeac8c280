//! Binary checkpoint format:
//!
//! ```text
//! "ACESEG01"                       8 ASCII bytes
//! u32 count
//! count × {
//!     u32 name length, UTF-8 name,
//!     u32 rank, rank × u32 dims,
//!     product(dims) × f32 values, row-major
//! }
//! ```
//!
//! Every integer and float is little-endian.

use std::fs;
use std::path::Path;

use super::OptimizerState;
use crate::error::{Error, Result};
use crate::model::SegModel;
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub const MAGIC: &[u8; 8] = b"ACESEG01";
/// Name prefix of saved optimizer velocities.
pub const VELOCITY_PREFIX: &str = "optim.velocity.";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl NamedTensor {
    fn from_shape<T: Scalar>(name: String, shape: Shape, values: &[T]) -> Self {
        NamedTensor {
            name,
            dims: shape.dims().iter().map(|&d| d as u32).collect(),
            values: values.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
        }
    }

    fn shape(&self) -> Option<Shape> {
        match self.dims[..] {
            [n, c, h, w] => Some(Shape::new(n as usize, c as usize, h as usize, w as usize)),
            _ => None,
        }
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: dims overflow")))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: dims overflow")))?,
            "values",
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        tensors.push(NamedTensor { name, dims, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

/// Every model tensor (parameters and running statistics), followed by the
/// optimizer velocities when given.
pub fn checkpoint_save<T: Scalar>(
    path: &Path,
    model: &SegModel<T>,
    state: Option<&OptimizerState<T>>,
) -> Result<()> {
    let entries = model.params.entries();
    let mut tensors: Vec<NamedTensor> = entries
        .iter()
        .map(|e| NamedTensor::from_shape(e.name.clone(), e.value.shape(), e.value.data()))
        .collect();
    if let Some(state) = state {
        for (e, v) in entries.iter().zip(&state.velocity) {
            if let Some(v) = v {
                tensors.push(NamedTensor::from_shape(
                    format!("{VELOCITY_PREFIX}{}", e.name),
                    e.value.shape(),
                    v,
                ));
            }
        }
    }
    fs::write(path, encode(&tensors)).map_err(|e| Error::io(path, e))
}

/// Loads every model tensor into `model` and returns the optimizer state
/// when the file carries velocities. The model is untouched on any error.
pub fn checkpoint_load<T: Scalar>(path: &Path, model: &mut SegModel<T>) -> Result<Option<OptimizerState<T>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode(&bytes)?;
    let params = &model.params;
    let mut values: Vec<Option<Vec<T>>> = vec![None; params.len()];
    let mut velocity: Vec<Option<Vec<T>>> = vec![None; params.len()];
    for t in tensors {
        let (key, slots) = match t.name.strip_prefix(VELOCITY_PREFIX) {
            Some(rest) => (rest, &mut velocity),
            None => (t.name.as_str(), &mut values),
        };
        let i = params
            .position(key)
            .ok_or_else(|| Error::IncompatibleModel(format!("unknown tensor {}", t.name)))?;
        let expected = params.entries()[i].value.shape();
        if t.shape() != Some(expected) {
            return Err(Error::IncompatibleModel(format!(
                "{} has dims {:?}, model expects {expected}",
                t.name, t.dims
            )));
        }
        slots[i] = Some(t.values.iter().map(|&v| T::from_f32(v).unwrap()).collect());
    }
    if let Some(i) = values.iter().position(Option::is_none) {
        return Err(Error::IncompatibleModel(format!(
            "checkpoint lacks {}",
            params.entries()[i].name
        )));
    }
    let any_velocity = velocity.iter().any(Option::is_some);
    for (e, v) in model.params.entries_mut().iter_mut().zip(values) {
        e.value.data_mut().copy_from_slice(&v.expect("checked above"));
    }
    if !any_velocity {
        return Ok(None);
    }
    let mut state = OptimizerState::new(&model.params);
    for (slot, v) in state.velocity.iter_mut().zip(velocity) {
        if let (Some(slot), Some(v)) = (slot.as_mut(), v) {
            *slot = v;
        }
    }
    Ok(Some(state))
}
