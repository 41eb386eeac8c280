//! Small stride-8 feature extractor with an auxiliary tap.

use crate::error::{Error, Result};
use crate::nn::{ConvBnRelu, Forward, Initializer, Params};
use crate::ops::{self, ConvParams};
use crate::scalar::Scalar;
use crate::tape::Var;

pub const OUTPUT_STRIDE: usize = 8;
pub const DEFAULT_CHANNELS: usize = 128;
pub const AUX_CHANNELS: usize = 64;

/// Features at 1/8 resolution for the head (`main`) and for the auxiliary
/// classifier (`aux`).
#[derive(Clone, Copy, Debug)]
pub struct BackboneOutput {
    pub main: Var,
    pub aux: Var,
}

/// Three stages of `[3×3 stride-2 conv → BN → ReLU → 3×3 conv → BN → ReLU]`
/// with widths 32, 64 and `channels`. The auxiliary branch pools the end of
/// stage 2 by 2×2 and projects it with a 1×1 conv → BN → ReLU.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<(ConvBnRelu, ConvBnRelu)>,
    pub aux_proj: ConvBnRelu,
    pub channels: usize,
}

impl Backbone {
    pub fn build<T: Scalar>(channels: usize, params: &mut Params<T>, init: &mut Initializer) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("backbone needs at least one channel".into()));
        }
        let down = ConvParams::square(3).with_stride(2).with_padding(1);
        let same = ConvParams::square(3).with_padding(1);
        let widths = [(3, 32), (32, AUX_CHANNELS), (AUX_CHANNELS, channels)];
        let mut stages = Vec::with_capacity(3);
        for (i, &(cin, cout)) in widths.iter().enumerate() {
            let name = format!("backbone.stage{}", i + 1);
            let a = ConvBnRelu::register(params, init, &format!("{name}.down"), cin, cout, down)?;
            let b = ConvBnRelu::register(params, init, &format!("{name}.refine"), cout, cout, same)?;
            stages.push((a, b));
        }
        let aux_proj = ConvBnRelu::register(
            params,
            init,
            "backbone.aux",
            AUX_CHANNELS,
            AUX_CHANNELS,
            ConvParams::square(1),
        )?;
        Ok(Backbone {
            stages,
            aux_proj,
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, image: Var) -> Result<BackboneOutput> {
        let s = fwd.tape.try_value(image)?.shape();
        if s.c != 3 {
            return Err(Error::Shape(format!("backbone expects RGB input, got {s}")));
        }
        if s.h % OUTPUT_STRIDE != 0 || s.w % OUTPUT_STRIDE != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::Geometry(format!(
                "input {}x{} is not divisible by {OUTPUT_STRIDE}",
                s.h, s.w
            )));
        }
        let mut x = image;
        let mut tap = None;
        for (i, (a, b)) in self.stages.iter().enumerate() {
            x = a.forward(fwd, x)?;
            x = b.forward(fwd, x)?;
            if i == 1 {
                tap = Some(x);
            }
        }
        let tap = tap.expect("three stages");
        let pooled = ops::adaptive_avg_pool(fwd.tape, tap, s.h / OUTPUT_STRIDE, s.w / OUTPUT_STRIDE)?;
        let aux = self.aux_proj.forward(fwd, pooled)?;
        Ok(BackboneOutput { main: x, aux })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::tape::Tape;
    use crate::tensor::{Shape, Tensor};

    fn run(x: Tensor<f32>, seed: u64, mode: Mode) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut params = Params::new();
        let bb = Backbone::build(DEFAULT_CHANNELS, &mut params, &mut Initializer::new(seed))?;
        let mut tape = Tape::new();
        let mut fwd = Forward::new(&mut tape, &mut params, mode, false);
        let xv = fwd.tape.constant(x);
        let out = bb.forward(&mut fwd, xv)?;
        Ok((tape.value(out.main).clone(), tape.value(out.aux).clone()))
    }

    #[test]
    fn output_stride_is_eight() {
        let mut rng = rand::rng();
        let x = Tensor::uniform(Shape::new(1, 3, 64, 64), 0.0, 1.0, &mut rng);
        let (main, aux) = run(x, 0, Mode::Eval).unwrap();
        assert_eq!(main.shape(), Shape::new(1, 128, 8, 8));
        assert_eq!(aux.shape(), Shape::new(1, 64, 8, 8));
    }

    #[test]
    fn zero_input_gives_zero_features() {
        for mode in [Mode::Eval, Mode::Train] {
            let (main, aux) = run(Tensor::zeros(Shape::new(2, 3, 16, 24)), 5, mode).unwrap();
            assert!(main.data().iter().all(|&v| v == 0.0));
            assert!(aux.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut rng = rand::rng();
        let x = Tensor::uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut rng);
        assert_eq!(run(x.clone(), 9, Mode::Eval).unwrap(), run(x, 9, Mode::Eval).unwrap());
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let err = run(Tensor::zeros(Shape::new(1, 3, 60, 64)), 0, Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }
}
