//! Central finite-difference verification of analytic gradients.
//!
//! Every check runs at double precision. The scalar objective is
//! `Σ y ⊙ R` for a fixed random `R`, so every output element carries a
//! distinct weight.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heads::{Head, HeadConfig, HeadKind};
use crate::nn::{Forward, Initializer, Params};
use crate::ops::{self, BnState, ConvParams, Mode, OffsetField};
use crate::tape::{Tape, Var};
use crate::tensor::{Labels, Shape, Tensor};
use crate::IGNORE_INDEX;

/// Largest number of elements probed per input; bigger inputs are sampled.
pub const MAX_PROBES_PER_INPUT: usize = 256;

/// Largest share of probes allowed to straddle a kink.
pub const MAX_SKIPPED_FRACTION: f64 = 0.02;

/// Evaluation points tried before a kink-heavy report stands.
pub const MAX_ATTEMPTS: u64 = 3;

/// Sampling coordinates stay at least this far from integer grid lines.
pub const GRID_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckOp {
    Conv2d,
    BilinearSample,
    DeformConvV1,
    DeformConvV2,
    OffsetPredictor,
    BatchNorm,
    Relu,
    Sigmoid,
    AdaptiveAvgPool,
    UpsampleBilinear,
    CrossEntropy,
    AceHead,
    PpmHead,
    AsppHead,
}

impl GradCheckOp {
    pub const ALL: [GradCheckOp; 14] = [
        GradCheckOp::Conv2d,
        GradCheckOp::BilinearSample,
        GradCheckOp::DeformConvV1,
        GradCheckOp::DeformConvV2,
        GradCheckOp::OffsetPredictor,
        GradCheckOp::BatchNorm,
        GradCheckOp::Relu,
        GradCheckOp::Sigmoid,
        GradCheckOp::AdaptiveAvgPool,
        GradCheckOp::UpsampleBilinear,
        GradCheckOp::CrossEntropy,
        GradCheckOp::AceHead,
        GradCheckOp::PpmHead,
        GradCheckOp::AsppHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCheckOp::Conv2d => "conv2d",
            GradCheckOp::BilinearSample => "bilinear_sample",
            GradCheckOp::DeformConvV1 => "deform_conv_v1",
            GradCheckOp::DeformConvV2 => "deform_conv_v2",
            GradCheckOp::OffsetPredictor => "offset_predictor",
            GradCheckOp::BatchNorm => "batch_norm",
            GradCheckOp::Relu => "relu",
            GradCheckOp::Sigmoid => "sigmoid",
            GradCheckOp::AdaptiveAvgPool => "adaptive_avg_pool",
            GradCheckOp::UpsampleBilinear => "upsample_bilinear",
            GradCheckOp::CrossEntropy => "softmax_cross_entropy",
            GradCheckOp::AceHead => "ace_head",
            GradCheckOp::PpmHead => "ppm_head",
            GradCheckOp::AsppHead => "aspp_head",
        }
    }
}

impl fmt::Display for GradCheckOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradCheckOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradCheckOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = GradCheckOp::ALL.iter().map(|op| op.name()).collect();
                Error::Config(format!("unknown op {s:?}; known: {}", known.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op: GradCheckOp,
    pub max_rel_error: f64,
    /// Input and element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub probes: usize,
    /// Probes whose finite differences at `ε` and `2ε` disagree beyond the
    /// tolerance, so no reference value exists for them.
    pub skipped: usize,
    /// Sampled points tried, including redraws after kink-heavy points.
    pub attempts: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the check could not run at all.
    pub failure: Option<String>,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "op={} max_rel_error={:.3e} tolerance={:.0e} probes={} skipped={} attempts={} {}",
            self.op,
            self.max_rel_error,
            self.tolerance,
            self.probes,
            self.skipped,
            self.attempts,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        if let Some((name, i)) = &self.worst {
            write!(f, " worst={name}[{i}]")?;
        }
        if let Some(why) = &self.failure {
            write!(f, " error={why}")?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Var>)>>;

/// A differentiable function of named inputs. `build` records the inputs as
/// learnable leaves and returns the output plus those leaves, in order.
struct Case {
    names: Vec<String>,
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

/// Leaves the inputs as learnable parameters, in order.
fn leaves(tape: &mut Tape<f64>, inputs: &[Tensor<f64>]) -> Vec<Var> {
    inputs.iter().map(|t| tape.param(t.clone())).collect()
}

fn simple(
    names: &[&str],
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        names: names.iter().map(|s| s.to_string()).collect(),
        inputs,
        build: Box::new(move |tape, inputs| {
            let vars = leaves(tape, inputs);
            let y = f(tape, &vars)?;
            Ok((y, vars))
        }),
    }
}

fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Values in `(lo, hi)` whose fractional part stays `GRID_MARGIN` away
/// from 0 and 1.
fn off_grid(shape: Shape, lo: i32, hi: i32, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel())
        .map(|_| {
            let whole = rng.random_range(lo..hi) as f64;
            whole + rng.random_range(GRID_MARGIN..1.0 - GRID_MARGIN)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// Values bounded away from zero in magnitude, so no ReLU kink is crossed.
fn away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

fn deform_case(version: u8, rng: &mut ChaCha8Rng) -> Case {
    let geom = ConvParams::square(3).with_padding(1);
    let x = uniform(Shape::new(2, 2, 5, 5), -1.0, 1.0, rng);
    let w = uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, rng);
    let offsets = off_grid(Shape::new(2, 18, 5, 5), -2, 2, rng);
    if version == 1 {
        return simple(&["x", "w", "offsets"], vec![x, w, offsets], move |tape, v| {
            ops::deform_conv_v1(tape, v[0], v[1], &OffsetField::unmodulated(v[2]), geom)
        });
    }
    let modulation = uniform(Shape::new(2, 9, 5, 5), 0.05, 0.95, rng);
    simple(
        &["x", "w", "offsets", "modulation"],
        vec![x, w, offsets, modulation],
        move |tape, v| ops::deform_conv_v2(tape, v[0], v[1], &OffsetField::modulated(v[2], v[3]), geom),
    )
}

/// A head built on `f` with every learnable parameter exposed as an input.
/// Offset predictors get small random weights so sampling lands off-grid.
fn head_case(kind: HeadKind, rng: &mut ChaCha8Rng) -> Case {
    let mut cfg = HeadConfig::new(16, 3);
    cfg.ppm_bins = vec![1, 2, 3];
    cfg.aspp_rates = vec![1, 2, 3];
    let mut params = Params::<f64>::new();
    let mut init = Initializer::new(rng.random());
    let head = Head::build(kind, &cfg, &mut params, &mut init).expect("valid head config");
    // Offset channels get zero weights and off-grid biases, so every
    // sampling point sits at least GRID_MARGIN from a grid line; the
    // modulation channels get small random weights.
    for e in params.entries_mut() {
        let s = e.value.shape();
        if e.name.ends_with(".offset.weight") {
            let mut w = uniform(s, -0.2, 0.2, rng);
            let offset_part = 2 * s.n / 3 * s.c * s.h * s.w;
            w.data_mut()[..offset_part].fill(0.0);
            e.value = w;
        } else if e.name.ends_with(".offset.bias") {
            let mut b = uniform(s, -1.5, 1.5, rng);
            let grid = off_grid(s, -2, 2, rng);
            let offsets = 2 * s.c / 3;
            b.data_mut()[..offsets].copy_from_slice(&grid.data()[..offsets]);
            e.value = b;
        } else if e.name.ends_with(".gamma") || e.name.ends_with(".beta") {
            e.value = uniform(s, 0.5, 1.5, rng);
        }
    }
    // Four items so the 1×1 pooled branches normalize over more than two values.
    let f = uniform(Shape::new(4, 16, 6, 6), -1.0, 1.0, rng);
    let learnable: Vec<usize> = (0..params.len())
        .filter(|&i| params.entries()[i].role.learnable())
        .collect();
    let mut names = vec!["features".to_string()];
    let mut inputs = vec![f];
    for &i in &learnable {
        names.push(params.entries()[i].name.clone());
        inputs.push(params.entries()[i].value.clone());
    }
    Case {
        names,
        inputs,
        build: Box::new(move |tape, inputs| {
            let mut p = params.clone();
            for (k, &i) in learnable.iter().enumerate() {
                p.entries_mut()[i].value = inputs[k + 1].clone();
            }
            let f = tape.param(inputs[0].clone());
            let mut fwd = Forward::new(tape, &mut p, Mode::Train, true);
            let y = head.forward(&mut fwd, f)?;
            let bindings = fwd.into_bindings();
            let mut vars = vec![f];
            for &i in &learnable {
                vars.push(bindings.var(i).ok_or_else(|| {
                    Error::Contract(format!("parameter {i} unused by the forward pass"))
                })?);
            }
            Ok((y, vars))
        }),
    }
}

fn case(op: GradCheckOp, rng: &mut ChaCha8Rng) -> Case {
    match op {
        GradCheckOp::Conv2d => {
            let geom = ConvParams::square(3).with_padding(1).with_dilation(1);
            let x = uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, rng);
            let w = uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, rng);
            let b = uniform(Shape::new(1, 3, 1, 1), -1.0, 1.0, rng);
            simple(&["x", "w", "b"], vec![x, w, b], move |tape, v| {
                ops::conv2d(tape, v[0], v[1], Some(v[2]), geom)
            })
        }
        GradCheckOp::BilinearSample => {
            let x = uniform(Shape::new(1, 2, 4, 5), -1.0, 1.0, rng);
            let grid = off_grid(Shape::new(1, 2, 3, 4), -1, 5, rng);
            simple(&["x", "grid"], vec![x, grid], |tape, v| ops::grid_sample(tape, v[0], v[1]))
        }
        GradCheckOp::DeformConvV1 => deform_case(1, rng),
        GradCheckOp::DeformConvV2 => deform_case(2, rng),
        GradCheckOp::OffsetPredictor => {
            let geom = ConvParams::square(3).with_padding(1);
            let x = uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, rng);
            let w = uniform(Shape::new(27, 2, 3, 3), -0.5, 0.5, rng);
            let b = uniform(Shape::new(1, 27, 1, 1), -0.5, 0.5, rng);
            simple(&["x", "w_off", "b_off"], vec![x, w, b], move |tape, v| {
                let field = ops::offset_predictor(tape, v[0], v[1], v[2], 9, geom)?;
                let m = field.modulation.expect("predictor emits modulation");
                ops::concat_channels(tape, &[field.offsets, m])
            })
        }
        GradCheckOp::BatchNorm => {
            let x = uniform(Shape::new(2, 3, 3, 3), -2.0, 2.0, rng);
            let g = uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, rng);
            let b = uniform(Shape::new(1, 3, 1, 1), -1.0, 1.0, rng);
            simple(&["x", "gamma", "beta"], vec![x, g, b], |tape, v| {
                let mut state = BnState::new(3);
                ops::batch_norm(tape, v[0], v[1], v[2], &mut state, Mode::Train)
            })
        }
        GradCheckOp::Relu => {
            let x = away_from_zero(Shape::new(1, 2, 4, 4), rng);
            simple(&["x"], vec![x], |tape, v| ops::relu(tape, v[0]))
        }
        GradCheckOp::Sigmoid => {
            let x = uniform(Shape::new(1, 2, 4, 4), -4.0, 4.0, rng);
            simple(&["x"], vec![x], |tape, v| ops::sigmoid(tape, v[0]))
        }
        GradCheckOp::AdaptiveAvgPool => {
            let x = uniform(Shape::new(2, 2, 7, 6), -1.0, 1.0, rng);
            simple(&["x"], vec![x], |tape, v| ops::adaptive_avg_pool(tape, v[0], 3, 4))
        }
        GradCheckOp::UpsampleBilinear => {
            let x = uniform(Shape::new(1, 2, 3, 4), -1.0, 1.0, rng);
            simple(&["x"], vec![x], |tape, v| ops::upsample_bilinear(tape, v[0], 7, 9))
        }
        GradCheckOp::CrossEntropy => {
            let x = uniform(Shape::new(2, 4, 3, 3), -3.0, 3.0, rng);
            let labels: Vec<u8> = (0..18)
                .map(|i| if i % 7 == 3 { IGNORE_INDEX } else { rng.random_range(0..4) })
                .collect();
            let labels = Labels::new(2, 3, 3, labels).expect("label count matches");
            simple(&["logits"], vec![x], move |tape, v| {
                ops::softmax_cross_entropy(tape, v[0], &labels, IGNORE_INDEX)
            })
        }
        GradCheckOp::AceHead => head_case(HeadKind::Ace, rng),
        GradCheckOp::PpmHead => head_case(HeadKind::Ppm, rng),
        GradCheckOp::AsppHead => head_case(HeadKind::Aspp, rng),
    }
}

/// Records the case and reduces its output to a scalar with `weights`.
fn objective(
    case: &Case,
    tape: &mut Tape<f64>,
    inputs: &[Tensor<f64>],
    weights: &Tensor<f64>,
) -> Result<(Var, Vec<Var>)> {
    let (y, vars) = (case.build)(tape, inputs)?;
    let r = tape.constant(weights.clone());
    let yr = ops::mul(tape, y, r)?;
    Ok((ops::sum(tape, yr)?, vars))
}

fn loss_at(case: &Case, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = objective(case, &mut tape, inputs, weights)?;
    Ok(tape.value(loss).data()[0])
}

/// Element indices to probe: all of them, or an even-strided sample with a
/// random phase when the input is large.
fn probe_indices(numel: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if numel <= MAX_PROBES_PER_INPUT {
        return (0..numel).collect();
    }
    let stride = numel as f64 / MAX_PROBES_PER_INPUT as f64;
    let phase = rng.random_range(0.0..stride);
    (0..MAX_PROBES_PER_INPUT)
        .map(|i| ((phase + i as f64 * stride) as usize).min(numel - 1))
        .collect()
}

fn run(op: GradCheckOp, seed: u64, epsilon: f64, tolerance: f64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = case(op, &mut rng);

    let mut probe = Tape::new();
    let (y, _) = (case.build)(&mut probe, &case.inputs)?;
    let weights = uniform(probe.shape(y), -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let (loss, vars) = objective(&case, &mut tape, &case.inputs, &weights)?;
    tape.backward(loss)?;

    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut probes = 0;
    let mut skipped = 0;
    let mut inputs = case.inputs.clone();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].shape().numel()]);
        for i in probe_indices(analytic.len(), &mut rng) {
            let original = inputs[k].data()[i];
            let mut central = |step: f64| -> Result<f64> {
                inputs[k].data_mut()[i] = original + step;
                let plus = loss_at(&case, &inputs, &weights)?;
                inputs[k].data_mut()[i] = original - step;
                let minus = loss_at(&case, &inputs, &weights)?;
                inputs[k].data_mut()[i] = original;
                Ok((plus - minus) / (2.0 * step))
            };
            let numeric = central(epsilon)?;
            probes += 1;
            // A kink inside the stencil makes the two estimates disagree;
            // such a probe has no finite-difference reference.
            if relative_error(numeric, central(2.0 * epsilon)?) > tolerance {
                skipped += 1;
                continue;
            }
            let err = relative_error(analytic[i], numeric);
            if err > max_rel || err.is_nan() {
                max_rel = err;
                worst = Some((case.names[k].clone(), i));
            }
        }
    }
    let too_many_skipped = skipped as f64 > MAX_SKIPPED_FRACTION * probes as f64;
    Ok(GradCheckReport {
        op,
        max_rel_error: max_rel,
        worst,
        probes,
        skipped,
        attempts: 1,
        tolerance,
        passed: max_rel <= tolerance && !too_many_skipped,
        failure: too_many_skipped.then(|| format!("{skipped} of {probes} probes straddle a kink")),
    })
}

/// Compares analytic gradients of `op` against central differences
/// `(f(x+ε) − f(x−ε)) / 2ε` for every learnable input. Always returns a
/// report; a check that cannot run is reported as failed.
///
/// A sampled point where too many probes straddle a kink is redrawn, up to
/// [`MAX_ATTEMPTS`] points in total; gradient mismatches are never retried.
pub fn grad_check(op: GradCheckOp, seed: u64, epsilon: f64, tolerance: f64) -> GradCheckReport {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let point = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        match run(op, point, epsilon, tolerance) {
            Ok(mut r) => {
                r.attempts = attempt as usize + 1;
                let kinked = r.max_rel_error <= tolerance && !r.passed;
                last = Some(Ok(r));
                if !kinked {
                    break;
                }
            }
            Err(e) => {
                last = Some(Err(e));
                break;
            }
        }
    }
    last.expect("at least one attempt").unwrap_or_else(|e| GradCheckReport {
        op,
        max_rel_error: f64::INFINITY,
        worst: None,
        probes: 0,
        skipped: 0,
        attempts: 1,
        tolerance,
        passed: false,
        failure: Some(e.to_string()),
    })
}

/// Default step for [`grad_check`].
pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Default pass threshold for [`grad_check`].
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
