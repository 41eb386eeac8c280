//! Confusion accounting, pixel accuracy, mean IoU and multi-scale
//! prediction.

use std::fmt::Write as _;

use crate::data::{Pair, SegBatch};
use crate::error::{Error, Result};
use crate::model::SegModel;
use crate::ops::resize_bilinear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::backbone::OUTPUT_STRIDE;

/// Default evaluation scales.
pub const DEFAULT_SCALES: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75];

/// `K×K` pixel counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "{classes}x{classes} matrix given {} counts",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds `cm[label, pred] += 1` for every pixel whose label is not
    /// `ignore_index`. Nothing is counted if any value is out of range.
    pub fn update(&mut self, pred: &[u8], label: &[u8], ignore_index: u8) -> Result<()> {
        if pred.len() != label.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                pred.len(),
                label.len()
            )));
        }
        let k = self.classes;
        for (&p, &l) in pred.iter().zip(label) {
            if l == ignore_index {
                continue;
            }
            if p as usize >= k {
                return Err(Error::PredictionRange {
                    pred: p as usize,
                    classes: k,
                });
            }
            if l as usize >= k {
                return Err(Error::LabelRange { label: l, classes: k });
            }
        }
        for (&p, &l) in pred.iter().zip(label) {
            if l != ignore_index {
                self.counts[l as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn row(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    fn col(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// Correct pixels over counted pixels.
    pub fn pix_acc(&self) -> Result<f64> {
        self.pix_acc_over(0)
    }

    /// IoU per class; `None` for classes absent from both truth and
    /// prediction.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let inter = self.get(c, c);
                let union = self.row(c) + self.col(c) - inter;
                (self.row(c) + self.col(c) > 0).then(|| inter as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over the classes that appear in truth or prediction.
    pub fn mean_iou(&self) -> Result<f64> {
        self.mean_iou_over(0)
    }

    /// Pixel accuracy over pixels whose truth is not class 0.
    pub fn pix_acc_no_background(&self) -> Result<f64> {
        self.pix_acc_over(1)
    }

    /// Mean IoU over present classes other than class 0.
    pub fn mean_iou_no_background(&self) -> Result<f64> {
        self.mean_iou_over(1)
    }

    fn pix_acc_over(&self, first: usize) -> Result<f64> {
        let total: u64 = (first..self.classes).map(|c| self.row(c)).sum();
        if total == 0 {
            return Err(Error::UndefinedMetric);
        }
        let correct: u64 = (first..self.classes).map(|c| self.get(c, c)).sum();
        Ok(correct as f64 / total as f64)
    }

    fn mean_iou_over(&self, first: usize) -> Result<f64> {
        let present: Vec<f64> = self.class_iou().into_iter().skip(first).flatten().collect();
        if self.total() == 0 || present.is_empty() {
            return Err(Error::UndefinedMetric);
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Per-pixel argmax over channels; ties go to the lower class index.
pub fn argmax_channels<T: Scalar>(scores: &Tensor<T>) -> Vec<u8> {
    let s = scores.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        for p in 0..plane {
            let mut best = 0;
            let mut best_v = scores.data()[n * s.c * plane + p];
            for k in 1..s.c {
                let v = scores.data()[(n * s.c + k) * plane + p];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

fn mirror<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(s.w) {
        row.reverse();
    }
    out
}

/// Side length for `scale`: rounded to a multiple of the output stride
/// and at least `min`.
fn scaled_side(side: usize, scale: f64, min: usize) -> usize {
    let m = OUTPUT_STRIDE as f64;
    (((side as f64 * scale) / m).round() as usize * OUTPUT_STRIDE).max(min)
}

/// Averaged class probabilities over `scales` (and mirrored passes when
/// `flip`), at the input resolution.
pub fn multiscale_probabilities<T: Scalar>(
    model: &mut SegModel<T>,
    images: &Tensor<T>,
    scales: &[f64],
    flip: bool,
) -> Result<Tensor<T>> {
    if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Config(format!("scales must be positive, got {scales:?}")));
    }
    let s = images.shape();
    let min = model.min_input_size();
    let mut acc: Option<Tensor<T>> = None;
    let mut count = 0usize;
    for &scale in scales {
        let (sh, sw) = (scaled_side(s.h, scale, min), scaled_side(s.w, scale, min));
        let input = if (sh, sw) == (s.h, s.w) {
            images.clone()
        } else {
            resize_bilinear(images, sh, sw)
        };
        let mut passes = vec![model.probabilities(&input)?];
        if flip {
            passes.push(mirror(&model.probabilities(&mirror(&input))?));
        }
        for p in passes {
            let p = if (sh, sw) == (s.h, s.w) {
                p
            } else {
                resize_bilinear(&p, s.h, s.w)
            };
            acc = Some(match acc {
                None => p,
                Some(mut a) => {
                    for (x, y) in a.data_mut().iter_mut().zip(p.data()) {
                        *x += *y;
                    }
                    a
                }
            });
            count += 1;
        }
    }
    let mut avg = acc.expect("at least one scale");
    if count > 1 {
        let inv = T::one() / T::from_usize(count).unwrap();
        for v in avg.data_mut() {
            *v *= inv;
        }
    }
    Ok(avg)
}

/// Label map from averaged multi-scale probabilities.
pub fn multiscale_predict<T: Scalar>(
    model: &mut SegModel<T>,
    images: &Tensor<T>,
    scales: &[f64],
    flip: bool,
) -> Result<Vec<u8>> {
    Ok(argmax_channels(&multiscale_probabilities(model, images, scales, flip)?))
}

/// Single-scale label map: argmax of the model's probabilities.
pub fn predict<T: Scalar>(model: &mut SegModel<T>, images: &Tensor<T>) -> Result<Vec<u8>> {
    Ok(argmax_channels(&model.probabilities(images)?))
}

/// How [`evaluate`] turns images into predictions.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalMode {
    SingleScale,
    MultiScale { scales: Vec<f64>, flip: bool },
}

/// Confusion matrix of `model` over `pairs`, one image at a time.
pub fn evaluate<T: Scalar>(model: &mut SegModel<T>, pairs: &[Pair], mode: &EvalMode) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config.num_classes());
    for p in pairs {
        let batch = SegBatch::<T>::from_pairs(&[p])?;
        let pred = match mode {
            EvalMode::SingleScale => predict(model, &batch.images)?,
            EvalMode::MultiScale { scales, flip } => multiscale_predict(model, &batch.images, scales, *flip)?,
        };
        cm.update(&pred, &batch.labels.data, crate::IGNORE_INDEX)?;
    }
    Ok(cm)
}

/// Evaluation summary derived from a confusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub pix_acc: f64,
    pub miou: f64,
    pub pix_acc_no_background: f64,
    pub miou_no_background: f64,
    pub class_iou: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(EvalReport {
            pix_acc: cm.pix_acc()?,
            miou: cm.mean_iou()?,
            pix_acc_no_background: cm.pix_acc_no_background().unwrap_or(f64::NAN),
            miou_no_background: cm.mean_iou_no_background().unwrap_or(f64::NAN),
            class_iou: cm.class_iou(),
        })
    }

    /// `pixAcc=… mIoU=…`.
    pub fn headline(&self) -> String {
        format!("pixAcc={:.6} mIoU={:.6}", self.pix_acc, self.miou)
    }

    pub fn text(&self) -> String {
        format!(
            "{}\npixAcc_nobg={:.6} mIoU_nobg={:.6}\n",
            self.headline(),
            self.pix_acc_no_background,
            self.miou_no_background
        )
    }

    /// `class,iou` rows, one per class; absent classes read `nan`.
    pub fn class_csv(&self) -> String {
        let mut out = String::from("class,iou\n");
        for (c, iou) in self.class_iou.iter().enumerate() {
            let _ = writeln!(out, "{c},{:.6}", iou.unwrap_or(f64::NAN));
        }
        out
    }
}
