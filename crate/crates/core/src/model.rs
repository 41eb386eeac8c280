//! Backbone + head + classifiers assembled into one segmentation network.

use crate::backbone::{Backbone, AUX_CHANNELS, DEFAULT_CHANNELS, OUTPUT_STRIDE};
use crate::error::{Error, Result};
use crate::heads::{head_summary, Classifier, Head, HeadConfig, HeadKind};
use crate::nn::{Bindings, Forward, Initializer, Params};
use crate::ops::loss::softmax_channels;
use crate::ops::Mode;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub head_kind: HeadKind,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn new(head_kind: HeadKind, num_classes: usize) -> Self {
        ModelConfig {
            head_kind,
            head: HeadConfig::new(DEFAULT_CHANNELS, num_classes),
        }
    }

    pub fn backbone_channels(&self) -> usize {
        self.head.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// Class scores at input resolution.
    pub logits: Var,
    /// Auxiliary class scores at input resolution, when requested.
    pub aux_logits: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct SegModel<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    pub backbone: Backbone,
    pub head: Head,
    pub classifier: Classifier,
    pub aux_classifier: Classifier,
}

impl<T: Scalar> SegModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.num_classes() < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut params = Params::new();
        let mut init = Initializer::new(seed);
        let backbone = Backbone::build(config.backbone_channels(), &mut params, &mut init)?;
        let head = Head::build(config.head_kind, &config.head, &mut params, &mut init)?;
        let classifier = Classifier::register(
            &mut params,
            &mut init,
            "classifier",
            head.out_channels(),
            config.num_classes(),
        )?;
        let aux_classifier = Classifier::register(
            &mut params,
            &mut init,
            "aux_classifier",
            AUX_CHANNELS,
            config.num_classes(),
        )?;
        Ok(SegModel {
            config,
            params,
            backbone,
            head,
            classifier,
            aux_classifier,
        })
    }

    /// Records a full forward pass. Parameters become learnable leaves when
    /// `track_grads` is set; running statistics update in train mode.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        image: Var,
        mode: Mode,
        track_grads: bool,
        with_aux: bool,
    ) -> Result<(ModelOutput, Bindings)> {
        let s = tape.try_value(image)?.shape();
        let SegModel {
            params,
            backbone,
            head,
            classifier,
            aux_classifier,
            ..
        } = self;
        let mut fwd = Forward::new(tape, params, mode, track_grads);
        let features = backbone.forward(&mut fwd, image)?;
        let h = head.forward(&mut fwd, features.main)?;
        let logits = classifier.forward(&mut fwd, h, s.h, s.w)?;
        let aux_logits = if with_aux {
            Some(aux_classifier.forward(&mut fwd, features.aux, s.h, s.w)?)
        } else {
            None
        };
        Ok((ModelOutput { logits, aux_logits }, fwd.into_bindings()))
    }

    /// Eval-mode class scores for a batch of images.
    pub fn logits(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (out, _) = self.forward(&mut tape, x, Mode::Eval, false, false)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode per-pixel class probabilities.
    pub fn probabilities(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax_channels(&self.logits(images)?))
    }

    /// Smallest input side the model accepts: a multiple of the output
    /// stride large enough for every pooling grid.
    pub fn min_input_size(&self) -> usize {
        let bins = match self.config.head_kind {
            HeadKind::Ppm => self.config.head.ppm_bins.iter().copied().max().unwrap_or(1),
            _ => 1,
        };
        OUTPUT_STRIDE * bins
    }

    pub fn summary(&self) -> String {
        head_summary(&self.head, &self.classifier, &self.params)
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> SegModel<U> {
        SegModel {
            config: self.config.clone(),
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            head: self.head.clone(),
            classifier: self.classifier.clone(),
            aux_classifier: self.aux_classifier.clone(),
        }
    }
}
