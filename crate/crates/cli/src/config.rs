//! The merged experiment configuration: defaults, then a `key = value`
//! file, then command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aceseg::data::SceneSpec;
use aceseg::heads::{AceFuse, DeformVersion, HeadConfig, HeadKind};
use aceseg::metrics::DEFAULT_SCALES;
use aceseg::model::ModelConfig;
use aceseg::train::TrainConfig;

use crate::CliError;

/// Which part of a dataset `eval` reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// The last tenth by index, as held out by `train`.
    Heldout,
    All,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "heldout" => Ok(Split::Heldout),
            "all" => Ok(Split::All),
            _ => Err(format!("unknown split {s:?}; expected heldout or all")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Heldout => "heldout",
            Split::All => "all",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    /// Weights to start training from.
    pub init: Option<PathBuf>,

    pub head: HeadKind,
    pub channels: usize,
    pub ppm_bins: Vec<usize>,
    pub aspp_rates: Vec<usize>,
    pub ace_kernel: usize,
    pub ace_fuse: AceFuse,
    pub ace_deform: DeformVersion,

    pub train: TrainConfig,

    pub num: usize,
    pub size: usize,
    pub classes: usize,
    pub shapes: usize,
    pub min_px: usize,
    pub max_px: usize,

    pub split: Split,
    pub multiscale: bool,
    pub scales: Option<Vec<f64>>,
    pub flip: bool,

    pub op: String,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        let head = HeadConfig::new(aceseg::backbone::DEFAULT_CHANNELS, scene.classes);
        ExperimentConfig {
            data: None,
            val_data: None,
            out: None,
            out_dir: None,
            ckpt: None,
            init: None,
            head: HeadKind::Ace,
            channels: head.in_channels,
            ppm_bins: head.ppm_bins,
            aspp_rates: head.aspp_rates,
            ace_kernel: head.ace_kernel,
            ace_fuse: head.ace_fuse,
            ace_deform: head.ace_deform,
            train: TrainConfig::default(),
            num: 100,
            size: scene.size,
            classes: scene.classes,
            shapes: scene.shapes,
            min_px: scene.min_px,
            max_px: scene.max_px,
            split: Split::Heldout,
            multiscale: false,
            scales: None,
            flip: false,
            op: "conv2d".into(),
            epsilon: aceseg::gradcheck::DEFAULT_EPSILON,
            tolerance: aceseg::gradcheck::DEFAULT_TOLERANCE,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key} = {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

impl ExperimentConfig {
    /// Sets one field. Keys are the snake_case flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        let t = &mut self.train;
        match key {
            "data" => self.data = path(),
            "val_data" => self.val_data = path(),
            "out" => self.out = path(),
            "out_dir" => self.out_dir = path(),
            "ckpt" => self.ckpt = path(),
            "init" => self.init = path(),
            "head" => self.head = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "ppm_bins" => self.ppm_bins = parse_list(key, value)?,
            "aspp_rates" => self.aspp_rates = parse_list(key, value)?,
            "ace_kernel" => self.ace_kernel = parse(key, value)?,
            "ace_fuse" => self.ace_fuse = parse(key, value)?,
            "ace_deform" => self.ace_deform = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch" => t.batch_size = parse(key, value)?,
            "base_lr" => t.base_lr = parse(key, value)?,
            "power" => t.power = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "aux_weight" => t.aux_weight = parse(key, value)?,
            "crop" => t.crop = parse(key, value)?,
            "scale_lo" => t.scale_lo = parse(key, value)?,
            "scale_hi" => t.scale_hi = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "num" => self.num = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "shapes" => self.shapes = parse(key, value)?,
            "min_px" => self.min_px = parse(key, value)?,
            "max_px" => self.max_px = parse(key, value)?,
            "split" => self.split = parse(key, value)?,
            "multiscale" => self.multiscale = parse_bool(key, value)?,
            "scales" => {
                self.scales = if value.is_empty() {
                    None
                } else {
                    Some(parse_list(key, value)?)
                }
            }
            "flip" => self.flip = parse_bool(key, value)?,
            "op" => self.op = value.to_string(),
            "epsilon" => self.epsilon = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment, blank lines are
    /// skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Every field as `key = value` lines, in a fixed order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let rows: Vec<(&str, String)> = vec![
            ("data", path_text(&self.data)),
            ("val_data", path_text(&self.val_data)),
            ("out", path_text(&self.out)),
            ("out_dir", path_text(&self.out_dir)),
            ("ckpt", path_text(&self.ckpt)),
            ("init", path_text(&self.init)),
            ("head", self.head.to_string()),
            ("channels", self.channels.to_string()),
            ("ppm_bins", join(&self.ppm_bins)),
            ("aspp_rates", join(&self.aspp_rates)),
            ("ace_kernel", self.ace_kernel.to_string()),
            ("ace_fuse", self.ace_fuse.to_string()),
            ("ace_deform", self.ace_deform.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch", t.batch_size.to_string()),
            ("base_lr", t.base_lr.to_string()),
            ("power", t.power.to_string()),
            ("momentum", t.momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("aux_weight", t.aux_weight.to_string()),
            ("crop", t.crop.to_string()),
            ("scale_lo", t.scale_lo.to_string()),
            ("scale_hi", t.scale_hi.to_string()),
            ("seed", t.seed.to_string()),
            ("num", self.num.to_string()),
            ("size", self.size.to_string()),
            ("classes", self.classes.to_string()),
            ("shapes", self.shapes.to_string()),
            ("min_px", self.min_px.to_string()),
            ("max_px", self.max_px.to_string()),
            ("split", self.split.to_string()),
            ("multiscale", self.multiscale.to_string()),
            ("scales", self.scales.as_deref().map_or_else(String::new, join)),
            ("flip", self.flip.to_string()),
            ("op", self.op.clone()),
            ("epsilon", self.epsilon.to_string()),
            ("tolerance", self.tolerance.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Only the fields that shape a model, for checkpoint sidecars.
    pub fn model_text(&self) -> String {
        format!(
            "head = {}\nchannels = {}\nclasses = {}\nppm_bins = {}\naspp_rates = {}\nace_kernel = {}\nace_fuse = {}\nace_deform = {}\n",
            self.head,
            self.channels,
            self.classes,
            join(&self.ppm_bins),
            join(&self.aspp_rates),
            self.ace_kernel,
            self.ace_fuse,
            self.ace_deform
        )
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut head = HeadConfig::new(self.channels, self.classes);
        head.ppm_bins = self.ppm_bins.clone();
        head.aspp_rates = self.aspp_rates.clone();
        head.ace_kernel = self.ace_kernel;
        head.ace_fuse = self.ace_fuse;
        head.ace_deform = self.ace_deform;
        ModelConfig {
            head_kind: self.head,
            head,
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            size: self.size,
            classes: self.classes,
            shapes: self.shapes,
            min_px: self.min_px,
            max_px: self.max_px,
            seed: self.train.seed,
            ..SceneSpec::default()
        }
    }

    /// Multi-scale settings when any of `multiscale`, `scales` or `flip`
    /// is set. `multiscale` alone means the default scales with flipping.
    pub fn multiscale_settings(&self) -> Option<(Vec<f64>, bool)> {
        if !(self.multiscale || self.scales.is_some() || self.flip) {
            return None;
        }
        match &self.scales {
            Some(s) => Some((s.clone(), self.flip)),
            None => Some((DEFAULT_SCALES.to_vec(), self.flip || self.multiscale)),
        }
    }
}
