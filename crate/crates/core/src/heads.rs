//! Context-aggregation heads: pyramid pooling (PPM), atrous spatial pyramid
//! pooling (ASPP) and adaptive context encoding (ACE).
//!
//! Each head maps `N×C×H×W` backbone features to pre-classifier features
//! at the same `H×W`; [`Classifier`] turns those into class scores at
//! image resolution.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, ConvBnRelu, ConvInit, Forward, Initializer, Params};
use crate::ops::{self, ConvParams, OffsetField};
use crate::scalar::Scalar;
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Ppm,
    Aspp,
    Ace,
}

impl HeadKind {
    /// Row order of the comparison table.
    pub const TABLE_ORDER: [HeadKind; 3] = [HeadKind::Aspp, HeadKind::Ppm, HeadKind::Ace];

    pub fn key(self) -> &'static str {
        match self {
            HeadKind::Ppm => "ppm",
            HeadKind::Aspp => "aspp",
            HeadKind::Ace => "ace",
        }
    }

    /// Label used in result tables.
    pub fn table_label(self) -> &'static str {
        match self {
            HeadKind::Ppm => "PPM",
            HeadKind::Aspp => "ASPP",
            HeadKind::Ace => "Proposed",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppm" => Ok(HeadKind::Ppm),
            "aspp" => Ok(HeadKind::Aspp),
            "ace" => Ok(HeadKind::Ace),
            other => Err(Error::Config(format!("unknown head {other:?} (expected ppm, aspp or ace)"))),
        }
    }
}

/// How the ACE blocks feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AceFuse {
    /// Classifier reads the last block only (`C/8` channels).
    Cascade,
    /// Classifier reads all three block outputs stacked (`C/2` channels).
    Concat,
}

impl FromStr for AceFuse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cascade" => Ok(AceFuse::Cascade),
            "concat" => Ok(AceFuse::Concat),
            other => Err(Error::Config(format!("unknown ace_fuse {other:?}"))),
        }
    }
}

impl fmt::Display for AceFuse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AceFuse::Cascade => "cascade",
            AceFuse::Concat => "concat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeformVersion {
    /// Offsets only.
    V1,
    /// Offsets and modulation.
    V2,
}

impl FromStr for DeformVersion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(DeformVersion::V1),
            "v2" => Ok(DeformVersion::V2),
            other => Err(Error::Config(format!("unknown deformable version {other:?}"))),
        }
    }
}

impl fmt::Display for DeformVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeformVersion::V1 => "v1",
            DeformVersion::V2 => "v2",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub ppm_bins: Vec<usize>,
    pub aspp_rates: Vec<usize>,
    pub ace_kernel: usize,
    pub ace_fuse: AceFuse,
    pub ace_deform: DeformVersion,
}

impl HeadConfig {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        HeadConfig {
            in_channels,
            num_classes,
            ppm_bins: vec![1, 2, 3, 6],
            aspp_rates: vec![6, 12, 18],
            ace_kernel: 3,
            ace_fuse: AceFuse::Cascade,
            ace_deform: DeformVersion::V2,
        }
    }
}

/// One row of [`head_summary`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchInfo {
    pub name: String,
    pub out_channels: usize,
    pub params: usize,
}

fn divisible(c: usize, by: usize, head: &str) -> Result<()> {
    if c == 0 || !c.is_multiple_of(by) {
        return Err(Error::Config(format!(
            "{head} needs input channels divisible by {by}, got {c}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PpmBranch {
    pub bins: usize,
    pub block: ConvBnRelu,
    prefix: String,
}

/// Pools to each bin grid, projects to `C/4`, upsamples back and stacks
/// the branches after the input.
#[derive(Clone, Debug)]
pub struct PpmHead {
    pub in_channels: usize,
    pub branches: Vec<PpmBranch>,
}

impl PpmHead {
    pub fn build<T: Scalar>(cfg: &HeadConfig, params: &mut Params<T>, init: &mut Initializer) -> Result<Self> {
        divisible(cfg.in_channels, 4, "PPM")?;
        if cfg.ppm_bins.is_empty() || cfg.ppm_bins.contains(&0) {
            return Err(Error::Config(format!("invalid PPM bins {:?}", cfg.ppm_bins)));
        }
        let width = cfg.in_channels / 4;
        let branches = cfg
            .ppm_bins
            .iter()
            .map(|&bins| {
                let prefix = format!("head.ppm.bin{bins}");
                let block = ConvBnRelu::register(
                    params,
                    init,
                    &prefix,
                    cfg.in_channels,
                    width,
                    ConvParams::square(1),
                )?;
                Ok(PpmBranch { bins, block, prefix })
            })
            .collect::<Result<_>>()?;
        Ok(PpmHead {
            in_channels: cfg.in_channels,
            branches,
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, f: Var) -> Result<Var> {
        let s = fwd.tape.try_value(f)?.shape();
        let mut parts = vec![f];
        for b in &self.branches {
            let pooled = ops::adaptive_avg_pool(fwd.tape, f, b.bins, b.bins)?;
            let y = b.block.forward(fwd, pooled)?;
            parts.push(ops::upsample_bilinear(fwd.tape, y, s.h, s.w)?);
        }
        ops::concat_channels(fwd.tape, &parts)
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.branches.iter().map(|b| b.block.out_channels()).sum::<usize>()
    }
}

#[derive(Clone, Debug)]
pub enum AsppBranchKind {
    Pointwise,
    Atrous(usize),
    GlobalPool,
}

#[derive(Clone, Debug)]
pub struct AsppBranch {
    pub kind: AsppBranchKind,
    pub block: ConvBnRelu,
    prefix: String,
}

/// Parallel 1×1 conv, 3×3 atrous convs and a global-pooling branch, each
/// projecting to `C/8`, stacked along channels.
#[derive(Clone, Debug)]
pub struct AsppHead {
    pub branches: Vec<AsppBranch>,
}

impl AsppHead {
    pub fn build<T: Scalar>(cfg: &HeadConfig, params: &mut Params<T>, init: &mut Initializer) -> Result<Self> {
        divisible(cfg.in_channels, 8, "ASPP")?;
        if cfg.aspp_rates.contains(&0) {
            return Err(Error::Config("ASPP rates must be positive".into()));
        }
        let width = cfg.in_channels / 8;
        let mut kinds = vec![AsppBranchKind::Pointwise];
        kinds.extend(cfg.aspp_rates.iter().map(|&r| AsppBranchKind::Atrous(r)));
        kinds.push(AsppBranchKind::GlobalPool);
        let branches = kinds
            .into_iter()
            .map(|kind| {
                let (prefix, geom) = match kind {
                    AsppBranchKind::Pointwise => ("head.aspp.conv1x1".to_string(), ConvParams::square(1)),
                    AsppBranchKind::Atrous(r) => (
                        format!("head.aspp.rate{r}"),
                        ConvParams::square(3).with_padding(r).with_dilation(r),
                    ),
                    AsppBranchKind::GlobalPool => ("head.aspp.pool".to_string(), ConvParams::square(1)),
                };
                let block = ConvBnRelu::register(params, init, &prefix, cfg.in_channels, width, geom)?;
                Ok(AsppBranch { kind, block, prefix })
            })
            .collect::<Result<_>>()?;
        Ok(AsppHead { branches })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, f: Var) -> Result<Var> {
        let s = fwd.tape.try_value(f)?.shape();
        let mut parts = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let y = match b.kind {
                AsppBranchKind::GlobalPool => {
                    let g = ops::adaptive_avg_pool(fwd.tape, f, 1, 1)?;
                    let g = b.block.forward(fwd, g)?;
                    ops::broadcast_spatial(fwd.tape, g, s.h, s.w)?
                }
                _ => b.block.forward(fwd, f)?,
            };
            parts.push(y);
        }
        ops::concat_channels(fwd.tape, &parts)
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.block.out_channels()).sum()
    }
}

/// Offset/modulation predictor → deformable conv → BN → ReLU, spatial size
/// preserved.
#[derive(Clone, Debug)]
pub struct DeformBlock {
    pub predictor: Conv,
    pub weight: String,
    pub geom: ConvParams,
    pub version: DeformVersion,
    pub bn: BatchNorm,
    pub in_channels: usize,
    pub out_channels: usize,
    prefix: String,
}

impl DeformBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        params: &mut Params<T>,
        init: &mut Initializer,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        version: DeformVersion,
    ) -> Result<Self> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("deformable kernel must be odd, got {kernel}")));
        }
        let geom = ConvParams::square(kernel).with_padding(kernel / 2);
        // Zero weights and biases: training starts from zero offsets.
        let predictor = Conv::register(
            params,
            init,
            &format!("{name}.offset"),
            in_channels,
            3 * geom.taps(),
            geom,
            true,
            ConvInit::Zero,
        )?;
        let weight = format!("{name}.deform.weight");
        let w = init.he_uniform(crate::Shape::new(out_channels, in_channels, kernel, kernel));
        params.insert(weight.clone(), crate::nn::Role::Weight, w)?;
        let bn = BatchNorm::register(params, &format!("{name}.bn"), out_channels)?;
        Ok(DeformBlock {
            predictor,
            weight,
            geom,
            version,
            bn,
            in_channels,
            out_channels,
            prefix: name.to_string(),
        })
    }

    pub fn offsets<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: Var) -> Result<OffsetField> {
        let w_off = fwd.param(&self.predictor.weight)?;
        let b_off = fwd.param(self.predictor.bias.as_deref().expect("predictor has a bias"))?;
        ops::offset_predictor(fwd.tape, x, w_off, b_off, self.geom.taps(), self.geom)
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let field = self.offsets(fwd, x)?;
        let w = fwd.param(&self.weight)?;
        let y = match self.version {
            DeformVersion::V1 => ops::deform_conv_v1(fwd.tape, x, w, &field, self.geom)?,
            DeformVersion::V2 => ops::deform_conv_v2(fwd.tape, x, w, &field, self.geom)?,
        };
        let y = self.bn.forward(fwd, y)?;
        ops::relu(fwd.tape, y)
    }
}

/// Three cascaded deformable blocks with widths `C/4`, `C/8`, `C/8`.
#[derive(Clone, Debug)]
pub struct AceHead {
    pub blocks: Vec<DeformBlock>,
    pub fuse: AceFuse,
}

impl AceHead {
    pub fn build<T: Scalar>(cfg: &HeadConfig, params: &mut Params<T>, init: &mut Initializer) -> Result<Self> {
        divisible(cfg.in_channels, 8, "ACE")?;
        let c = cfg.in_channels;
        let widths = [(c, c / 4), (c / 4, c / 8), (c / 8, c / 8)];
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                DeformBlock::register(
                    params,
                    init,
                    &format!("head.ace.block{}", i + 1),
                    cin,
                    cout,
                    cfg.ace_kernel,
                    cfg.ace_deform,
                )
            })
            .collect::<Result<_>>()?;
        Ok(AceHead {
            blocks,
            fuse: cfg.ace_fuse,
        })
    }

    /// Output of every block, in cascade order.
    pub fn block_outputs<T: Scalar>(&self, fwd: &mut Forward<'_, T>, f: Var) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.blocks.len());
        let mut x = f;
        for b in &self.blocks {
            x = b.forward(fwd, x)?;
            outs.push(x);
        }
        Ok(outs)
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, f: Var) -> Result<Var> {
        let outs = self.block_outputs(fwd, f)?;
        match self.fuse {
            AceFuse::Cascade => Ok(*outs.last().expect("three blocks")),
            AceFuse::Concat => ops::concat_channels(fwd.tape, &outs),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.fuse {
            AceFuse::Cascade => self.blocks.last().map_or(0, |b| b.out_channels),
            AceFuse::Concat => self.blocks.iter().map(|b| b.out_channels).sum(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Head {
    Ppm(PpmHead),
    Aspp(AsppHead),
    Ace(AceHead),
}

impl Head {
    pub fn build<T: Scalar>(
        kind: HeadKind,
        cfg: &HeadConfig,
        params: &mut Params<T>,
        init: &mut Initializer,
    ) -> Result<Self> {
        Ok(match kind {
            HeadKind::Ppm => Head::Ppm(PpmHead::build(cfg, params, init)?),
            HeadKind::Aspp => Head::Aspp(AsppHead::build(cfg, params, init)?),
            HeadKind::Ace => Head::Ace(AceHead::build(cfg, params, init)?),
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Ppm(_) => HeadKind::Ppm,
            Head::Aspp(_) => HeadKind::Aspp,
            Head::Ace(_) => HeadKind::Ace,
        }
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, f: Var) -> Result<Var> {
        match self {
            Head::Ppm(h) => h.forward(fwd, f),
            Head::Aspp(h) => h.forward(fwd, f),
            Head::Ace(h) => h.forward(fwd, f),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Head::Ppm(h) => h.out_channels(),
            Head::Aspp(h) => h.out_channels(),
            Head::Ace(h) => h.out_channels(),
        }
    }

    /// Per-branch output width and learnable parameter count.
    pub fn branches<T: Scalar>(&self, params: &Params<T>) -> Vec<BranchInfo> {
        let row = |name: String, out: usize, prefix: &str| BranchInfo {
            name,
            out_channels: out,
            params: params.count(&format!("{prefix}.")),
        };
        match self {
            Head::Ppm(h) => h
                .branches
                .iter()
                .map(|b| row(format!("pool{0}x{0}", b.bins), b.block.out_channels(), &b.prefix))
                .collect(),
            Head::Aspp(h) => h
                .branches
                .iter()
                .map(|b| {
                    let name = match b.kind {
                        AsppBranchKind::Pointwise => "conv1x1".to_string(),
                        AsppBranchKind::Atrous(r) => format!("atrous{r}"),
                        AsppBranchKind::GlobalPool => "gap".to_string(),
                    };
                    row(name, b.block.out_channels(), &b.prefix)
                })
                .collect(),
            Head::Ace(h) => h
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| row(format!("dcb{}", i + 1), b.out_channels, &b.prefix))
                .collect(),
        }
    }
}

/// 1×1 convolution to class scores followed by bilinear upsampling.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub conv: Conv,
}

impl Classifier {
    pub fn register<T: Scalar>(
        params: &mut Params<T>,
        init: &mut Initializer,
        name: &str,
        in_channels: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let conv = Conv::register(
            params,
            init,
            name,
            in_channels,
            num_classes,
            ConvParams::square(1),
            true,
            ConvInit::HeUniform,
        )?;
        Ok(Classifier { conv })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, h: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let logits = self.conv.forward(fwd, h)?;
        let s = fwd.tape.try_value(logits)?.shape();
        if out_h < s.h || out_w < s.w {
            return Err(Error::Geometry(format!(
                "classifier output {out_h}x{out_w} smaller than features {}x{}",
                s.h, s.w
            )));
        }
        ops::upsample_bilinear(fwd.tape, logits, out_h, out_w)
    }
}

/// Plain-text table of a head's branches plus its classifier: branch name,
/// output channels, learnable parameter count.
pub fn head_summary<T: Scalar>(head: &Head, classifier: &Classifier, params: &Params<T>) -> String {
    let mut rows = head.branches(params);
    let classifier_params = params.count(&format!(
        "{}.",
        classifier.conv.weight.trim_end_matches(".weight")
    ));
    rows.push(BranchInfo {
        name: "classifier".into(),
        out_channels: classifier.conv.out_channels,
        params: classifier_params,
    });
    let total: usize = params.count("head.") + classifier_params;
    let mut out = format!("head {}\n", head.kind().table_label());
    out.push_str(&format!("{:<12} {:>8} {:>10}\n", "branch", "out_ch", "params"));
    for r in &rows {
        out.push_str(&format!("{:<12} {:>8} {:>10}\n", r.name, r.out_channels, r.params));
    }
    out.push_str(&format!("{:<12} {:>8} {:>10}\n", "total", head.out_channels(), total));
    out
}
