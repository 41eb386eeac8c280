//! Command-line front end: data generation, training, evaluation, gradient
//! checks and the three-head comparison.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aceseg::data::{write_dataset, Dataset, Pair};
use aceseg::gradcheck::{grad_check, GradCheckOp};
use aceseg::heads::HeadKind;
use aceseg::metrics::{evaluate, EvalMode, EvalReport};
use aceseg::model::SegModel;
use aceseg::train::{checkpoint_load, checkpoint_save, train, OptimizerState, CSV_HEADER};
use clap::{Args, Parser, Subcommand};
use log::info;

pub use config::{ExperimentConfig, Split};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] aceseg::Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Core(aceseg::Error::Divergence { .. }) => 3,
            CliError::Usage(_) | CliError::Core(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "aceseg", version, about = "Segmentation heads on synthetic scenes")]
pub struct Cli {
    /// `key = value` file applied before flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset of image/label pairs.
    GenData(GenDataArgs),
    /// Train one head and report held-out metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train ASPP, PPM and ACE under one budget and tabulate them.
    CompareHeads(CompareArgs),
    /// Finite-difference gradient check of one op, or `all`.
    Gradcheck(GradcheckArgs),
    /// Print a head's branch table.
    Summary(SummaryArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    num: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shapes: Option<usize>,
    #[arg(long)]
    min_px: Option<usize>,
    #[arg(long)]
    max_px: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out dataset; without it the last tenth of `--data` is held out.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: TrainFlags,
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint whose weights start the run; its optimizer state is not
    /// restored.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Default scales with flipping, unless `--scales` is given.
    #[arg(long)]
    multiscale: bool,
    /// Comma-separated scale factors.
    #[arg(long)]
    scales: Option<String>,
    #[arg(long)]
    flip: bool,
    /// `heldout` (last tenth by index) or `all`.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    common: TrainFlags,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    op: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
}

struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn put<V: ToString>(&mut self, key: &'static str, value: &Option<V>) {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
    }

    fn path(&mut self, key: &'static str, value: &Option<PathBuf>) {
        if let Some(v) = value {
            self.0.push((key, v.display().to_string()));
        }
    }

    fn flag(&mut self, key: &'static str, on: bool) {
        if on {
            self.0.push((key, "true".into()));
        }
    }

    fn train_flags(&mut self, f: &TrainFlags) {
        self.path("data", &f.data);
        self.path("val_data", &f.val_data);
        self.put("epochs", &f.epochs);
        self.put("batch", &f.batch);
        self.put("base_lr", &f.base_lr);
        self.put("crop", &f.crop);
        self.put("seed", &f.seed);
        self.put("channels", &f.channels);
    }
}

fn overrides(command: &Command) -> Overrides {
    let mut o = Overrides(Vec::new());
    match command {
        Command::GenData(a) => {
            o.path("out", &a.out);
            o.put("num", &a.num);
            o.put("size", &a.size);
            o.put("classes", &a.classes);
            o.put("seed", &a.seed);
            o.put("shapes", &a.shapes);
            o.put("min_px", &a.min_px);
            o.put("max_px", &a.max_px);
        }
        Command::Train(a) => {
            o.train_flags(&a.common);
            o.put("head", &a.head);
            o.path("out", &a.out);
            o.path("init", &a.init);
        }
        Command::Eval(a) => {
            o.path("data", &a.data);
            o.path("ckpt", &a.ckpt);
            o.flag("multiscale", a.multiscale);
            o.put("scales", &a.scales);
            o.flag("flip", a.flip);
            o.put("split", &a.split);
        }
        Command::CompareHeads(a) => {
            o.train_flags(&a.common);
            o.path("out_dir", &a.out_dir);
        }
        Command::Gradcheck(a) => {
            o.put("op", &a.op);
            o.put("seed", &a.seed);
            o.put("epsilon", &a.epsilon);
            o.put("tolerance", &a.tolerance);
        }
        Command::Summary(a) => {
            o.put("head", &a.head);
            o.put("channels", &a.channels);
            o.put("classes", &a.classes);
        }
    }
    o
}

/// Defaults, then the config file, then flags.
pub fn effective_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in overrides(&cli.command).0 {
        cfg.set(key, &value)?;
    }
    Ok(cfg)
}

fn echo(cfg: &ExperimentConfig) {
    info!("effective config:");
    for line in cfg.to_text().lines() {
        info!("  {line}");
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| aceseg::Error::io(path, e).into())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Sidecar holding the architecture fields of a checkpoint.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".config")
}

/// Training CSV written next to a checkpoint.
pub fn csv_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".csv")
}

fn cmd_gen_data(cfg: &ExperimentConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    if cfg.classes < 2 {
        return Err(CliError::Usage(format!("--classes must be at least 2, got {}", cfg.classes)));
    }
    let manifest = write_dataset(out, &cfg.scene_spec(), cfg.num)?;
    emit(&format!("wrote {} ({manifest})\n", out.display()));
    Ok(())
}

/// Training pairs and held-out pairs for `cfg`.
fn load_splits(cfg: &mut ExperimentConfig) -> CliResult<(Vec<Pair>, Vec<Pair>)> {
    let data = Dataset::open(required(&cfg.data, "data")?)?;
    cfg.classes = data.manifest.classes;
    match &cfg.val_data {
        Some(dir) => {
            let val = Dataset::open(dir)?;
            if val.manifest.classes != data.manifest.classes {
                return Err(CliError::Usage(format!(
                    "validation set has {} classes, training set {}",
                    val.manifest.classes, data.manifest.classes
                )));
            }
            Ok((data.pairs, val.pairs))
        }
        None => {
            let cut = data.split_index();
            let mut pairs = data.pairs;
            let held = pairs.split_off(cut);
            Ok((pairs, held))
        }
    }
}

/// Trains `cfg.head`, writes checkpoint, sidecar and CSV, and returns the
/// held-out report.
fn train_one(
    cfg: &ExperimentConfig,
    train_pairs: &[Pair],
    held: &[Pair],
    ckpt: &Path,
) -> CliResult<Option<EvalReport>> {
    let mut model = SegModel::<f32>::new(cfg.model_config(), cfg.train.seed)?;
    if let Some(init) = &cfg.init {
        checkpoint_load(init, &mut model)?;
        info!("initialized from {}", init.display());
    }
    let mut state = OptimizerState::new(&model.params);
    let mut csv = format!("{CSV_HEADER}\n");
    let started = Instant::now();
    let result = train(&mut model, train_pairs, &cfg.train, &mut state, |row| {
        info!("{}", row.log_line());
        csv.push_str(&row.csv_line());
        csv.push('\n');
        Ok(())
    });
    write_file(&csv_path(ckpt), &csv)?;
    let rows = result?;
    info!(
        "trained {} for {} iterations in {:.1}s",
        cfg.head,
        rows.len(),
        started.elapsed().as_secs_f64()
    );
    checkpoint_save(ckpt, &model, Some(&state))?;
    write_file(&sidecar_path(ckpt), &cfg.model_text())?;
    if held.is_empty() {
        return Ok(None);
    }
    let cm = evaluate(&mut model, held, &EvalMode::SingleScale)?;
    Ok(Some(EvalReport::from_matrix(&cm)?))
}

fn cmd_train(mut cfg: ExperimentConfig) -> CliResult<()> {
    let (train_pairs, held) = load_splits(&mut cfg)?;
    echo(&cfg);
    let out = required(&cfg.out, "out")?.to_path_buf();
    match train_one(&cfg, &train_pairs, &held, &out)? {
        Some(report) => emit(&format!("{}\n", report.headline())),
        None => emit("no held-out pairs; metrics skipped\n"),
    }
    Ok(())
}

/// Model rebuilt from a checkpoint and its sidecar.
pub fn load_model(ckpt: &Path) -> CliResult<SegModel<f32>> {
    let mut arch = ExperimentConfig::default();
    let side = sidecar_path(ckpt);
    let text = fs::read_to_string(&side).map_err(|e| aceseg::Error::io(&side, e))?;
    arch.apply_text(&text, &side.display().to_string())?;
    let mut model = SegModel::<f32>::new(arch.model_config(), 0)?;
    checkpoint_load(ckpt, &mut model)?;
    Ok(model)
}

fn cmd_eval(cfg: ExperimentConfig) -> CliResult<()> {
    echo(&cfg);
    let ckpt = required(&cfg.ckpt, "ckpt")?;
    let mut model = load_model(ckpt)?;
    let data = Dataset::open(required(&cfg.data, "data")?)?;
    if data.manifest.classes != model.config.num_classes() {
        return Err(aceseg::Error::IncompatibleModel(format!(
            "checkpoint predicts {} classes, dataset has {}",
            model.config.num_classes(),
            data.manifest.classes
        ))
        .into());
    }
    let pairs = match cfg.split {
        Split::Heldout => &data.pairs[data.split_index()..],
        Split::All => &data.pairs[..],
    };
    let mode = match cfg.multiscale_settings() {
        Some((scales, flip)) => EvalMode::MultiScale { scales, flip },
        None => EvalMode::SingleScale,
    };
    let cm = evaluate(&mut model, pairs, &mode)?;
    let report = EvalReport::from_matrix(&cm)?;
    emit(&report.text());
    emit(&report.class_csv());
    Ok(())
}

/// Text table with one row per head, percentages to two decimals.
pub fn comparison_table(rows: &[(HeadKind, EvalReport)]) -> String {
    let mut out = format!("{:<10} {:>8} {:>8}\n", "Method", "pixAcc%", "mIoU%");
    for (kind, r) in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>8.2} {:>8.2}",
            kind.table_label(),
            100.0 * r.pix_acc,
            100.0 * r.miou
        );
    }
    out
}

pub fn comparison_csv(rows: &[(HeadKind, EvalReport)]) -> String {
    let mut out = String::from("head,pixacc,miou\n");
    for (kind, r) in rows {
        let _ = writeln!(out, "{},{},{}", kind.table_label(), r.pix_acc, r.miou);
    }
    out
}

fn cmd_compare_heads(mut cfg: ExperimentConfig) -> CliResult<()> {
    let (train_pairs, held) = load_splits(&mut cfg)?;
    echo(&cfg);
    if held.is_empty() {
        return Err(CliError::Usage("comparison needs held-out pairs".into()));
    }
    let dir = required(&cfg.out_dir, "out-dir")?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| aceseg::Error::io(&dir, e))?;
    let mut rows = Vec::new();
    for kind in HeadKind::TABLE_ORDER {
        let mut head_cfg = cfg.clone();
        head_cfg.head = kind;
        let ckpt = dir.join(format!("{}.ckpt", kind.key()));
        let report = train_one(&head_cfg, &train_pairs, &held, &ckpt)?.expect("held-out pairs checked");
        info!("{}: {}", kind.table_label(), report.headline());
        rows.push((kind, report));
    }
    write_file(&dir.join("compare.csv"), &comparison_csv(&rows))?;
    emit(&comparison_table(&rows));
    Ok(())
}

fn cmd_gradcheck(cfg: &ExperimentConfig) -> CliResult<()> {
    let ops: Vec<GradCheckOp> = if cfg.op == "all" {
        GradCheckOp::ALL.to_vec()
    } else {
        vec![cfg.op.parse().map_err(|e: aceseg::Error| CliError::Usage(e.to_string()))?]
    };
    let mut failed = Vec::new();
    for op in ops {
        let report = grad_check(op, cfg.train.seed, cfg.epsilon, cfg.tolerance);
        emit(&format!("{report}\n"));
        if !report.passed {
            failed.push(op.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn cmd_summary(cfg: &ExperimentConfig) -> CliResult<()> {
    let model = SegModel::<f32>::new(cfg.model_config(), cfg.train.seed)?;
    emit(&model.summary());
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::GenData(_) => {
            echo(&cfg);
            cmd_gen_data(&cfg)
        }
        Command::Train(_) => cmd_train(cfg),
        Command::Eval(_) => cmd_eval(cfg),
        Command::CompareHeads(_) => cmd_compare_heads(cfg),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg),
        Command::Summary(_) => cmd_summary(&cfg),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
