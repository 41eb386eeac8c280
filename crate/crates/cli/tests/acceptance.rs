//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines appear in order; exits non-zero if any fail.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use aceseg::data::Dataset;
use aceseg::gradcheck::{grad_check, GradCheckOp, DEFAULT_EPSILON};
use aceseg::heads::HeadKind;
use aceseg::metrics::{evaluate, ConfusionMatrix, EvalMode};
use aceseg::model::SegModel;
use aceseg::nn::{Params, Role};
use aceseg::ops::{
    adaptive_avg_pool, batch_norm, bilinear_sample, conv2d, deform_conv_v1, deform_conv_v2, upsample_bilinear,
    BnState, ConvParams, Mode, OffsetField,
};
use aceseg::train::{adjusted_base_lr, checkpoint_save, poly_lr, sgd_step, train, OptimizerState, TrainConfig};
use aceseg::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REDUCTION_TOL: f64 = 1e-6;
const REDUCTION_CASES: u64 = 50;
const REDUCTION_BUDGET: Duration = Duration::from_secs(10);
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const HAND_TOL: f64 = 1e-4;
const COMPARE_BUDGET: Duration = Duration::from_secs(30 * 60);
const LOSS_RATIO: f64 = 0.4;
const LOSS_REFERENCE_ITER: usize = 5;
const MIN_MIOU: f64 = 0.55;
const LR_TOL: f64 = 1e-9;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(failures: Vec<String>, ok_detail: String) -> Outcome {
    if failures.is_empty() {
        Outcome {
            passed: true,
            detail: ok_detail,
        }
    } else {
        Outcome {
            passed: false,
            detail: failures.join("; "),
        }
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_aceseg")
}

/// Runs the binary quietly; returns exit code and stdout.
fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(bin())
        .args(args)
        .env("ACESEG_LOG", "warn")
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| rel(x, y)).fold(0.0, f64::max)
}

// 1. Deformable convolution with a neutral offset field, and dilated
// convolution, both reduce to plain convolution.
fn reductions() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..REDUCTION_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let p = ConvParams::square(k)
            .with_stride(rng.random_range(1..=2))
            .with_padding(rng.random_range(0..=k / 2 + 1))
            .with_dilation(rng.random_range(1..=3));
        let (cin, cout) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let n = rng.random_range(1..=2);
        let span = p.dilation * (k - 1) + 1;
        let (h, w) = (rng.random_range(span..span + 6), rng.random_range(span..span + 6));
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::uniform(Shape::new(n, cin, h, w), -1.0, 1.0, &mut rng));
        let kernel = Tensor::uniform(Shape::new(cout, cin, k, k), -1.0, 1.0, &mut rng);
        let wv = tape.constant(kernel.clone());
        let (oh, ow) = p.output_size(h, w).unwrap();
        let taps = k * k;
        let off = tape.constant(Tensor::zeros(Shape::new(n, 2 * taps, oh, ow)));
        let ones = tape.constant(Tensor::ones(Shape::new(n, taps, oh, ow)));
        let reference = conv2d(&mut tape, x, wv, None, p).unwrap();
        let v1 = deform_conv_v1(&mut tape, x, wv, &OffsetField::unmodulated(off), p).unwrap();
        let v2 = deform_conv_v2(&mut tape, x, wv, &OffsetField::modulated(off, ones), p).unwrap();

        // Same taps written into a kernel with r−1 zeros between them.
        let mut inflated = vec![0.0; cout * cin * span * span];
        for o in 0..cout {
            for c in 0..cin {
                for i in 0..k {
                    for j in 0..k {
                        let dst = ((o * cin + c) * span + i * p.dilation) * span + j * p.dilation;
                        inflated[dst] = kernel.at(o, c, i, j);
                    }
                }
            }
        }
        let winf = tape.constant(Tensor::from_vec(Shape::new(cout, cin, span, span), inflated).unwrap());
        let dense = conv2d(&mut tape, x, winf, None, ConvParams::square(span).with_stride(p.stride).with_padding(p.padding))
            .unwrap();

        let r = tape.value(reference);
        for (label, y) in [("v1", v1), ("v2", v2), ("inflated", dense)] {
            let e = max_rel(tape.value(y), r);
            worst = worst.max(e);
            if !(e <= REDUCTION_TOL) {
                failures.push(format!("seed {seed} {label} error {e:.2e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > REDUCTION_BUDGET {
        failures.push(format!("took {:.1}s", elapsed.as_secs_f64()));
    }
    outcome(
        failures,
        format!(
            "{REDUCTION_CASES} cases, max rel error {worst:.2e} <= {REDUCTION_TOL:e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// 2. Finite-difference gradient checks of every differentiable op.
fn gradients() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for op in GradCheckOp::ALL {
        let report = grad_check(op, 0, DEFAULT_EPSILON, GRAD_TOL);
        worst = worst.max(report.max_rel_error);
        if !report.passed {
            failures.push(report.to_string());
        }
    }
    let elapsed = start.elapsed();
    if elapsed > GRAD_BUDGET {
        failures.push(format!("took {:.1}s", elapsed.as_secs_f64()));
    }
    outcome(
        failures,
        format!(
            "{} ops, max rel error {worst:.2e} <= {GRAD_TOL:e}, {:.1}s",
            GradCheckOp::ALL.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn run_conv(x: &[f64], xs: Shape, w: &[f64], ws: Shape, p: ConvParams) -> Vec<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(xs, x).unwrap());
    let w = tape.constant(Tensor::from_f64(ws, w).unwrap());
    let y = conv2d(&mut tape, x, w, None, p).unwrap();
    tape.value(y).data().to_vec()
}

fn shifted(col: f64) -> Vec<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(Shape::new(1, 1, 1, 4), &[1., 2., 3., 4.]).unwrap());
    let w = tape.constant(Tensor::ones(Shape::new(1, 1, 1, 1)));
    let off = [0.0, 0.0, 0.0, 0.0, col, col, col, col];
    let off = tape.constant(Tensor::from_f64(Shape::new(1, 2, 1, 4), &off).unwrap());
    let y = deform_conv_v1(&mut tape, x, w, &OffsetField::unmodulated(off), ConvParams::square(1)).unwrap();
    tape.value(y).data().to_vec()
}

// 3. Small examples whose answers are worked out by hand.
fn hand_values() -> Outcome {
    let mut checks: Vec<(&str, Vec<f64>, Vec<f64>)> = Vec::new();
    let nine: Vec<f64> = (1..=9).map(f64::from).collect();
    checks.push((
        "conv 3x3",
        run_conv(&nine, Shape::new(1, 1, 3, 3), &[1.0; 9], Shape::new(1, 1, 3, 3), ConvParams::square(3)),
        vec![45.0],
    ));
    checks.push((
        "dilated conv",
        run_conv(
            &[1.0; 25],
            Shape::new(1, 1, 5, 5),
            &[1.0; 9],
            Shape::new(1, 1, 3, 3),
            ConvParams::square(3).with_dilation(2),
        ),
        vec![9.0],
    ));
    checks.push(("bilinear", vec![bilinear_sample(&[1.0, 2.0, 3.0, 4.0], 2, 2, 0.5, 0.5)], vec![2.5]));
    checks.push(("offset +1", shifted(1.0), vec![2.0, 3.0, 4.0, 0.0]));
    checks.push(("offset +0.5", shifted(0.5), vec![1.5, 2.5, 3.5, 2.0]));

    let mut tape = Tape::<f64>::new();
    let grid: Vec<f64> = (1..=16).map(f64::from).collect();
    let g = tape.constant(Tensor::from_f64(Shape::new(1, 1, 4, 4), &grid).unwrap());
    let pooled = adaptive_avg_pool(&mut tape, g, 2, 2).unwrap();
    checks.push(("pool", tape.value(pooled).data().to_vec(), vec![3.5, 5.5, 11.5, 13.5]));
    let row = tape.constant(Tensor::from_f64(Shape::new(1, 1, 1, 2), &[1.0, 3.0]).unwrap());
    let up = upsample_bilinear(&mut tape, row, 1, 4).unwrap();
    checks.push(("upsample", tape.value(up).data().to_vec(), vec![1.0, 5.0 / 3.0, 7.0 / 3.0, 3.0]));

    let pair = tape.constant(Tensor::from_f64(Shape::new(2, 1, 1, 1), &[1.0, 3.0]).unwrap());
    let one = tape.constant(Tensor::ones(Shape::new(1, 1, 1, 1)));
    let zero = tape.constant(Tensor::zeros(Shape::new(1, 1, 1, 1)));
    let two = tape.constant(Tensor::full(Shape::new(1, 1, 1, 1), 2.0));
    let five = tape.constant(Tensor::full(Shape::new(1, 1, 1, 1), 5.0));
    let normed = batch_norm(&mut tape, pair, one, zero, &mut BnState::new(1), Mode::Train).unwrap();
    checks.push(("batch norm", tape.value(normed).data().to_vec(), vec![-1.0, 1.0]));
    let affine = batch_norm(&mut tape, pair, two, five, &mut BnState::new(1), Mode::Train).unwrap();
    checks.push(("batch norm affine", tape.value(affine).data().to_vec(), vec![3.0, 7.0]));

    let mut q = Tape::<f64>::new();
    let x = q.param(Tensor::from_f64(Shape::new(1, 1, 1, 3), &[1.0, 2.0, 3.0]).unwrap());
    let sq = aceseg::ops::mul(&mut q, x, x).unwrap();
    let loss = aceseg::ops::sum(&mut q, sq).unwrap();
    q.backward(loss).unwrap();
    checks.push(("autograd", q.grad(x).unwrap().to_vec(), vec![2.0, 4.0, 6.0]));

    checks.push(("poly lr", vec![poly_lr(0.01, 50, 100, 0.9).unwrap()], vec![0.01 * 0.5f64.powf(0.9)]));
    checks.push(("poly lr literal", vec![poly_lr(0.01, 50, 100, 0.9).unwrap()], vec![0.005359]));
    checks.push(("adjusted lr", vec![adjusted_base_lr(0.001, 4)], vec![0.00025]));

    let sgd = |p0: f64, lr: f64, momentum: f64, wd: f64, steps: usize| {
        let mut p = Params::<f64>::new();
        p.insert("p", Role::Weight, Tensor::full(Shape::SCALAR, p0)).unwrap();
        let mut state = OptimizerState::new(&p);
        for _ in 0..steps {
            sgd_step(&mut p, &[Some(&[1.0])], &mut state, lr, momentum, wd).unwrap();
        }
        p.entries()[0].value.data()[0]
    };
    checks.push(("sgd decay", vec![sgd(1.0, 0.1, 0.0, 1e-4, 1)], vec![0.89999]));
    checks.push(("sgd momentum", vec![sgd(0.0, 1.0, 0.9, 0.0, 2)], vec![-2.9]));

    let mut cm = ConfusionMatrix::new(2);
    cm.update(&[0, 0, 1, 1], &[0, 0, 0, 1], aceseg::IGNORE_INDEX).unwrap();
    checks.push((
        "confusion matrix",
        (0..2).flat_map(|t| (0..2).map(move |p| (t, p))).map(|(t, p)| cm.get(t, p) as f64).collect(),
        vec![2.0, 1.0, 0.0, 1.0],
    ));
    checks.push(("pixAcc", vec![cm.pix_acc().unwrap()], vec![0.75]));
    checks.push(("mIoU", vec![cm.mean_iou().unwrap()], vec![7.0 / 12.0]));

    let mut failures = Vec::new();
    for (name, got, want) in &checks {
        let ok = got.len() == want.len() && got.iter().zip(want).all(|(g, w)| (g - w).abs() <= HAND_TOL);
        if !ok {
            failures.push(format!("{name}: got {got:?}, want {want:?}"));
        }
    }
    outcome(failures, format!("{} hand values within {HAND_TOL:e}", checks.len()))
}

struct TrainCsv {
    lr: Vec<f64>,
    total: Vec<f64>,
}

fn read_csv(path: &Path) -> Result<TrainCsv, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some("iter,lr,main,aux,total") {
        return Err(format!("{}: bad header", path.display()));
    }
    let mut out = TrainCsv {
        lr: Vec::new(),
        total: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 || f[0].parse::<usize>() != Ok(i) {
            return Err(format!("{}: bad row {line:?}", path.display()));
        }
        out.lr.push(f[1].parse().map_err(|_| format!("bad lr {:?}", f[1]))?);
        out.total.push(f[4].parse().map_err(|_| format!("bad loss {:?}", f[4]))?);
    }
    Ok(out)
}

// 4. Three heads on a small synthetic task, tabulated.
fn compare_heads(root: &Path) -> Outcome {
    let (train_dir, val_dir, out_dir) = (root.join("train"), root.join("val"), root.join("compare"));
    let start = Instant::now();
    let mut failures = Vec::new();
    for (dir, num, seed) in [(&train_dir, "200", "101"), (&val_dir, "40", "202")] {
        let (code, _) = cli(&[
            "gen-data", "--out", s(dir), "--num", num, "--size", "64", "--classes", "4", "--seed", seed,
            "--min-px", "6", "--max-px", "48",
        ]);
        if code != 0 {
            return outcome(vec![format!("gen-data exit {code}")], String::new());
        }
    }
    let (code, table) = cli(&[
        "compare-heads", "--data", s(&train_dir), "--val-data", s(&val_dir), "--epochs", "15", "--batch", "4",
        "--seed", "0", "--base-lr", "0.01", "--out-dir", s(&out_dir),
    ]);
    let elapsed = start.elapsed();
    if code != 0 {
        return outcome(vec![format!("compare-heads exit {code}")], String::new());
    }
    print!("{table}");
    if elapsed > COMPARE_BUDGET {
        failures.push(format!("took {:.0}s", elapsed.as_secs_f64()));
    }
    let labels: Vec<&str> = table.lines().skip(1).filter_map(|l| l.split_whitespace().next()).collect();
    if labels != ["ASPP", "PPM", "Proposed"] {
        failures.push(format!("table rows {labels:?}"));
    }
    let csv = fs::read_to_string(out_dir.join("compare.csv")).unwrap_or_default();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let mut notes = Vec::new();
    for (kind, row) in HeadKind::TABLE_ORDER.iter().zip(&rows) {
        let miou: f64 = row.get(2).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
        if !(miou >= MIN_MIOU) {
            failures.push(format!("{} mIoU {miou:.4} < {MIN_MIOU}", kind.table_label()));
        }
        match read_csv(&out_dir.join(format!("{}.ckpt.csv", kind.key()))) {
            Ok(log) => {
                let (Some(&early), Some(&last)) = (log.total.get(LOSS_REFERENCE_ITER), log.total.last()) else {
                    failures.push(format!("{} log too short", kind.table_label()));
                    continue;
                };
                let ratio = last / early;
                if !(ratio < LOSS_RATIO) {
                    failures.push(format!("{} loss ratio {ratio:.3} >= {LOSS_RATIO}", kind.table_label()));
                }
                notes.push(format!("{} mIoU {miou:.3} loss ratio {ratio:.3}", kind.table_label()));
            }
            Err(e) => failures.push(e),
        }
        if let Err(e) = aceseg_cli::load_model(&out_dir.join(format!("{}.ckpt", kind.key()))) {
            failures.push(format!("{} checkpoint reload: {e}", kind.table_label()));
        }
    }
    if rows.len() != 3 {
        failures.push(format!("comparison CSV has {} rows", rows.len()));
    }
    outcome(failures, format!("{}, {:.0}s", notes.join(", "), elapsed.as_secs_f64()))
}

fn small_dataset(root: &Path) -> PathBuf {
    let dir = root.join("small");
    if !dir.exists() {
        let (code, _) = cli(&["gen-data", "--out", s(&dir), "--num", "20", "--size", "64", "--classes", "4", "--seed", "7"]);
        assert_eq!(code, 0, "gen-data failed");
    }
    dir
}

fn train_small(data: &Path, out: &Path, batch: &str, base_lr: &str) -> Result<TrainCsv, String> {
    let (code, _) = cli(&[
        "train", "--data", s(data), "--head", "ace", "--epochs", "2", "--batch", batch, "--base-lr", base_lr,
        "--channels", "16", "--seed", "3", "--out", s(out),
    ]);
    if code != 0 {
        return Err(format!("train exit {code}"));
    }
    read_csv(&aceseg_cli::csv_path(out))
}

// 5. Logged learning rates follow the poly schedule with batch scaling.
fn schedule(root: &Path) -> Outcome {
    let data = small_dataset(root);
    let mut failures = Vec::new();
    let base = 0.001;
    let mut first = Vec::new();
    let mut rows = 0;
    for batch in [4usize, 16] {
        match train_small(&data, &root.join(format!("lr{batch}.ckpt")), &batch.to_string(), "0.001") {
            Ok(log) => {
                let total = log.lr.len();
                for (i, &lr) in log.lr.iter().enumerate() {
                    let want = adjusted_base_lr(base, batch) * (1.0 - i as f64 / total as f64).powf(0.9);
                    if (lr - want).abs() > LR_TOL {
                        failures.push(format!("batch {batch} iter {i}: lr {lr} vs {want}"));
                    }
                }
                rows += total;
                first.push(log.lr.first().copied().unwrap_or(f64::NAN));
            }
            Err(e) => failures.push(e),
        }
    }
    if first.len() == 2 && first[0] != first[1] / 4.0 {
        failures.push(format!("initial lr {} is not {} / 4", first[0], first[1]));
    }
    outcome(
        failures,
        format!("{rows} logged rates within {LR_TOL:e}; initial lr {:?} at batch 4 and 16", first),
    )
}

// 6. Branch structure of each head, read off the summary table.
fn architecture() -> Outcome {
    let mut failures = Vec::new();
    for c in [128usize, 512] {
        let summary = |head: &str| cli(&["summary", "--head", head, "--channels", &c.to_string(), "--classes", "4"]).1;
        let rows = |text: &str| -> Vec<(String, usize)> {
            text.lines()
                .skip(2)
                .filter_map(|l| {
                    let f: Vec<&str> = l.split_whitespace().collect();
                    Some((f.first()?.to_string(), f.get(1)?.parse().ok()?))
                })
                .filter(|(name, _)| name != "classifier" && name != "total")
                .collect()
        };
        let ace = rows(&summary("ace"));
        let want_ace = vec![("dcb1".to_string(), c / 4), ("dcb2".into(), c / 8), ("dcb3".into(), c / 8)];
        if ace != want_ace {
            failures.push(format!("C={c} ACE {ace:?}"));
        }
        let aspp: Vec<String> = rows(&summary("aspp")).into_iter().map(|r| r.0).collect();
        if aspp != ["conv1x1", "atrous6", "atrous12", "atrous18", "gap"] {
            failures.push(format!("C={c} ASPP {aspp:?}"));
        }
        let ppm: Vec<String> = rows(&summary("ppm")).into_iter().map(|r| r.0).collect();
        if ppm != ["pool1x1", "pool2x2", "pool3x3", "pool6x6"] {
            failures.push(format!("C={c} PPM {ppm:?}"));
        }
    }
    outcome(
        failures,
        "ACE C/4,C/8,C/8; ASPP 5 branches with rates 6,12,18; PPM bins 1,2,3,6 at C=128 and C=512".into(),
    )
}

// 7. Reproducible training, exact checkpoint round trip, and a one-scale
// ensemble equal to plain evaluation.
fn determinism(root: &Path) -> Outcome {
    let data = small_dataset(root);
    let mut failures = Vec::new();
    let (a, b) = (root.join("det_a.ckpt"), root.join("det_b.ckpt"));
    for out in [&a, &b] {
        if let Err(e) = train_small(&data, out, "2", "0.01") {
            failures.push(e);
        }
    }
    let bytes = |p: &Path| fs::read(aceseg_cli::csv_path(p)).unwrap_or_default();
    if bytes(&a).is_empty() || bytes(&a) != bytes(&b) {
        failures.push("training CSVs differ".into());
    }

    let ds = Dataset::open(&data).expect("dataset opens");
    let (train_pairs, held) = ds.pairs.split_at(ds.split_index());
    let mut cfg = aceseg_cli::ExperimentConfig::default();
    cfg.channels = 16;
    cfg.classes = ds.manifest.classes;
    cfg.train = TrainConfig {
        base_lr: 0.01,
        batch_size: 2,
        epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut model = SegModel::<f32>::new(cfg.model_config(), 3).unwrap();
    let mut state = OptimizerState::new(&model.params);
    train(&mut model, train_pairs, &cfg.train, &mut state, |_| Ok(())).unwrap();
    let before = evaluate(&mut model, held, &EvalMode::SingleScale).unwrap();
    let ckpt = root.join("roundtrip.ckpt");
    checkpoint_save(&ckpt, &model, Some(&state)).unwrap();
    fs::write(aceseg_cli::sidecar_path(&ckpt), cfg.model_text()).unwrap();
    let mut loaded = aceseg_cli::load_model(&ckpt).unwrap();
    let after = evaluate(&mut loaded, held, &EvalMode::SingleScale).unwrap();
    let (m0, m1) = (before.mean_iou().unwrap(), after.mean_iou().unwrap());
    if before != after || m0.to_bits() != m1.to_bits() {
        failures.push(format!("reloaded mIoU {m1} differs from {m0}"));
    }
    let one_scale = EvalMode::MultiScale {
        scales: vec![1.0],
        flip: false,
    };
    let ms = evaluate(&mut loaded, held, &one_scale).unwrap();
    if ms != after {
        failures.push("scales=[1.0] without flip differs from plain eval".into());
    }

    let plain = cli(&["eval", "--data", s(&data), "--ckpt", s(&a)]);
    let single = cli(&["eval", "--data", s(&data), "--ckpt", s(&a), "--scales", "1.0"]);
    if plain.0 != 0 || plain != single {
        failures.push("CLI eval with --scales 1.0 differs from plain eval".into());
    }
    outcome(
        failures,
        format!("identical CSVs, reloaded mIoU {m1} bit-exact, one-scale ensemble equal"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 reduction identities", Box::new(reductions)),
        ("2 gradient suite", Box::new(gradients)),
        ("3 hand values", Box::new(hand_values)),
        ("4 head comparison", Box::new(|| compare_heads(root))),
        ("5 schedule and scaling", Box::new(|| schedule(root))),
        ("6 architecture arithmetic", Box::new(architecture)),
        ("7 determinism and persistence", Box::new(|| determinism(root))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let o = check();
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
