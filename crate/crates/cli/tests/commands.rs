use std::fs;
use std::path::Path;
use std::process::Command;

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_aceseg"))
        .args(args)
        .env("ACESEG_LOG", "info")
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, num: &str, classes: &str, seed: &str) {
    let (code, _) = cli(&["gen-data", "--out", s(dir), "--num", num, "--size", "48", "--classes", classes, "--seed", seed]);
    assert_eq!(code, 0);
}

const FAST: [&str; 6] = ["--channels", "16", "--epochs", "1", "--batch", "2"];

#[test]
fn gen_data_is_deterministic_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "5", "4", "7");
    gen(&b, "5", "4", "7");
    assert_eq!(fs::read_to_string(a.join("manifest.txt")).unwrap(), "count=5 classes=4 size=48 seed=7\n");
    for rel in ["images/000004.ppm", "labels/000004.pgm"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap());
    }
    let (code, _) = cli(&["gen-data", "--out", s(&tmp.path().join("c")), "--classes", "1"]);
    assert_eq!(code, 2);
}

#[test]
fn flags_override_config_file_and_echo_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# test\nnum = 3\nsize = 32\nseed = 4\n").unwrap();
    let out = tmp.path().join("d");
    let (code, stdout) = cli(&["--config", s(&cfg), "gen-data", "--out", s(&out), "--seed", "9"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("  seed = 9\n"), "{stdout}");
    assert!(stdout.contains("  size = 32\n"));
    assert_eq!(fs::read_to_string(out.join("manifest.txt")).unwrap(), "count=3 classes=4 size=32 seed=9\n");

    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(cli(&["--config", s(&cfg), "gen-data", "--out", s(&out)]).0, 2);
    assert_eq!(cli(&["--config", s(&tmp.path().join("missing")), "summary"]).0, 2);
}

#[test]
fn train_and_eval_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "20", "4", "3");
    let ckpt = tmp.path().join("m.ckpt");
    let mut args = vec!["train", "--data", s(&data), "--head", "ace", "--out", s(&ckpt)];
    args.extend(FAST);
    let (code, stdout) = cli(&args);
    assert_eq!(code, 0);
    let headline = stdout.lines().last().unwrap().to_string();
    assert!(headline.starts_with("pixAcc="), "{headline}");
    // 18 training pairs at batch 2.
    assert_eq!(fs::read_to_string(tmp.path().join("m.ckpt.csv")).unwrap().lines().count(), 1 + 9);
    assert!(fs::read_to_string(tmp.path().join("m.ckpt.config")).unwrap().contains("head = ace"));

    let (code, report) = cli(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]);
    assert_eq!(code, 0);
    assert!(report.contains(&format!("{headline}\n")), "{report}");

    let (code, report) = cli(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--multiscale", "--split", "all"]);
    assert_eq!(code, 0);
    let csv: Vec<&str> = report.lines().skip_while(|l| *l != "class,iou").skip(1).collect();
    assert_eq!(csv.len(), 4);
    let miou: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("pixAcc="))
        .and_then(|l| l.split("mIoU=").nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&miou));
}

#[test]
fn usage_and_runtime_failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "10", "4", "1");
    let ckpt = tmp.path().join("m.ckpt");

    let mut bad_head = vec!["train", "--data", s(&data), "--head", "fcn", "--out", s(&ckpt)];
    bad_head.extend(FAST);
    assert_eq!(cli(&bad_head).0, 2);

    let mut diverge = vec!["train", "--data", s(&data), "--head", "aspp", "--base-lr", "1e30", "--out", s(&ckpt)];
    diverge.extend(FAST);
    assert_eq!(cli(&diverge).0, 3);

    let mut ok = vec!["train", "--data", s(&data), "--head", "aspp", "--out", s(&ckpt)];
    ok.extend(FAST);
    assert_eq!(cli(&ok).0, 0);
    let other = tmp.path().join("k3");
    gen(&other, "10", "3", "1");
    assert_eq!(cli(&["eval", "--data", s(&other), "--ckpt", s(&ckpt)]).0, 2);
    assert_eq!(cli(&["eval", "--data", s(&data), "--ckpt", s(&tmp.path().join("none"))]).0, 2);

    assert_eq!(cli(&["gradcheck", "--op", "nosuch"]).0, 2);
    assert_eq!(cli(&["bogus"]).0, 2);
}

#[test]
fn gradcheck_reports_pass() {
    for op in ["conv2d", "deform_conv_v2"] {
        let (code, out) = cli(&["gradcheck", "--op", op, "--seed", "1"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("max_rel_error=") && out.contains("PASS"));
    }
    assert_eq!(cli(&["gradcheck", "--op", "relu", "--tolerance", "0"]).0, 1);
}

#[test]
fn comparison_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "20", "4", "5");
    let run = |dir: &str| {
        let out = tmp.path().join(dir);
        let mut args = vec!["compare-heads", "--data", s(&data), "--out-dir", s(&out)];
        args.extend(FAST);
        let (code, stdout) = cli(&args);
        assert_eq!(code, 0);
        let table: Vec<String> = stdout
            .lines()
            .skip_while(|l| !l.starts_with("Method"))
            .map(String::from)
            .collect();
        (table, fs::read_to_string(out.join("compare.csv")).unwrap())
    };
    let (t1, c1) = run("a");
    let (t2, c2) = run("b");
    assert_eq!(t1, t2);
    assert_eq!(c1, c2);
    let rows: Vec<&str> = t1[1..].iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(rows, ["ASPP", "PPM", "Proposed"]);
    assert!(c1.starts_with("head,pixacc,miou\n"));
    for head in ["aspp", "ppm", "ace"] {
        aceseg_cli::load_model(&tmp.path().join("a").join(format!("{head}.ckpt"))).unwrap();
    }
}

#[test]
fn presets_parse_and_finetune_starts_from_weights() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        let mut cfg = aceseg_cli::ExperimentConfig::default();
        cfg.apply_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "10", "4", "2");
    let first = tmp.path().join("first.ckpt");
    let mut args = vec!["train", "--data", s(&data), "--head", "ppm", "--out", s(&first)];
    args.extend(FAST);
    assert_eq!(cli(&args).0, 0);
    let second = tmp.path().join("second.ckpt");
    let finetune = configs.join("finetune.cfg");
    let mut args = vec![
        "--config", s(&finetune), "train", "--data", s(&data), "--head", "ppm", "--init", s(&first), "--out", s(&second),
    ];
    args.extend(FAST);
    assert_eq!(cli(&args).0, 0);
    let mut wrong = vec!["train", "--data", s(&data), "--head", "ace", "--init", s(&first), "--out", s(&second)];
    wrong.extend(FAST);
    assert_eq!(cli(&wrong).0, 2);
}
