use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cycnn::pnm::{read_pnm, write_pnm};
use cycnn::ImageGrid;

fn cycnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_synth(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let out = dir.join(name);
    let mut args = vec!["train", "--quiet", "--out", out.to_str().unwrap()];
    let defaults = [
        ("--dataset", "synth"),
        ("--synth-count", "120"),
        ("--width", "4"),
        ("--hidden", "16"),
        ("--epochs", "3"),
        ("--lr0", "0.01"),
    ];
    for (flag, value) in defaults {
        if !extra.contains(&flag) {
            args.extend([flag, value]);
        }
    }
    args.extend_from_slice(extra);
    cycnn(&args)
}

#[test]
fn training_writes_one_metrics_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_synth(dir.path(), "m.ckpt", &["--variant", "base"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("m.ckpt.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,val_acc,lr"));
    assert_eq!(lines.count(), 3);
    assert!(dir.path().join("m.ckpt").exists());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let o = train_synth(
            dir.path(),
            name,
            &["--variant", "cy-p", "--seed", "7", "--augment", "r"],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        fs::read(dir.path().join("a")).unwrap(),
        fs::read(dir.path().join("b")).unwrap()
    );
}

#[test]
fn cylindrical_variant_without_polar_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_synth(dir.path(), "m", &["--variant", "cy"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("polar"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# test run\nepochs = 5\nvariant = p\nbatch_size = 32\n",
    )
    .unwrap();
    let o = train_synth(
        dir.path(),
        "m",
        &["--config", cfg.to_str().unwrap(), "--epochs", "2"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    fs::write(&cfg, "epochz = 5\n").unwrap();
    let o = train_synth(dir.path(), "m", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = cycnn(&[
        "train",
        "--dataset",
        "mnist",
        "--data-dir",
        dir.path().join("nowhere").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn untrained_model_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_synth(dir.path(), "m", &["--epochs", "1", "--lr0", "0.000001"]);
    assert!(o.status.success());
    let ckpt = dir.path().join("m");
    let o = cycnn(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--dataset",
        "synth",
        "--synth-count",
        "300",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let acc: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(acc < 0.45, "{text}");
    assert!(text.contains("class,correct,total,accuracy"));
    assert_eq!(
        text.lines()
            .filter(|l| l.starts_with(char::is_numeric))
            .count(),
        6
    );
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_synth(dir.path(), "m", &["--epochs", "1"])
        .status
        .success());
    let images = vec![ImageGrid::filled(3, 32, 32, 0.5); 2];
    let ds = cycnn::dataset::LabeledDataset::new(images, vec![0, 1], 10).unwrap();
    fs::write(
        dir.path().join("test_batch.bin"),
        cycnn::dataset::encode_cifar10(&ds).unwrap(),
    )
    .unwrap();
    let ckpt = dir.path().join("m");
    let o = cycnn(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--dataset",
        "cifar10",
        "--data-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint expects"));
}

#[test]
fn polar_of_constant_image_is_constant_inside_the_circle() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.pgm");
    let output = dir.path().join("p.pgm");
    write_pnm(&input, &ImageGrid::filled(1, 32, 32, 0.6)).unwrap();
    for mode in ["polar", "logpolar"] {
        let o = cycnn(&[
            "polar",
            "--in",
            input.to_str().unwrap(),
            "--mode",
            mode,
            "--out",
            output.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let p = read_pnm(&output).unwrap();
        assert_eq!((p.height(), p.width()), (32, 32));
        // 0.6 quantizes to 153/255 and back.
        for y in 0..32 {
            assert!((p.get(0, y, 0) - 153.0 / 255.0).abs() < 1e-6);
        }
    }
}

#[test]
fn selftest_passes_and_detects_an_injected_fault() {
    for precision in ["double", "single"] {
        let o = cycnn(&["selftest", "--precision", precision]);
        assert!(o.status.success(), "{}", stdout(&o));
        assert_eq!(stdout(&o).matches("PASS").count(), 4);
    }
    let o = cycnn(&["selftest", "--inject-fault", "winograd"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL winograd-equivalence"));
}

#[test]
fn rf_reports_the_worked_example() {
    let o = cycnn(&["rf", "--layers", "3x3/3x2", "--region", "3x3", "--csv"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().nth(1), Some("0,3,3,3,2,9,7"));
    assert_eq!(cycnn(&["rf", "--layers", "0x3"]).status.code(), Some(2));
}

#[test]
fn bench_writes_csv_for_requested_algorithms() {
    let o = cycnn(&[
        "bench",
        "--geometry",
        "1x4x8x8->4",
        "--algorithms",
        "direct-zero,winograd",
        "--repeats",
        "3",
        "--warmup",
        "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("geometry,algorithm,median_ms,gflops,threads\n"));
    assert_eq!(text.lines().count(), 3);
}
