//! End-to-end runs of the `vmi` binary on a small synthetic IDX data root.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vmi_core::checkpoint::Checkpoint;
use vmi_core::data::{encode_idx_images, encode_idx_labels};
use vmi_core::rng::{Purpose, Rng};
use vmi_core::tensor::Tensor;

const TINY: &str = "gauss_dim=3\nenc_hidden=16\ndec_hidden=16\nq_hidden=16\nbatch=32\nepochs=2\n\
                    eval_q_steps=20\neval_pool=120\neval_samples=40\n";

/// Blobs whose brightness depends on the label, so a code has something to find.
fn write_split(dir: &Path, prefix: &str, n: usize, seed: u64) {
    let mut rng = Rng::stream(seed, Purpose::Test, 0);
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let mut data = Vec::with_capacity(n * 784);
    for &l in &labels {
        for p in 0..784 {
            let on = (p / 78) == l as usize;
            let v: f64 = if on { 0.8 } else { 0.1 } + 0.1 * rng.uniform();
            data.push((v * 255.0).round() / 255.0);
        }
    }
    let images = Tensor::new(vec![n, 784], data).unwrap();
    fs::write(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        encode_idx_images(&images),
    )
    .unwrap();
    fs::write(
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
        encode_idx_labels(&labels),
    )
    .unwrap();
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let data = root.join("data");
    for name in ["mnist", "fashion-mnist"] {
        let d = data.join(name);
        fs::create_dir_all(&d).unwrap();
        write_split(&d, "train", 240, 1);
        write_split(&d, "t10k", 120, 2);
    }
    let config = root.join("tiny.cfg");
    fs::write(&config, TINY).unwrap();
    Fixture {
        _tmp: tmp,
        root,
        data,
        config,
    }
}

fn vmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmi"))
        .args(args)
        .env_remove("VMI_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(f: &Fixture, out: &Path, lambda: &str, seed: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--dataset",
        "mnist",
        "--latent",
        "joint",
        "--lambda",
        lambda,
        "--seed",
        seed,
        "--config",
        s(&f.config),
        "--data-dir",
        s(&f.data),
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    vmi(&args)
}

#[test]
fn train_then_evaluate_pipeline() {
    let f = fixture();
    let run = f.root.join("run");
    ok(&train(&f, &run, "1.0", "42", &[]));
    for name in [
        "metrics.csv",
        "manifest.txt",
        "final.vmiv",
        "checkpoints/epoch_000.vmiv",
        "checkpoints/epoch_002.vmiv",
    ] {
        assert!(run.join(name).exists(), "missing {name}");
    }
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    for line in ["command=train", "lambda=1", "seed=42", "latent=joint", "epochs=2"] {
        assert!(
            manifest.lines().any(|l| l == line),
            "manifest lacks {line}:\n{manifest}"
        );
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,epoch,elbo,recon_ll,kl_gauss,kl_cat,mi_term,mi_bound_eval,lambda"
    );
    let rows: Vec<&str> = lines.collect();
    // 240 images in batches of 32 is 8 steps per epoch.
    assert_eq!(rows.len(), 16);
    assert_eq!(
        rows.iter().filter(|r| !r.split(',').nth(7).unwrap().is_empty()).count(),
        2
    );

    let ckpt = run.join("final.vmiv");
    let ev = f.root.join("eval");
    let stdout = ok(&vmi(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data-dir",
        s(&f.data),
        "--out",
        s(&ev),
    ]));
    assert!(stdout.contains("accuracy train"));
    let acc = fs::read_to_string(ev.join("accuracy.csv")).unwrap();
    let test_acc: f64 = acc.lines().find(|l| l.starts_with("test,")).unwrap()[5..]
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&test_acc));
    let hist = fs::read_to_string(ev.join("probability_histogram.csv")).unwrap();
    let total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 120 * 10);
    assert_eq!(
        fs::read_to_string(ev.join("digit_histogram.csv"))
            .unwrap()
            .lines()
            .count(),
        11
    );

    let mi = ok(&vmi(&[
        "mi-estimate",
        "--ckpt",
        s(&ckpt),
        "--data-dir",
        s(&f.data),
        "--seed",
        "3",
        "--q-steps",
        "30",
        "--batch",
        "16",
        "--eval-samples",
        "40",
    ]));
    let bound: f64 = mi.trim().parse().unwrap();
    assert!(bound.is_finite() && bound <= 10f64.ln() + 0.05, "bound {bound}");

    let tr = f.root.join("traverse");
    ok(&vmi(&[
        "traverse",
        "--ckpt",
        s(&ckpt),
        "--mode",
        "categorical",
        "--rows",
        "3",
        "--data-dir",
        s(&f.data),
        "--out",
        s(&tr),
    ]));
    let pgm = fs::read(tr.join("categorical.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    assert!(tr.join("manifest.txt").exists());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let f = fixture();
    let full = f.root.join("full");
    ok(&train(&f, &full, "1.0", "5", &[]));
    let part = f.root.join("part");
    ok(&train(&f, &part, "1.0", "5", &["--epochs", "1"]));
    let epoch1 = part.join("checkpoints/epoch_001.vmiv");
    ok(&train(&f, &part, "1.0", "5", &["--ckpt", s(&epoch1)]));
    assert_eq!(
        fs::read(full.join("final.vmiv")).unwrap(),
        fs::read(part.join("final.vmiv")).unwrap()
    );
    assert_eq!(
        fs::read(full.join("metrics.csv")).unwrap(),
        fs::read(part.join("metrics.csv")).unwrap()
    );
}

#[test]
fn gaussian_sweep_and_traversals() {
    let f = fixture();
    let mut ckpts = Vec::new();
    for lambda in ["0.1", "1"] {
        let out = f.root.join(format!("g{lambda}"));
        ok(&vmi(&[
            "train",
            "--latent",
            "gaussian",
            "--lambda",
            lambda,
            "--seed",
            "1",
            "--epochs",
            "1",
            "--config",
            s(&f.config),
            "--data-dir",
            s(&f.data),
            "--out",
            s(&out),
        ]));
        ckpts.push(out.join("final.vmiv"));
    }
    let loaded = Checkpoint::load(&ckpts[0]).unwrap();
    assert_eq!(loaded.meta("latent"), Some("gaussian"));

    let tr = f.root.join("z");
    ok(&vmi(&[
        "traverse",
        "--ckpt",
        s(&ckpts[0]),
        "--grid-n",
        "5",
        "--data-dir",
        s(&f.data),
        "--out",
        s(&tr),
    ]));
    let pgm = fs::read(tr.join("traverse_z1z2.pgm")).unwrap();
    // 5 cells of 28 pixels, each followed by a 2-pixel gutter, plus the leading gutter.
    assert!(pgm.starts_with(b"P5\n152 152\n255\n"));

    let sweep = f.root.join("sweep");
    let list = format!("{},{}", s(&ckpts[0]), s(&ckpts[1]));
    ok(&vmi(&[
        "traverse",
        "--mode",
        "lambda-sweep",
        "--ckpt",
        &list,
        "--data-dir",
        s(&f.data),
        "--out",
        s(&sweep),
    ]));
    let rows = fs::read_to_string(sweep.join("lambda_sweep_variation.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn numeric_commands_run() {
    let out = ok(&vmi(&[
        "lemma-check",
        "--seed",
        "1",
        "--joints",
        "10",
        "--samples",
        "2000",
    ]));
    assert!(out.contains("max exact"));
}

#[test]
fn exit_codes() {
    let f = fixture();
    let neg = vmi(&["train", "--lambda", "-1", "--seed", "1", "--out", s(&f.root.join("x"))]);
    assert_eq!(neg.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&neg.stderr).contains("lambda"));
    let no_data = vmi(&["train", "--seed", "1", "--out", s(&f.root.join("y"))]);
    assert_eq!(no_data.status.code(), Some(2));
    let missing = vmi(&[
        "eval",
        "--ckpt",
        s(&f.root.join("absent.vmiv")),
        "--data-dir",
        s(&f.data),
        "--out",
        s(&f.root),
    ]);
    assert_eq!(missing.status.code(), Some(3));
    let gaussian_eval = {
        let out = f.root.join("g");
        ok(&vmi(&[
            "train",
            "--latent",
            "gaussian",
            "--seed",
            "1",
            "--epochs",
            "1",
            "--config",
            s(&f.config),
            "--data-dir",
            s(&f.data),
            "--out",
            s(&out),
        ]));
        vmi(&[
            "eval",
            "--ckpt",
            s(&out.join("final.vmiv")),
            "--data-dir",
            s(&f.data),
            "--out",
            s(&f.root.join("e")),
        ])
    };
    assert_eq!(gaussian_eval.status.code(), Some(1));
}
