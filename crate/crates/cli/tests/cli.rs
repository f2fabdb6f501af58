use std::path::Path;
use std::process::{Command, Output};

fn tesel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tesel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--set", "encoder.layers=1",
    "--set", "encoder.heads=2",
    "--set", "encoder.model_dim=16",
    "--set", "encoder.ff_dim=32",
    "--set", "encoder.max_len=64",
    "--set", "train.epochs=2",
    "--set", "train.k=4",
    "--set", "retrieval.trainer.encoder.layers=1",
    "--set", "retrieval.trainer.encoder.heads=2",
    "--set", "retrieval.trainer.encoder.model_dim=16",
    "--set", "retrieval.trainer.encoder.ff_dim=32",
    "--set", "retrieval.trainer.epochs=1",
];

fn synth_small(dir: &Path) {
    let out = tesel(&[
        "synth", "--profile", "single_small", "--out", dir.to_str().unwrap(),
        "--n-options", "12", "--n-train", "40", "--n-dev", "10", "--n-test", "10", "--seed", "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn full_workflow_through_every_verb() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth_small(&data);
    let data_set = format!("data_dir={}", data.display());
    let out_set = format!("out_dir={}", run.display());
    let run_s = run.to_str().unwrap();

    let out = tesel(&with_tiny(&["build-vocab", "--set", &data_set, "--set", &out_set]));
    assert_eq!(code(&out), 0);
    assert!(run.join("vocab.txt").exists());

    let out = tesel(&with_tiny(&[
        "train", "--set", &data_set, "--set", &out_set, "--set", "retrieval.top_k=6",
    ]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("accuracy"));
    for f in [
        "config.resolved.toml", "run_manifest.txt", "vocab.txt", "model.ckpt", "retriever.ckpt",
        "index.bin", "losses.csv", "retriever_losses.csv", "metrics.json", "predictions.jsonl",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }

    let out = tesel(&["eval", "--run", run_s, "--split", "dev"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("eval-dev").join("predictions.jsonl").exists());

    let out = tesel(&["retrieve", "--run", run_s, "--k", "3"]);
    assert_eq!(code(&out), 0);
    let csv = stdout(&out);
    assert!(csv.starts_with("k,recall\n"));
    assert!(csv.trim_end().ends_with("12,1"));

    let out = tesel(&["retrieve", "--run", run_s, "--k", "3", "--text", "anything at all"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 3);

    let out = tesel(&["bench", "--run", run_s, "--cases", "3", "--ks", "2,6"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bench = std::fs::read_to_string(run.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 4);
    assert!(bench.contains("pairwise,6,1,6,"));
    assert!(bench.contains("parallel-k2,6,2,3,"));

    let out = tesel(&["sweep-k", "--run", run_s, "--ks", "1,6,12"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("sweep_k.csv").exists());

    let out = tesel(&["report", "--run", run_s]);
    assert_eq!(code(&out), 0);
    let report = std::fs::read_to_string(run.join("report.md")).unwrap();
    assert!(report.contains("## Test metrics"));
    assert!(report.contains("## Inference cost"));
    assert!(report.contains("## k sweep (dev)"));
    assert!(run.join("loss_curve.csv").exists());
}

#[test]
fn ablate_writes_four_row_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("abl");
    synth_small(&data);
    let data_set = format!("data_dir={}", data.display());
    let out_set = format!("out_dir={}", run.display());
    let out = tesel(&with_tiny(&[
        "ablate", "--set", &data_set, "--set", &out_set, "--set", "retrieval.top_k=4",
        "--set", "train.epochs=1",
    ]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(run.join("ablation.md").exists());
    assert!(run.join("config.resolved.toml").exists());
}

#[test]
fn synth_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth_small(&a);
    synth_small(&b);
    for f in ["dataset.toml", "options.txt", "train.jsonl", "dev.jsonl", "test.jsonl"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Usage errors.
    assert_eq!(code(&tesel(&[])), 1);
    assert_eq!(code(&tesel(&["frobnicate"])), 1);
    assert_eq!(code(&tesel(&["train", "--set", "train.bogus=1"])), 1);
    assert_eq!(code(&tesel(&["synth", "--profile", "nope", "--out", "x"])), 1);
    // Data errors.
    let missing = format!("data_dir={}", tmp.path().join("absent").display());
    assert_eq!(code(&tesel(&["train", "--set", &missing])), 2);
    assert_eq!(code(&tesel(&["report", "--run", tmp.path().to_str().unwrap()])), 2);
    // Help is not an error.
    assert_eq!(code(&tesel(&["--help"])), 0);
}
