use std::path::Path;
use std::process::Command;

use palette::imageio::{read_image, read_mask_png};
use palette::records::{read_jsonl, FixtureEntry, MetricRecord};

const TINY: &str = r#"
[data]
source = "toy"

[toy]
size = 8

[model]
base_channels = 8
channel_multipliers = [1, 2]
attention_levels = [1]
embedding_dim = 16

[train]
batch_size = 2
total_steps = 6
warmup_steps = 2
ema_decay = 0.9
tasks = ["colorization", "inpainting"]

[sampling]
schedule = { beta_start = 1e-4, beta_end = 0.3, steps = 6 }
"#;

fn palette(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_palette")).args(args).output().unwrap();
    assert!(out.status.success(), "palette {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let (a, b, c) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"), dir.path().join("c.ckpt"));
    palette(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    palette(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    palette(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&c), "--until", "3"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    palette(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&c), "--resume", s(&c)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let other = dir.path().join("o.ckpt");
    palette(&["train", "--config", s(&cfg), "--seed", "8", "--out", s(&other)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn eval_writes_metric_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let ck = dir.path().join("m.ckpt");
    let fx = dir.path().join("fx");
    let ex = dir.path().join("ex.json");
    palette(&["train", "--config", s(&cfg), "--seed", "1", "--out", s(&ck)]);
    palette(&["make-fixtures", "--config", s(&cfg), "--seed", "2", "--task", "colorization", "--count", "4", "--out", s(&fx)]);
    palette(&["train-extractor", "--config", s(&cfg), "--seed", "3", "--images", "64", "--steps", "5", "--out", s(&ex)]);
    let metrics = dir.path().join("metrics.jsonl");
    let out = palette(&[
        "eval", "--config", s(&cfg), "--seed", "4", "--checkpoint", s(&ck), "--fixtures", s(&fx), "--extractor", s(&ex), "--out", s(&metrics),
    ]);
    let records: Vec<MetricRecord> = read_jsonl(&metrics).unwrap();
    let names: Vec<&str> = records.iter().map(|r| r.metric.as_str()).collect();
    assert_eq!(names, ["mae", "ms_ssim", "fid", "pd", "is", "ca"]);
    for r in &records {
        assert_eq!(r.task, "colorization");
        assert_eq!(r.count, 4);
        assert_eq!(r.params, "ema");
        assert_eq!(r.step, 6);
        assert!(r.value.is_finite());
    }
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 1 + records.len());

    let raw = dir.path().join("raw.jsonl");
    palette(&["eval", "--config", s(&cfg), "--seed", "4", "--checkpoint", s(&ck), "--fixtures", s(&fx), "--raw", "--out", s(&raw)]);
    let records: Vec<MetricRecord> = read_jsonl(&raw).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.params == "raw"));
}

#[test]
fn inpainting_samples_keep_observed_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let ck = dir.path().join("m.ckpt");
    let fx = dir.path().join("fx");
    let out = dir.path().join("out");
    palette(&["train", "--config", s(&cfg), "--seed", "1", "--out", s(&ck)]);
    palette(&["make-fixtures", "--config", s(&cfg), "--seed", "5", "--task", "inpainting", "--count", "3", "--out", s(&fx)]);
    palette(&[
        "sample", "--config", s(&cfg), "--seed", "6", "--checkpoint", s(&ck), "--fixtures", s(&fx), "--task", "inpainting", "--out", s(&out),
    ]);
    let entries: Vec<FixtureEntry> = read_jsonl(&fx.join("manifest.jsonl")).unwrap();
    assert_eq!(entries.len(), 3);
    for e in &entries {
        let target = read_image::<f64>(&fx.join(&e.target)).unwrap();
        let sample = read_image::<f64>(&out.join(format!("{}_sample.png", e.id))).unwrap();
        let mask = read_mask_png(&fx.join(&e.mask)).unwrap();
        assert!(mask.count() > 0);
        let mut differs = false;
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    if mask.get(y, x) {
                        differs |= sample.at(0, c, y, x) != target.at(0, c, y, x);
                    } else {
                        assert_eq!(sample.at(0, c, y, x), target.at(0, c, y, x), "{} ({c},{y},{x})", e.id);
                    }
                }
            }
        }
        assert!(differs, "{}: hole was not generated", e.id);
    }
}

#[test]
fn bad_invocations_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nbatch_sise = 3\n").unwrap();
    let run = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_palette")).args(args).output().unwrap();
    let out = run(&["train", "--config", s(&cfg), "--seed", "1", "--out", "x.ckpt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_sise"));
    let out = run(&["train", "--config", s(&cfg), "--out", "x.ckpt"]);
    assert!(!out.status.success(), "missing --seed must fail");
    let out = run(&["train", "--seed", "1", "--out", "x.ckpt", "--bogus"]);
    assert!(!out.status.success());
    let out = run(&["sample", "--seed", "1", "--checkpoint", "/nonexistent.ckpt", "--fixtures", ".", "--out", "o"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent.ckpt"));
}
