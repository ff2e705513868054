use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to train in well under a second
env.kind = dodge_ball
env.max_steps = 30
train.workers = 2
train.episodes = 1
train.generations = 1
train.eval_trials = 3
conv.kernels = 5,3
conv.filters = 2,3
conv.strides = 4,2
conv.dense_out = 6
reservoir.size = 5
";

fn rcrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcrc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn trained(dir: &Path, extra: &[&str]) -> PathBuf {
    let cfg = write_config(dir, TINY);
    let out = dir.join("out");
    let mut args = vec!["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    stdout(&rcrc(&args));
    out
}

#[test]
fn minimal_run_writes_one_history_row_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), &[]);
    let first = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(first.lines().count(), 2);
    assert!(out.join("checkpoint.bin").exists());
    let again = dir.path().join("again");
    let cfg = dir.path().join("run.cfg");
    stdout(&rcrc(&["train", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]));
    assert_eq!(first, std::fs::read_to_string(again.join("history.csv")).unwrap());
}

#[test]
fn output_root_variable_picks_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_rcrc"))
        .args(["train", cfg.to_str().unwrap()])
        .env("RCRC_OUTPUT_ROOT", dir.path().join("root"))
        .output()
        .unwrap();
    stdout(&o);
    assert!(dir.path().join("root/run/history.csv").exists());
}

#[test]
fn missing_kind_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("env.kind = dodge_ball\n", ""));
    let o = rcrc(&["train", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("env.kind"));
}

#[test]
fn malformed_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}this line has no equals sign\n"));
    let o = rcrc(&["train", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 13"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn set_flag_overrides_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), &["--set", "train.generations=3"]);
    assert_eq!(std::fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 4);
    let bad = rcrc(&["train", dir.path().join("run.cfg").to_str().unwrap(), "--set", "train.nonsense=1"]);
    assert!(!bad.status.success());
}

#[test]
fn eval_prints_a_parsable_and_repeatable_line() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), &[]).join("checkpoint.bin");
    let one = stdout(&rcrc(&["eval", ckpt.to_str().unwrap(), "--trials", "1"]));
    assert!(one.starts_with("mean=") && one.contains(" std=0 trials=1"), "{one}");
    let a = stdout(&rcrc(&["eval", ckpt.to_str().unwrap()]));
    assert_eq!(a, stdout(&rcrc(&["eval", ckpt.to_str().unwrap()])));
    assert!(a.trim_end().ends_with("trials=3"));
}

#[test]
fn truncated_checkpoint_fails_with_byte_counts() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), &[]).join("checkpoint.bin");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() - 16]).unwrap();
    let o = rcrc(&["eval", ckpt.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("expected") && err.contains("found"), "{err}");
}

#[test]
fn rollout_trace_accounts_for_the_score() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), &[]).join("checkpoint.bin");
    let dump = dir.path().join("dump");
    let text = stdout(&rcrc(&["rollout", ckpt.to_str().unwrap(), "--seed", "4", "--out", dump.to_str().unwrap()]));
    let field = |k: &str| text.split_whitespace().find_map(|w| w.strip_prefix(k)).unwrap().to_string();
    let score: f64 = field("score=").parse().unwrap();
    let steps: usize = field("steps=").parse().unwrap();
    let trace = std::fs::read_to_string(dump.join("trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    assert_eq!(rows.len(), steps);
    let total: f64 = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert_eq!(total, score);
    for i in [0, steps] {
        let img = image::open(dump.join(format!("frame_{i:05}.ppm"))).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (64, 64));
    }
}

#[test]
fn rollout_into_unwritable_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), &[]).join("checkpoint.bin");
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = rcrc(&["rollout", ckpt.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn resume_rejects_a_changed_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), &[]);
    let cfg = dir.path().join("run.cfg");
    let ckpt = out.join("checkpoint.bin");
    // A different generation count changes the config hash.
    let o = rcrc(&["train", cfg.to_str().unwrap(), "--set", "train.generations=2", "--resume", ckpt.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
}

#[test]
fn dump_features_and_bench_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let dump = dir.path().join("feat");
    stdout(&rcrc(&["dump-features", cfg.to_str().unwrap(), "--frames", "2", "--out", dump.to_str().unwrap()]));
    let features = std::fs::read_to_string(dump.join("features.csv")).unwrap();
    assert_eq!(features.lines().count(), 2);
    assert_eq!(features.lines().next().unwrap().split(',').count(), 6);
    let layer = image::open(dump.join("frame_000_layer0_ch00.pgm")).unwrap();
    assert_eq!((layer.width(), layer.height()), (16, 16));
    let b = stdout(&rcrc(&["bench", cfg.to_str().unwrap(), "--frames", "5"]));
    assert!(b.starts_with("extract_ms="), "{b}");
}
