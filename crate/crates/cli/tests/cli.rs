use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pas-synth"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let text = format!(
        "dataset = {:?}\nnum_samples = 10\nyaws_deg = [-30.0, 30.0]\ntest_every = 2\nframes = 3\nbatch_size = 2\npose_warmup_steps = 1\npretrain_steps = 2\ngan_steps = 1\noutput_dir = {:?}\n",
        dir.join("data"),
        dir.join("run")
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_command_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let ok = |c: &mut Command| {
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    ok(bin().args(["generate-data", "--config"]).arg(&cfg));
    ok(bin().args(["train", "--config"]).arg(&cfg));
    let ckpt = dir.path().join("run/checkpoint.bin");
    let report = ok(bin().args(["eval", "--split", "test", "--checkpoint"]).arg(&ckpt));
    assert!(report.contains("copy_prior"));
    assert!(dir.path().join("run/eval_test/eval_report.json").is_file());
    assert!(dir.path().join("run/eval_test/per_frame.csv").is_file());
    let sample = std::fs::read_dir(dir.path().join("data")).unwrap().map(|e| e.unwrap().path()).find(|p| p.is_dir()).unwrap();
    ok(bin().args(["synth", "--checkpoint"]).arg(&ckpt).arg("--sample").arg(&sample).arg("--out").arg(dir.path().join("out")));
    assert!(dir.path().join("out/0002.png").is_file() && dir.path().join("out/poses.json").is_file());
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "batch_size = 0\n").unwrap();
    let st = bin().args(["generate-data", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let cfg = write_config(dir.path());
    let st = bin().args(["train", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let st = bin().args(["eval", "--checkpoint"]).arg(dir.path().join("missing.bin")).status().unwrap();
    assert_eq!(st.code(), Some(1));
}
