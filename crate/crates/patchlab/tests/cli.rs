//! End-to-end checks of the command-line interface: exit codes, output
//! files, and byte-stable reruns.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchlab"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

/// A budget small enough that every command finishes in seconds.
const TINY_ATTACK: &str = r#"
seed = 7
[attack]
max_iters = 4
patch_side = 4
[scene]
canvas = [64, 64]
"#;

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name))
        .unwrap_or_else(|e| panic!("missing output {name}: {e}"))
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["--config", "/nonexistent/run.toml"])
        .arg("--out")
        .arg(out.path())
        .args(["attack", "dl_da"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_config_value_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(out.path(), "[attack]\nstep_size = -1.0\n");
    let status = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out.path())
        .args(["attack", "dl_da"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .arg("--out")
        .arg(out.path())
        .args(["attack", "nonsense"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn attack_writes_outputs_and_reruns_byte_identical() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(work.path(), TINY_ATTACK);
    let out1 = work.path().join("a");
    let out2 = work.path().join("b");
    for out in [&out1, &out2] {
        let status = bin()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["attack", "dl_da"])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    for name in ["trace.json", "record.json", "patch.ppm", "manifest.json"] {
        assert!(out1.join(name).exists(), "{name} missing");
    }
    // the manifest records wall time and is exempt from byte identity
    for name in ["trace.json", "record.json", "patch.ppm"] {
        assert_eq!(read(&out1, name), read(&out2, name), "{name} differs");
    }
}

#[test]
fn sweep_single_level_grid_flags_degenerate_anova() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(
        work.path(),
        r#"
seed = 7
[attack]
max_iters = 2
patch_side = 4
[scene]
canvas = [64, 64]
[sweep]
projector_lumens = [3000.0]
ambient_lux = [100.0]
distance_m = [1.0]
angle_deg = [0.0]
"#,
    );
    let out = work.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("sweep")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let grid = String::from_utf8(read(&out, "grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2, "header plus exactly one cell");
    assert!(grid.starts_with(
        "projector_lumens,ambient_lux,distance_m,angle_deg,clean_conf,patched_conf,reduction_pct"
    ));
    let anova = String::from_utf8(read(&out, "anova.json")).unwrap();
    assert!(anova.contains("\"degenerate\": true"));
}

#[test]
fn transfer_requires_two_detectors() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(
        work.path(),
        r#"
[transfer]
detectors = ["template"]
"#,
    );
    let out = work.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("transfer")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn countermeasure_train_eval_gate_roundtrip() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(
        work.path(),
        r#"
seed = 11
[scene]
canvas = [64, 64]
[countermeasure]
clean_count = 16
projected_count = 16
[countermeasure.train]
epochs = 50
patience = 20
"#,
    );
    let out = work.path().join("out");
    let status = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["countermeasure", "train"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("countermeasure.bin").exists());
    assert!(out.join("training.json").exists());

    let output = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["countermeasure", "eval"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(out.join("eval.json").exists());
    assert!(String::from_utf8_lossy(&output.stdout).contains("auc"));

    // gate scores one PPM frame and prints a verdict
    let scene = patchlab::scene::SceneConfig {
        canvas: (64, 64),
        ..Default::default()
    };
    let clean = patchlab::scene::render_clean(&scene).unwrap();
    let frame = work.path().join("frame.ppm");
    patchlab::imaging::write_ppm(&clean, &frame).unwrap();
    let output = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["countermeasure", "gate", "--frame"])
        .arg(&frame)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let verdict = String::from_utf8_lossy(&output.stdout);
    assert!(
        verdict.trim() == "pass" || verdict.trim() == "flag",
        "unexpected verdict {verdict:?}"
    );
}

#[test]
fn cli_seed_flag_overrides_config_seed() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(work.path(), TINY_ATTACK);
    let out1 = work.path().join("a");
    let out2 = work.path().join("b");
    // same explicit seed twice -> identical; config seed differs from it
    for out in [&out1, &out2] {
        let status = bin()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["--seed", "99", "attack", "dl_da"])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    assert_eq!(read(&out1, "record.json"), read(&out2, "record.json"));
    let out3 = work.path().join("c");
    let status = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out3)
        .args(["attack", "dl_da"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_ne!(
        read(&out1, "patch.ppm"),
        read(&out3, "patch.ppm"),
        "different seeds should change the learned patch"
    );
}
