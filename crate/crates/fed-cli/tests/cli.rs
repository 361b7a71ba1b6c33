//! End-to-end CLI behavior: exit codes, file outputs, determinism.

use std::path::Path;
use std::process::Command;

fn fed() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fed"))
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "ids = 6\nper_id = 4\nholdout_ids = 2\nimage_h = 32\nimage_w = 16\npatch = 4\n\
         depth = 1\nchannels = 16\nheads = 2\nfdm_heads = 4\nk = 2\nids_per_batch = 2\n\
         samples_per_id = 2\nepochs = 1\npatch_count = 4\nseed = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let out = fed()
        .args(["train", "--config", "/nonexistent/missing.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.cfg"), "{stderr}");
}

#[test]
fn invalid_config_line_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "ids = 6\nwat = 1\n").unwrap();
    let out = fed()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn train_eval_roundtrip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    for out in [&out1, &out2] {
        let st = fed()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
        assert!(out.join("checkpoint.fedc").exists());
    }
    // identical loss CSVs and checkpoints across reruns
    assert_eq!(
        std::fs::read(out1.join("loss.csv")).unwrap(),
        std::fs::read(out2.join("loss.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(out1.join("checkpoint.fedc")).unwrap(),
        std::fs::read(out2.join("checkpoint.fedc")).unwrap()
    );

    // eval prints rank1/map and exits 0; rerun produces identical CSVs
    let eval_dir1 = dir.path().join("eval1");
    let eval1 = fed()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(out1.join("checkpoint.fedc"))
        .arg("--out")
        .arg(&eval_dir1)
        .output()
        .unwrap();
    assert_eq!(eval1.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval1.stderr));
    let stdout = String::from_utf8_lossy(&eval1.stdout);
    assert!(stdout.contains("rank1 ") && stdout.contains("map "), "{stdout}");
    let eval_dir2 = dir.path().join("eval2");
    let eval2 = fed()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(out1.join("checkpoint.fedc"))
        .arg("--out")
        .arg(&eval_dir2)
        .output()
        .unwrap();
    assert_eq!(eval2.status.code(), Some(0));
    assert_eq!(
        std::fs::read(eval_dir1.join("metrics.csv")).unwrap(),
        std::fs::read(eval_dir2.join("metrics.csv")).unwrap()
    );
}

#[test]
fn truncated_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let st = fed()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    let bytes = std::fs::read(out.join("checkpoint.fedc")).unwrap();
    let bad = dir.path().join("trunc.fedc");
    std::fs::write(&bad, &bytes[..bytes.len() / 3]).unwrap();
    let eval = fed()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(4), "{}", String::from_utf8_lossy(&eval.stderr));
}

#[test]
fn architecture_mismatch_exits_4_naming_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    fed().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    // same checkpoint, wider model
    let cfg2 = dir.path().join("wider.cfg");
    std::fs::write(
        &cfg2,
        "ids = 6\nper_id = 4\nholdout_ids = 2\nimage_h = 32\nimage_w = 16\npatch = 4\n\
         depth = 1\nchannels = 32\nheads = 2\nfdm_heads = 4\nk = 2\nids_per_batch = 2\n\
         samples_per_id = 2\nepochs = 1\npatch_count = 4\nseed = 3\n",
    )
    .unwrap();
    let eval = fed()
        .args(["eval", "--config"])
        .arg(&cfg2)
        .arg("--checkpoint")
        .arg(out.join("checkpoint.fedc"))
        .arg("--out")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&eval.stderr);
    assert!(stderr.contains("encoder."), "must name the offending tensor: {stderr}");
}

#[test]
fn sweep_k_rejects_k_at_or_above_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = fed()
        .args(["sweep-k", "--config"])
        .arg(&cfg)
        .args(["--k", "4", "--out"])
        .arg(dir.path().join("sweep"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn augment_preview_writes_mask_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("prev");
    let st = fed()
        .args(["augment-preview", "--config"])
        .arg(&cfg)
        .args(["--count", "3", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    let mask = std::fs::read_to_string(out_dir.join("pair000_mask.txt")).unwrap();
    let fields: Vec<&str> = mask.trim().split(' ').collect();
    assert_eq!(fields.len(), 4);
    assert!(fields.iter().all(|f| *f == "0" || *f == "1"));
    assert!(out_dir.join("pair002_xp.ppm").exists());
}

#[test]
fn inspect_scores_prints_rows_with_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    fed().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    let st = fed()
        .args(["inspect-scores", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(out.join("checkpoint.fedc"))
        .args(["--count", "2", "--out"])
        .arg(dir.path().join("scores"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let stdout = String::from_utf8_lossy(&st.stdout);
    assert!(stdout.lines().count() >= 3, "{stdout}");
    assert!(stdout.contains(" | "), "{stdout}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    fed()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "99", "--out"])
        .arg(&out_a)
        .output()
        .unwrap();
    fed().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out_b).output().unwrap();
    let a = std::fs::read(out_a.join("checkpoint.fedc")).unwrap();
    let b = std::fs::read(out_b.join("checkpoint.fedc")).unwrap();
    assert_ne!(a, b, "different seeds must give different checkpoints");
    let manifest = std::fs::read_to_string(out_a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 99"), "{manifest}");
}
