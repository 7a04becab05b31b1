use std::path::Path;
use std::process::{Command, Output};

fn dcssr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcssr"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("DCSSR_OUT_DIR")
        .output()
        .expect("spawn dcssr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_small(dir: &Path) {
    let o = dcssr(
        &["gen-data", "--out", "data", "--train", "3", "--val", "1", "--test", "2", "--height", "32", "--width", "96"],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dcssr(&["eval", "--no-such-flag"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bicubic_eval_csv_has_one_row_per_eye_and_a_mean() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    let o = dcssr(&["eval", "--data", "data/manifest.tsv", "--method", "bicubic"], tmp.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image_id,eye,psnr_db,ssim");
    assert_eq!(lines.len(), 1 + 2 * 2 + 1);
    assert!(lines[1].starts_with("test_00000,left,"));
    assert!(lines[2].starts_with("test_00000,right,"));
    assert!(lines[5].starts_with("mean,both,"));
    let psnr: f64 = lines[5].split(',').nth(2).unwrap().parse().unwrap();
    assert!(psnr.is_finite() && psnr > 15.0);
}

#[test]
fn bicubic_eval_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    let args = ["eval", "--data", "data/manifest.tsv", "--method", "bicubic", "--out"];
    let a = dcssr(&[&args[..], &["a.csv"]].concat(), tmp.path());
    let b = dcssr(&[&args[..], &["b.csv"]].concat(), tmp.path());
    assert!(a.status.success() && b.status.success());
    let read = |f: &str| std::fs::read(tmp.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
}

#[test]
fn model_eval_without_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    let o = dcssr(&["eval", "--data", "data/manifest.tsv"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--checkpoint"));
}

#[test]
fn train_then_sr_and_dump_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir);
    let o = Command::new(env!("CARGO_BIN_EXE_dcssr"))
        .args(["train", "--data", "data/manifest.tsv", "--out", "ignored", "--epochs", "1", "--channels", "2"])
        .args(["--set", "val_frames=1"])
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("DCSSR_OUT_DIR", "run")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("run/latest.ckpt").exists());
    assert!(!dir.join("ignored").exists());
    let log = std::fs::read_to_string(dir.join("run/loss.csv")).unwrap();
    assert!(log.starts_with("step,total,mse,dc,apam,photo,smooth_lr,smooth_rl,cycle"));

    let o = dcssr(
        &[
            "sr", "--checkpoint", "run/latest.ckpt",
            "--left", "data/test_00000_L.pgm", "--right", "data/test_00000_R.pgm",
            "--out-left", "a.pgm", "--out-right", "b.pgm", "--panel", "panel.pgm",
        ],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let head = std::fs::read(dir.join("a.pgm")).unwrap();
    assert!(head.starts_with(b"P5\n192 64\n"));
    let head = std::fs::read(dir.join("panel.pgm")).unwrap();
    assert!(head.starts_with(b"P5\n384 128\n"));

    let o = dcssr(
        &[
            "dump-masks", "--checkpoint", "run/latest.ckpt",
            "--left", "data/test_00000_L.pgm", "--right", "data/test_00000_R.pgm",
            "--out", "masks",
        ],
        dir,
    );
    assert!(o.status.success());
    let bytes = std::fs::read(dir.join("masks/mask_right_to_left.bin")).unwrap();
    assert_eq!(bytes.len(), 12 + 4 * 32 * 96 * 96);
    let dims: Vec<u32> = bytes[..12].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(dims, [32, 96, 96]);
    let row: f32 = bytes[12..12 + 4 * 96].chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).sum();
    assert!((row - 1.0).abs() < 1e-5);
}

#[test]
fn sr_rejects_mismatched_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir);
    let small = dcssr(&["gen-data", "--out", "other", "--train", "1", "--val", "0", "--test", "0", "--height", "32", "--width", "64"], dir);
    assert!(small.status.success());
    let o = dcssr(
        &[
            "sr", "--left", "data/test_00000_L.pgm", "--right", "other/train_00000_R.pgm",
            "--out-left", "a.pgm", "--out-right", "b.pgm",
        ],
        dir,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape"));
    assert!(!dir.join("a.pgm").exists());
}

#[test]
fn gradcheck_passes_on_tiny_model() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dcssr(&["gradcheck", "--channels", "2", "--patch", "3x5"], tmp.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("max relative error"));
}

#[test]
fn bad_patch_argument_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dcssr(&["gradcheck", "--patch", "6by12"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
