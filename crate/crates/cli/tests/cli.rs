use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const CONFIG: &str = r#"
dataset = "images"
output_dir = "run"
image_size = 16
down_channels = [16, 32, 32, 32]
block_size = 4
learning_rate = 1e-3
epochs = 100
validation_images = 2
checkpoint = "run/best"
eval_block_sizes = [4, 8]
random_trigger_trials = 5
train_ratio = 0.6
validation_ratio = 0.2
test_ratio = 0.2
ecc = "reed_solomon"
rs_n = 2
rs_k = 1
"#;

fn hdh(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdh"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hdh")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A tiny trained workspace shared by the tests below.
fn trained() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        std::fs::write(dir.join("hdh.toml"), CONFIG).unwrap();
        let out = hdh(&dir, &["synth", "--out", "images", "--count", "10", "--size", "16", "--seed", "3"]);
        assert_eq!(code(&out), 0, "{out:?}");
        let out = hdh(&dir, &["--config", "hdh.toml", "train"]);
        assert_eq!(code(&out), 0, "{out:?}");
        dir
    })
}

fn training_cover(dir: &Path) -> String {
    let split = std::fs::read_to_string(dir.join("run/split.txt")).unwrap();
    let id = split
        .lines()
        .skip_while(|l| *l != "[train]")
        .nth(1)
        .expect("a training id in the manifest");
    format!("images/{id}")
}

#[test]
fn train_writes_logs_and_checkpoints() {
    let dir = trained();
    let log = std::fs::read_to_string(dir.join("run/train_log.csv")).unwrap();
    assert!(log.starts_with("step,L_style,L_fidelity,L_extract,L_total,wall_time"));
    assert!(dir.join("run/best/manifest.txt").exists());
}

#[test]
fn embed_verify_and_extract_round_trip() {
    let dir = trained();
    let cover = training_cover(dir);
    let out = hdh(
        dir,
        &["--config", "hdh.toml", "embed", "--checkpoint", "run/best", "--cover", &cover,
          "--payload-hex", "a55a", "--out", "stego.png", "--verify"],
    );
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("exact"));
    let out = hdh(
        dir,
        &["--config", "hdh.toml", "extract", "--checkpoint", "run/best", "--stego", "stego.png", "--bytes", "2"],
    );
    assert_eq!(code(&out), 0, "{out:?}");
    assert_eq!(stdout(&out).trim(), "a55a");
}

#[test]
fn oversized_payload_is_a_capacity_error() {
    let dir = trained();
    let cover = training_cover(dir);
    let out = hdh(
        dir,
        &["--config", "hdh.toml", "embed", "--checkpoint", "run/best", "--cover", &cover,
          "--payload", "far too long", "--out", "big.png"],
    );
    assert_eq!(code(&out), 3, "{out:?}");
    assert!(!dir.join("big.png").exists());
}

#[test]
fn ecc_payload_needs_room_for_parity() {
    let dir = trained();
    let cover = training_cover(dir);
    // One data byte plus one parity byte fills the 16-bit capacity.
    let out = hdh(
        dir,
        &["--config", "hdh.toml", "embed", "--checkpoint", "run/best", "--cover", &cover,
          "--payload-hex", "a5a5", "--ecc", "--out", "ecc_big.png"],
    );
    assert_eq!(code(&out), 3, "{out:?}");
}

#[test]
fn invalid_block_size_is_named() {
    let dir = trained();
    let cover = training_cover(dir);
    let out = hdh(
        dir,
        &["--config", "hdh.toml", "embed", "--checkpoint", "run/best", "--cover", &cover,
          "--payload", "x", "--block-size", "3", "--out", "bad.png"],
    );
    assert_eq!(code(&out), 2, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("N=3"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "learning_rat = 1e-4\n").unwrap();
    let out = hdh(dir.path(), &["--config", "bad.toml", "train"]);
    assert_eq!(code(&out), 2, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = trained();
    let other = CONFIG.replace("[16, 32, 32, 32]", "[8, 16, 16, 16]");
    std::fs::write(dir.join("other.toml"), other).unwrap();
    let out = hdh(dir, &["--config", "other.toml", "eval"]);
    assert_eq!(code(&out), 6, "{out:?}");
}

#[test]
fn sweep_and_eval_write_reports() {
    let dir = trained();
    let out = hdh(dir, &["--config", "hdh.toml", "sweep"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let sweep = std::fs::read_to_string(dir.join("run/sweep.csv")).unwrap();
    assert!(sweep.lines().count() > 1);
    let out = hdh(dir, &["--config", "hdh.toml", "eval"]);
    assert_eq!(code(&out), 0, "{out:?}");
    for f in ["report.csv", "random_trigger.csv", "style_on_stego.csv", "summary.txt"] {
        assert!(dir.join("run/eval").join(f).exists(), "{f}");
    }
}

#[test]
fn style_command_reports_psnr() {
    let dir = trained();
    let cover = training_cover(dir);
    let out = hdh(
        dir,
        &["--config", "hdh.toml", "style", "--checkpoint", "run/best", "--input", &cover, "--out", "styled.png"],
    );
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("PSNR"));
    assert!(dir.join("styled.png").exists());
}

#[test]
fn undecodable_ecc_frame_exits_with_ecc_code() {
    let dir = trained();
    let cover = training_cover(dir);
    // Sixteen bits hold a single RS(2,1) codeword, too short for the length header.
    let out = hdh(
        dir,
        &["--config", "hdh.toml", "extract", "--checkpoint", "run/best", "--stego", &cover, "--ecc"],
    );
    assert_eq!(code(&out), 4, "{out:?}");
}
