use std::path::Path;
use std::process::{Command, Output};

use relit_core::config::RunConfig;
use relit_core::gaussians::ply;
use relit_core::io::pfm;

const TINY: &str = r#"
seed = 4
[model.backbone]
d = 16
mlp_dim = 32
heads = 1
l1 = 1
l2 = 1
[train]
batch_size = 1
iters = 2
warmup_iters = 1
checkpoint_every = 0
[data]
image_size = 16
input_views = 2
denoise_views = 2
extra_views = 1
"#;

fn relit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relit"))
        .args(args)
        .env("RELIT_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = relit(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_category(out: &Output) -> String {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("error line");
    let v: serde_json::Value = serde_json::from_str(last).expect("machine-readable error");
    v["error"].as_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn print_config_lists_every_default() {
    let out = ok(&["--print-config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    for key in ["batch_size", "peak_lr", "grad_skip_norm", "cfg_drop_prob", "noisy_tokens", "steps", "image_size"] {
        assert!(text.contains(key), "{key} missing");
    }
}

#[test]
fn gen_data_is_reproducible_with_seven_one_split() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = a.path().join("c.toml");
    std::fs::write(&cfg, TINY).unwrap();
    for dir in [a.path().join("d"), b.path().join("d")] {
        ok(&["--config", s(&cfg), "gen-data", "--out", s(&dir), "--scenes", "8", "--seed", "3"]);
    }
    assert_eq!(tree_bytes(&a.path().join("d")), tree_bytes(&b.path().join("d")));
    let index: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("d/index.json")).unwrap()).unwrap();
    assert_eq!(index["train"].as_array().unwrap().len(), 7);
    assert_eq!(index["val"].as_array().unwrap().len(), 1);
    for i in 0..8 {
        assert!(a.path().join(format!("d/scene_{i:05}/manifest.json")).exists());
    }
}

#[test]
fn train_relight_render_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("c.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let data = root.join("data");
    ok(&["--config", s(&cfg), "gen-data", "--out", s(&data), "--scenes", "2", "--seed", "1"]);
    let run = root.join("run");
    ok(&["--config", s(&cfg), "train", "--data", s(&data), "--out", s(&run)]);
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let ckpt = run.join("model.ckpt");
    let scene = data.join("scene_00001");
    let env = scene.join("env_target.pfm");

    let relit_dir = root.join("relit");
    ok(&["relight", "--ckpt", s(&ckpt), "--views", s(&scene), "--envmap", s(&env), "--steps", "2", "--cfg", "3.0", "--seed", "9", "--out", s(&relit_dir)]);
    let g = ply::read(&relit_dir.join("gaussians.ply")).unwrap();
    assert_eq!(g.len(), 2 * 16 * 16);

    // Same seed gives a byte-identical PLY.
    let again = root.join("again");
    ok(&["relight", "--ckpt", s(&ckpt), "--views", s(&scene), "--envmap", s(&env), "--steps", "2", "--seed", "9", "--out", s(&again)]);
    assert_eq!(std::fs::read(relit_dir.join("gaussians.ply")).unwrap(), std::fs::read(again.join("gaussians.ply")).unwrap());

    // Rendering the PLY at the denoising cameras reproduces the final x0.
    let frames = root.join("frames");
    ok(&["render", "--ply", s(&relit_dir.join("gaussians.ply")), "--camera-path", s(&relit_dir.join("cameras.json")), "--out", s(&frames)]);
    for i in 0..2 {
        let a = pfm::read(&relit_dir.join(format!("relit_{i:03}.pfm"))).unwrap();
        let b = pfm::read(&frames.join(format!("frame_{i:03}.pfm"))).unwrap();
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "frame {i} differs by {worst}");
    }

    // No envmap: unconditional relight with a warning. One step works.
    let uncond = root.join("uncond");
    let out = relit(&["relight", "--ckpt", s(&ckpt), "--views", s(&scene), "--steps", "1", "--out", s(&uncond)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unconditional"));
    assert!(uncond.join("relit_001.png").exists());

    let turn = root.join("turn");
    ok(&["render", "--ply", s(&uncond.join("gaussians.ply")), "--frames", "3", "--size", "12", "--out", s(&turn)]);
    assert!(turn.join("frame_002.png").exists());

    // eval against itself: perfect scores.
    let out = ok(&["eval", "--pred", s(&relit_dir), "--gt", s(&relit_dir)]);
    let table = String::from_utf8(out.stdout).unwrap();
    let mean = table.lines().last().unwrap();
    assert!(mean.starts_with("mean") && mean.contains("99.000") && mean.contains("1.0000"), "{table}");
}

#[test]
fn failures_report_categories() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(error_category(&relit(&["render", "--ply", s(&root.join("missing.ply")), "--out", s(root)])), "io");
    let bad = root.join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 1\n").unwrap();
    assert_eq!(error_category(&relit(&["--config", s(&bad), "--print-config"])), "config");
    assert_eq!(error_category(&relit(&["gen-data", "--bogus"])), "usage");
    let junk = root.join("junk.ply");
    std::fs::write(&junk, b"not a ply").unwrap();
    assert_eq!(error_category(&relit(&["render", "--ply", s(&junk), "--out", s(root)])), "format");
    assert_eq!(error_category(&relit(&["gen-data", "--out", s(&root.join("d")), "--scenes", "0"])), "invalid-argument");
    let out = Command::new(env!("CARGO_BIN_EXE_relit")).args(["gen-data", "--out", s(root), "--scenes", "1"]).env("RELIT_THREADS", "zero").output().unwrap();
    assert_eq!(error_category(&out), "config");
}
