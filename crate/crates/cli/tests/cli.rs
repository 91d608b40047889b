use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uvface::image::RgbImage;

fn uvface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvface"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).display().to_string()
}

fn synth(dir: &Path, n: &str, seed: &str, res: &str) -> Output {
    uvface(&["--seed", seed, "synth-data", "--n", n, "--res", res, "--poses=-30,30", "--out", &p(dir, "data")])
}

#[test]
fn unknown_attribute_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "1", "0", "32")), 0);
    let out = uvface(&[
        "generate",
        &p(dir.path(), "data/id_0000/truth.uvt"),
        &p(dir.path(), "data/id_0000/position.uvt"),
        "--attr",
        "XX",
        "--identity",
        "--out",
        &p(dir.path(), "gen"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown attribute"), "{}", stderr(&out));
    assert!(stderr(&out).contains("generate"), "stage is named: {}", stderr(&out));
}

#[test]
fn unknown_flags_and_bad_values_are_rejected() {
    assert_eq!(code(&uvface(&["gradcheck", "--bogus"])), 1);
    assert_eq!(code(&uvface(&["synth-data", "--n", "2", "--res", "30", "--out", "x"])), 1);
    assert_eq!(code(&uvface(&["train-attr", "--phase", "3", "--data", "d", "--out", "o"])), 1);
    assert_eq!(code(&uvface(&["--help"])), 0);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = uvface(&[
        "complete",
        &p(dir.path(), "nope.uvt"),
        &p(dir.path(), "nope.uvt"),
        "--ckpt",
        &p(dir.path(), "ckpt"),
        "--out",
        &p(dir.path(), "out.uvt"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).lines().any(|l| l.starts_with("error: complete:")), "{}", stderr(&out));
}

#[test]
fn phase_two_needs_a_finished_phase_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "2", "0", "32")), 0);
    let out = uvface(&["train-attr", "--phase", "2", "--data", &p(dir.path(), "data"), "--out", &p(dir.path(), "a")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("phase 1"), "{}", stderr(&out));
}

#[test]
fn uvmap_then_identity_generate_reproduces_the_photo() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&synth(d, "1", "3", "32")), 0);
    let out = uvface(&[
        "uvmap",
        &p(d, "data/id_0000/mesh.obj"),
        &p(d, "data/id_0000/photo_yaw+000.png"),
        "--pose",
        "0",
        "--res",
        "32",
        "--out",
        &p(d, "uv"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = uvface(&[
        "generate",
        &p(d, "uv/texture.uvt"),
        &p(d, "uv/position.uvt"),
        "--identity",
        "--render-yaw",
        "0",
        "--out",
        &p(d, "gen"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let photo = RgbImage::load_png(d.join("data/id_0000/photo_yaw+000.png")).unwrap();
    let render = RgbImage::load_png(d.join("gen/render_yaw+000.png")).unwrap();
    let mask = image::open(d.join("gen/render_yaw+000_mask.png")).unwrap().to_luma8();
    assert_eq!((render.width(), render.height()), (photo.width(), photo.height()));
    let mut covered = 0;
    let mut worst: f64 = 0.0;
    for (x, y, m) in mask.enumerate_pixels() {
        if m.0[0] > 0 {
            covered += 1;
            let (a, b) = (photo.get(x as usize, y as usize), render.get(x as usize, y as usize));
            worst = (0..3).map(|c| (a[c] - b[c]).abs()).fold(worst, f64::max);
        }
    }
    assert!(covered > 300, "{covered}");
    assert!(worst < 2.0 / 255.0, "{worst}");
}

#[test]
fn synth_data_depends_only_on_the_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        assert_eq!(code(&synth(dir.path(), "2", seed, "32")), 0);
    }
    let read = |d: &Path| fs::read(d.join("data/id_0001/truth.uvt")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn training_logs_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&synth(d, "4", "0", "32")), 0);
    fs::write(
        d.join("tiny.toml"),
        "resolution = 32\nepochs = 1\npose_set = [-30.0, 30.0]\ntc_width = 4\ncritic_width = 4\n",
    )
    .unwrap();
    let out = uvface(&[
        "--seed",
        "9",
        "train-tc",
        "--data",
        &p(d, "data"),
        "--config",
        &p(d, "tiny.toml"),
        "--out",
        &p(d, "tc"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = stderr(&out);
    assert!(log.contains("resolved config") && log.contains("\"seed\":9"), "{log}");
    assert!(d.join("tc/summary.json").exists());

    // fine-tune one more epoch at a lower rate
    let out = uvface(&[
        "train-tc",
        "--data",
        &p(d, "data"),
        "--resume",
        &p(d, "tc"),
        "--lr",
        "1e-5",
        "--epochs",
        "1",
        "--out",
        &p(d, "tc2"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tc2/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs"], 2);
}

#[test]
fn gradcheck_reports_every_case() {
    let out = uvface(&["gradcheck", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["conv2d", "deconv2d", "instance_norm", "tc_total", "ada_phase2_total", "tc_generator"] {
        assert!(text.lines().any(|l| l.starts_with(name) && l.contains("max_rel_err")), "{name} missing:\n{text}");
    }
    assert!(!text.contains("FAIL"), "{text}");
}
