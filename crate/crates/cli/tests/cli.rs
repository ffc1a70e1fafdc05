use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segcrf::io;
use segcrf::training::{mean_iou, trimap_iou, Arch, Model, ModelConfig};
use segcrf::{GlobalCompatibility, LabelMap, ScoreMap, Tensor2D};
use tempfile::TempDir;

fn segcrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segcrf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Dark left, bright right, split at column 16; truth follows the edge but
/// the unaries weakly put the boundary at column 14.
fn displaced_edge(dir: &Path) -> (PathBuf, PathBuf, LabelMap) {
    let n = 32;
    let image = Tensor2D::from_fn(n, n, 3, |_, x, c| if x < 16 { [0.15, 0.2, 0.25][c] } else { [0.85, 0.7, 0.6][c] });
    let unary = ScoreMap::from_fn(n, n, 2, |_, x, c| {
        let right = x >= 14;
        if (c == 1) == right {
            -0.5
        } else {
            0.0
        }
    });
    let truth = LabelMap::new(n, n, (0..n * n).map(|i| u8::from(i % n >= 16)).collect()).unwrap();
    let (img, scm) = (dir.join("edge.ppm"), dir.join("edge.scm"));
    io::save_image(&img, &image).unwrap();
    io::save_score_map(&scm, &unary).unwrap();
    (img, scm, truth)
}

/// Guidance-only bundle: the context parts present but inert.
fn guidance_bundle(dir: &Path, labels: usize) -> PathBuf {
    let mut m = Model::new(Arch::C, &ModelConfig { labels, net_channels: 2, k1: 3, k2: 3, ..Default::default() }, 1).unwrap();
    m.context.mu_g = GlobalCompatibility::zeros(labels);
    m.context.head.weight.fill(0.0);
    m.context.head.bias.fill(0.0);
    let p = dir.join("guidance.prb");
    io::model_to_bundle(&m).unwrap().save(&p).unwrap();
    p
}

#[test]
fn check_passes_on_fresh_build() {
    let out = segcrf(&["check", "--component", "all"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("checks passed"));
}

#[test]
fn check_fails_with_perturbed_backward() {
    let out = segcrf(&["check", "--component", "guidance", "--perturb-backward", "1e-3"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn check_rejects_unknown_component() {
    assert_eq!(code(&segcrf(&["check", "--component", "bogus"])), 2);
}

#[test]
fn bench_minimal_run() {
    let out = segcrf(&["bench", "--size", "64x64", "--radius", "2,8", "--reps", "1", "--fast", "--compare-dense"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("dense comparison 64x64"), "{text}");
    assert!(text.contains("max/min across radii"));
}

#[test]
fn bench_rejects_bad_size() {
    assert_eq!(code(&segcrf(&["bench", "--size", "64", "--reps", "1"])), 2);
}

#[test]
fn infer_without_parameters_keeps_argmax() {
    let dir = TempDir::new().unwrap();
    let (img, scm, _) = displaced_edge(dir.path());
    let label = dir.path().join("out.pgm");
    let out = segcrf(&["infer", "--unary", s(&scm), "--image", s(&img), "--out-label", s(&label)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let want = io::load_score_map(&scm).unwrap().argmin_labels();
    assert_eq!(io::load_label_map(&label).unwrap(), want);
}

#[test]
fn infer_moves_boundary_toward_color_edge() {
    let dir = TempDir::new().unwrap();
    let (img, scm, truth) = displaced_edge(dir.path());
    let params = guidance_bundle(dir.path(), 2);
    let label = dir.path().join("out.pgm");
    let refined = dir.path().join("out.scm");
    let out = segcrf(&[
        "infer", "--unary", s(&scm), "--image", s(&img), "--params", s(&params),
        "--set", "radius=3", "--set", "epsilon=0.001", "--set", "lambda=3",
        "--out", s(&refined), "--out-label", s(&label),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let before = trimap_iou(&io::load_score_map(&scm).unwrap().argmin_labels(), &truth, 2).unwrap().mean;
    let after_labels = io::load_label_map(&label).unwrap();
    let after = trimap_iou(&after_labels, &truth, 2).unwrap().mean;
    assert!(after > before, "{before} -> {after}");
    assert_eq!(io::load_score_map(&refined).unwrap().argmin_labels(), after_labels);
}

#[test]
fn fast_and_exact_labels_agree() {
    let dir = TempDir::new().unwrap();
    let synth = dir.path().join("data");
    assert_eq!(code(&segcrf(&["synth", "--out", s(&synth), "--count", "1", "--seed", "5"])), 0);
    let params = guidance_bundle(dir.path(), 4);
    let run = |fast: bool, name: &str| {
        let label = dir.path().join(name);
        let mut args = vec![
            "infer", "--unary", "data/0000.scm", "--image", "data/0000.ppm", "--params", s(&params),
            "--set", "radius=8", "--set", "epsilon=0.01", "--out-label",
        ];
        let label_s = label.to_str().unwrap().to_string();
        args.push(&label_s);
        if fast {
            args.push("--fast");
        }
        let out = Command::new(env!("CARGO_BIN_EXE_segcrf"))
            .current_dir(dir.path())
            .args(&args)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        io::load_label_map(&label).unwrap()
    };
    let exact = run(false, "exact.pgm");
    let fast = run(true, "fast.pgm");
    let d = exact.disagreement(&fast);
    assert!(d <= 0.02, "disagreement {d}");
}

#[test]
fn infer_upsamples_coarse_unaries() {
    let dir = TempDir::new().unwrap();
    let image = Tensor2D::from_fn(16, 16, 3, |y, x, c| ((y + x + c) % 5) as f64 / 5.0);
    let unary = ScoreMap::from_fn(8, 8, 3, |y, x, c| ((y * 3 + x + c) % 4) as f64 * -0.3);
    io::save_image(dir.path().join("i.png"), &image).unwrap();
    io::save_score_map(dir.path().join("u.scm"), &unary).unwrap();
    let params = guidance_bundle(dir.path(), 3);
    let out_path = dir.path().join("o.scm");
    let out = segcrf(&[
        "infer", "--unary", s(&dir.path().join("u.scm")), "--image", s(&dir.path().join("i.png")),
        "--params", s(&params), "--set", "radius=2", "--out", s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(io::load_score_map(&out_path).unwrap().shape(), (16, 16, 3));
}

#[test]
fn infer_input_errors() {
    let dir = TempDir::new().unwrap();
    let (img, scm, _) = displaced_edge(dir.path());
    let o = dir.path().join("o.scm");
    let missing = segcrf(&["infer", "--unary", "nope.scm", "--image", s(&img), "--out", s(&o)]);
    assert_eq!(code(&missing), 2);
    let nothing = segcrf(&["infer", "--unary", s(&scm), "--image", s(&img)]);
    assert_eq!(code(&nothing), 2);
    let bad_key = segcrf(&["infer", "--unary", s(&scm), "--image", s(&img), "--out", s(&o), "--set", "colour=red"]);
    assert_eq!(code(&bad_key), 2);
    std::fs::write(dir.path().join("junk.scm"), b"XXXX").unwrap();
    let junk = segcrf(&["infer", "--unary", s(&dir.path().join("junk.scm")), "--image", s(&img), "--out", s(&o)]);
    assert_eq!(code(&junk), 2);
    assert!(String::from_utf8_lossy(&junk.stderr).contains("[1"));
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(
        &p,
        "# small run\nradius = 3\nepsilon = 0.01\nnet.channels = 3\nnet.k1 = 5\nnet.k2 = 5\ntrain.epochs = 2\ntrain.lr = 0.01\nseed = 3\n",
    )
    .unwrap();
    p
}

#[test]
fn train_is_reproducible_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let out = segcrf(&["synth", "--out", s(&data), "--count", "3", "--size", "32x32", "--seed", "2"]);
    assert_eq!(code(&out), 0);
    let manifest = data.join("manifest.tsv");
    let cfg = small_config(dir.path());
    let mut logs = Vec::new();
    for k in 0..2 {
        let bundle = dir.path().join(format!("m{k}.prb"));
        let log = dir.path().join(format!("log{k}.csv"));
        let out = segcrf(&[
            "train", "--manifest", s(&manifest), "--config", s(&cfg), "--arch", "C",
            "--out", s(&bundle), "--log", s(&log),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        logs.push(std::fs::read_to_string(&log).unwrap());
        assert!(io::ParamBundle::load(&bundle).unwrap().contains("guidance.mu"));
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[0].lines().count(), 3);
    assert!(logs[0].starts_with("epoch,loss,mean_iou,trimap_iou\n"));

    let label = dir.path().join("pred.pgm");
    let out = segcrf(&[
        "infer", "--unary", s(&data.join("0000.scm")), "--image", s(&data.join("0000.ppm")),
        "--params", s(&dir.path().join("m0.prb")), "--config", s(&cfg), "--out-label", s(&label),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let truth = io::load_label_map(data.join("0000.pgm")).unwrap();
    let m = mean_iou(&io::load_label_map(&label).unwrap(), &truth, 4).unwrap();
    assert!(m.mean > 0.0);
}

#[test]
fn train_rejects_bad_arch() {
    let dir = TempDir::new().unwrap();
    let out = segcrf(&["train", "--manifest", "m.tsv", "--arch", "D", "--out", s(&dir.path().join("b.prb"))]);
    assert_eq!(code(&out), 2);
}
