use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use blindloom_core::frame_io::{load_sequence, read_tensor, FRAME_PATTERN};

const TINY: &[&str] = &[
    "--set", "size=32",
    "--set", "frames=4",
    "--set", "window=3",
    "--set", "hidden=4",
    "--set", "layers=2",
    "--set", "batches=2",
    "--set", "batch_size=2",
    "--set", "crop=16",
    "--set", "pretrain_steps=2",
    "--set", "pretrain_crop=16",
    "--set", "corpus_size=2",
    "--set", "corpus_image=32",
    "--set", "flow_levels=1",
    "--set", "flow_iterations=10",
    "--set", "flow_warps=1",
    "--set", "dae_steps=2",
    "--set", "dae_hidden=4",
    "--set", "dae_layers=2",
];

fn blindloom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindloom")).args(args).output().expect("spawn blindloom")
}

fn ok(args: &[&str]) -> String {
    let out = blindloom(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn fixture_noise_flow_corr_chain() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    let noisy = dir.path().join("noisy");
    ok(&["fixture", "--kind", "translating-texture", "--size", "32", "--frames", "3", "--out", s(&clean)]);
    assert_eq!(load_sequence(&clean, FRAME_PATTERN).unwrap().len(), 3);
    let gt = read_tensor(clean.join("gt/forward_00000.bltt")).unwrap();
    assert_eq!(gt.shape(), [1, 2, 32, 32]);
    assert!(gt.data()[..32 * 32].iter().all(|&u| u == 2.0));

    ok(&["noise", "--model", "awgn:20", "--seed", "7", "--in", s(&clean), "--out", s(&noisy)]);
    let n1 = load_sequence(&noisy, FRAME_PATTERN).unwrap();
    let again = dir.path().join("again");
    ok(&["noise", "--model", "awgn:20", "--seed", "7", "--in", s(&clean), "--out", s(&again)]);
    assert_eq!(n1.frames(), load_sequence(&again, FRAME_PATTERN).unwrap().frames());

    let (a, b) = (clean.join("frame_00000.pgm"), clean.join("frame_00001.pgm"));
    let (wf, wb) = (dir.path().join("wf.bltt"), dir.path().join("wb.bltt"));
    ok(&["flow", "--a", s(&a), "--b", s(&b), "--out", s(&wf)]);
    ok(&["flow", "--a", s(&b), "--b", s(&a), "--out", s(&wb)]);
    assert_eq!(read_tensor(&wf).unwrap().shape(), [1, 2, 32, 32]);

    let corr = dir.path().join("corr");
    ok(&["corr", "--wf", s(&wf), "--wb", s(&wb), "--prev", s(&a), "--cur", s(&b), "--out", s(&corr)]);
    for name in ["occ_cur", "occ_prev", "light_cur", "light_prev", "gamma_cur", "gamma_prev"] {
        let t = read_tensor(corr.join(format!("{name}.bltt"))).unwrap();
        assert_eq!(t.shape(), [1, 1, 32, 32], "{name}");
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)), "{name}");
    }
    let only = dir.path().join("only");
    ok(&["corr", "--wf", s(&wf), "--wb", s(&wb), "--emit", "occ", "--out", s(&only)]);
    assert!(only.join("occ_cur.bltt").exists() && !only.join("gamma_cur.bltt").exists());
    let out = blindloom(&["corr", "--wf", s(&wf), "--wb", s(&wb), "--emit", "gamma", "--out", s(&only)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pretrain_train_denoise_select() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    let noisy = dir.path().join("noisy");
    ok(&["fixture", "--kind", "static-texture", "--size", "32", "--frames", "4", "--out", s(&clean)]);
    ok(&["noise", "--model", "mg:0.3", "--in", s(&clean), "--out", s(&noisy)]);

    let init = dir.path().join("init.bltc");
    let tuned = dir.path().join("tuned.bltc");
    let dae = dir.path().join("dae.bltc");
    ok(&with_tiny(&["pretrain", "--out", s(&init)]));
    ok(&with_tiny(&["pretrain", "--dae", "--out", s(&dae)]));
    let curves = dir.path().join("curves.dat");
    ok(&with_tiny(&["train", "--seq", s(&noisy), "--init", s(&init), "--batches", "3", "--out", s(&tuned), "--curves", s(&curves)]));
    assert_eq!(fs::read_to_string(&curves).unwrap().lines().count(), 1 + 3);

    let (before, after) = (dir.path().join("before"), dir.path().join("after"));
    ok(&["denoise", "--model", s(&init), "--in", s(&noisy), "--out", s(&before)]);
    ok(&["denoise", "--model", s(&tuned), "--in", s(&noisy), "--out", s(&after)]);
    assert_eq!(load_sequence(&after, FRAME_PATTERN).unwrap().len(), 4);

    let line = ok(&["select", "--dae", s(&dae), "--before", s(&before), "--after", s(&after)]);
    assert!(line.starts_with("e0=") && line.contains(" e1=") && line.contains(" choice="), "{line}");

    let table = ok(&["eval", "--test", s(&after), "--ref", s(&clean)]);
    assert_eq!(table.lines().next(), Some("frame,psnr,ssim"));
    assert_eq!(table.lines().count(), 1 + 4 + 1);
}

#[test]
fn eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nfixture=lighting-ramp\nnoise=awgn:20\ndae=on\n").unwrap();
    let out = dir.path().join("report");
    ok(&with_tiny(&["eval", "--config", s(&cfg), "--seed", "3", "--out", s(&out)]));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("frame,psnr_noisy,psnr_initial,psnr,ssim"));
    assert_eq!(csv.lines().count(), 1 + 4);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("seed=3") && summary.contains("dae_choice=") && summary.contains("fixture=lighting-ramp"));
    assert_eq!(fs::read_to_string(out.join("curves.dat")).unwrap().lines().count(), 1 + 2);
}

#[test]
fn ablate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&with_tiny(&[
            "ablate", "--out", s(&out), "--seeds", "1,2",
            "--arm", "twin:", "--arm", "naive:sampler=naive", "--arm", "div:occlusion=divergence,lighting=off",
        ]));
        fs::read(out.join("ablation.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.lines().nth(1).unwrap().starts_with("twin,1,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(blindloom(&["eval", "--out", s(dir.path()), "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(blindloom(&["noise", "--model", "pink:3", "--in", s(&missing), "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(blindloom(&["noise", "--model", "awgn:20", "--in", s(&missing), "--out", s(dir.path())]).status.code(), Some(3));
    assert_eq!(blindloom(&["fixture", "--kind", "spiral", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(blindloom(&["no-such-command"]).status.code(), Some(2));
}
