//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Training runs use a desk-scale network (see `desk`); every arm of a
//! comparison uses the same settings.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blindloom_core::correspondence::{
    lighting_variation, occlusion_consistency, occlusion_pair, weight_map, xi, CorrespondenceConfig,
    CorrespondenceParams, OcclusionMask, OcclusionMode,
};
use blindloom_core::dae::{decide, ModelChoice};
use blindloom_core::denoiser::{Denoise, DenoiserArch, DenoiserModel};
use blindloom_core::experiment::{ablate, ablation_csv, initial_model, run_experiment, Arm, ExperimentConfig};
use blindloom_core::fixtures::{make_fixture, FixtureKind, FixtureSpec};
use blindloom_core::flow::{flow_pair, flow_pair_frames, hybrid_flow_loss, median, FlowField, FlowGroundTruth};
use blindloom_core::metrics::psnr;
use blindloom_core::noise::{apply_noise, NoiseKind, NoiseModel};
use blindloom_core::tensor::{finite_diff_check, masked_l1, AdamConfig, ConvNet, GradCheckOptions, NetSpec, Grads, ParamSet, Tensor4};
use blindloom_core::twin_sampler::{build_naive_pair, build_twin_pairs};
use blindloom_core::{Frame, FrameSequence, PairMaps};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Desk-scale settings shared by the training criteria.
fn desk() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply_overrides(&[
        "hidden=16",
        "layers=4",
        "crop=32",
        "batch_size=16",
        "lr=2e-3",
        "flow_refresh=2",
        "size=64",
        "frames=10",
        "batches=100",
    ])
    .expect("static overrides");
    c
}

/// Pretrained initial model for the training criteria, built once per
/// pretraining length.
fn shared_init(dir: &Path, pretrain_steps: usize) -> PathBuf {
    let path = dir.join(format!("init_{pretrain_steps}.bltc"));
    if !path.exists() {
        let mut c = desk();
        c.pretrain_steps = pretrain_steps;
        initial_model(&c, 1).expect("pretraining").save(&path).expect("save init");
    }
    path
}

/// Full pretraining: the initial model is already a good AWGN denoiser.
const WELL_PRETRAINED: usize = 300;
/// Short pretraining, used where fine-tuning has to move the model far.
const BRIEFLY_PRETRAINED: usize = 75;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

fn fmt_s(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1 -----------------------------------------------------------------------

/// Smallest |pre-activation| over every ReLU of `net` on `x`.
fn relu_margin(net: &ConvNet, x: &Tensor4) -> f64 {
    let mut margin = f64::INFINITY;
    for l in 0..net.spec().layers - 1 {
        // The first l + 1 layers as a plain net end on layer l's pre-activation.
        let mut head = ParamSet::new();
        for k in 0..=l {
            for name in [NetSpec::weight_name(k), NetSpec::bias_name(k)] {
                head.insert(name.clone(), net.params().get(&name).unwrap().clone());
            }
        }
        let z = ConvNet::from_params(head, None).unwrap().forward(x).unwrap();
        margin = z.data().iter().fold(margin, |m, v| m.min(v.abs()));
    }
    margin
}

fn gradient_integrity() -> Verdict {
    let start = Instant::now();
    let arch = DenoiserArch::default();
    let mut model = DenoiserModel::new(arch, 11).unwrap();
    // Give the zero-initialized last layer weights so every layer carries gradient.
    let last = NetSpec::weight_name(arch.layers - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in model.params_mut().get_mut(&last).unwrap().data_mut() {
        *v = rng.random_range(-0.05..0.05);
    }
    // Kink-avoiding input: the first draw whose ReLU arguments all clear 1e-3.
    let margin = 1e-3;
    let mut draws = 0;
    let x = loop {
        draws += 1;
        let x = Tensor4::from_fn([1, arch.window, 4, 4], |_| rng.random_range(0.05..0.95));
        if relu_margin(model.net(), &x) >= margin {
            break x;
        }
        if draws == 10_000 {
            return verdict(false, "no kink-avoiding input found in 10000 draws");
        }
    };
    let residual = model.net().spec().residual_from;
    let pred = model.net().forward(&x).unwrap();
    // L1 arguments sit at least 0.2 from zero.
    let y = Tensor4::from_fn(pred.shape(), |i| {
        let p = pred.get(i);
        if (i[2] + i[3]) % 2 == 0 { p + 0.2 + 0.1 * ((i[3] as f64) * 0.7).sin().abs() } else { p - 0.25 }
    });
    let g = Tensor4::from_fn(pred.shape(), |_| rng.random_range(0.3..1.0));
    let (p2, cache) = model.net().forward_train(&x).unwrap();
    let (_, dl) = masked_l1(&p2, &y, &g).unwrap();
    let analytic = model.net().backward(&cache, &dl).unwrap();
    let loss = |p: &ParamSet| {
        let net = ConvNet::from_params(p.clone(), residual).unwrap();
        masked_l1(&net.forward(&x).unwrap(), &y, &g).unwrap().0
    };
    let r = finite_diff_check(model.params(), &analytic, loss, GradCheckOptions { samples: 100, seed: 5, ..Default::default() });
    let t = start.elapsed();
    let pass = r.max_rel_error <= 1e-4 && r.checked >= 100 && t <= Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "max rel error {:.3e} over {} parameters (worst {:?}); input draw {draws} clears ReLU kinks by {margin:e}; {}",
            r.max_rel_error,
            r.checked,
            r.worst,
            fmt_s(t)
        ),
    )
}

// 2 -----------------------------------------------------------------------

fn formula_oracles() -> Verdict {
    let mut fails = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        let ok = if want.is_infinite() { got == want } else { rel_close(got, want, 1e-5) };
        if !ok {
            fails.push(format!("{name}: got {got}, want {want}"));
        }
    };
    let p = CorrespondenceParams::default();

    // Occlusion: |wb + wf(p+wb)|^2 < a1 (|wb|^2 + |wf|^2) + a2.
    let n = 9;
    let occ = |bu: f64, fu: f64| {
        occlusion_consistency(&FlowField::constant(n, n, fu, 0.0), &FlowField::constant(n, n, bu, 0.0), &p)
            .unwrap()
            .get(4, 4)
    };
    let lhs_rhs = |bu: f64, fu: f64| ((bu + fu).powi(2), p.alpha1 * (bu * bu + fu * fu) + p.alpha2);
    for (bu, fu) in [(1.0, 1.0), (1.0, -1.0), (0.0, 0.0), (0.5, 0.7), (0.59, 0.59)] {
        let (l, r) = lhs_rhs(bu, fu);
        check(&format!("occlusion wb={bu} wf={fu}"), occ(bu, fu) as u8 as f64, (l >= r) as u8 as f64);
    }
    let (l, r) = lhs_rhs(1.0, 1.0);
    check("occlusion lhs", l, 4.0);
    check("occlusion rhs", r, 1.4128);

    // Lighting: constant difference 0.2 on the [0, 1] scale.
    let (h, w) = (9, 9);
    let a = Frame::filled(1, h, w, 151.0);
    let b = Frame::filled(1, h, w, 100.0);
    let none = OcclusionMask::empty(h, w);
    let l = lighting_variation(&a, &b, &none, &p).unwrap();
    check("lighting interior", l.get(4, 4), 0.2 / (1.0 + p.eps));
    check("lighting corner", l.get(0, 0), 0.2 * (9.0 / 25.0) / (9.0 / 25.0 + p.eps));
    // Left half of the 5x5 support occluded (columns x < 4).
    let half = OcclusionMask::from_fn(h, w, |_, x| x < 4);
    let l = lighting_variation(&a, &b, &half, &p).unwrap();
    check("lighting half occluded", l.get(4, 4), 0.2 * (15.0 / 25.0) / (15.0 / 25.0 + p.eps));
    let all = OcclusionMask::from_fn(h, w, |_, _| true);
    check("lighting fully occluded", lighting_variation(&a, &b, &all, &p).unwrap().get(4, 4), 0.0);

    // Xi and the weight map.
    check("xi(0.2)", xi(0.2, 5.0), (-1.0f64).exp());
    check("xi(0)", xi(0.0, 5.0), 1.0);
    let lmap = blindloom_core::correspondence::ScalarMap::filled(2, 2, 0.2);
    let g = weight_map(&OcclusionMask::from_fn(2, 2, |y, _| y == 0), &lmap, 5.0).unwrap();
    check("gamma occluded", g.get(0, 0), 0.0);
    check("gamma visible", g.get(1, 1), 0.367_879_441_171_442_3);

    // Hybrid flow loss on 2x2 frames: a = 1.0, warp(b) = 0.5 on [0, 1].
    let a = Frame::filled(1, 2, 2, 255.0);
    let b = Frame::filled(1, 2, 2, 127.5);
    let gt = FlowGroundTruth::new(FlowField::zeros(2, 2), OcclusionMask::empty(2, 2)).unwrap();
    check("hybrid 2x2", hybrid_flow_loss(&FlowField::zeros(2, 2), &gt, &a, &b, 0.06).unwrap(), 0.06 * 0.25);
    let off = FlowField::constant(2, 2, 0.3, 0.4);
    check("hybrid epe only", hybrid_flow_loss(&off, &gt, &a, &a, 0.0).unwrap(), 0.5);

    // PSNR.
    let base = Frame::from_fn(1, 8, 8, |_, y, x| (y * 8 + x) as f64);
    check("psnr mse 1", psnr(&base, &base.map(|v| v + 1.0)).unwrap(), 10.0 * (255.0f64 * 255.0).log10());
    check("psnr identical", psnr(&base, &base).unwrap(), f64::INFINITY);
    check(
        "psnr full range",
        psnr(&Frame::filled(1, 4, 4, 0.0), &Frame::filled(1, 4, 4, 255.0)).unwrap() + 1.0,
        1.0,
    );

    let detail = if fails.is_empty() { "all hand-computed values matched to 1e-5".to_string() } else { fails.join("; ") };
    verdict(fails.is_empty(), detail)
}

// 3 -----------------------------------------------------------------------

fn unit_maps(h: usize, w: usize) -> PairMaps {
    let occ = OcclusionMask::empty(h, w);
    let l = blindloom_core::correspondence::ScalarMap::filled(h, w, 0.0);
    let g = weight_map(&occ, &l, 5.0).unwrap();
    PairMaps {
        occ_cur: occ.clone(),
        occ_prev: occ,
        light_cur: l.clone(),
        light_prev: l,
        gamma_cur: g.clone(),
        gamma_prev: g,
    }
}

fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FlowField {
    FlowField::from_fn(h, w, |_, _| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
}

fn source_disjointness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (h, w) = (5, 6);
    let maps = unit_maps(h, w);
    let mut violations = 0;
    let mut mislabeled = 0;
    let calls = 10_000;
    for _ in 0..calls {
        let n = rng.random_range(2..9);
        let window = [1, 3, 5, 7][rng.random_range(0..4)];
        let i = rng.random_range(1..n);
        // Frame j is the constant 10 j + 5, so every pixel names its source.
        let seq = FrameSequence::new((0..n).map(|j| Frame::filled(1, h, w, 10.0 * j as f64 + 5.0)).collect()).unwrap();
        let (wf, wb) = (random_flow(&mut rng, h, w), random_flow(&mut rng, h, w));
        let (a, b) = build_twin_pairs(&seq, i, window, &wf, &wb, &maps).unwrap();
        for pair in [a, b] {
            let source = |f: &Frame| ((f.data()[0] - 5.0) / 10.0).round() as usize;
            let target = source(&pair.target);
            let inputs: Vec<usize> = pair.input.iter().map(source).collect();
            if inputs.contains(&target) || !pair.provenance_overlap().is_empty() {
                violations += 1;
            }
            if inputs != pair.input_provenance || target != pair.target_provenance {
                mislabeled += 1;
            }
        }
    }
    let mut naive_misses = 0;
    let mut naive_calls = 0;
    for n in 2..9 {
        for window in [3, 5, 7] {
            for i in 1..n {
                let still = Frame::from_fn(1, h, w, |_, y, x| (y * 17 + x * 5) as f64);
                let seq = FrameSequence::new(vec![still; n]).unwrap();
                let pair = build_naive_pair(&seq, i, window, &FlowField::zeros(h, w), &maps.gamma_cur).unwrap();
                naive_calls += 1;
                if pair.provenance_overlap().is_empty() {
                    naive_misses += 1;
                }
            }
        }
    }
    let t = start.elapsed();
    verdict(
        violations == 0 && mislabeled == 0 && naive_misses == 0 && t <= Duration::from_secs(60),
        format!(
            "{calls} twin calls: {violations} overlaps, {mislabeled} provenance mismatches; \
             naive overlapped in {}/{naive_calls} static cases; {}",
            naive_calls - naive_misses,
            fmt_s(t)
        ),
    )
}

// 4 -----------------------------------------------------------------------

fn noise_overfitting(init: &Path) -> Verdict {
    let start = Instant::now();
    let mut base = desk();
    base.init = Some(init.to_path_buf());
    base.fixture = FixtureKind::StaticTexture;
    base.noise = NoiseKind::Correlated { sigma: 25.0 };
    let mut rows = Vec::new();
    for seed in 0..10 {
        let run = |sampler: &str| {
            let mut c = base.clone();
            c.seed = seed;
            c.set("sampler", sampler).unwrap();
            run_experiment(&c).expect("run")
        };
        let (twin, naive) = (run("twin"), run("naive"));
        rows.push((twin.mean_psnr_noisy, twin.mean_psnr, naive.mean_psnr));
        println!(
            "    seed {seed}: noisy {:.2} dB, twin {:.2} dB, naive {:.2} dB",
            twin.mean_psnr_noisy, twin.mean_psnr, naive.mean_psnr
        );
    }
    let naive_ok = rows.iter().filter(|r| (r.2 - r.0).abs() <= 1.5).count();
    let twin_ok = rows.iter().filter(|r| r.1 - r.0 >= 2.0).count();
    let wins = rows.iter().filter(|r| r.1 > r.2).count();
    let worst_gap = rows.iter().map(|r| (r.2 - r.0).abs()).fold(0.0, f64::max);
    let least_gain = rows.iter().map(|r| r.1 - r.0).fold(f64::INFINITY, f64::min);
    let t = start.elapsed();
    verdict(
        naive_ok == rows.len() && twin_ok == rows.len() && wins >= 9 && t <= Duration::from_secs(15 * 60),
        format!(
            "naive within 1.5 dB of noisy on {naive_ok}/10 seeds (worst {worst_gap:.2}); \
             twin >= noisy + 2 dB on {twin_ok}/10 (least {least_gain:.2}); twin > naive on {wins}/10; {}",
            fmt_s(t)
        ),
    )
}

// 5 -----------------------------------------------------------------------

fn mean_f1(fx: &blindloom_core::Fixture, mode: OcclusionMode) -> f64 {
    let cfg = CorrespondenceConfig { occlusion: mode, ..Default::default() };
    let mut total = 0.0;
    for t in 0..fx.clean.len() - 1 {
        let (wf, wb) = flow_pair_frames(fx.clean.frame(t), fx.clean.frame(t + 1), &desk().flow_params()).unwrap();
        let (occ_cur, occ_prev) = occlusion_pair(&wf, &wb, &cfg).unwrap();
        total += occ_cur.f1(&fx.backward[t].occlusion).unwrap() + occ_prev.f1(&fx.forward[t].occlusion).unwrap();
    }
    total / (2 * (fx.clean.len() - 1)) as f64
}

fn occlusion_ablation(init: &Path) -> Verdict {
    let start = Instant::now();
    let (mut f1c, mut f1d, mut pc, mut pd) = (vec![], vec![], vec![], vec![]);
    for seed in 0..5 {
        let fx = make_fixture(FixtureSpec::new(FixtureKind::OccluderSquare, 64, 10, seed)).unwrap();
        f1c.push(mean_f1(&fx, OcclusionMode::Consistency));
        f1d.push(mean_f1(&fx, OcclusionMode::Divergence));
        let run = |mode: OcclusionMode| {
            let mut c = desk();
            c.init = Some(init.to_path_buf());
            c.seed = seed;
            c.fixture = FixtureKind::OccluderSquare;
            c.occlusion = mode;
            run_experiment(&c).expect("run").mean_psnr
        };
        pc.push(run(OcclusionMode::Consistency));
        pd.push(run(OcclusionMode::Divergence));
        println!(
            "    seed {seed}: F1 consistency {:.3} divergence {:.3}; PSNR consistency {:.2} divergence {:.2}",
            f1c[seed as usize], f1d[seed as usize], pc[seed as usize], pd[seed as usize]
        );
    }
    let (mf1c, mf1d, mpc, mpd) = (median(&f1c), median(&f1d), median(&pc), median(&pd));
    let t = start.elapsed();
    verdict(
        mf1c >= mf1d && mpc >= mpd && t <= Duration::from_secs(30 * 60),
        format!(
            "median F1 consistency {mf1c:.3} vs divergence {mf1d:.3}; median PSNR {mpc:.2} vs {mpd:.2} dB; {}",
            fmt_s(t)
        ),
    )
}

// 6 -----------------------------------------------------------------------

fn online_denoising(init: &Path) -> Verdict {
    let start = Instant::now();
    let model = DenoiserModel::load(init).unwrap();
    let params = desk().flow_params();
    let (mut clean_epe, mut raw_epe) = (vec![], vec![]);
    for seed in 0..10 {
        let fx = make_fixture(FixtureSpec::new(FixtureKind::TranslatingTexture, 64, 6, 100 + seed)).unwrap();
        let noisy = apply_noise(&NoiseModel::new(NoiseKind::Awgn { sigma: 40.0 }, seed).unwrap(), &fx.clean).unwrap();
        let i = 3;
        let (prev, cur) = (noisy.window(i - 1, model.window()), noisy.window(i, model.window()));
        let gt = &fx.forward[i - 1];
        let epe = |flow: &FlowField| {
            let e = flow.endpoint_errors(&gt.flow).unwrap();
            let vis: Vec<f64> = e.iter().zip(gt.occlusion.data()).filter(|(_, &o)| !o).map(|(e, _)| *e).collect();
            vis.iter().sum::<f64>() / vis.len() as f64
        };
        let (wf_on, _) = flow_pair(&model, &prev, &cur, true, &params).unwrap();
        let (wf_off, _) = flow_pair(&model, &prev, &cur, false, &params).unwrap();
        clean_epe.push(epe(&wf_on));
        raw_epe.push(epe(&wf_off));
    }
    let (m_on, m_off) = (median(&clean_epe), median(&raw_epe));
    let t = start.elapsed();
    verdict(
        m_on <= m_off && t <= Duration::from_secs(5 * 60),
        format!("median EPE on denoised frames {m_on:.4} px vs raw noisy {m_off:.4} px; {}", fmt_s(t)),
    )
}

// 7 -----------------------------------------------------------------------

fn dae_gate(init: &Path) -> Verdict {
    let start = Instant::now();
    let rule_ok = decide(1.0, 0.4).choice == ModelChoice::Finetuned && decide(1.0, 0.6).choice == ModelChoice::Initial;
    let mut c = desk();
    c.init = Some(init.to_path_buf());
    c.noise = NoiseKind::Awgn { sigma: 20.0 };
    c.dae = true;
    c.seed = 7;
    let report = run_experiment(&c).expect("run");
    let d = report.dae.expect("dae decision");
    let t = start.elapsed();
    verdict(
        rule_ok && d.choice == ModelChoice::Initial && t <= Duration::from_secs(10 * 60),
        format!("threshold cases {}; AWGN20 end to end: {d}; {}", if rule_ok { "exact" } else { "WRONG" }, fmt_s(t)),
    )
}

// 8 -----------------------------------------------------------------------

/// Fits a single scalar under L1 with Adam to `c + noise` and returns it.
fn fit_l1(c: f64, noise: impl Fn(&mut ChaCha8Rng) -> f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    params.insert("b", Tensor4::zeros([1, 1, 1, 1]));
    let n = 512;
    let steps = 3000;
    for step in 0..steps {
        let b = params.get("b").unwrap().data()[0];
        let pred = Tensor4::filled([1, 1, 1, n], b);
        let target = Tensor4::from_fn([1, 1, 1, n], |_| c + noise(&mut rng));
        let (_, g) = masked_l1(&pred, &target, &Tensor4::filled([1, 1, 1, n], 1.0)).unwrap();
        let mut grads = Grads::new();
        grads.insert("b", Tensor4::filled([1, 1, 1, 1], g.data().iter().sum()));
        let lr = if step < steps / 2 { 2e-2 } else { 2e-3 };
        params.adam_step(&grads, &AdamConfig::with_lr(lr)).unwrap();
    }
    params.get("b").unwrap().data()[0]
}

fn l1_median() -> Verdict {
    let start = Instant::now();
    let c = 0.6;
    // Exponential(1) shifted by ln 2: median 0, mean 1 - ln 2.
    let skew = |r: &mut ChaCha8Rng| -(1.0 - r.random::<f64>()).ln() - std::f64::consts::LN_2;
    let fitted = fit_l1(c, skew, 1);
    // Zero mean, median -0.25: 0.75 at rate 1/4, -0.25 otherwise.
    let lopsided = |r: &mut ChaCha8Rng| if r.random::<f64>() < 0.25 { 0.75 } else { -0.25 };
    let fitted2 = fit_l1(c, lopsided, 2);
    let t = start.elapsed();
    let pass = (fitted - c).abs() <= 0.02 && (fitted2 - (c - 0.25)).abs() <= 0.02 && (fitted2 - c).abs() > 0.2;
    verdict(
        pass,
        format!(
            "skewed zero-median noise: fit {fitted:.4} vs median {c} (mean {:.4}); zero-mean noise: fit {fitted2:.4} vs median {:.2}; {}",
            c + 1.0 - std::f64::consts::LN_2,
            c - 0.25,
            fmt_s(t)
        ),
    )
}

// 9 -----------------------------------------------------------------------

fn determinism() -> Verdict {
    let start = Instant::now();
    let mut base = ExperimentConfig::default();
    base.apply_overrides(&[
        "size=32", "frames=5", "window=3", "hidden=8", "layers=3", "batches=4", "batch_size=4", "crop=16",
        "pretrain_steps=10", "pretrain_crop=16", "corpus_size=4", "corpus_image=32", "dae=on", "dae_steps=10",
        "fixture=occluder-square",
    ])
    .unwrap();
    let arms: Vec<Arm> = ["twin:", "naive:sampler=naive", "div:occlusion=divergence", "nolight:lighting=off", "offline:online_denoise=off"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let csv = || ablation_csv(&ablate(&base, &arms, &[4, 5]).expect("ablate")).unwrap();
    let (a, b) = (csv(), csv());
    let t = start.elapsed();
    verdict(a == b, format!("two ablate runs of {} rows: {} bytes each, identical: {}; {}", arms.len() * 2, a.len(), a == b, fmt_s(t)))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test` passes harness flags such as `--list`; only listing is honored.
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let dir = tempfile::tempdir().expect("tempdir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("1 gradient integrity", Box::new(gradient_integrity)),
        ("2 formula oracles", Box::new(formula_oracles)),
        ("3 source disjointness", Box::new(source_disjointness)),
        ("4 noise overfitting", Box::new(|| noise_overfitting(&shared_init(dir.path(), BRIEFLY_PRETRAINED)))),
        ("5 occlusion ablation", Box::new(|| occlusion_ablation(&shared_init(dir.path(), WELL_PRETRAINED)))),
        ("6 online denoising", Box::new(|| online_denoising(&shared_init(dir.path(), WELL_PRETRAINED)))),
        ("7 dae gate", Box::new(|| dae_gate(&shared_init(dir.path(), WELL_PRETRAINED)))),
        ("8 l1 median", Box::new(l1_median)),
        ("9 determinism", Box::new(determinism)),
    ];
    let only: Vec<&String> = args.iter().skip(1).filter(|a| !a.starts_with('-')).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let (mut run, mut failed) = (0, 0);
    for (name, f) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let v = f();
        println!("{} [{name}] {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        run += 1;
        failed += usize::from(!v.pass);
    }
    println!("{} of {run} criteria passed", run - failed);
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
