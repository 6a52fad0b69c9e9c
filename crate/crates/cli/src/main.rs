use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blindloom_core::correspondence::{lighting_variation, occlusion_pair, weight_map, LightingMap};
use blindloom_core::dae::{select_model, train_dae, DaeModel};
use blindloom_core::denoiser::{denoise_sequence, finetune, pretrain, DenoiserModel, FinetuneConfig};
use blindloom_core::experiment::{
    ablate, ablation_csv, curves_text, default_arms, emit_report, run_experiment, Arm, ExperimentConfig,
};
use blindloom_core::fixtures::make_fixture;
use blindloom_core::flow::{estimate_flow, warp_inverse, FlowDirection, FlowField};
use blindloom_core::frame_io::{load_sequence, read_frame, read_tensor, save_sequence, write_tensor, FrameSequence, FRAME_PATTERN};
use blindloom_core::metrics::{format_db, psnr, ssim};
use blindloom_core::noise::{apply_noise, NoiseModel};
use blindloom_core::twin_sampler::derive_seed;
use blindloom_core::{Error, FixtureSpec, Frame};

#[derive(Parser)]
#[command(name = "blindloom", version, about = "Self-supervised blind video denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, flags: &[(&str, Option<String>)]) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.set)?;
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

fn some<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

#[derive(Subcommand)]
enum Command {
    /// Add synthetic noise to a frame directory.
    Noise {
        /// Noise model, `name:param[:param]` (awgn, mg, cg, ir, jpeg).
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = FRAME_PATTERN)]
        pattern: String,
    },
    /// Estimate the flow from frame `a` to frame `b`.
    Flow {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Occlusion masks, lighting maps and weights from a flow pair.
    Corr {
        #[arg(long)]
        wf: PathBuf,
        #[arg(long)]
        wb: PathBuf,
        /// Clean estimate of frame i-1; needed for lighting.
        #[arg(long)]
        prev: Option<PathBuf>,
        /// Clean estimate of frame i; needed for lighting.
        #[arg(long)]
        cur: Option<PathBuf>,
        /// Comma separated subset of occ,light,gamma.
        #[arg(long, default_value = "occ,light,gamma")]
        emit: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pretrain a denoiser with AWGN, or with --dae the selection autoencoder.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        /// Clean still images; a procedural texture corpus when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        dae: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fine-tune a denoiser on a noisy sequence.
    Train {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        batches: Option<usize>,
        /// Where to write the loss curve.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Denoise a sequence with a checkpoint.
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = FRAME_PATTERN)]
        pattern: String,
    },
    /// Keep the fine-tuned output only if the DAE error halves.
    Select {
        #[arg(long)]
        dae: PathBuf,
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value = FRAME_PATTERN)]
        pattern: String,
    },
    /// Run the full pipeline and write a report, or score `--test` against `--ref`.
    Eval {
        #[arg(long, conflicts_with = "out")]
        test: Option<PathBuf>,
        #[arg(long = "ref", requires = "test")]
        reference: Option<PathBuf>,
        #[arg(long, required_unless_present = "test")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run a grid of arms over seeds and write ablation.csv.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// `name:key=value,key=value`; repeatable. The default arms span
        /// sampler, occlusion, lighting and online denoising.
        #[arg(long = "arm")]
        arms: Vec<String>,
        /// Comma separated seeds.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a procedural fixture with its ground truth.
    Fixture {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("blindloom: {e}");
            match e {
                Error::Config(_) | Error::InvalidParam(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn mkdir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

fn read_flow(path: &Path, direction: FlowDirection) -> Result<FlowField, Error> {
    Ok(FlowField::from_tensor(&read_tensor(path)?)?.with_direction(direction))
}

fn corpus(dir: &Option<PathBuf>, cfg: &ExperimentConfig, channels: usize) -> Result<Vec<Frame>, Error> {
    match dir {
        Some(d) => Ok(load_sequence(d, &cfg.pattern)?.into_frames()),
        None => Ok(cfg.corpus(channels)),
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Noise { model, seed, input, out, pattern } => {
            let model = NoiseModel::new(model.parse()?, seed)?;
            let seq = load_sequence(&input, &pattern)?;
            save_sequence(&apply_noise(&model, &seq)?, &out)?;
        }
        Command::Flow { a, b, out, cfg } => {
            let cfg = cfg.load(&[])?;
            let flow = estimate_flow(&read_frame(a)?, &read_frame(b)?, &cfg.flow_params())?;
            write_tensor(out, &flow.to_tensor())?;
        }
        Command::Corr { wf, wb, prev, cur, emit, out, cfg } => {
            let cfg = cfg.load(&[])?;
            let corr = cfg.correspondence();
            corr.params.validate()?;
            let wf = read_flow(&wf, FlowDirection::Forward)?;
            let wb = read_flow(&wb, FlowDirection::Backward)?;
            let wanted: Vec<&str> = emit.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if let Some(bad) = wanted.iter().find(|s| !["occ", "light", "gamma"].contains(s)) {
                return Err(Error::Config(format!("--emit accepts occ,light,gamma, got {bad:?}")));
            }
            let (occ_cur, occ_prev) = occlusion_pair(&wf, &wb, &corr)?;
            let (light_cur, light_prev) = match (&prev, &cur) {
                (Some(p), Some(c)) if corr.lighting => {
                    let (xp, xc) = (read_frame(p)?, read_frame(c)?);
                    let (xc_w, _) = warp_inverse(&xp, &wb)?;
                    let (xp_w, _) = warp_inverse(&xc, &wf)?;
                    (
                        lighting_variation(&xc, &xc_w, &occ_cur, &corr.params)?,
                        lighting_variation(&xp, &xp_w, &occ_prev, &corr.params)?,
                    )
                }
                _ if corr.lighting && wanted.iter().any(|w| *w != "occ") => {
                    return Err(Error::Config("lighting needs --prev and --cur (or lighting=off)".into()));
                }
                _ => {
                    let (h, w) = (wf.height(), wf.width());
                    (LightingMap::filled(h, w, 0.0), LightingMap::filled(h, w, 0.0))
                }
            };
            mkdir(&out)?;
            let a3 = corr.params.alpha3;
            for what in wanted {
                let (cur_t, prev_t) = match what {
                    "occ" => (occ_cur.to_tensor(), occ_prev.to_tensor()),
                    "light" => (light_cur.to_tensor(), light_prev.to_tensor()),
                    _ => (
                        weight_map(&occ_cur, &light_cur, a3)?.to_tensor(),
                        weight_map(&occ_prev, &light_prev, a3)?.to_tensor(),
                    ),
                };
                write_tensor(out.join(format!("{what}_cur.bltt")), &cur_t)?;
                write_tensor(out.join(format!("{what}_prev.bltt")), &prev_t)?;
            }
        }
        Command::Pretrain { out, corpus: dir, dae, steps, cfg } => {
            let key = if dae { "dae_steps" } else { "pretrain_steps" };
            let cfg = cfg.load(&[(key, some(&steps))])?;
            let images = corpus(&dir, &cfg, 1)?;
            let channels = images.first().map_or(1, Frame::channels);
            if dae {
                let (model, losses) = train_dae(&images, &cfg.dae_config(channels))?;
                model.save(&out)?;
                println!("dae steps={} final_loss={:.6}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
            } else {
                let mut model = DenoiserModel::new(cfg.arch(channels), derive_seed(&[cfg.seed, 6]))?;
                let losses = pretrain(&mut model, &images, &cfg.pretrain_config())?;
                model.save(&out)?;
                println!("pretrain steps={} final_loss={:.6}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
            }
        }
        Command::Train { seq, init, out, batches, curves, cfg } => {
            let cfg = cfg.load(&[
                ("batches", some(&batches)),
                ("sequence", Some(seq.display().to_string())),
                ("init", Some(init.display().to_string())),
            ])?;
            let noisy = load_sequence(&seq, &cfg.pattern)?;
            let initial = DenoiserModel::load(&init)?;
            let ft = FinetuneConfig {
                diagnostic_path: Some(out.with_extension("diverged.bltc")),
                ..cfg.finetune_config()
            };
            let outcome = finetune(&initial, &noisy, &ft)?;
            outcome.model.save(&out)?;
            if let Some(c) = curves {
                let report = blindloom_core::RunReport {
                    losses: outcome.losses.clone(),
                    ..Default::default()
                };
                write_text(&c, &curves_text(&report))?;
            }
            println!("train batches={} final_loss={:.6}", outcome.losses.len(), outcome.losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Denoise { model, input, out, pattern } => {
            let model = DenoiserModel::load(model)?;
            let seq = load_sequence(&input, &pattern)?;
            save_sequence(&denoise_sequence(&model, &seq)?, &out)?;
        }
        Command::Select { dae, before, after, pattern } => {
            let dae = DaeModel::load(dae)?;
            let before = load_sequence(&before, &pattern)?;
            let after = load_sequence(&after, &pattern)?;
            let (_, decision) = select_model(&dae, &before, &after, &(), &())?;
            println!("{decision}");
        }
        Command::Eval { test, reference, out, seed, cfg } => {
            if let (Some(test), Some(reference)) = (&test, &reference) {
                let cfg = cfg.load(&[])?;
                return score(&load_sequence(test, &cfg.pattern)?, &load_sequence(reference, &cfg.pattern)?);
            }
            if test.is_some() {
                return Err(Error::Config("--test needs --ref".into()));
            }
            let out = out.ok_or_else(|| Error::Config("eval needs --out".into()))?;
            let cfg = cfg.load(&[("seed", some(&seed))])?;
            match run_experiment(&cfg) {
                Ok(report) => {
                    emit_report(&report, &out)?;
                    println!(
                        "mean_psnr={} mean_psnr_noisy={} mean_ssim={:.4}",
                        format_db(report.mean_psnr),
                        format_db(report.mean_psnr_noisy),
                        report.mean_ssim
                    );
                }
                Err(e) => {
                    let _ = emit_report(&e.partial, &out);
                    eprintln!("blindloom: aborted at stage {}", e.stage);
                    return Err(e.source);
                }
            }
        }
        Command::Ablate { out, arms, seeds, cfg } => {
            let base = cfg.load(&[])?;
            let arms: Vec<Arm> = if arms.is_empty() {
                default_arms()
            } else {
                arms.iter().map(|a| a.parse()).collect::<Result<_, _>>()?
            };
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad seed {s:?}"))))
                .collect::<Result<_, _>>()?;
            let rows = ablate(&base, &arms, &seeds).map_err(|e| {
                eprintln!("blindloom: aborted at stage {}", e.stage);
                e.source
            })?;
            write_text(&out.join("ablation.csv"), &ablation_csv(&rows)?)?;
        }
        Command::Fixture { kind, size, frames, seed, out } => {
            let fx = make_fixture(FixtureSpec::new(kind.parse()?, size, frames, seed))?;
            save_sequence(&fx.clean, &out)?;
            let gt = out.join("gt");
            mkdir(&gt)?;
            for (t, (f, b)) in fx.forward.iter().zip(&fx.backward).enumerate() {
                write_tensor(gt.join(format!("forward_{t:05}.bltt")), &f.flow.to_tensor())?;
                write_tensor(gt.join(format!("forward_occ_{t:05}.bltt")), &f.occlusion.to_tensor())?;
                write_tensor(gt.join(format!("backward_{t:05}.bltt")), &b.flow.to_tensor())?;
                write_tensor(gt.join(format!("backward_occ_{t:05}.bltt")), &b.occlusion.to_tensor())?;
            }
        }
    }
    Ok(())
}

/// Per-frame PSNR/SSIM table of `test` against `reference`.
fn score(test: &FrameSequence, reference: &FrameSequence) -> Result<(), Error> {
    if test.len() != reference.len() {
        return Err(Error::Config(format!("{} test frames vs {} reference frames", test.len(), reference.len())));
    }
    println!("frame,psnr,ssim");
    let (mut sp, mut ss) = (0.0, 0.0);
    for (i, (t, r)) in test.frames().iter().zip(reference.frames()).enumerate() {
        let (p, s) = (psnr(t, r)?, ssim(t, r)?);
        println!("{i},{},{s:.6}", format_db(p));
        sp += p;
        ss += s;
    }
    let n = test.len() as f64;
    println!("mean,{},{:.6}", format_db(sp / n), ss / n);
    Ok(())
}
