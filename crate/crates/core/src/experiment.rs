//! End-to-end experiment runner: configuration, the full pipeline from clean
//! frames to metrics, reports, and ablation grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::correspondence::{CorrespondenceConfig, CorrespondenceParams, OcclusionMode};
use crate::dae::{reconstruction_error, train_dae, decide, DaeConfig, DaeDecision, DaeModel, ModelChoice};
use crate::denoiser::{denoise_sequence, finetune, pretrain, DenoiserArch, DenoiserModel, FinetuneConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::fixtures::{make_fixture, texture_corpus, FixtureKind, FixtureSpec};
use crate::flow::{FlowParams, RefineParams};
use crate::frame_io::{load_sequence, FrameSequence, FRAME_PATTERN};
use crate::metrics::{format_db, psnr, ssim};
use crate::noise::{apply_noise, NoiseKind, NoiseModel};
use crate::twin_sampler::{derive_seed, SamplerConfig, SamplerMode};

/// Every run setting. Text form is flat `key=value` lines with `#`
/// comments; see [`ExperimentConfig::KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Directory of clean frames; a procedural fixture is used when unset.
    pub sequence: Option<PathBuf>,
    pub pattern: String,
    pub fixture: FixtureKind,
    pub size: usize,
    pub frames: usize,
    pub noise: NoiseKind,

    pub sampler: SamplerMode,
    pub occlusion: OcclusionMode,
    pub lighting: bool,
    pub online_denoise: bool,
    pub refine_flow: bool,
    pub dae: bool,

    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub lambda: f64,
    pub lambda_dev: f64,
    pub refine_steps: usize,
    pub divergence_threshold: f64,

    pub window: usize,
    pub hidden: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub batches: usize,
    pub lr: f64,
    pub flow_refresh: usize,
    pub flow_levels: usize,
    pub flow_smoothness: f64,
    pub flow_warps: usize,
    pub flow_iterations: usize,
    pub flow_edge_scale: f64,

    /// Initial checkpoint; pretraining on a texture corpus when unset.
    pub init: Option<PathBuf>,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub pretrain_crop: usize,
    pub corpus_size: usize,
    pub corpus_image: usize,

    pub dae_sigma: f64,
    pub dae_steps: usize,
    pub dae_lr: f64,
    pub dae_hidden: usize,
    pub dae_layers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sequence: None,
            pattern: FRAME_PATTERN.into(),
            fixture: FixtureKind::StaticTexture,
            size: 64,
            frames: 10,
            noise: NoiseKind::Multiplicative { sigma: 0.3 },
            sampler: SamplerMode::Twin,
            occlusion: OcclusionMode::Consistency,
            lighting: true,
            online_denoise: true,
            refine_flow: false,
            dae: false,
            alpha1: 0.0064,
            alpha2: 1.4,
            alpha3: 5.0,
            lambda: 0.06,
            lambda_dev: RefineParams::default().lambda_dev,
            refine_steps: RefineParams::default().steps,
            divergence_threshold: 0.3,
            window: 5,
            hidden: 32,
            layers: 6,
            batch_size: 32,
            crop: 96,
            batches: 100,
            lr: 2e-4,
            flow_refresh: 1,
            flow_levels: FlowParams::default().levels,
            flow_smoothness: FlowParams::default().smoothness,
            flow_warps: FlowParams::default().warps,
            flow_iterations: FlowParams::default().iterations,
            flow_edge_scale: FlowParams::default().edge_scale,
            init: None,
            pretrain_steps: 300,
            pretrain_lr: 1e-3,
            pretrain_batch: 8,
            pretrain_crop: 32,
            corpus_size: 16,
            corpus_image: 64,
            dae_sigma: 5.0,
            dae_steps: 200,
            dae_lr: 1e-3,
            dae_hidden: 16,
            dae_layers: 3,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on|off, got {v:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn onoff(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed", "sequence", "pattern", "fixture", "size", "frames", "noise", "sampler", "occlusion", "lighting",
        "online_denoise", "refine_flow", "dae", "alpha1", "alpha2", "alpha3", "lambda", "lambda_dev",
        "refine_steps", "divergence_threshold", "window", "hidden", "layers", "batch_size", "crop", "batches",
        "lr", "flow_refresh", "flow_levels", "flow_smoothness", "flow_warps", "flow_iterations", "flow_edge_scale",
        "init",
        "pretrain_steps", "pretrain_lr", "pretrain_batch", "pretrain_crop", "corpus_size", "corpus_image",
        "dae_sigma", "dae_steps", "dae_lr", "dae_hidden", "dae_layers",
    ];

    /// Parses `key=value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override must be key=value, got {o:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "sequence" => self.sequence = opt_path(v),
            "pattern" => self.pattern = v.into(),
            "fixture" => self.fixture = v.parse()?,
            "size" => self.size = parse_num(key, v)?,
            "frames" => self.frames = parse_num(key, v)?,
            "noise" => self.noise = v.parse()?,
            "sampler" => self.sampler = v.parse()?,
            "occlusion" => self.occlusion = v.parse()?,
            "lighting" => self.lighting = parse_bool(key, v)?,
            "online_denoise" => self.online_denoise = parse_bool(key, v)?,
            "refine_flow" => self.refine_flow = parse_bool(key, v)?,
            "dae" => self.dae = parse_bool(key, v)?,
            "alpha1" => self.alpha1 = parse_num(key, v)?,
            "alpha2" => self.alpha2 = parse_num(key, v)?,
            "alpha3" => self.alpha3 = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "lambda_dev" => self.lambda_dev = parse_num(key, v)?,
            "refine_steps" => self.refine_steps = parse_num(key, v)?,
            "divergence_threshold" => self.divergence_threshold = parse_num(key, v)?,
            "window" => self.window = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "layers" => self.layers = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "crop" => self.crop = parse_num(key, v)?,
            "batches" => self.batches = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "flow_refresh" => self.flow_refresh = parse_num(key, v)?,
            "flow_levels" => self.flow_levels = parse_num(key, v)?,
            "flow_smoothness" => self.flow_smoothness = parse_num(key, v)?,
            "flow_warps" => self.flow_warps = parse_num(key, v)?,
            "flow_iterations" => self.flow_iterations = parse_num(key, v)?,
            "flow_edge_scale" => self.flow_edge_scale = parse_num(key, v)?,
            "init" => self.init = opt_path(v),
            "pretrain_steps" => self.pretrain_steps = parse_num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse_num(key, v)?,
            "pretrain_crop" => self.pretrain_crop = parse_num(key, v)?,
            "corpus_size" => self.corpus_size = parse_num(key, v)?,
            "corpus_image" => self.corpus_image = parse_num(key, v)?,
            "dae_sigma" => self.dae_sigma = parse_num(key, v)?,
            "dae_steps" => self.dae_steps = parse_num(key, v)?,
            "dae_lr" => self.dae_lr = parse_num(key, v)?,
            "dae_hidden" => self.dae_hidden = parse_num(key, v)?,
            "dae_layers" => self.dae_layers = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let vals: Vec<String> = vec![
            self.seed.to_string(),
            path(&self.sequence),
            self.pattern.clone(),
            self.fixture.to_string(),
            self.size.to_string(),
            self.frames.to_string(),
            self.noise.to_string(),
            self.sampler.to_string(),
            self.occlusion.to_string(),
            onoff(self.lighting).into(),
            onoff(self.online_denoise).into(),
            onoff(self.refine_flow).into(),
            onoff(self.dae).into(),
            self.alpha1.to_string(),
            self.alpha2.to_string(),
            self.alpha3.to_string(),
            self.lambda.to_string(),
            self.lambda_dev.to_string(),
            self.refine_steps.to_string(),
            self.divergence_threshold.to_string(),
            self.window.to_string(),
            self.hidden.to_string(),
            self.layers.to_string(),
            self.batch_size.to_string(),
            self.crop.to_string(),
            self.batches.to_string(),
            self.lr.to_string(),
            self.flow_refresh.to_string(),
            self.flow_levels.to_string(),
            self.flow_smoothness.to_string(),
            self.flow_warps.to_string(),
            self.flow_iterations.to_string(),
            self.flow_edge_scale.to_string(),
            path(&self.init),
            self.pretrain_steps.to_string(),
            self.pretrain_lr.to_string(),
            self.pretrain_batch.to_string(),
            self.pretrain_crop.to_string(),
            self.corpus_size.to_string(),
            self.corpus_image.to_string(),
            self.dae_sigma.to_string(),
            self.dae_steps.to_string(),
            self.dae_lr.to_string(),
            self.dae_hidden.to_string(),
            self.dae_layers.to_string(),
        ];
        Self::KEYS.iter().zip(vals).map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            levels: self.flow_levels,
            smoothness: self.flow_smoothness,
            warps: self.flow_warps,
            iterations: self.flow_iterations,
            edge_scale: self.flow_edge_scale,
        }
    }

    pub fn correspondence(&self) -> CorrespondenceConfig {
        CorrespondenceConfig {
            params: CorrespondenceParams {
                alpha1: self.alpha1,
                alpha2: self.alpha2,
                alpha3: self.alpha3,
                divergence_threshold: self.divergence_threshold,
                ..Default::default()
            },
            occlusion: self.occlusion,
            lighting: self.lighting,
            online: self.online_denoise,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            window: self.window,
            batch_size: self.batch_size,
            crop: self.crop,
            mode: self.sampler,
            corr: self.correspondence(),
            flow: self.flow_params(),
            refine: self.refine_flow.then_some(RefineParams {
                steps: self.refine_steps,
                lambda: self.lambda,
                lambda_dev: self.lambda_dev,
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            sampler: self.sampler_config(),
            batches: self.batches,
            lr: self.lr,
            seed: derive_seed(&[self.seed, 3]),
            flow_refresh: self.flow_refresh,
            diagnostic_path: None,
        }
    }

    pub fn arch(&self, channels: usize) -> DenoiserArch {
        DenoiserArch {
            window: self.window,
            channels,
            hidden: self.hidden,
            layers: self.layers,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            sigma: 20.0,
            steps: self.pretrain_steps,
            lr: self.pretrain_lr,
            batch_size: self.pretrain_batch,
            crop: self.pretrain_crop,
            seed: derive_seed(&[self.seed, 4]),
        }
    }

    pub fn dae_config(&self, channels: usize) -> DaeConfig {
        DaeConfig {
            channels,
            hidden: self.dae_hidden,
            layers: self.dae_layers,
            sigma: self.dae_sigma,
            steps: self.dae_steps,
            lr: self.dae_lr,
            batch_size: self.pretrain_batch,
            crop: self.pretrain_crop,
            seed: derive_seed(&[self.seed, 5]),
        }
    }

    /// Seed of the noise realization.
    pub fn noise_seed(&self) -> u64 {
        derive_seed(&[self.seed, 1])
    }

    /// Clean still images used for pretraining and the DAE.
    pub fn corpus(&self, channels: usize) -> Vec<crate::frame_io::Frame> {
        texture_corpus(self.corpus_size, self.corpus_image, channels, derive_seed(&[self.seed, 2]))
    }

    pub fn clean_sequence(&self) -> Result<FrameSequence> {
        match &self.sequence {
            Some(dir) => load_sequence(dir, &self.pattern),
            None => Ok(make_fixture(FixtureSpec::new(self.fixture, self.size, self.frames, self.seed))?.clean),
        }
    }

    /// Settings that determine the initial model, for sharing it across runs.
    fn init_key(&self, channels: usize) -> String {
        format!(
            "{:?}|{:?}|{:?}|{}|{}|{}",
            self.init,
            self.arch(channels),
            self.pretrain_config(),
            self.corpus_size,
            self.corpus_image,
            self.seed
        )
    }

    fn dae_key(&self, channels: usize) -> String {
        format!("{:?}|{}|{}|{}", self.dae_config(channels), self.corpus_size, self.corpus_image, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr_noisy: f64,
    pub psnr_initial: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub config: String,
    pub seed: u64,
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr_noisy: f64,
    pub mean_psnr_initial: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Mean masked L1 loss per fine-tuning mini-batch.
    pub losses: Vec<f64>,
    pub dae: Option<DaeDecision>,
    pub wall_clock_secs: f64,
}

fn column_mean(frames: &[FrameMetrics], f: impl Fn(&FrameMetrics) -> f64) -> f64 {
    if frames.is_empty() {
        return f64::NAN;
    }
    frames.iter().map(f).sum::<f64>() / frames.len() as f64
}

impl RunReport {
    fn finish_means(&mut self) {
        self.mean_psnr_noisy = column_mean(&self.frames, |m| m.psnr_noisy);
        self.mean_psnr_initial = column_mean(&self.frames, |m| m.psnr_initial);
        self.mean_psnr = column_mean(&self.frames, |m| m.psnr);
        self.mean_ssim = column_mean(&self.frames, |m| m.ssim);
    }
}

/// A failed run: the stage that failed, the cause, and what was measured so far.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct ExperimentError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
    pub partial: Box<RunReport>,
}

/// Models shared between runs with identical initialization settings.
#[derive(Default)]
pub struct ModelCache {
    init: BTreeMap<String, DenoiserModel>,
    dae: BTreeMap<String, DaeModel>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }
}

/// The initial model: the configured checkpoint, or a fresh model
/// pretrained with AWGN-20 on the texture corpus.
pub fn initial_model(cfg: &ExperimentConfig, channels: usize) -> Result<DenoiserModel> {
    let model = match &cfg.init {
        Some(p) => DenoiserModel::load(p)?,
        None => {
            let mut m = DenoiserModel::new(cfg.arch(channels), derive_seed(&[cfg.seed, 6]))?;
            pretrain(&mut m, &cfg.corpus(channels), &cfg.pretrain_config())?;
            m.log.clear();
            m
        }
    };
    if model.arch().window != cfg.window || model.arch().channels != channels {
        return Err(Error::Config(format!(
            "initial model has window {} / {} channels, run needs {} / {channels}",
            model.arch().window,
            model.arch().channels,
            cfg.window
        )));
    }
    Ok(model)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunReport, ExperimentError> {
    run_experiment_cached(cfg, &mut ModelCache::new())
}

/// [`run_experiment`] reusing initial models and DAEs from `cache`.
pub fn run_experiment_cached(cfg: &ExperimentConfig, cache: &mut ModelCache) -> std::result::Result<RunReport, ExperimentError> {
    let start = Instant::now();
    let mut report = RunReport {
        config: cfg.to_text(),
        seed: cfg.seed,
        ..Default::default()
    };
    macro_rules! stage {
        ($name:literal, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(source) => {
                    report.wall_clock_secs = start.elapsed().as_secs_f64();
                    return Err(ExperimentError {
                        stage: $name,
                        source,
                        partial: Box::new(report),
                    });
                }
            }
        };
    }

    let clean = stage!("load", cfg.clean_sequence());
    let channels = clean.dims().map_or(1, |d| d.0);
    let noisy = stage!("noise", NoiseModel::new(cfg.noise, cfg.noise_seed()).and_then(|m| apply_noise(&m, &clean)));

    let key = cfg.init_key(channels);
    let initial = match cache.init.get(&key) {
        Some(m) => m.clone(),
        None => {
            let m = stage!("init", initial_model(cfg, channels));
            cache.init.insert(key, m.clone());
            m
        }
    };
    let tuned = stage!("finetune", finetune(&initial, &noisy, &cfg.finetune_config()));
    report.losses = tuned.losses.clone();

    let before = stage!("denoise", denoise_sequence(&initial, &noisy));
    let after = stage!("denoise", denoise_sequence(&tuned.model, &noisy));

    let output = if cfg.dae {
        let key = cfg.dae_key(channels);
        let dae = match cache.dae.get(&key) {
            Some(d) => d.clone(),
            None => {
                let (d, _) = stage!("dae", train_dae(&cfg.corpus(channels), &cfg.dae_config(channels)));
                cache.dae.insert(key, d.clone());
                d
            }
        };
        let e0 = stage!("select", reconstruction_error(&dae, &before));
        let e1 = stage!("select", reconstruction_error(&dae, &after));
        let d = decide(e0, e1);
        report.dae = Some(d);
        match d.choice {
            ModelChoice::Initial => &before,
            ModelChoice::Finetuned => &after,
        }
    } else {
        &after
    };

    for i in 0..clean.len() {
        let c = clean.frame(i);
        let m = stage!(
            "metrics",
            (|| -> Result<FrameMetrics> {
                Ok(FrameMetrics {
                    index: i,
                    psnr_noisy: psnr(noisy.frame(i), c)?,
                    psnr_initial: psnr(before.frame(i), c)?,
                    psnr: psnr(output.frame(i), c)?,
                    ssim: ssim(output.frame(i), c)?,
                })
            })()
        );
        report.frames.push(m);
    }
    report.finish_means();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Per-frame rows; contains no timing, so equal runs give identical bytes.
pub fn report_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("csv", e);
    w.write_record(["frame", "psnr_noisy", "psnr_initial", "psnr", "ssim"]).map_err(csv_err)?;
    for m in &report.frames {
        w.write_record([
            m.index.to_string(),
            format_db(m.psnr_noisy),
            format_db(m.psnr_initial),
            format_db(m.psnr),
            format!("{:.6}", m.ssim),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("csv", e))?;
    String::from_utf8(bytes).map_err(|e| Error::format("csv", e))
}

pub fn summary_text(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed={}", report.seed);
    let _ = writeln!(s, "frames={}", report.frames.len());
    let _ = writeln!(s, "mean_psnr_noisy={}", format_db(report.mean_psnr_noisy));
    let _ = writeln!(s, "mean_psnr_initial={}", format_db(report.mean_psnr_initial));
    let _ = writeln!(s, "mean_psnr={}", format_db(report.mean_psnr));
    let _ = writeln!(s, "mean_ssim={:.6}", report.mean_ssim);
    match &report.dae {
        Some(d) => {
            let _ = writeln!(s, "dae_e0={:.6}\ndae_e1={:.6}\ndae_choice={}", d.e0, d.e1, d.choice);
        }
        None => {
            let _ = writeln!(s, "dae_choice=off");
        }
    }
    let _ = writeln!(s, "wall_clock_secs={:.3}", report.wall_clock_secs);
    s.push_str("# config\n");
    s.push_str(&report.config);
    s
}

pub fn curves_text(report: &RunReport) -> String {
    let mut s = String::from("# step loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(s, "{i} {l:.8}");
    }
    s
}

/// Writes `report.csv`, `summary.txt` and `curves.dat` into `dir`.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write("report.csv", report_csv(report)?)?;
    write("summary.txt", summary_text(report))?;
    write("curves.dat", curves_text(report))
}

/// A named set of config overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub overrides: Vec<String>,
}

impl FromStr for Arm {
    type Err = Error;

    /// `name:key=value,key=value`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        if name.is_empty() || name.contains(',') {
            return Err(Error::Config(format!("arm must be name:key=value,..., got {s:?}")));
        }
        let overrides = rest.split(',').filter(|o| !o.trim().is_empty()).map(|o| o.trim().to_string()).collect();
        Ok(Arm {
            name: name.into(),
            overrides,
        })
    }
}

/// The ablation axes: sampler, occlusion mode, lighting, online denoising.
pub fn default_arms() -> Vec<Arm> {
    [
        "full:",
        "naive:sampler=naive",
        "divergence:occlusion=divergence",
        "no-lighting:lighting=off",
        "offline-flow:online_denoise=off",
    ]
    .iter()
    .map(|s| s.parse().expect("static arm"))
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub report: RunReport,
}

/// Runs every arm for every seed; arms sharing initialization settings
/// share the initial model.
pub fn ablate(base: &ExperimentConfig, arms: &[Arm], seeds: &[u64]) -> std::result::Result<Vec<AblationRow>, ExperimentError> {
    let mut cache = ModelCache::new();
    let mut rows = Vec::with_capacity(arms.len() * seeds.len());
    for &seed in seeds {
        for arm in arms {
            let mut cfg = base.clone();
            cfg.seed = seed;
            if let Err(source) = cfg.apply_overrides(&arm.overrides) {
                return Err(ExperimentError {
                    stage: "config",
                    source,
                    partial: Box::default(),
                });
            }
            let report = run_experiment_cached(&cfg, &mut cache)?;
            rows.push(AblationRow {
                arm: arm.name.clone(),
                seed,
                report,
            });
        }
    }
    Ok(rows)
}

/// One row per (arm, seed); deterministic.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("csv", e);
    w.write_record(["arm", "seed", "mean_psnr_noisy", "mean_psnr_initial", "mean_psnr", "mean_ssim", "final_loss", "dae_choice"])
        .map_err(csv_err)?;
    for r in rows {
        let m = &r.report;
        w.write_record([
            r.arm.clone(),
            r.seed.to_string(),
            format_db(m.mean_psnr_noisy),
            format_db(m.mean_psnr_initial),
            format_db(m.mean_psnr),
            format!("{:.6}", m.mean_ssim),
            m.losses.last().map_or_else(|| "nan".into(), |l| format!("{l:.8}")),
            m.dae.map_or_else(|| "off".into(), |d| d.choice.to_string()),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("csv", e))?;
    String::from_utf8(bytes).map_err(|e| Error::format("csv", e))
}
