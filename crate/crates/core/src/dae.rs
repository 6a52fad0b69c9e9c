//! Denoising-autoencoder gate deciding whether the fine-tuned model is kept.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame_io::{CropWindow, Frame, FrameSequence};
use crate::noise::gaussian_fill;
use crate::par;
use crate::tensor::{mse, read_checkpoint, write_checkpoint, AdamConfig, ConvNet, NetSpec, Tensor4};
use crate::twin_sampler::derive_seed;

/// Residual single-frame conv autoencoder `r(y) = y + f(y)` on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DaeModel {
    net: ConvNet,
    /// AWGN level it was trained with, on the `[0, 255]` scale.
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DaeConfig {
    pub channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub sigma: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            hidden: 16,
            layers: 3,
            sigma: 5.0,
            steps: 200,
            lr: 1e-3,
            batch_size: 8,
            crop: 32,
            seed: 0,
        }
    }
}

impl DaeModel {
    /// Untrained model: identity reconstruction.
    pub fn new(cfg: &DaeConfig) -> Result<Self> {
        let spec = NetSpec {
            in_channels: cfg.channels,
            out_channels: cfg.channels,
            hidden: cfg.hidden,
            layers: cfg.layers,
            kernel: 3,
            residual_from: Some(0),
        };
        Ok(Self {
            net: ConvNet::new(spec, cfg.seed)?,
            sigma: cfg.sigma,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            net: ConvNet::from_params(read_checkpoint(path)?, Some(0))?,
            sigma: f64::NAN,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(path, self.net.params())
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    /// `r(y)` on the `[0, 255]` scale (not clipped).
    pub fn reconstruct(&self, frame: &Frame) -> Result<Frame> {
        let (c, h, w) = frame.dims();
        let x = Tensor4::from_vec([1, c, h, w], frame.data().iter().map(|v| v / 255.0).collect())?;
        let y = self.net.forward(&x)?;
        Frame::new(c, h, w, y.into_vec().into_iter().map(|v| v * 255.0).collect())
    }
}

/// Trains `r` to map AWGN(`σ_dae`)-corrupted crops of the clean corpus back
/// to the clean crops under an L2 loss. Returns the model and loss per step.
pub fn train_dae(corpus: &[Frame], cfg: &DaeConfig) -> Result<(DaeModel, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::InvalidParam("DAE corpus is empty".into()));
    }
    if let Some(f) = corpus.iter().find(|f| f.channels() != cfg.channels) {
        return Err(Error::shape("train_dae", format!("{} channels", cfg.channels), f.channels()));
    }
    let mut model = DaeModel::new(cfg)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let size = corpus.iter().fold(cfg.crop, |s, f| s.min(f.height()).min(f.width()));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0xDAE, step as u64]));
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for _ in 0..cfg.batch_size {
            let img = &corpus[rng.random_range(0..corpus.len())];
            let win = CropWindow::square(
                rng.random_range(0..=img.height() - size),
                rng.random_range(0..=img.width() - size),
                size,
            );
            let clean = img.crop(&win)?;
            let mut noise = vec![0.0; clean.data().len()];
            gaussian_fill(&mut rng, &mut noise, cfg.sigma);
            x.extend(clean.data().iter().zip(&noise).map(|(v, n)| (v + n) / 255.0));
            y.extend(clean.data().iter().map(|v| v / 255.0));
        }
        let shape = [cfg.batch_size, cfg.channels, size, size];
        let x = Tensor4::from_vec(shape, x)?;
        let y = Tensor4::from_vec(shape, y)?;
        let (pred, cache) = model.net.forward_train(&x)?;
        let (loss, grad) = mse(&pred, &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("DAE loss at step {step}")));
        }
        let grads = model.net.backward(&cache, &grad)?;
        model.net.params_mut().adam_step(&grads, &adam)?;
        losses.push(loss);
    }
    Ok((model, losses))
}

/// Mean over frames of the per-pixel Euclidean norm (over channels) of
/// `r(y) - y`, on the `[0, 1]` scale.
pub fn reconstruction_error(dae: &DaeModel, seq: &FrameSequence) -> Result<f64> {
    if seq.is_empty() {
        return Ok(0.0);
    }
    let per = par::map_range(seq.len(), |i| -> Result<f64> {
        let f = seq.frame(i);
        let r = dae.reconstruct(f)?;
        let (c, h, w) = f.dims();
        let n = h * w;
        let mut total = 0.0;
        for p in 0..n {
            let s: f64 = (0..c).map(|ch| ((r.data()[ch * n + p] - f.data()[ch * n + p]) / 255.0).powi(2)).sum();
            total += s.sqrt();
        }
        Ok(total / n as f64)
    });
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Initial,
    Finetuned,
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Initial => "initial",
            Self::Finetuned => "finetuned",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DaeDecision {
    /// Error before fine-tuning.
    pub e0: f64,
    /// Error after fine-tuning.
    pub e1: f64,
    pub choice: ModelChoice,
}

impl fmt::Display for DaeDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e0={:.6} e1={:.6} choice={}", self.e0, self.e1, self.choice)
    }
}

/// The fine-tuned model is kept only if the error drops by more than half:
/// `e1 < 0.5 · e0`.
pub fn decide(e0: f64, e1: f64) -> DaeDecision {
    let choice = if e1 < 0.5 * e0 { ModelChoice::Finetuned } else { ModelChoice::Initial };
    DaeDecision { e0, e1, choice }
}

/// Compares the DAE error of the initial model's output (`before`) with the
/// fine-tuned model's (`after`) and returns the chosen model.
pub fn select_model<'a, M>(
    dae: &DaeModel,
    before: &FrameSequence,
    after: &FrameSequence,
    initial: &'a M,
    finetuned: &'a M,
) -> Result<(&'a M, DaeDecision)> {
    if before.len() != after.len() {
        return Err(Error::shape("select_model", before.len(), after.len()));
    }
    let d = decide(reconstruction_error(dae, before)?, reconstruction_error(dae, after)?);
    let m = match d.choice {
        ModelChoice::Initial => initial,
        ModelChoice::Finetuned => finetuned,
    };
    Ok((m, d))
}
