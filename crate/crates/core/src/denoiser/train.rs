use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DenoiserModel;
use crate::error::{Error, Result};
use crate::frame_io::{CropWindow, Frame, FrameSequence};
use crate::noise::gaussian_fill;
use crate::tensor::{masked_l1, AdamConfig, Tensor4};
use crate::twin_sampler::{assemble_batch, derive_seed, FlowCache, SamplerConfig};

/// One optimizer step on the masked L1 loss; returns the loss. When every
/// weight is zero the loss is logged but no update is made, so a fully
/// masked batch leaves the parameters and optimizer state untouched.
pub fn train_step(model: &mut DenoiserModel, inputs: &Tensor4, targets: &Tensor4, weights: &Tensor4, adam: &AdamConfig) -> Result<f64> {
    let (pred, cache) = model.net.forward_train(inputs)?;
    let (loss, grad) = masked_l1(&pred, targets, weights)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    if weights.data().iter().any(|&g| g != 0.0) {
        let grads = model.net.backward(&cache, &grad)?;
        model.net.params_mut().adam_step(&grads, adam)?;
    }
    model.log.push(loss);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    /// AWGN level on the `[0, 255]` scale.
    pub sigma: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            sigma: 20.0,
            steps: 300,
            lr: 1e-3,
            batch_size: 8,
            crop: 32,
            seed: 0,
        }
    }
}

/// Supervised noisy-to-clean training on static stacks: every slot of a
/// stack is the same crop of a clean still image, noised independently with
/// AWGN (then clipped and rounded), and the target is the clean crop.
/// Returns the loss per step.
pub fn pretrain(model: &mut DenoiserModel, corpus: &[Frame], cfg: &PretrainConfig) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::InvalidParam("pretraining corpus is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.crop == 0 || !(cfg.sigma >= 0.0) {
        return Err(Error::InvalidParam(format!("bad pretraining config {cfg:?}")));
    }
    let arch = *model.arch();
    if let Some(f) = corpus.iter().find(|f| f.channels() != arch.channels) {
        return Err(Error::shape("pretrain", format!("{} channels", arch.channels), f.channels()));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, step as u64]));
        let mut crops = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let img = &corpus[rng.random_range(0..corpus.len())];
            let (_, h, w) = img.dims();
            let (sh, sw) = (cfg.crop.min(h), cfg.crop.min(w));
            let win = CropWindow {
                top: rng.random_range(0..=h - sh),
                left: rng.random_range(0..=w - sw),
                height: sh,
                width: sw,
            };
            crops.push(img.crop(&win)?);
        }
        // Crops may differ in size when corpus images are smaller than `crop`.
        let (sh, sw) = crops.iter().fold((usize::MAX, usize::MAX), |(a, b), c| (a.min(c.height()), b.min(c.width())));
        let c = arch.channels;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for clean in &crops {
            let clean = clean.crop(&CropWindow { top: 0, left: 0, height: sh, width: sw })?;
            for _ in 0..arch.window {
                let mut noise = vec![0.0; clean.data().len()];
                gaussian_fill(&mut rng, &mut noise, cfg.sigma);
                x.extend(clean.data().iter().zip(&noise).map(|(v, n)| (v + n).clamp(0.0, 255.0).round() / 255.0));
            }
            y.extend(clean.data().iter().map(|v| v / 255.0));
        }
        let b = crops.len();
        let x = Tensor4::from_vec([b, arch.window * c, sh, sw], x)?;
        let y = Tensor4::from_vec([b, c, sh, sw], y)?;
        let g = Tensor4::filled([b, c, sh, sw], 1.0);
        losses.push(train_step(model, &x, &y, &g, &adam)?);
    }
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub sampler: SamplerConfig,
    pub batches: usize,
    pub lr: f64,
    pub seed: u64,
    /// Correspondences are recomputed with the current model every this
    /// many mini-batches.
    pub flow_refresh: usize,
    /// Where to snapshot the model if the loss goes non-finite.
    pub diagnostic_path: Option<PathBuf>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            batches: 100,
            lr: 2e-4,
            seed: 0,
            flow_refresh: 1,
            diagnostic_path: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: DenoiserModel,
    /// Mean masked L1 loss of each mini-batch.
    pub losses: Vec<f64>,
}

/// Self-supervised fine-tuning on the noisy sequence itself: each
/// mini-batch is assembled with the current model (flows on its outputs),
/// then one Adam step is taken on the batch-mean masked L1 loss.
pub fn finetune(initial: &DenoiserModel, noisy: &FrameSequence, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    if cfg.flow_refresh == 0 {
        return Err(Error::InvalidParam("flow_refresh must be at least 1".into()));
    }
    let mut model = initial.clone();
    model.params_mut().reset_optimizer();
    model.log.clear();
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut cache = FlowCache::new();
    let mut losses = Vec::with_capacity(cfg.batches);
    for b in 0..cfg.batches {
        if b % cfg.flow_refresh == 0 {
            cache.clear();
        }
        let batch = assemble_batch(noisy, &model, &cfg.sampler, cfg.seed, b as u64, &mut cache)?;
        let (x, y, g) = batch.to_tensors()?;
        match train_step(&mut model, &x, &y, &g, &adam) {
            Ok(loss) => losses.push(loss),
            Err(Error::NonFinite(what)) => {
                let mut msg = format!("{what} at mini-batch {b}");
                if let Some(p) = &cfg.diagnostic_path {
                    match model.save(p) {
                        Ok(()) => msg.push_str(&format!("; model saved to {}", p.display())),
                        Err(e) => msg.push_str(&format!("; diagnostic save failed: {e}")),
                    }
                }
                return Err(Error::NonFinite(msg));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FinetuneOutcome { model, losses })
}
